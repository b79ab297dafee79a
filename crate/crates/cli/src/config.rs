//! The flat JSON run configuration.

use std::path::{Path, PathBuf};

use peps_metts::metts::MettsParams;
use peps_metts::models::ModelSpec;
use peps_metts::ntu::NtuOptions;
use peps_metts::observables::Observable;
use peps_metts::purification::PurificationParams;
use peps_metts::stats::DEFAULT_BURN_IN;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "PEPS_METTS_OUT";
pub const DEFAULT_OUT: &str = "peps-metts-out";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: String,
    pub g: f64,
    pub lx: usize,
    pub ly: usize,
    pub beta: f64,
    pub dtau: f64,
    /// Maximal PEPS bond dimension.
    #[serde(rename = "D")]
    pub bond_dim: usize,
    pub chi: usize,
    pub chi_sample: usize,
    pub n_chains: usize,
    pub steps: usize,
    pub seed: u64,
    pub burn_in: usize,
    pub observables: Vec<Observable>,
    pub out_dir: Option<PathBuf>,
    /// Threads running chains.
    pub workers: usize,
    pub checkpoint_every: usize,
    /// Write one `ntu_report` line per gate.
    pub log_ntu: bool,
    pub single_layer: bool,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            model: "tfim".into(),
            g: 2.9,
            lx: 3,
            ly: 3,
            beta: 1.0 / 0.6085,
            dtau: peps_metts::trotter::DEFAULT_DTAU,
            bond_dim: 3,
            chi: 16,
            chi_sample: 16,
            n_chains: 4,
            steps: 100,
            seed: 0,
            burn_in: DEFAULT_BURN_IN,
            observables: vec![Observable::Correlator(1), Observable::Correlator(2)],
            out_dir: None,
            workers: 1,
            checkpoint_every: 25,
            log_ntu: true,
            single_layer: false,
        }
    }
}

impl Config {
    /// Reads `path` (if any), lays `overrides` on top and validates.
    pub fn resolve(path: Option<&Path>, overrides: Map<String, Value>) -> Result<Self> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| CliError::Io { path: p.to_path_buf(), source })?;
                match serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))? {
                    Value::Object(m) => m,
                    _ => return Err(CliError::Config(format!("{}: expected a JSON object", p.display()))),
                }
            }
            None => Map::new(),
        };
        doc.extend(overrides);
        let cfg: Config = serde_json::from_value(Value::Object(doc)).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        self.model_spec()?;
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be finite and non-negative");
        }
        if !(self.dtau > 0.0) {
            return bad("dtau must be positive");
        }
        if self.bond_dim == 0 || self.chi == 0 || self.chi_sample == 0 {
            return bad("D, chi and chi_sample must be positive");
        }
        for o in &self.observables {
            if let Observable::Correlator(r) = o {
                peps_metts::observables::correlator_sites(self.lx, self.ly, *r)
                    .map_err(|_| CliError::Config(format!("{o} does not fit a {}x{} lattice", self.lx, self.ly)))?;
            }
        }
        if self.workers == 0 || self.checkpoint_every == 0 {
            return bad("workers and checkpoint_every must be positive");
        }
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        Ok(ModelSpec::from_name(&self.model, self.g, self.lx, self.ly)?)
    }

    /// `out_dir`, else the environment default, else `./peps-metts-out`.
    pub fn output_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn metts_params(&self) -> Result<MettsParams> {
        Ok(MettsParams {
            model: self.model_spec()?,
            beta: self.beta,
            dtau: self.dtau,
            max_d: self.bond_dim,
            chi: self.chi,
            chi_sample: self.chi_sample,
            observables: self.observables.clone(),
            ntu: NtuOptions::default(),
            single_layer: self.single_layer,
        })
    }

    pub fn purification_params(&self) -> Result<PurificationParams> {
        Ok(PurificationParams {
            model: self.model_spec()?,
            beta: self.beta,
            dtau: self.dtau,
            max_d: self.bond_dim,
            chi: self.chi,
            ntu: NtuOptions::default(),
        })
    }

    /// The same run, ignoring how far it goes and where it is written.
    pub fn same_run(&self, other: &Config) -> bool {
        let strip = |c: &Config| Config { steps: 0, out_dir: None, workers: 1, ..c.clone() };
        strip(self) == strip(other)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
