//! Batch driver for METTS, purification and exact-diagonalization runs.

pub mod analysis;
pub mod config;
pub mod error;
pub mod log;
pub mod run;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use peps_metts::checkpoint::save_state;
use peps_metts::ed::{exact_report, gibbs_observable};
use peps_metts::purification::thermal_purification;
use serde_json::{json, Value};

pub use config::Config;
pub use error::{CliError, Result};

use error::IoContext;

pub(crate) fn unix_time() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// Timestamps live only here, so every other artifact is reproducible.
pub(crate) fn write_meta(out: &Path, command: &str, started: f64, extra: Value) -> Result<()> {
    let meta = json!({ "command": command, "started_unix": started, "finished_unix": unix_time(), "info": extra });
    let path = out.join("run_meta.json");
    std::fs::write(&path, serde_json::to_string_pretty(&meta)?).at(&path)
}

fn named(cfg: &Config, values: &[f64]) -> BTreeMap<String, f64> {
    cfg.observables.iter().zip(values).map(|(o, &v)| (o.to_string(), v)).collect()
}

/// Purification run; writes `purification.json` and the final state.
pub fn run_purification(cfg: &Config) -> Result<Value> {
    let out = cfg.output_dir();
    std::fs::create_dir_all(&out).at(&out)?;
    let started = unix_time();
    let res = thermal_purification(&cfg.purification_params()?, &cfg.observables)?;
    let max_delta = res.reports.iter().map(|r| r.delta).fold(0.0, f64::max);
    let doc = json!({
        "config": cfg.to_value(),
        "values": named(cfg, &res.values),
        "gates": res.reports.len(),
        "max_delta": max_delta,
        "fallbacks": res.reports.iter().filter(|r| r.fallback).count(),
    });
    let path = out.join("purification.json");
    std::fs::write(&path, serde_json::to_string_pretty(&doc)?).at(&path)?;
    save_state(&out.join("purification.peps"), &res.state, json!({ "config": cfg.to_value() }))?;
    write_meta(&out, "purify", started, Value::Null)?;
    Ok(doc)
}

/// Exact thermal values; writes `exact.json`.
pub fn run_exact(cfg: &Config) -> Result<Value> {
    let out = cfg.output_dir();
    std::fs::create_dir_all(&out).at(&out)?;
    let started = unix_time();
    let spec = cfg.model_spec()?;
    let values: Vec<f64> =
        cfg.observables.iter().map(|o| gibbs_observable(&spec, cfg.beta, o)).collect::<peps_metts::Result<_>>()?;
    let report = exact_report(&spec, cfg.beta, &[])?;
    let doc = json!({
        "config": cfg.to_value(),
        "values": named(cfg, &values),
        "energy": report.energy,
        "ground_energy": report.ground_energy,
        "log_partition": report.log_partition,
    });
    let path = out.join("exact.json");
    std::fs::write(&path, serde_json::to_string_pretty(&doc)?).at(&path)?;
    write_meta(&out, "exact", started, Value::Null)?;
    Ok(doc)
}
