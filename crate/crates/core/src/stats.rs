//! Estimators over METTS Markov chains.
//!
//! Several chains are merged by interleaving their post-burn-in samples in
//! step order (first sample of every chain, then the second, ...), so the
//! running average at small `s` already draws from all chains.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default number of initial steps dropped from every chain.
pub const DEFAULT_BURN_IN: usize = 10;
/// Fewest post-burn-in samples (and fewest bins) bunching works with.
pub const MIN_BINS: usize = 16;

/// Measurements of one chain.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub chain: usize,
    pub seed: u64,
    pub burn_in: usize,
    /// Strictly increasing step numbers.
    pub steps: Vec<usize>,
    /// One series per observable, aligned with `steps`.
    pub values: BTreeMap<String, Vec<f64>>,
}

impl ChainRecord {
    pub fn new(chain: usize, seed: u64, burn_in: usize) -> Self {
        Self { chain, seed, burn_in, ..Self::default() }
    }

    /// Appends the measurements of one step. Every step must report the
    /// same observables.
    pub fn push(&mut self, step: usize, values: &[(String, f64)]) -> Result<()> {
        if self.steps.last().is_some_and(|&last| step <= last) {
            return invalid(format!("step {step} does not follow {:?}", self.steps.last()));
        }
        if !self.steps.is_empty() {
            let same = values.len() == self.values.len() && values.iter().all(|(k, _)| self.values.contains_key(k));
            if !same {
                return invalid(format!("step {step} reports a different set of observables"));
            }
        }
        for (name, v) in values {
            self.values.entry(name.clone()).or_default().push(*v);
        }
        self.steps.push(step);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Post-burn-in samples of `observable`.
    pub fn kept(&self, observable: &str) -> Result<&[f64]> {
        let series = self
            .values
            .get(observable)
            .ok_or_else(|| Error::UnknownObservable(observable.to_string()))?;
        Ok(&series[self.burn_in.min(series.len())..])
    }
}

/// Post-burn-in samples of all chains, interleaved in step order.
pub fn serialize(records: &[ChainRecord], observable: &str) -> Result<Vec<f64>> {
    let kept: Vec<&[f64]> = records.iter().map(|r| r.kept(observable)).collect::<Result<_>>()?;
    let longest = kept.iter().map(|k| k.len()).max().unwrap_or(0);
    let mut out = Vec::with_capacity(kept.iter().map(|k| k.len()).sum());
    for j in 0..longest {
        out.extend(kept.iter().filter_map(|k| k.get(j)));
    }
    Ok(out)
}

/// `(s, mean of the first s serialized samples)` for every `s`.
pub fn running_average(records: &[ChainRecord], observable: &str) -> Result<Vec<(usize, f64)>> {
    let data = serialize(records, observable)?;
    if data.is_empty() {
        return Err(Error::InsufficientData("no samples after burn-in".into()));
    }
    let mut sum = 0.0;
    Ok(data.iter().enumerate().map(|(i, x)| {
        sum += x;
        (i + 1, sum / (i + 1) as f64)
    }).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Confidence {
    /// 95%, 1.96 standard errors.
    P95,
    /// 99.7%, 3 standard errors.
    P997,
}

impl Confidence {
    pub fn z(self) -> f64 {
        match self {
            Confidence::P95 => 1.96,
            Confidence::P997 => 3.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BunchedEstimate {
    pub mean: f64,
    /// One standard error at the bunching plateau.
    pub stderr: f64,
    pub bin_size: usize,
    pub confidence: Confidence,
}

impl BunchedEstimate {
    /// Half width of the confidence interval.
    pub fn half_width(&self) -> f64 {
        self.confidence.z() * self.stderr
    }

    pub fn contains(&self, x: f64) -> bool {
        (x - self.mean).abs() <= self.half_width()
    }
}

/// Standard error of the mean from bins of `bin` consecutive samples.
fn binned_stderr(data: &[f64], bin: usize) -> f64 {
    let n = data.len() / bin;
    let means: Vec<f64> = data[..n * bin].chunks(bin).map(|c| c.iter().sum::<f64>() / bin as f64).collect();
    let m = means.iter().sum::<f64>() / n as f64;
    let var = means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Bunching estimate of a plain series.
pub fn bunch(data: &[f64], confidence: Confidence) -> Result<BunchedEstimate> {
    if data.len() < MIN_BINS {
        return Err(Error::InsufficientData(format!("{} samples, bunching needs {MIN_BINS}", data.len())));
    }
    // centring on one sample keeps a constant series exactly constant
    let shifted: Vec<f64> = data.iter().map(|x| x - data[0]).collect();
    let mean = data[0] + shifted.iter().sum::<f64>() / data.len() as f64;
    let mut bin = 1;
    let mut err = binned_stderr(&shifted, bin);
    while data.len() / (2 * bin) >= MIN_BINS {
        let next = binned_stderr(&shifted, 2 * bin);
        bin *= 2;
        let settled = (next - err).abs() <= 0.1 * err;
        err = next;
        if settled {
            break;
        }
    }
    Ok(BunchedEstimate { mean, stderr: err, bin_size: bin, confidence })
}

/// Bunching estimate over the serialized chains.
pub fn bunched_error(records: &[ChainRecord], observable: &str, confidence: Confidence) -> Result<BunchedEstimate> {
    bunch(&serialize(records, observable)?, confidence)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Autocorrelation {
    /// `gamma[lag]`, normalized so `gamma[0] == 1`.
    pub gamma: Vec<f64>,
    /// Integrated autocorrelation time, summed up to the first negative lag.
    pub tau: f64,
}

/// Normalized autocorrelation of the fluctuations about the overall mean.
/// Lags are taken within each chain only.
pub fn autocorrelation(records: &[ChainRecord], observable: &str, max_lag: usize) -> Result<Autocorrelation> {
    let kept: Vec<&[f64]> = records.iter().map(|r| r.kept(observable)).collect::<Result<_>>()?;
    autocorrelation_of(&kept, max_lag)
}

/// As [`autocorrelation`] for raw series, one per chain.
pub fn autocorrelation_of(chains: &[&[f64]], max_lag: usize) -> Result<Autocorrelation> {
    let total: usize = chains.iter().map(|c| c.len()).sum();
    if total <= 4 * max_lag || chains.iter().all(|c| c.len() <= max_lag) {
        return Err(Error::InsufficientData(format!("{total} samples for max_lag {max_lag}")));
    }
    let mean = chains.iter().flat_map(|c| c.iter()).sum::<f64>() / total as f64;
    let var = chains.iter().flat_map(|c| c.iter()).map(|x| (x - mean) * (x - mean)).sum::<f64>() / total as f64;
    let mut gamma = vec![1.0];
    for lag in 1..=max_lag {
        if var == 0.0 {
            gamma.push(0.0);
            continue;
        }
        let (mut acc, mut pairs) = (0.0, 0usize);
        for c in chains.iter().filter(|c| c.len() > lag) {
            acc += c.iter().zip(&c[lag..]).map(|(a, b)| (a - mean) * (b - mean)).sum::<f64>();
            pairs += c.len() - lag;
        }
        gamma.push(acc / pairs as f64 / var);
    }
    let tau = 1.0 + 2.0 * gamma[1..].iter().take_while(|&&g| g >= 0.0).sum::<f64>();
    Ok(Autocorrelation { gamma, tau })
}

/// One line of the analysis table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRow {
    pub observable: String,
    pub s: usize,
    pub mean: f64,
    /// Bunched standard error of the first `s` samples; absent below
    /// [`MIN_BINS`] samples.
    pub stderr: Option<f64>,
    /// Integrated autocorrelation time of the whole run.
    pub tau: f64,
}

pub const ANALYSIS_HEADER: &str = "observable,s,mean,stderr,tau";

/// Lag cutoff used for the `tau` column.
pub fn default_max_lag(samples: usize) -> usize {
    (samples.saturating_sub(1) / 4).clamp(1, 100)
}

/// Running mean and running bunched error of every observable.
pub fn analyze(records: &[ChainRecord], observables: &[String]) -> Result<Vec<AnalysisRow>> {
    let mut rows = Vec::new();
    for name in observables {
        let data = serialize(records, name)?;
        let kept: Vec<&[f64]> = records.iter().map(|r| r.kept(name)).collect::<Result<_>>()?;
        let tau = match autocorrelation_of(&kept, default_max_lag(data.len())) {
            Ok(a) => a.tau,
            Err(Error::InsufficientData(_)) => f64::NAN,
            Err(e) => return Err(e),
        };
        for (s, mean) in running_average(records, name)? {
            let stderr = (s >= MIN_BINS).then(|| bunch(&data[..s], Confidence::P95).map(|b| b.stderr)).transpose()?;
            rows.push(AnalysisRow { observable: name.clone(), s, mean, stderr, tau });
        }
    }
    Ok(rows)
}

pub fn to_csv(rows: &[AnalysisRow]) -> String {
    let mut out = format!("{ANALYSIS_HEADER}\n");
    for r in rows {
        let stderr = r.stderr.map(|e| e.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{}", r.observable, r.s, r.mean, stderr, r.tau);
    }
    out
}

pub fn from_csv(text: &str) -> Result<Vec<AnalysisRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(ANALYSIS_HEADER) {
        return Err(Error::Malformed(format!("analysis table must start with {ANALYSIS_HEADER:?}")));
    }
    let bad = |n: usize, why: &str| Error::Malformed(format!("line {}: {why}", n + 2));
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(n, "expected 5 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n, "not a number"));
            Ok(AnalysisRow {
                observable: f[0].to_string(),
                s: f[1].parse().map_err(|_| bad(n, "s is not an integer"))?,
                mean: num(f[2])?,
                stderr: if f[3].is_empty() { None } else { Some(num(f[3])?) },
                tau: num(f[4])?,
            })
        })
        .collect()
}
