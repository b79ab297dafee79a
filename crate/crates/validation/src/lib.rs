//! Reporting helpers for the acceptance run.

use std::process::ExitCode;
use std::time::Instant;

pub type BoxError = Box<dyn std::error::Error>;

/// Result of one criterion; `pass == None` marks a skipped check.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub pass: Option<bool>,
    pub detail: String,
}

impl Outcome {
    pub fn check(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass: Some(pass), detail: detail.into() }
    }

    pub fn skipped(detail: impl Into<String>) -> Self {
        Self { pass: None, detail: detail.into() }
    }
}

/// Runs criteria, printing one status line each.
pub struct Suite {
    filter: Vec<String>,
    results: Vec<(String, Option<bool>)>,
}

impl Suite {
    /// Positional arguments select criteria by substring; flags are ignored.
    pub fn from_args() -> Self {
        let filter = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
        Self { filter, results: Vec::new() }
    }

    pub fn selected(&self, name: &str) -> bool {
        self.filter.is_empty() || self.filter.iter().any(|f| name.contains(f.as_str()))
    }

    pub fn run(&mut self, name: &str, f: impl FnOnce() -> Result<Outcome, BoxError>) {
        if !self.selected(name) {
            return;
        }
        let start = Instant::now();
        let outcome = f().unwrap_or_else(|e| Outcome::check(false, format!("error: {e}")));
        let tag = match outcome.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        println!("{tag} {name}: {} [{:.1} s]", outcome.detail, start.elapsed().as_secs_f64());
        self.results.push((name.to_string(), outcome.pass));
    }

    pub fn finish(self) -> ExitCode {
        let failed: Vec<&str> = self.results.iter().filter(|r| r.1 == Some(false)).map(|r| r.0.as_str()).collect();
        let passed = self.results.iter().filter(|r| r.1 == Some(true)).count();
        println!("acceptance: {passed} passed, {} failed, {} skipped", failed.len(), self.results.len() - passed - failed.len());
        if failed.is_empty() {
            ExitCode::SUCCESS
        } else {
            println!("failed: {}", failed.join(", "));
            ExitCode::FAILURE
        }
    }
}

/// Half the L1 distance between two distributions.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
