//! The JSON-lines run log, one file per chain.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, IoContext, Result};

pub fn chain_log_name(chain: usize) -> String {
    format!("chain_{chain}.jsonl")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    /// A product state of the chain. Step 0 is the initial state and also
    /// carries the resolved run configuration.
    Sample {
        chain: usize,
        step: usize,
        configuration: String,
        log_prob: f64,
        draws: u64,
        rng_word_pos: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        run: Option<Value>,
    },
    /// Measurements of the state evolved from `configuration`.
    Step { chain: usize, step: usize, configuration: String, values: BTreeMap<String, f64> },
    NtuReport { chain: usize, step: usize, trotter_step: usize, bond: String, delta: f64, iters: usize, fallback: bool },
    /// `path` is relative to the output directory.
    Checkpoint { chain: usize, step: usize, path: String },
}

impl Event {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("events serialize");
        s.push('\n');
        s
    }
}

/// A parsed log line with its 1-based line number and byte end offset.
#[derive(Clone, Debug)]
pub struct LogLine {
    pub line: usize,
    pub end: usize,
    pub event: Event,
}

pub fn read_log(path: &Path) -> Result<Vec<LogLine>> {
    let text = std::fs::read_to_string(path).at(path)?;
    let mut out = Vec::new();
    let mut end = 0;
    for (i, raw) in text.split_inclusive('\n').enumerate() {
        end += raw.len();
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let event = serde_json::from_str(trimmed)
            .map_err(|e| CliError::Log { path: path.to_path_buf(), line: i + 1, msg: e.to_string() })?;
        out.push(LogLine { line: i + 1, end, event });
    }
    Ok(out)
}

/// Chain logs named by `paths`; directories contribute their
/// `chain_*.jsonl` files in chain order.
pub fn collect_logs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<(usize, PathBuf)> = std::fs::read_dir(p)
                .at(p)?
                .filter_map(|e| e.ok())
                .filter_map(|e| {
                    let name = e.file_name().into_string().ok()?;
                    let k = name.strip_prefix("chain_")?.strip_suffix(".jsonl")?.parse().ok()?;
                    Some((k, e.path()))
                })
                .collect();
            found.sort();
            out.extend(found.into_iter().map(|(_, p)| p));
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}
