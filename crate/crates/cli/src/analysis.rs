//! Run logs to chain records and the analysis table.

use std::path::PathBuf;

use peps_metts::stats::{analyze, to_csv, ChainRecord, DEFAULT_BURN_IN};

use crate::config::Config;
use crate::error::{CliError, Result};
use crate::log::{read_log, Event};

/// One record per log file. The burn-in comes from `burn_in`, else from the
/// run configuration in the log, else the default.
pub fn load_records(paths: &[PathBuf], burn_in: Option<usize>) -> Result<Vec<ChainRecord>> {
    let mut records = Vec::with_capacity(paths.len());
    for path in paths {
        let mut rec: Option<ChainRecord> = None;
        for line in read_log(path)? {
            let err = |msg: String| CliError::Log { path: path.clone(), line: line.line, msg };
            match line.event {
                Event::Sample { chain, step: 0, run, .. } if rec.is_none() => {
                    let run: Option<Config> = run.map(serde_json::from_value).transpose().map_err(|e| err(e.to_string()))?;
                    let seed = run.as_ref().map_or(0, |c| peps_metts::metts::chain_seed(c.seed, chain));
                    let b = burn_in.or(run.map(|c| c.burn_in)).unwrap_or(DEFAULT_BURN_IN);
                    rec = Some(ChainRecord::new(chain, seed, b));
                }
                Event::Step { chain, step, values, .. } => {
                    let r = rec.get_or_insert_with(|| ChainRecord::new(chain, 0, burn_in.unwrap_or(DEFAULT_BURN_IN)));
                    if r.chain != chain {
                        return Err(err(format!("chain {chain} in the log of chain {}", r.chain)));
                    }
                    let values: Vec<(String, f64)> = values.into_iter().collect();
                    r.push(step, &values).map_err(|e| err(e.to_string()))?;
                }
                _ => {}
            }
        }
        records.extend(rec);
    }
    Ok(records)
}

/// The analysis table of `paths` as CSV text.
pub fn analyze_logs(paths: &[PathBuf], burn_in: Option<usize>, observables: Option<&[String]>) -> Result<String> {
    let records = load_records(paths, burn_in)?;
    let names: Vec<String> = match observables {
        Some(list) => list.to_vec(),
        None => records.first().map(|r| r.values.keys().cloned().collect()).unwrap_or_default(),
    };
    Ok(to_csv(&analyze(&records, &names)?))
}
