//! The METTS batch driver.

use std::collections::{BTreeMap, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Mutex;

use peps_metts::checkpoint::{load_sidecar, save_state};
use peps_metts::metts::{chain_seed, ChainState, MettsChain, MettsStep};
use peps_metts::stats::{bunched_error, ChainRecord, Confidence};
use serde_json::json;

use crate::config::Config;
use crate::error::{CliError, IoContext, Result};
use crate::log::{chain_log_name, read_log, Event};

/// Where each chain starts and which log bytes survive.
struct Job {
    chain: MettsChain,
    /// Log length to keep; `None` starts a new log.
    keep: Option<u64>,
}

fn initial_event(cfg: &Config, k: usize) -> Event {
    let chain = MettsChain::new(cfg.metts_params().expect("validated"), k, chain_seed(cfg.seed, k));
    Event::Sample {
        chain: k,
        step: 0,
        configuration: chain.state().config.to_compact(),
        log_prob: 0.0,
        draws: 0,
        rng_word_pos: 0,
        run: Some(cfg.to_value()),
    }
}

fn step_events(cfg: &Config, k: usize, step: usize, out: &MettsStep) -> Vec<Event> {
    let values: BTreeMap<String, f64> =
        cfg.observables.iter().zip(&out.values).map(|(o, &v)| (o.to_string(), v)).collect();
    let mut events = vec![Event::Step { chain: k, step, configuration: out.config.to_compact(), values }];
    if cfg.log_ntu {
        events.extend(out.reports.iter().map(|r| Event::NtuReport {
            chain: k,
            step,
            trotter_step: r.step,
            bond: r.bond.label(),
            delta: r.delta,
            iters: r.iters,
            fallback: r.fallback,
        }));
    }
    events.push(Event::Sample {
        chain: k,
        step,
        configuration: out.sample.config.to_compact(),
        log_prob: out.sample.log_prob,
        draws: out.sample.draws as u64,
        rng_word_pos: u64::try_from(out.sample.rng_word_pos).expect("generator position beyond 2^64 words"),
        run: None,
    });
    events
}

fn checkpoint_rel(k: usize, step: usize) -> String {
    format!("checkpoints/chain_{k}_step_{step:06}.peps")
}

/// Rebuilds a chain from the last checkpoint named in its log.
fn resume_job(cfg: &Config, out: &Path, k: usize) -> Result<Job> {
    let params = cfg.metts_params()?;
    let fresh = || Job { chain: MettsChain::new(params.clone(), k, chain_seed(cfg.seed, k)), keep: None };
    let log = out.join(chain_log_name(k));
    if !log.exists() {
        return Ok(fresh());
    }
    let lines = read_log(&log)?;
    match lines.first().map(|l| &l.event) {
        Some(Event::Sample { step: 0, run: Some(run), .. }) => {
            let prior: Config = serde_json::from_value(run.clone())?;
            if !prior.same_run(cfg) {
                return Err(CliError::Resume(format!("{} was written with a different configuration", log.display())));
            }
        }
        _ => return Err(CliError::Resume(format!("{} does not start with the initial record", log.display()))),
    }
    let last = lines.iter().rev().find_map(|l| match &l.event {
        Event::Checkpoint { path, .. } => Some((l.end, path.clone())),
        _ => None,
    });
    let Some((end, rel)) = last else {
        return Ok(Job { keep: Some(lines[0].end as u64), ..fresh() });
    };
    let side = load_sidecar(&out.join(&rel))?;
    let state: ChainState = serde_json::from_value(side.extra["chain_state"].clone())
        .map_err(|e| CliError::Resume(format!("{rel}: {e}")))?;
    if state.chain != k || state.seed != chain_seed(cfg.seed, k) {
        return Err(CliError::Resume(format!("{rel} belongs to another chain")));
    }
    Ok(Job { chain: MettsChain::resume(params, state)?, keep: Some(end as u64) })
}

enum Msg {
    Lines(usize, String),
    Done,
}

/// Summary of a finished run.
#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub records: Vec<ChainRecord>,
}

/// Runs (or resumes) every chain of `cfg` to `cfg.steps` steps.
pub fn run_metts(cfg: &Config, resume: bool) -> Result<RunSummary> {
    let out = cfg.output_dir();
    fs::create_dir_all(out.join("checkpoints")).at(&out)?;
    let started = crate::unix_time();
    fs::write(out.join("config.json"), serde_json::to_string_pretty(&cfg.to_value())?).at(&out)?;

    let mut files = Vec::with_capacity(cfg.n_chains);
    let mut jobs = VecDeque::new();
    for k in 0..cfg.n_chains {
        let path = out.join(chain_log_name(k));
        let job = if resume { resume_job(cfg, &out, k)? } else { Job { chain: MettsChain::new(cfg.metts_params()?, k, chain_seed(cfg.seed, k)), keep: None } };
        let file = match job.keep {
            Some(len) => {
                let f = OpenOptions::new().write(true).open(&path).at(&path)?;
                f.set_len(len).at(&path)?;
                drop(f);
                OpenOptions::new().append(true).open(&path).at(&path)?
            }
            None => {
                let mut f = File::create(&path).at(&path)?;
                f.write_all(initial_event(cfg, k).to_line().as_bytes()).at(&path)?;
                f
            }
        };
        files.push((path, file));
        jobs.push_back(job);
    }

    let queue = Mutex::new(jobs);
    let failure: Mutex<Option<CliError>> = Mutex::new(None);
    let (tx, rx) = mpsc::channel::<Msg>();
    std::thread::scope(|scope| -> Result<()> {
        let writer = scope.spawn(move || -> Result<()> {
            for msg in rx {
                match msg {
                    Msg::Lines(k, text) => {
                        let (path, f) = &mut files[k];
                        f.write_all(text.as_bytes()).at(path)?;
                    }
                    Msg::Done => break,
                }
            }
            for (path, f) in &mut files {
                f.sync_all().at(path)?;
            }
            Ok(())
        });
        let workers: Vec<_> = (0..cfg.workers.min(cfg.n_chains.max(1)))
            .map(|_| {
                let tx = tx.clone();
                let (queue, failure, out) = (&queue, &failure, &out);
                scope.spawn(move || loop {
                    let Some(job) = queue.lock().unwrap().pop_front() else { break };
                    if let Err(e) = drive(cfg, out, job, &tx) {
                        failure.lock().unwrap().get_or_insert(e);
                        break;
                    }
                })
            })
            .collect();
        for w in workers {
            w.join().expect("worker panicked");
        }
        let _ = tx.send(Msg::Done);
        writer.join().expect("writer panicked")
    })?;
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }

    let logs: Vec<PathBuf> = (0..cfg.n_chains).map(|k| out.join(chain_log_name(k))).collect();
    let records = crate::analysis::load_records(&logs, None)?;
    let mut summary = serde_json::Map::new();
    for o in &cfg.observables {
        if let Ok(est) = bunched_error(&records, &o.to_string(), Confidence::P95) {
            summary.insert(o.to_string(), json!({"mean": est.mean, "stderr": est.stderr, "ci95": est.half_width()}));
        }
    }
    crate::write_meta(&out, "metts", started, json!({ "resumed": resume, "estimates": summary }))?;
    Ok(RunSummary { out_dir: out, records })
}

fn drive(cfg: &Config, out: &Path, job: Job, tx: &mpsc::Sender<Msg>) -> Result<()> {
    let mut chain = job.chain;
    let k = chain.state().chain;
    while chain.state().step < cfg.steps {
        let step = chain.state().step + 1;
        let result = chain.advance()?;
        let mut text: String = step_events(cfg, k, step, &result).iter().map(Event::to_line).collect();
        if step % cfg.checkpoint_every == 0 {
            let rel = checkpoint_rel(k, step);
            let extra = json!({ "chain_state": chain.state(), "config": cfg.to_value() });
            save_state(&out.join(&rel), &result.state, extra)?;
            text.push_str(&Event::Checkpoint { chain: k, step, path: rel }.to_line());
        }
        if tx.send(Msg::Lines(k, text)).is_err() {
            // the writer failed and reports why
            break;
        }
    }
    Ok(())
}
