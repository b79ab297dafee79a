use std::path::Path;
use std::process::{Command, Output};

use peps_metts::ed::gibbs_observable;
use peps_metts::models::ModelSpec;
use peps_metts::observables::Observable;
use peps_metts::stats::{from_csv, ANALYSIS_HEADER};
use serde_json::Value;

fn cli(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_peps-metts"));
    cmd.args(args).env_remove("PEPS_METTS_OUT");
    if let Some(p) = env_out {
        cmd.env("PEPS_METTS_OUT", p);
    }
    cmd.output().unwrap()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

const SMALL: &[&str] = &["--lx", "2", "--ly", "2", "--beta", "1.0", "--dtau", "0.05", "--D", "2", "--chi", "8", "--chi_sample", "8", "--observables", "C1,sz_center"];

fn metts(extra: &[&str], out: &Path) -> Output {
    let mut args = vec!["metts"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ok(cli(&args, Some(out)))
}

fn lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn zero_steps_write_only_the_initial_record() {
    let dir = tempfile::tempdir().unwrap();
    metts(&["--steps", "0", "--n_chains", "2"], dir.path());
    for k in 0..2 {
        let log = lines(&dir.path().join(format!("chain_{k}.jsonl")));
        assert_eq!(log.len(), 1);
        assert_eq!(log[0]["type"], "sample");
        assert_eq!(log[0]["step"], 0);
        assert_eq!(log[0]["configuration"], "00/00");
        assert_eq!(log[0]["run"]["D"], 2);
    }
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("run_meta.json")).unwrap()).unwrap();
    assert!(meta["started_unix"].as_f64().unwrap() > 0.0);
}

#[test]
fn same_seed_gives_identical_logs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["--steps", "4", "--n_chains", "2", "--workers", "2", "--seed", "11", "--checkpoint_every", "2"];
    metts(&args, a.path());
    metts(&args, b.path());
    for name in ["chain_0.jsonl", "chain_1.jsonl", "config.json"] {
        let (x, y) = (std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        assert_eq!(x, y, "{name} differs");
    }
    let types: Vec<String> = lines(&a.path().join("chain_1.jsonl")).iter().map(|v| v["type"].as_str().unwrap().to_string()).collect();
    for t in ["sample", "step", "ntu_report", "checkpoint"] {
        assert!(types.iter().any(|x| x == t), "missing {t}");
    }
    // different chains use different seeds
    assert_ne!(std::fs::read(a.path().join("chain_0.jsonl")).unwrap(), std::fs::read(a.path().join("chain_1.jsonl")).unwrap());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let (full, cut) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let common = ["--n_chains", "2", "--seed", "5", "--checkpoint_every", "3", "--log_ntu", "false"];
    metts(&[&common[..], &["--steps", "7"]].concat(), full.path());
    metts(&[&common[..], &["--steps", "5"]].concat(), cut.path());
    assert!(cut.path().join("checkpoints/chain_1_step_000003.peps").exists());
    assert!(cut.path().join("checkpoints/chain_1_step_000003.peps.json").exists());
    metts(&[&common[..], &["--steps", "7", "--resume"]].concat(), cut.path());
    for k in 0..2 {
        // the header keeps the step count of the invocation that wrote it
        let name = format!("chain_{k}.jsonl");
        let (a, b) = (std::fs::read_to_string(full.path().join(&name)).unwrap(), std::fs::read_to_string(cut.path().join(&name)).unwrap());
        assert_eq!(a.split_once('\n').unwrap().1, b.split_once('\n').unwrap().1);
        assert_eq!(a.lines().count(), 1 + 7 * 2 + 2);
    }
}

#[test]
fn resume_refuses_a_different_run() {
    let dir = tempfile::tempdir().unwrap();
    metts(&["--steps", "3", "--n_chains", "1", "--checkpoint_every", "3"], dir.path());
    let mut args = vec!["metts", "--resume", "--steps", "4", "--n_chains", "1", "--g", "3.0"];
    args.extend_from_slice(SMALL);
    let out = cli(&args, Some(dir.path()));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("different configuration"));
}

#[test]
fn analyze_writes_the_table() {
    let dir = tempfile::tempdir().unwrap();
    metts(&["--steps", "12", "--n_chains", "2", "--burn_in", "2", "--observables", "C1,sz_center", "--log_ntu", "false"], dir.path());
    let csv_path = dir.path().join("analysis.csv");
    ok(cli(&["analyze", dir.path().to_str().unwrap(), "--out", csv_path.to_str().unwrap()], None));
    let text = std::fs::read_to_string(&csv_path).unwrap();
    assert!(text.starts_with(ANALYSIS_HEADER));
    let rows = from_csv(&text).unwrap();
    assert_eq!(rows.len(), 2 * 20);
    assert!(rows.iter().all(|r| r.observable == "C1" || r.observable == "sz_center"));
    let c1: Vec<_> = rows.iter().filter(|r| r.observable == "C1").collect();
    assert_eq!(c1.last().unwrap().s, 20);
    assert!(c1[15].stderr.is_some() && c1[14].stderr.is_none());

    let stdout = ok(cli(&["analyze", dir.path().join("chain_0.jsonl").to_str().unwrap(), "--burn_in", "0", "--observables", "C1"], None)).stdout;
    assert_eq!(from_csv(&String::from_utf8(stdout).unwrap()).unwrap().len(), 12);
}

#[test]
fn analyze_reports_the_bad_line() {
    let dir = tempfile::tempdir().unwrap();
    metts(&["--steps", "2", "--n_chains", "1", "--log_ntu", "false"], dir.path());
    let log = dir.path().join("chain_0.jsonl");
    let mut text = std::fs::read_to_string(&log).unwrap();
    text.push_str("{\"type\": \"step\", \"chain\": 0}\n");
    std::fs::write(&log, &text).unwrap();
    let n = text.lines().count();
    let out = cli(&["analyze", log.to_str().unwrap()], None);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains(&format!("chain_0.jsonl:{n}:")));
}

#[test]
fn exact_matches_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(cli(&["exact", "--lx", "2", "--ly", "3", "--beta", "0.7", "--observables", "C1,energy,sx_mean"], Some(dir.path())));
    let printed: Value = serde_json::from_slice(&out.stdout).unwrap();
    let file: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("exact.json")).unwrap()).unwrap();
    assert_eq!(printed, file);
    let spec = ModelSpec::tfim(2.9, 2, 3).unwrap();
    for (name, obs) in [("C1", Observable::Correlator(1)), ("energy", Observable::Energy), ("sx_mean", Observable::MeanX)] {
        assert_eq!(file["values"][name].as_f64().unwrap(), gibbs_observable(&spec, 0.7, &obs).unwrap());
    }
    assert_eq!(file["config"]["lx"], 2);
}

#[test]
fn purify_at_infinite_temperature() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p");
    let args = ["purify", "--lx", "2", "--ly", "2", "--beta", "0", "--observables", "C1,sz_center,energy", "--out_dir", out.to_str().unwrap()];
    ok(cli(&args, None));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(out.join("purification.json")).unwrap()).unwrap();
    for name in ["C1", "sz_center", "energy"] {
        assert_eq!(doc["values"][name].as_f64().unwrap(), 0.0, "{name}");
    }
    assert_eq!(doc["gates"], 0);
    let (_, meta) = peps_metts::checkpoint::load_state(&out.join("purification.peps")).unwrap();
    assert!(meta.ancilla);
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"lx": 2, "ly": 2, "temperature": 1.0}"#).unwrap();
    let out = cli(&["exact", "--config", path.to_str().unwrap()], Some(dir.path()));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("temperature"));
}
