use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use peps_metts_cli::analysis::analyze_logs;
use peps_metts_cli::log::collect_logs;
use peps_metts_cli::run::run_metts;
use peps_metts_cli::{run_exact, run_purification, CliError, Config};
use serde_json::{Map, Value};

#[derive(Parser)]
#[command(name = "peps-metts", version, about = "Finite-temperature PEPS: METTS, purification and exact references")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run METTS Markov chains.
    Metts {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from the last checkpoint of every chain.
        #[arg(long)]
        resume: bool,
    },
    /// Evolve a purification to the target temperature.
    Purify(RunArgs),
    /// Exact thermal values by full diagonalization.
    Exact(RunArgs),
    /// Running averages, bunched errors and autocorrelation times of run logs.
    Analyze(AnalyzeArgs),
}

/// Flags mirror the keys of the JSON config and override it.
#[derive(Args)]
struct RunArgs {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    g: Option<f64>,
    #[arg(long)]
    lx: Option<usize>,
    #[arg(long)]
    ly: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    dtau: Option<f64>,
    /// Maximal PEPS bond dimension.
    #[arg(long = "D")]
    bond_dim: Option<usize>,
    #[arg(long)]
    chi: Option<usize>,
    #[arg(long = "chi_sample")]
    chi_sample: Option<usize>,
    #[arg(long = "n_chains")]
    n_chains: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "burn_in")]
    burn_in: Option<usize>,
    /// Comma-separated, e.g. `C1,C2,energy`.
    #[arg(long, value_delimiter = ',')]
    observables: Option<Vec<String>>,
    #[arg(long = "out_dir")]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long = "checkpoint_every")]
    checkpoint_every: Option<usize>,
    #[arg(long = "log_ntu")]
    log_ntu: Option<bool>,
    #[arg(long = "single_layer")]
    single_layer: Option<bool>,
}

impl RunArgs {
    fn resolve(&self) -> Result<Config, CliError> {
        let mut m = Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("model", self.model.clone().map(Value::from));
        put("g", self.g.map(Value::from));
        put("lx", self.lx.map(Value::from));
        put("ly", self.ly.map(Value::from));
        put("beta", self.beta.map(Value::from));
        put("dtau", self.dtau.map(Value::from));
        put("D", self.bond_dim.map(Value::from));
        put("chi", self.chi.map(Value::from));
        put("chi_sample", self.chi_sample.map(Value::from));
        put("n_chains", self.n_chains.map(Value::from));
        put("steps", self.steps.map(Value::from));
        put("seed", self.seed.map(Value::from));
        put("burn_in", self.burn_in.map(Value::from));
        put("observables", self.observables.clone().map(Value::from));
        put("out_dir", self.out_dir.as_ref().map(|p| Value::from(p.to_string_lossy().into_owned())));
        put("workers", self.workers.map(Value::from));
        put("checkpoint_every", self.checkpoint_every.map(Value::from));
        put("log_ntu", self.log_ntu.map(Value::from));
        put("single_layer", self.single_layer.map(Value::from));
        Config::resolve(self.config.as_deref(), m)
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Chain logs, or run directories holding `chain_*.jsonl`.
    #[arg(required = true)]
    paths: Vec<PathBuf>,
    /// Overrides the burn-in recorded in the logs.
    #[arg(long = "burn_in")]
    burn_in: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    observables: Option<Vec<String>>,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Metts { run, resume } => {
            let cfg = run.resolve()?;
            let summary = run_metts(&cfg, resume)?;
            let meta = std::fs::read_to_string(summary.out_dir.join("run_meta.json"))
                .map_err(|source| CliError::Io { path: summary.out_dir.join("run_meta.json"), source })?;
            println!("{meta}");
        }
        Command::Purify(run) => print_json(&run_purification(&run.resolve()?)?),
        Command::Exact(run) => print_json(&run_exact(&run.resolve()?)?),
        Command::Analyze(a) => {
            let paths = collect_logs(&a.paths)?;
            let csv = analyze_logs(&paths, a.burn_in, a.observables.as_deref())?;
            match a.out {
                Some(p) => std::fs::write(&p, csv).map_err(|source| CliError::Io { path: p, source })?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
