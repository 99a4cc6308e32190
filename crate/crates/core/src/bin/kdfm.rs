use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kdfm_core::harness::{load_reports, run_experiment, table_csv, DataSpec, ExperimentConfig, Method, RunOptions};
use kdfm_core::{Error, Result};

/// FixMatch and KD-FixMatch experiments on small classifiers.
#[derive(Debug, Parser)]
#[command(name = "kdfm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train and evaluate one method.
    Run(RunArgs),
    /// Run a config file over several seeds.
    Sweep(SweepArgs),
    /// Collect report.json files below a directory into one table.
    Report {
        #[arg(long = "in")]
        dir: PathBuf,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// two-moons, blobs, csv:PATH or kdf1:PATH
    #[arg(long, value_parser = parse_data)]
    data: Option<DataSpec>,
    #[arg(long)]
    labels_per_class: Option<usize>,
    #[arg(long)]
    epochs_outer: Option<usize>,
    #[arg(long)]
    epochs_inner: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated, e.g. 1,2,3,4,5
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: PathBuf,
    /// Seeds trained concurrently.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_data(s: &str) -> Result<DataSpec, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            Ok(serde_json::from_str(&text)?)
        }
        None => Ok(ExperimentConfig::default()),
    }
}

fn log_every(cfg: &ExperimentConfig) -> Result<u64> {
    match std::env::var("KDFM_LOG_EVERY") {
        Ok(v) => v
            .trim()
            .parse::<u64>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("KDFM_LOG_EVERY must be a positive integer, got {v:?}"))),
        Err(_) => Ok(cfg.ssl.log_every),
    }
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(m) = args.method {
        cfg.method = m;
    }
    if args.alpha.is_some() {
        cfg.alpha = args.alpha;
    }
    if args.beta.is_some() {
        cfg.beta = args.beta;
    }
    if cfg.method == Method::KdFixmatchSce && cfg.alpha.is_none() && cfg.beta.is_none() {
        cfg.alpha = Some(1.0);
        cfg.beta = Some(0.1);
    }
    if let Some(d) = args.data {
        cfg.data = d;
    }
    if let Some(n) = args.labels_per_class {
        cfg.labels_per_class = n;
    }
    if let Some(n) = args.epochs_outer {
        cfg.ssl.epochs_outer = n;
    }
    if let Some(n) = args.epochs_inner {
        cfg.ssl.epochs_inner = n;
    }
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
    }
    execute(&cfg, args.out, 1)
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut cfg = load_config(Some(&args.config))?;
    if let Some(seeds) = args.seeds {
        cfg.seeds = seeds;
    }
    execute(&cfg, args.out, args.parallel)
}

fn execute(cfg: &ExperimentConfig, out: PathBuf, parallel: usize) -> Result<()> {
    let opts = RunOptions {
        out,
        log_every: log_every(cfg)?,
        parallel,
    };
    let report = run_experiment(cfg, &opts)?;
    for r in &report.runs {
        println!("seed {:>3}  accuracy {:6.2}%", r.seed, r.test_accuracy);
    }
    println!(
        "{} @ {} labels/class: {}",
        report.method_name,
        report.labels_per_class,
        report.cell()
    );
    Ok(())
}

fn report(dir: &Path) -> Result<()> {
    let reports = load_reports(dir)?;
    if reports.is_empty() {
        return Err(Error::Data(format!("no report.json under {}", dir.display())));
    }
    let csv = table_csv(&reports)?;
    fs::write(dir.join("table.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Report { dir } => report(&dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
