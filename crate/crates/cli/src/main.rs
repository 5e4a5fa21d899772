use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use noisy_control::harness::constants::{compute_theory_constants, theory_inputs};
use noisy_control::harness::output::{write_artifacts, TRACE_DIR};
use noisy_control::{run_batch, BatchOptions, Error, ExperimentConfig};

const EXIT_VALIDATION: u8 = 2;
const EXIT_BATCH: u8 = 3;

#[derive(Parser)]
#[command(name = "noisy-control", version, about = "Online control under unbounded noise: experiments and constants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (T, seed) episode in the config and write summary artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Write per-episode JSON-lines traces.
        #[arg(long)]
        trace: bool,
        /// Output directory; overrides the config's `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print the theory constants and bound curve as JSON.
    Constants {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        delta: f64,
    },
    /// Check the configured gain for strong stability and print the certificate.
    Certify {
        #[arg(long)]
        config: PathBuf,
    },
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        e if e.is_validation() => ExitCode::from(EXIT_VALIDATION),
        Error::Io { .. } => ExitCode::from(EXIT_VALIDATION),
        _ => ExitCode::from(EXIT_BATCH),
    }
}

fn print_json<S: serde::Serialize>(v: &S) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(config: PathBuf, trace: bool, out: Option<PathBuf>, workers: Option<usize>) -> ExitCode {
    let cfg = match ExperimentConfig::from_path(&config).and_then(|c| c.prepare::<f64>().map(|_| c)) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let dir = out
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let opts = BatchOptions {
        workers,
        trace_dir: (trace || cfg.output.trace).then(|| dir.join(TRACE_DIR)),
    };
    let report = match run_batch(&cfg, &opts) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    let paths = match write_artifacts(&report, &cfg, &dir) {
        Ok(p) => p,
        Err(e) => return fail(&e),
    };
    for r in &report.rows {
        println!(
            "T={:<6} seeds={:<3} diverged={:<3} median_regret={:.6e} bound={:.3e}",
            r.t, r.seed_count, r.diverged, r.regret_median, r.bound_value
        );
    }
    match report.slope {
        Some(s) => println!("slope={s:.4}"),
        None => println!("slope=NA"),
    }
    for p in paths {
        println!("wrote {}", p.display());
    }
    if let Some(msg) = &report.failure {
        eprintln!("batch failed: {msg}");
        return ExitCode::from(EXIT_BATCH);
    }
    if report.diverged > 0 {
        eprintln!("warning: {} episodes diverged and were excluded", report.diverged);
    }
    ExitCode::SUCCESS
}

fn constants(config: PathBuf, delta: f64) -> Result<(), Error> {
    let cfg = ExperimentConfig::from_path(&config)?;
    cfg.prepare::<f64>()?;
    print_json(&compute_theory_constants(&theory_inputs(&cfg, delta)?, &cfg.horizons)?)
}

fn certify(config: PathBuf) -> Result<(), Error> {
    let prep = ExperimentConfig::from_path(&config)?.prepare::<f64>()?;
    print_json(&prep.cert.summary())
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, trace, out, workers } => run(config, trace, out, workers),
        Command::Constants { config, delta } => constants(config, delta).map_or_else(|e| fail(&e), |_| ExitCode::SUCCESS),
        Command::Certify { config } => certify(config).map_or_else(|e| fail(&e), |_| ExitCode::SUCCESS),
    }
}
