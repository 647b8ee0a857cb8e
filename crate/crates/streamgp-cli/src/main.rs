//! `streamgp` command-line interface.
//!
//! Exit codes: 0 success, 1 usage or input problems, 2 numerical failure
//! (including failed oracle checks). `STREAMGP_THREADS` caps internal
//! parallelism.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use streamgp_cli::config::{ExperimentConfig, SynthKind, CONFIG_HELP};
use streamgp_cli::data::{generate_synthetic, write_csv};
use streamgp_cli::experiment::run_experiment_to_csv;
use streamgp_cli::oracle::oracle_check;

#[derive(Parser)]
#[command(
    name = "streamgp",
    about = "Streaming sparse Gaussian-process regression with recurrently evolved interdomain inducing variables",
    after_help = CONFIG_HELP,
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonFlags {
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a streaming experiment described by a config file.
    Run {
        /// Path to the `key = value` config file.
        config: PathBuf,
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Generate a synthetic dataset CSV.
    Synth {
        /// Generator kind: sine-drift, piecewise or two-cluster-2d.
        kind: String,
        /// Number of points.
        n: usize,
        /// Seed.
        seed: u64,
        /// Output CSV path.
        out: PathBuf,
        /// Observation-noise standard deviation.
        #[arg(long, default_value_t = 0.1)]
        noise_sd: f64,
        /// Suppress progress output.
        #[arg(long)]
        quiet: bool,
    },
    /// Run the quadrature-vs-recurrence and streaming-vs-batch checks.
    OracleCheck {
        /// Path to the `key = value` config file (thresholds via oc_* keys).
        config: PathBuf,
        #[command(flatten)]
        flags: CommonFlags,
    },
}

fn init_threads() {
    if let Ok(value) = std::env::var("STREAMGP_THREADS") {
        if let Ok(threads) = value.parse::<usize>() {
            if threads >= 1 {
                // Ignore the error if a global pool already exists.
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
        }
    }
}

/// Whether an error chain bottoms out in a numerical failure.
fn is_numerical(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        cause
            .downcast_ref::<streamgp_core::Error>()
            .map(|e| matches!(e, streamgp_core::Error::Numerical(_)))
            .unwrap_or(false)
            || cause.to_string().starts_with("numerical failure")
    })
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Run { config, flags } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(seed) = flags.seed {
                cfg.seed = seed;
            }
            if let Some(out) = flags.out {
                cfg.out = out;
            }
            if !flags.quiet {
                eprintln!("running {cfg}");
            }
            let report = run_experiment_to_csv(&cfg)?;
            if !flags.quiet {
                let last = report.rows.last();
                if let Some(row) = last {
                    eprintln!(
                        "done: {} rows, final task rmse {:.4}, nlpd {:.4} -> {}",
                        report.rows.len(),
                        row.rmse,
                        row.nlpd,
                        cfg.out.display()
                    );
                }
            }
            Ok(0)
        }
        Command::Synth {
            kind,
            n,
            seed,
            out,
            noise_sd,
            quiet,
        } => {
            let kind = SynthKind::parse(&kind)?;
            let batch = generate_synthetic(kind, n, noise_sd, seed)?;
            write_csv(&out, &batch).context("writing dataset")?;
            if !quiet {
                eprintln!("wrote {} points to {}", batch.len(), out.display());
            }
            Ok(0)
        }
        Command::OracleCheck { config, flags } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(seed) = flags.seed {
                cfg.seed = seed;
            }
            let report = oracle_check(&cfg)?;
            if !flags.quiet {
                print!("{}", report.table());
            }
            if report.all_pass() {
                Ok(0)
            } else {
                if flags.quiet {
                    eprintln!("oracle checks failed");
                }
                Ok(2)
            }
        }
    }
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_numerical(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
