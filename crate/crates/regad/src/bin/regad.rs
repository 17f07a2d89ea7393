//! Experiment CLI. Exit codes: 0 success, 1 run failures, 2 invalid
//! config or arguments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use regad::data::SyntheticConfig;
use regad::harness::{self, HarnessError};

#[derive(Parser)]
#[command(name = "regad", about = "Noise-robust graph anomaly detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment grid and write metrics/summary artifacts.
    Run {
        /// TOML experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to $REGAD_OUT or ./runs, plus the
        /// experiment name).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's seed list, comma separated.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Override the config's noise-ratio list, comma separated.
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
    },
    /// Sweep the confident-set rate and edge-cap grids (full variant only).
    SweepHyper {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset directory and print its manifest.
    Gen {
        /// TOML file holding a synthetic generator config.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    /// Bad config or arguments: exit 2.
    Usage(String),
    /// The run itself failed: exit 1.
    Runtime(String),
}

fn usage(e: impl ToString) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: HarnessError) -> CliError {
    match e {
        HarnessError::Invalid(_) => CliError::Usage(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

fn read_config(path: &PathBuf) -> Result<harness::ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    harness::parse_config(&text).map_err(usage)
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Run {
            config,
            out,
            seeds,
            ratios,
        } => {
            let mut cfg = read_config(&config)?;
            if let Some(seeds) = seeds {
                cfg.seeds = seeds;
            }
            if let Some(ratios) = ratios {
                cfg.ratios = ratios;
            }
            harness::validate_config(&cfg).map_err(usage)?;
            let out_dir = harness::output_root(out).join(&cfg.name);
            let artifacts = harness::cmd_run(&cfg, &out_dir).map_err(runtime)?;
            println!(
                "wrote {} metric rows to {}",
                artifacts.rows.len(),
                out_dir.display()
            );
            for cell in &artifacts.summary {
                println!(
                    "{} ratio={} budget={} {}: auc {:.4} +/- {:.4} ({} runs)",
                    cell.dataset,
                    cell.ratio,
                    cell.budget,
                    cell.variant,
                    cell.mean_auc,
                    cell.std_auc,
                    cell.runs
                );
            }
            if artifacts.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                for (cell, err) in &artifacts.failures {
                    eprintln!("cell failed: {cell}: {err}");
                }
                Ok(ExitCode::from(1))
            }
        }
        Command::SweepHyper { config, out } => {
            let cfg = read_config(&config)?;
            let out_dir = harness::output_root(out).join(format!("{}-sweep", cfg.name));
            let points = harness::cmd_sweep_hyper(&cfg, &out_dir).map_err(runtime)?;
            for p in &points {
                println!(
                    "{}={}: auc {:.4} +/- {:.4} ({} runs)",
                    p.axis, p.value, p.mean_auc, p.std_auc, p.runs
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Gen { config, out } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| usage(format!("cannot read {}: {e}", config.display())))?;
            let synth: SyntheticConfig = toml::from_str(&text).map_err(usage)?;
            let manifest = harness::cmd_gen(&synth, &out).map_err(runtime)?;
            print!("{manifest}");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
