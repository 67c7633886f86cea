use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mismatch_cli::commands::{self, ValidateOptions};
use mismatch_cli::config::CONFIG_ENV;
use mismatch_cli::{CliError, LossRange, ScenarioConfig};

/// Detector-efficiency-mismatch attacks on a scrambled BB84 receiver.
#[derive(Parser, Debug)]
#[command(name = "mismatch", version, about)]
struct Cli {
    /// Scenario file (TOML). Falls back to the built-in default scenario.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Honest sifted rate for one loss or a loss range.
    Baseline {
        #[arg(long, conflicts_with = "losses")]
        loss: Option<f64>,
        /// Range `A:B:STEP` in dB, inclusive.
        #[arg(long)]
        losses: Option<LossRange>,
        /// Also write the table to this file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Rates, errors and QBER of a given strategy.
    AttackEval {
        #[arg(long)]
        strategy: PathBuf,
        /// Override the configured line loss (dB).
        #[arg(long)]
        loss: Option<f64>,
        /// Output file (JSON); standard output if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Find Eve's lowest-QBER strategy at one line loss.
    Optimize {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        loss: Option<f64>,
    },
    /// Optimize over a range of line losses.
    Sweep {
        #[arg(long)]
        losses: Option<LossRange>,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (default: available parallelism).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Compare the analytic model with Monte Carlo simulation.
    Validate {
        #[arg(long, default_value_t = 1_000_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the number of random scenarios.
        #[arg(long)]
        scenarios: Option<usize>,
        /// Corrupt every analytic value by +10 standard errors (must fail).
        #[arg(long)]
        inject_defect: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = ScenarioConfig::resolve(cli.config.as_deref())?;
    match cli.command {
        Command::Baseline { loss, losses, csv } => {
            let range = match (loss, losses) {
                (Some(x), _) => format!("{x}").parse().map_err(CliError::Config)?,
                (None, Some(r)) => r,
                (None, None) => cfg.channel.losses,
            };
            commands::baseline(&cfg, range, csv.as_deref())
        }
        Command::AttackEval { strategy, loss, out } => {
            commands::attack_eval(&cfg, &strategy, loss, out.as_deref()).map(drop)
        }
        Command::Optimize { out, loss } => commands::optimize(&cfg, loss, &out).map(drop),
        Command::Sweep { losses, out, jobs } => {
            commands::sweep(&cfg, losses.unwrap_or(cfg.channel.losses), &out, jobs).map(drop)
        }
        Command::Validate {
            trials,
            seed,
            scenarios,
            inject_defect,
            out,
            jobs,
        } => commands::validate(
            &cfg,
            ValidateOptions {
                trials,
                seed,
                scenarios,
                inject_defect,
                jobs,
            },
            out.as_deref(),
        )
        .map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
