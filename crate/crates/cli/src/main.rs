use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use conveyance::par::Execution;
use conveyance_cli::commands::{loss_eval, run_experiment, LossEvalArgs, RunOverrides};
use conveyance_cli::config::ExperimentKind;

/// Conveyance loss experiments.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the loss on logits read from a file.
    LossEval {
        #[arg(long)]
        logits: PathBuf,
        /// Q matrix as 0/1 text or JSON (by `.json` extension).
        #[arg(long)]
        q: PathBuf,
        /// One target label per logit row.
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ring toy with an ordinal plausibility window.
    Toy2d(RunArgs),
    /// Structured label noise on a Gaussian mixture.
    NoiseRecovery(RunArgs),
    /// Grid over alpha and beta under structured noise.
    Sweep(RunArgs),
    /// Instances inheriting bag labels.
    MilToy(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; missing keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
}

impl From<RunArgs> for RunOverrides {
    fn from(a: RunArgs) -> Self {
        RunOverrides {
            config: a.config,
            seed: a.seed,
            out: a.out,
            alpha: a.alpha,
            beta: a.beta,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    let exec = Execution::default();
    let result = match cli.command {
        Command::LossEval { logits, q, target, alpha, beta, out } => loss_eval(&LossEvalArgs {
            logits,
            q,
            targets: target,
            alpha,
            beta,
            out,
        })
        .map(|(_, text)| text),
        Command::Toy2d(a) => run_experiment(ExperimentKind::Toy2d, &a.into(), exec).map(|(_, s)| s),
        Command::NoiseRecovery(a) => {
            run_experiment(ExperimentKind::NoiseRecovery, &a.into(), exec).map(|(_, s)| s)
        }
        Command::Sweep(a) => run_experiment(ExperimentKind::Sweep, &a.into(), exec).map(|(_, s)| s),
        Command::MilToy(a) => run_experiment(ExperimentKind::MilToy, &a.into(), exec).map(|(_, s)| s),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
