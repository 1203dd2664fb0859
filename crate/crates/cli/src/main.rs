//! `fodkit` command-line interface.
//!
//! Every subcommand is a thin shell over the library operations: it parses
//! a config file plus flag overrides, runs the corresponding function, and
//! writes the outputs. Failures print a machine-readable JSON object on
//! stderr and exit with status 1; usage errors exit with status 2.
//!
//! Environment: `FODKIT_THREADS` caps the worker pool, `FODKIT_SEED`
//! overrides every seed found in configs.

mod cmd;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "fodkit", version, about = "Fiber orientation distribution toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom volume and its gradient files.
    Phantom(cmd::PhantomArgs),
    /// Select a well-conditioned subset of gradient directions.
    Subsample(cmd::SubsampleArgs),
    /// Fit FODs to a volume with csd, msmt, or ss3t.
    Fit(cmd::FitArgs),
    /// Extract per-voxel peaks from an FOD volume.
    Peaks(cmd::PeaksArgs),
    /// Compare two peak/AFD fields and report AR, AE, and AFD error.
    Metrics(cmd::MetricsArgs),
    /// Train an SH-to-FOD regressor.
    Train(cmd::TrainArgs),
    /// Apply a trained regressor to an input SH volume.
    Predict(cmd::PredictArgs),
    /// Run an experiment driver.
    #[command(subcommand)]
    Exp(ExpCommand),
}

#[derive(Subcommand)]
enum ExpCommand {
    /// Ground-truth consistency between split acquisition halves.
    Consistency(cmd::ExpArgs),
    /// Input-direction ablation of the learned regressor.
    Ablation(cmd::ExpArgs),
    /// Age domain-shift study.
    Ageshift(cmd::ExpArgs),
}

fn main() {
    if let Ok(threads) = std::env::var("FODKIT_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Phantom(args) => cmd::run_phantom(args),
        Command::Subsample(args) => cmd::run_subsample(args),
        Command::Fit(args) => cmd::run_fit(args),
        Command::Peaks(args) => cmd::run_peaks(args),
        Command::Metrics(args) => cmd::run_metrics(args),
        Command::Train(args) => cmd::run_train(args),
        Command::Predict(args) => cmd::run_predict(args),
        Command::Exp(ExpCommand::Consistency(args)) => cmd::run_exp(args, cmd::ExpKind::Consistency),
        Command::Exp(ExpCommand::Ablation(args)) => cmd::run_exp(args, cmd::ExpKind::Ablation),
        Command::Exp(ExpCommand::Ageshift(args)) => cmd::run_exp(args, cmd::ExpKind::AgeShift),
    };
    if let Err(e) = outcome {
        let payload = serde_json::json!({
            "error": { "code": e.code(), "message": e.to_string() }
        });
        eprintln!("{payload}");
        std::process::exit(1);
    }
}
