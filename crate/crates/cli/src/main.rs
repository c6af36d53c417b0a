//! `lap`: train, sample from and evaluate latent anchor plan story models.

mod evaluate;
mod failure;
mod generate;
mod settings;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "lap", version, about = "Latent anchor plan story models")]
struct Cli {
    /// Log filter, e.g. `info` or `latent_plan=debug`. RUST_LOG wins when set.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write stage checkpoints, metrics and a manifest.
    Train(train::TrainArgs),
    /// Sample stories from a checkpoint as JSON lines.
    Generate(generate::GenerateArgs),
    /// Compute likelihood, diversity and control metrics.
    Evaluate(evaluate::EvaluateArgs),
    /// Dump the inference network's per-sentence posteriors as JSON lines.
    Posteriors(evaluate::PosteriorArgs),
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train(args) => train::run(args),
        Command::Generate(args) => generate::run(args),
        Command::Evaluate(args) => evaluate::run(args),
        Command::Posteriors(args) => evaluate::dump_posteriors(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { failure::USAGE } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log_level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            log::error!("{:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
