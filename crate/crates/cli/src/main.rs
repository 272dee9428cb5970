//! `rar`: build prompt sets, score responses, serve the engine over HTTP,
//! run toy GRPO experiments and print metric reports.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or input error,
//! 3 partial failure under `--strict`.

mod error;
mod ingest;
mod report;
mod score;
mod table;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rar_service::ServiceConfig;

use error::{input, runtime, CliError};

#[derive(Debug, Parser)]
#[command(name = "rar", version, about = "Retrieval-augmented reward engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clean fetched pages into a prompt set.
    Ingest(ingest::IngestArgs),
    /// Score a file of responses.
    Score(score::ScoreArgs),
    /// Run the HTTP scoring service.
    Serve(ServeArgs),
    /// GRPO on a synthetic knowledge task with a toy softmax policy.
    TrainToy(train::TrainArgs),
    /// Hallucination metrics over a results file.
    Report(report::ReportArgs),
    /// Summarize the step records of a training run.
    Stats(report::StatsArgs),
}

#[derive(Debug, clap::Args)]
struct ServeArgs {
    /// Service config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Listen address; RAR_LISTEN takes precedence over the config file.
    #[arg(long)]
    listen: Option<String>,
}

fn serve(args: ServeArgs) -> Result<(), CliError> {
    let mut config = match &args.config {
        Some(p) => ServiceConfig::load(p).map_err(input)?,
        None => {
            let mut c = ServiceConfig::default();
            c.apply_env(|k| std::env::var(k).ok());
            c
        }
    };
    if let Some(listen) = args.listen {
        if std::env::var(rar_service::config::LISTEN_ENV).is_err() {
            config.listen = listen;
        }
    }
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    rt.block_on(rar_service::run(config)).map_err(|e| match e {
        rar_service::ServiceError::Config(_) | rar_service::ServiceError::Datastore(_) => input(e),
        other => runtime(other),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => ingest::run(a),
        Command::Score(a) => score::run(a),
        Command::Serve(a) => serve(a),
        Command::TrainToy(a) => train::run(a),
        Command::Report(a) => report::run(a),
        Command::Stats(a) => report::stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
