//! `cotsel` — select high-utility long chain-of-thought instruction subsets.
//!
//! Subcommands cover the pipeline end to end: ingest a pool, analyze traces,
//! score question difficulty, select a subset, and inspect the result with
//! descriptive statistics and evaluation metrics.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 total scoring
//! failure.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

pub const EXIT_INPUT_ERROR: u8 = 2;
pub const EXIT_ALL_SCORING_FAILED: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn input(error: anyhow::Error) -> CliError {
        CliError {
            code: EXIT_INPUT_ERROR,
            error,
        }
    }

    pub fn scoring(error: anyhow::Error) -> CliError {
        CliError {
            code: EXIT_ALL_SCORING_FAILED,
            error,
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(error: anyhow::Error) -> CliError {
        CliError::input(error)
    }
}

pub type CliResult = Result<(), CliError>;

#[derive(Parser)]
#[command(name = "cotsel", version, about = "Long chain-of-thought instruction selection toolkit")]
struct Cli {
    /// TOML config file; flags override individual fields
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory for all output artifacts
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// error | warn | info | debug | trace
    #[arg(long, global = true)]
    log_level: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate, deduplicate and re-emit a pool in canonical form
    Ingest(commands::ingest::IngestArgs),
    /// Compute per-record trace metrics into a TSV table
    Analyze(commands::analyze::AnalyzeArgs),
    /// Score question difficulty via a judge endpoint or solve rates
    Score(commands::score::ScoreArgs),
    /// Rank records and emit the selected subset plus its manifest
    Select(commands::select::SelectArgs),
    /// Emit plot-ready statistics tables from metrics and selections
    Stats(commands::stats::StatsArgs),
    /// Score pre-generated solutions: Pass@1 and Maj@k per problem
    Eval(commands::eval::EvalArgs),
    /// Turn easy/hard labels into a judge training file
    EmitJudgeData(commands::judge_data::JudgeDataArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let mut config = match RunConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_INPUT_ERROR);
        }
    };
    if let Some(dir) = cli.output_dir {
        config.output_dir = Some(dir);
    }
    if let Some(level) = cli.log_level {
        config.log_level = Some(level);
    }
    env_logger::Builder::new()
        .parse_filters(config.log_level.as_deref().unwrap_or("warn"))
        .init();

    let result = match cli.command {
        Command::Ingest(args) => commands::ingest::run(&config, args),
        Command::Analyze(args) => commands::analyze::run(&config, args),
        Command::Score(args) => commands::score::run(&config, args),
        Command::Select(args) => commands::select::run(&config, args),
        Command::Stats(args) => commands::stats::run(&config, args),
        Command::Eval(args) => commands::eval::run(&config, args),
        Command::EmitJudgeData(args) => commands::judge_data::run(&config, args),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
