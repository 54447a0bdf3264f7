//! `hds-impute`: synthesize data, train imputation models, score and impute.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or data error,
//! 3 numerical divergence.

mod commands;
mod config;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "hds-impute", version, about = "Sparse spatiotemporal tensor imputation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic observation set and its noise-free ground truth
    Synth(commands::SynthArgs),
    /// Preprocess, split and train; writes checkpoint, train log and manifest
    Train(commands::TrainArgs),
    /// Score a checkpoint on one part of the seeded split
    Eval(commands::EvalArgs),
    /// Predict every cell (or only the unobserved ones)
    Impute(commands::ImputeArgs),
    /// Compare network gradients against central finite differences
    Gradcheck(commands::GradcheckArgs),
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable files, inconsistent inputs.
    Usage(String),
    Data(hds_impute::Error),
    /// A check ran and failed.
    Verify(String),
}

impl CliError {
    pub fn from_config(e: hds_impute::Error) -> Self {
        CliError::Data(e)
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Verify(_) => 1,
            CliError::Data(hds_impute::Error::Divergence { .. }) => 3,
            CliError::Usage(_) | CliError::Data(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Verify(m) => f.write_str(m),
            CliError::Data(e) => write!(f, "{e}"),
        }
    }
}

impl From<hds_impute::Error> for CliError {
    fn from(e: hds_impute::Error) -> Self {
        CliError::Data(e)
    }
}

#[cfg(feature = "parallel")]
fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("HDS_IMPUTE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("HDS_IMPUTE_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))
}

#[cfg(not(feature = "parallel"))]
fn configure_threads() -> Result<(), CliError> {
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Impute(a) => commands::impute(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
