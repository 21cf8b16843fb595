//! The `irim` command-line front door: data generation, training,
//! reconstruction, evaluation, invariant checks, and image export.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O error, 3 failed check.

mod check;
mod commands;
mod config;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

/// A command failure carrying its process exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Io(String),
    Check(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Io(_) => 2,
            Failure::Check(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Io(m) | Failure::Check(m) => m,
        }
    }
}

/// Maps a library error onto an exit code: I/O and file-format problems
/// are exit 2, everything else is a usage problem.
pub fn fail(context: &str, err: irim::Error) -> Failure {
    match err {
        irim::Error::Io(_) | irim::Error::Format(_) => Failure::Io(format!("{context}: {err}")),
        _ => Failure::Usage(format!("{context}: {err}")),
    }
}

/// Shorthand for propagating a library result with a context prefix.
pub fn lib<T>(context: &str, result: irim::Result<T>) -> Result<T, Failure> {
    result.map_err(|e| fail(context, e))
}

pub type CmdResult = Result<(), Failure>;

#[derive(Parser)]
#[command(name = "irim", version, about = "Undersampled MRI reconstruction with an invertible recurrent inference machine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a phantom dataset and write it as a single binary file
    GenerateData(commands::GenerateArgs),
    /// Train a model, writing a resumable checkpoint and a metrics log
    Train(commands::TrainArgs),
    /// Reconstruct records with a trained model and export PGM images
    Reconstruct(commands::ReconstructArgs),
    /// Score a checkpoint against a dataset at fixed accelerations
    Evaluate(commands::EvaluateArgs),
    /// Run the invariant suite; exits 3 if any property fails
    Check(check::CheckArgs),
    /// Export one record's magnitude image as a PGM file
    ExportImage(commands::ExportArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::GenerateData(args) => commands::generate_data(args),
        Command::Train(args) => commands::train(args),
        Command::Reconstruct(args) => commands::reconstruct(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Check(args) => check::run(args),
        Command::ExportImage(args) => commands::export_image(args),
    };
    if let Err(failure) = result {
        eprintln!("irim: {}", failure.message());
        std::process::exit(failure.exit_code());
    }
}
