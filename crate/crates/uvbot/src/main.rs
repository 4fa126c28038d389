use std::process::ExitCode;

use clap::Parser;
use uvbot::cli::{execute, init_logging, Cli};

fn main() -> ExitCode {
    init_logging();
    ExitCode::from(execute(Cli::parse()))
}
