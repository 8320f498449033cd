use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match pdpmf_cli::execute(pdpmf_cli::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
