use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match ecrl::cli::run(ecrl::cli::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
