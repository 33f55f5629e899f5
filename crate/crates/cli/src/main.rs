use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match wuedet_cli::run(wuedet_cli::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
