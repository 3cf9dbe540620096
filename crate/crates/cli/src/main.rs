use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = fedmark_cli::Cli::parse();
    match fedmark_cli::run(&cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
