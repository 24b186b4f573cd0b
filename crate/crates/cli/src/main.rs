use std::process::ExitCode;

use clap::Parser;
use focuss_cli::args::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match focuss_cli::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("focuss: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
