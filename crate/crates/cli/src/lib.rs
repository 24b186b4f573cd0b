//! Command layer behind the `focuss` binary.
//!
//! Exit codes: 0 success, 2 bad input or schema, 3 solver failure (including
//! running out of iterations), 4 infeasible generator dimensions.

pub mod args;
pub mod commands;
pub mod io;

use thiserror::Error;

use args::{Cli, Command};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Infeasible(_) => 4,
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Solve(a) => commands::cmd_solve(a),
        Command::Rate(a) => commands::cmd_rate(a),
        Command::Gen(a) => commands::cmd_gen(a),
        Command::Oracle(a) => commands::cmd_oracle(a),
        Command::NewtonCheck(a) => commands::cmd_newton_check(a),
        Command::Bench(a) => commands::cmd_bench(a),
    }
}
