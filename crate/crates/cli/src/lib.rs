//! Experiment harness for the `darcy-smc` sampler: configuration, subcommands and
//! field rendering.

pub mod commands;
pub mod config;
pub mod render;

use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] darcy_smc::Error),
    #[error("{0} validation check(s) failed")]
    ChecksFailed(usize),
}

impl CliError {
    /// 2 for configuration problems, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(
                darcy_smc::Error::InvalidArgument(_) | darcy_smc::Error::Precondition(_),
            ) => 2,
            CliError::Core(_) | CliError::ChecksFailed(_) => 1,
        }
    }
}
