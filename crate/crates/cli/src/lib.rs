//! Reproducible experiment commands on top of `cohesim-core`.

pub mod commands;
pub mod config;
pub mod output;
pub mod plot;
pub mod verify;

pub use commands::{bench_scaling, build_db, run, BuildReport, Overrides, RunReport, RunSelection};
pub use config::{RunConfig, SCHEMA};
pub use verify::{verify, SuiteResult};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// Process exit status.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Verification(_) => 4,
        }
    }
}
