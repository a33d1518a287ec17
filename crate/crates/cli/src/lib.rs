//! Batch front end for the OQBM simulator: bundled figure scenarios, CSV
//! output with a run manifest, and a one-command invariant suite.

pub mod config;
pub mod output;
pub mod run;
pub mod scenarios;
pub mod suite;

pub use config::{ConfigError, Scenario};
pub use run::{moments_run, phase_validate, run, Overrides, RunManifest};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(#[from] oqbm_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{failed} of {total} suite checks failed")]
    Suite { failed: usize, total: usize },
}

impl CliError {
    /// 2 config, 3 numerical, 4 suite failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(ConfigError::Io(_)) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Suite { .. } => 4,
            CliError::Io(_) => 1,
        }
    }
}
