//! Command-line driver: configuration, observation input/output and the
//! end-to-end survival-curve run.

pub mod config;
pub mod io;
pub mod run;

pub use config::{ConfigFile, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid configuration or input data.
    #[error("{0}")]
    Config(String),
    #[error("{context}: {source}")]
    Numerical {
        context: &'static str,
        source: barrier_filter::Error,
    },
    /// Failure writing outputs or the cache.
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::Io(_) => 1,
        }
    }

    /// Wraps a library error, routing cache failures to the IO class.
    pub fn numerical(context: &'static str) -> impl FnOnce(barrier_filter::Error) -> CliError {
        move |source| match source {
            barrier_filter::Error::Cache(msg) => CliError::Io(format!("{context}: cache: {msg}")),
            source => CliError::Numerical { context, source },
        }
    }
}
