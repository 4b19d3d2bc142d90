//! Batch command-line interface over `dsoftki-core`.
//!
//! Every command is a plain function returning a serializable report, so the
//! binary is a thin argument-parsing shell and tests can drive commands directly.

pub mod args;
pub mod commands;
pub mod config;
pub mod report;

use std::path::Path;

use dsoftki_core::Error;

pub use args::{Cli, Command};
pub use config::{DatasetSource, Mode, RunConfig};
pub use report::{MetricsReport, SCHEMA_VERSION};

pub const MODEL_FILE: &str = "model.json";
pub const EXACT_MODEL_FILE: &str = "exact_model.json";
pub const TELEMETRY_FILE: &str = "telemetry.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const GRID_FILE: &str = "grid.csv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Numerical(String),

    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// 1 usage/config, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io { .. } => 2,
            CliError::Numerical(_) => 3,
            CliError::Core(e) => match e {
                Error::InvalidConfig(_) | Error::TooLarge { .. } => 1,
                Error::FactorizationFailed { .. }
                | Error::RankDeficient { .. }
                | Error::NotConverged { .. }
                | Error::Unrecoverable(_) => 3,
                Error::DimensionMismatch(_)
                | Error::UnknownFunction(_)
                | Error::DomainViolation { .. }
                | Error::DegenerateDimension { .. }
                | Error::Malformed { .. }
                | Error::VersionMismatch { .. }
                | Error::DimensionUnsupported(_)
                | Error::Io { .. }
                | Error::Archive(_) => 2,
            },
        }
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}
