use std::path::PathBuf;

use pemn_core::{ContainerError, DataError, NetError, ProtoError, SelectError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Proto(#[from] ProtoError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("restored accuracy {restored} differs from recorded {recorded}")]
    RestoreMismatch { recorded: f64, restored: f64 },
    #[error("{0} artifact(s) could not be read")]
    Skipped(usize),
}

impl CliError {
    /// Process exit code: 2 for invalid input, 3 for I/O, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Json { .. } | CliError::Proto(_) | CliError::Net(_) => 2,
            CliError::Select(
                SelectError::Config(_) | SelectError::InvalidRatio { .. } | SelectError::UnreachableTarget(_),
            ) => 2,
            CliError::Io { .. } | CliError::Data(_) | CliError::Skipped(_) => 3,
            _ => 1,
        }
    }
}

pub fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
