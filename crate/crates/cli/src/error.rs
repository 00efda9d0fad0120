use std::path::PathBuf;

use neurosteer_core::Error as CoreError;

pub type Result<T> = std::result::Result<T, CliError>;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Config = 2,
    Data = 3,
    Compute = 4,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("cannot read config {path}: {source}")]
    ConfigIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("report refused, stages not complete: {}", .0.join(", "))]
    Incomplete(Vec<String>),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) | CliError::ConfigIo { .. } => ExitCode::Config,
            CliError::Incomplete(_) => ExitCode::Data,
            CliError::Output { .. } => ExitCode::Compute,
            CliError::Core(e) => match e {
                CoreError::Config(_) => ExitCode::Config,
                CoreError::Length { .. }
                | CoreError::Format { .. }
                | CoreError::Parse { .. }
                | CoreError::Duplicate { .. }
                | CoreError::DataSufficiency(_)
                | CoreError::Data(_)
                | CoreError::Completeness(_)
                | CoreError::Io { .. }
                | CoreError::Json(_) => ExitCode::Data,
                CoreError::Addressing { .. }
                | CoreError::Contract(_)
                | CoreError::Capability(_)
                | CoreError::Merge(_) => ExitCode::Compute,
            },
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}
