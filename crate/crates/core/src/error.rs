//! Error type shared by every stage of the pipeline.

use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by model construction, data ingestion, identification,
/// steering and evaluation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid model or run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Input does not fit the model's context window.
    #[error("length error: {len} tokens exceeds the limit of {limit}")]
    Length { len: usize, limit: usize },

    /// Malformed weight file.
    #[error("format error at byte offset {offset}: {reason}")]
    Format { offset: u64, reason: String },

    /// A neuron address outside the model's FFN shape.
    #[error("addressing error: neuron ({layer}, {unit}) is outside {n_layers} layers x {d_ff} units")]
    Addressing {
        layer: usize,
        unit: usize,
        n_layers: usize,
        d_ff: usize,
    },

    /// A caller violated an operation's precondition.
    #[error("contract error: {0}")]
    Contract(String),

    /// Malformed line in a JSONL input.
    #[error("parse error in {path} line {line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    /// Repeated record id in an input file.
    #[error("duplicate id {id:?} in {path} line {line}")]
    Duplicate {
        path: PathBuf,
        line: usize,
        id: String,
    },

    /// Not enough data to compute a statistic.
    #[error("data-sufficiency error: {0}")]
    DataSufficiency(String),

    /// A statistic needs data that was not collected.
    #[error("capability error: {0}")]
    Capability(String),

    /// Profiles that cannot be merged.
    #[error("merge error: {0}")]
    Merge(String),

    /// Semantically invalid data (missing answers, bad labels, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A result table is missing entries.
    #[error("completeness error: missing {0:?}")]
    Completeness(Vec<String>),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
