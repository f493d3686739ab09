use std::path::PathBuf;

/// Errors produced by the segmentation, alignment and evaluation routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// File layout does not match the expected sample encoding.
    #[error("format error: {0}")]
    Format(String),

    /// Sample payload is unusable (NaN/Inf, empty...).
    #[error("data error at sample {index}: {reason}")]
    Data { index: usize, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    /// Caller violated an operation precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("trace too short: {reason} (max feasible segments: {max_feasible})")]
    Bounds { reason: String, max_feasible: usize },

    #[error("no periodicity detected: {0}")]
    NoPeriodicity(String),

    #[error("delta not identifiable: distance curve is flat (spread {spread:e})")]
    DeltaNotIdentifiable { spread: f64 },

    #[error("no CPs found (max observed score {max_score:.4})")]
    NoCpsFound { max_score: f64 },

    #[error("degenerate profiling set: key byte {byte} has fewer than 2 distinct labels")]
    DegenerateProfile { byte: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
