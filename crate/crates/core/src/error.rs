use std::path::PathBuf;

use crate::backend::Capability;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image format error for {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("singular coefficient: {0}")]
    Singularity(String),
    #[error("invalid step sequence: t_prev={t_prev:?} must precede t={t}")]
    Sequencing { t: usize, t_prev: Option<usize> },
    #[error("numerical divergence: {0}")]
    NumericalDivergence(String),
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("no input masks found")]
    EmptyInput,
    #[error("output directory {0} already holds a run; pass --force or --resume")]
    OutputExists(PathBuf),
    #[error("backend does not support {0:?}")]
    Unsupported(Capability),
    #[error("backend request to {endpoint} failed after {attempts} attempt(s): status {status}: {body}")]
    Backend {
        endpoint: String,
        status: u16,
        body: String,
        attempts: u32,
    },
    #[error("backend transport error on {endpoint} after {attempts} attempt(s): {message}")]
    Transport {
        endpoint: String,
        message: String,
        attempts: u32,
    },
    #[error("backend request to {endpoint} timed out after {attempts} attempt(s)")]
    Timeout { endpoint: String, attempts: u32 },
    #[error("malformed backend payload: {0}")]
    Decode(String),
    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user configuration rather than runtime failures.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::EmptyInput | Error::OutputExists(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
