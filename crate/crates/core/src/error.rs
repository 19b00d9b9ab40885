use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Blur parameters or labels outside their declared domain.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// Image, kernel or field shapes that violate an operation's preconditions.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Generator, trainer or evaluator settings that cannot be honored.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// No admissible sample could be drawn for the requested patch size.
    #[error("no admissible sample for patch size {patch_size} after {attempts} draws")]
    Exhausted { patch_size: usize, attempts: usize },

    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ::image::ImageError,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-parsable category, used by the CLI's one-line error report.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidParams(_) => "params",
            Error::InvalidInput(_) => "input",
            Error::InvalidConfig(_) => "config",
            Error::Exhausted { .. } => "exhausted",
            Error::Divergence { .. } => "divergence",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
