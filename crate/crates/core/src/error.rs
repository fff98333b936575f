use std::path::PathBuf;

use thiserror::Error;

/// Error type shared by every stage of the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("metadata error: {0}")]
    Metadata(String),

    #[error("raster has no bands")]
    EmptyRaster,

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("projection error: {0}")]
    Projection(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("transport error ({}): {message}", if *.retryable { "retryable" } else { "fatal" })]
    Transport { message: String, retryable: bool },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown class label {0}")]
    Label(i64),

    #[error("degenerate curve: {0}")]
    DegenerateCurve(String),

    #[error("no threshold satisfies the objective: {0}")]
    NoSolution(String),

    #[error("render error: {0}")]
    Render(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 2 validation, 3 transport, 4 data integrity,
    /// 5 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Validation(_) | Error::Argument(_) => 2,
            Error::Transport { .. } => 3,
            Error::Format(_)
            | Error::Metadata(_)
            | Error::EmptyRaster
            | Error::Integrity(_)
            | Error::Parse(_)
            | Error::Label(_)
            | Error::Alignment(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 5,
        }
    }
}
