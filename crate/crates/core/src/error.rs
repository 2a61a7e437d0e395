use std::path::PathBuf;

use thiserror::Error;

use crate::motion::Dof;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid threshold: {0}")]
    InvalidThreshold(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("quadric system is singular (condition number {condition:.3e})")]
    SingularSystem { condition: f64 },

    #[error("motion is underconstrained, missing {0:?}")]
    Underconstrained(Vec<Dof>),

    #[error("correspondence set is empty")]
    EmptyCorrespondences,

    #[error("no near-horizontal plane among the detected planes")]
    NoHorizontalPlane,

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("PLY parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateInput(_) => "degenerate_input",
            Error::InvalidThreshold(_) => "invalid_threshold",
            Error::InvalidConfig(_) => "invalid_config",
            Error::SingularSystem { .. } => "singular_system",
            Error::Underconstrained(_) => "underconstrained",
            Error::EmptyCorrespondences => "empty_correspondences",
            Error::NoHorizontalPlane => "no_horizontal_plane",
            Error::InvalidTransform(_) => "invalid_transform",
            Error::Parse { .. } => "parse_error",
            Error::UnsupportedFormat(_) => "unsupported_format",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
