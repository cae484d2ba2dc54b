use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("projection singular: point lies on the camera plane")]
    ProjectionSingular,

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("graph error: {0}")]
    Graph(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("undefined loss: every label is ignored")]
    UndefinedLoss,

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("undefined metric: no valid points")]
    UndefinedMetric,

    #[error("geometric singularity: {0}")]
    GeometricSingularity(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("missing artifact for {shape}: {what}")]
    MissingArtifact { shape: String, what: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Short machine-readable tag, used as the CLI error prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateInput(_) => "degenerate-input",
            Error::ProjectionSingular => "projection-singular",
            Error::Configuration(_) => "configuration",
            Error::Shape { .. } => "shape",
            Error::Graph(_) => "graph",
            Error::ContractViolation(_) => "contract-violation",
            Error::UndefinedLoss => "undefined-loss",
            Error::NonFiniteGradient(_) => "non-finite-gradient",
            Error::UndefinedMetric => "undefined-metric",
            Error::GeometricSingularity(_) => "geometric-singularity",
            Error::Format { .. } => "format",
            Error::MissingArtifact { .. } => "missing-artifact",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
