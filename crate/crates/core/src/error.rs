use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulation, training and analysis code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("deflection {0} outside [-1, 1]")]
    DeflectionRange(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },
    #[error("shape table inconsistent: {0}")]
    Shape(String),
    #[error("unsupported architecture `{0}`")]
    UnsupportedArch(String),
    #[error("unsupported weight file version {0}")]
    Version(u32),
    #[error("non-finite loss at sample {index}")]
    NonFiniteLoss { index: usize },
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("single-class data: every label is {0}")]
    SingleClass(u8),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("invalid recording: {0}")]
    Recording(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("{component}: {source}")]
    Component {
        component: String,
        #[source]
        source: Box<Error>,
    },
    #[error("cannot load model `{name}`: {source}")]
    ModelLoad {
        name: String,
        #[source]
        source: Box<Error>,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn model_load(self, name: impl Into<String>) -> Self {
        Error::ModelLoad {
            name: name.into(),
            source: Box::new(self),
        }
    }

    /// Wraps the error with the name of the component that produced it.
    pub fn in_component(self, component: impl Into<String>) -> Self {
        Error::Component {
            component: component.into(),
            source: Box::new(self),
        }
    }
}
