use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent dimensions or invalid model configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Observation values outside their admissible range.
    #[error("data error: {0}")]
    Data(String),

    /// A density, transform or gradient produced a non-finite value.
    #[error("evaluation error in {component}: {message}")]
    Evaluation { component: String, message: String },

    /// Caller passed arguments violating an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("degenerate weights at step {step}: {message}")]
    DegenerateWeights { step: usize, message: String },

    /// The log density could not be evaluated at an existing particle.
    #[error("kernel failure at step {step}, particle {particle}: {message}")]
    Kernel {
        step: usize,
        particle: usize,
        message: String,
    },

    #[error("{file}:{line}: field `{field}`: {message}")]
    Schema {
        file: String,
        line: usize,
        field: String,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn eval(component: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Evaluation {
            component: component.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used in structured CLI and HTTP errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Evaluation { .. } => "evaluation",
            Error::Usage(_) => "usage",
            Error::DegenerateWeights { .. } => "degenerate_weights",
            Error::Kernel { .. } => "kernel",
            Error::Schema { .. } => "schema",
            Error::Io { .. } => "io",
        }
    }
}
