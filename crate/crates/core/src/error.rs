use thiserror::Error;

/// Every failure the library reports.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("oracle: {0}")]
    Oracle(String),

    #[error("numerical failure{}: {msg}", step.map(|k| format!(" at step {k}")).unwrap_or_default())]
    Numerical { step: Option<usize>, msg: String },

    #[error("configuration error:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical { step: None, msg: msg.into() }
    }

    /// Tags a numerical failure with the scheme step at which it happened.
    pub fn at_step(self, k: usize) -> Self {
        match self {
            Error::Numerical { step: None, msg } => Error::Numerical { step: Some(k), msg },
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
