use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("normal matrix is numerically singular ({reason}); condition estimate {condition:e} exceeds {limit:e}")]
    Singular {
        reason: &'static str,
        condition: f64,
        limit: f64,
    },

    #[error("non-finite value encountered in {0}")]
    NumericOverflow(&'static str),

    #[error("division by zero in {0}")]
    DivisionByZero(&'static str),

    #[error("protocol error: {0}")]
    Protocol(#[from] ProtocolError),

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("no upstream message from node {0}")]
    MissingNode(usize),
    #[error("duplicate upstream message from node {0}")]
    DuplicateNode(usize),
    #[error("message from unknown node {index} (fusion center expects {nodes} nodes)")]
    UnknownNode { index: usize, nodes: usize },
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Innermost error, unwrapping step annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            other => other,
        }
    }

    /// Step index attached by a trajectory runner, if any.
    pub fn step(&self) -> Option<usize> {
        match self {
            Error::AtStep { step, .. } => Some(*step),
            _ => None,
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(self.root(), Error::Io { .. })
    }
}
