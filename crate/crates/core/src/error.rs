use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("invalid kinematic chain: {0}")]
    Chain(String),

    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("search budget {budget} is smaller than the population size {population}")]
    Budget { budget: usize, population: usize },

    #[error("duplicate timestamps in spline window")]
    DuplicateTimestamps,

    #[error("non-finite energy in term `{term}`")]
    NonFiniteEnergy { term: &'static str },

    #[error("{stage} failed at frame {frame}: {source}")]
    Stage {
        stage: &'static str,
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("digest mismatch for {what}: expected {expected}, found {found}")]
    DigestMismatch {
        what: String,
        expected: String,
        found: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn at_frame(self, stage: &'static str, frame: usize) -> Self {
        Error::Stage {
            stage,
            frame,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad inputs rather than failed computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Chain(_)
            | Error::Mesh(_)
            | Error::Config(_)
            | Error::Dimension { .. }
            | Error::Budget { .. }
            | Error::DuplicateTimestamps
            | Error::DigestMismatch { .. } => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
