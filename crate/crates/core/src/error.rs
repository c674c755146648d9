use thiserror::Error;

use crate::partition::{CuGeometry, SplitMode};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid partition rules: {0}")]
    InvalidRules(String),

    #[error("split {mode} is not legal for block {geom}")]
    IllegalSplit { geom: CuGeometry, mode: SplitMode },

    #[error("malformed split tree at {geom}: {reason}")]
    MalformedTree { geom: CuGeometry, reason: String },

    #[error("inconsistent partition map at block {geom}: {reason}")]
    InconsistentMap { geom: CuGeometry, reason: String },

    #[error("map-tree search exceeded its budget of {budget} nodes ({context})")]
    BudgetExceeded { budget: usize, context: String },

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
