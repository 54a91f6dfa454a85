use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("{name} = {value} lies outside [{lo}, {hi}]")]
    OutOfBounds {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Raised by the range-test fit when a response sits on the boundary of
    /// the decision set; the KKT-residual fit handles that case.
    #[error("response y = {y} at record {index} is not interior; use the KKT residual fit")]
    NonInteriorResponse { index: usize, y: f64 },

    #[error("desired consumption y_d = {y_d} is not interior to the decision set")]
    NonInteriorTarget { y_d: f64 },

    #[error("{0}")]
    Precondition(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
