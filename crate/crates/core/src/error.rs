use std::path::PathBuf;

use thiserror::Error;

use crate::scenario::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Shapes or lengths of inputs do not line up.
    #[error("structural error: {0}")]
    Structural(String),

    /// A parameter vector violates graph or registry invariants.
    #[error("validation failed:\n{0}")]
    Validation(ValidationReport),

    #[error("ingestion error in {path}: {message}")]
    Ingest { path: PathBuf, message: String },

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("surrogate fit error: {0}")]
    Fit(String),

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad user input (files, flags, parameter values)
    /// as opposed to failures during a run.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parameter(_)
                | Error::Structural(_)
                | Error::Validation(_)
                | Error::Ingest { .. }
                | Error::Config(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
