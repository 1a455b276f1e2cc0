//! Error type shared across the crate.
//!
//! The CLI maps errors to exit codes: configuration problems exit 2, runtime
//! failures (degenerate data, overflow, i/o) exit 3, and threshold assertions
//! requested via `--assert` exit 4.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A statistic is undefined on the given sample (zero variance).
    #[error("degenerate sample: {0}")]
    Degenerate(String),

    /// Invalid run configuration (bad file, unknown key, invalid value).
    #[error("config error: {0}")]
    Config(String),

    /// Population exceeded the floating-point range during simulation.
    #[error("population overflow at generation {step}")]
    PopulationOverflow { step: usize },

    /// Statistic/model combination the engine cannot evaluate.
    #[error("unsupported combination: {0}")]
    Unsupported(String),

    /// Envelope shape vanished at a grid point where the curve did not.
    #[error("envelope shape is zero at x = {x} but |log ratio| = {log_ratio}")]
    EnvelopeShapeMismatch { x: f64, log_ratio: f64 },

    /// A `--assert` threshold was violated.
    #[error("assertion failed: {0}")]
    AssertFailed(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl LabError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 2,
            LabError::AssertFailed(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
