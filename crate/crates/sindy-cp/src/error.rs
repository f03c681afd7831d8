//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown system '{0}' (registry knows: lotka_volterra, lorenz)")]
    UnknownSystem(String),

    #[error("system '{system}' takes {expected} parameters, got {got}")]
    Arity {
        system: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in RK4 stage {stage} at step {step}")]
    Integration { step: usize, stage: usize },

    #[error("trajectory diverged at step {step} (|{value}| exceeds guard {guard})")]
    Divergence { step: usize, value: f64, guard: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("insufficient data: need at least {needed} rows, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("non-finite data entry at row {row}")]
    NonFiniteData { row: usize },

    #[error("singular KKT system: {0}")]
    SingularKkt(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Name the scenario stage an error escaped from.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage { stage, source: Box::new(self) }
    }
}
