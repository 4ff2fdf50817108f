use thiserror::Error;

use crate::quantum::Outcome;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state parameter: {0}")]
    InvalidState(String),

    #[error("vector is not unit norm (|v|^2 = {0})")]
    NotUnit(f64),

    #[error("steered setting undefined for the product state with a = -z")]
    ProductStateDegenerate,

    #[error("local weight must lie in [0, 1), got {0}")]
    InvalidLocalWeight(f64),

    #[error("non-local part negative ({value:e}) at outcome {outcome} for a = {a:?}, b = {b:?}")]
    Negativity {
        value: f64,
        outcome: Outcome,
        a: [f64; 3],
        b: [f64; 3],
    },

    #[error("probability {0:e} outside [0, 1] beyond rounding")]
    Inconsistent(f64),

    #[error("quadrature did not reach tolerance {tol:e} (estimated error {err:e})")]
    QuadratureNonConvergence { tol: f64, err: f64 },

    #[error("cap integration needs 0 < |chi| < pi and off-pole settings")]
    CapIntegrationDomain,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid density: {0}")]
    Density(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
