use thiserror::Error;

use crate::sinkhorn::SinkhornState;

/// Errors raised by the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grids do not match: {0}")]
    GridMismatch(String),

    #[error("mass outside the domain is {outside:.3e} (limit {limit:.1e})")]
    Truncation { outside: f64, limit: f64 },

    #[error("non-positive density value {value:e} at node {index}")]
    NonPositive { index: usize, value: f64 },

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("map is not strictly increasing at node {index}")]
    NonMonotoneMap { index: usize },

    #[error("target range [{lo}, {hi}] exceeds gradient range [{min}, {max}]")]
    Range { lo: f64, hi: f64, min: f64, max: f64 },

    #[error("second derivative {value:e} below floor {floor:e} at node {index}")]
    ConvexityLost { index: usize, value: f64, floor: f64 },

    #[error("instability: {0}")]
    Stability(String),

    #[error("non-finite value in {0}")]
    NumericOverflow(&'static str),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    MaxIterExceeded {
        iterations: usize,
        residual: f64,
        state: Box<SinkhornState>,
    },

    #[error("particle {index} left the domain at x = {x}")]
    ParticleEscape { index: usize, x: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
