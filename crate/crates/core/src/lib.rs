//! Numerical toolkit for one-dimensional Sinkhorn flows: grid densities,
//! monotone transport, the Sinkhorn iteration and its small-`eps` limit (the
//! parabolic Monge-Ampere flow), closed-form Gaussian references and the
//! associated particle diffusions.
//!
//! Hot loops are parallelised with rayon when the `parallel` feature is on
//! (the default); every entry point that takes an [`Execution`] can also be
//! forced to run sequentially.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod error;
pub mod exec;
pub mod gaussian;
pub mod grid;
pub mod interp;
pub mod measures;
pub mod pma;
pub mod sinkhorn;
pub mod transport;

pub use error::{Error, Result};
pub use exec::Execution;
pub use grid::Grid;
pub use measures::{DensitySpec, GaussianMeasure, GridDensity};
pub use transport::{ConvexPotential, MonotoneMap};
