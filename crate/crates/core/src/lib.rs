//! Regularized Feynman graph integrals for topological-holomorphic field
//! theories on `R^d' x C^d`, computed in Schwinger parameters.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`] and [`stable`]: decorated graphs, Laplacians, tree and cut
//!   formulas, Laman counting, stable-graph bookkeeping.
//! - [`exterior`]: a small exterior algebra with exactly differentiable
//!   expression coefficients.
//! - [`kernels`]: heat kernel, Schwinger-space propagator and the
//!   Bochner-Martinelli kernel.
//! - [`wick`]: Gaussian moments by perfect matchings.
//! - [`schwinger`]: corner charts of the compactified Schwinger space,
//!   boundary strata and quadrature over them.
//! - [`engine`]: graph integrals, anomaly functionals and the vanishing
//!   checks.
//! - [`cli`]: the batch front-end behind the `thf` binary.

pub mod cli;
pub mod engine;
pub mod error;
pub mod exterior;
pub mod graph;
pub mod kernels;
pub mod quad;
pub mod schwinger;
pub mod stable;
pub mod wick;

pub use error::{Error, Result};
pub use graph::{DecoratedGraph, Signature};

pub use num_complex::Complex64;
