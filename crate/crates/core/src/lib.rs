//! Shape-constrained regression with Bernstein polynomials.
//!
//! Scalar-on-function, function-on-scalar, concurrent and function-on-function
//! regression where the coefficient functions are restricted to be monotone,
//! convex, non-negative and so on. Restrictions become linear inequalities on
//! the Bernstein coefficients and are fitted by constrained least squares.

pub mod basis;
pub mod config;
pub mod constraints;
pub mod data;
pub mod error;
pub mod fpca;
pub mod functional;
pub mod inference;
pub mod io;
pub mod model;
pub mod qfosr;
pub mod qp;
pub mod rng;
pub mod selection;
pub mod simulation;
pub mod sofr;
pub mod stats;

pub use error::{Error, ErrorClass, Result};
