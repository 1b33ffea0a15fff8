//! Numerical verification toolkit for the X-ray transform of stationary
//! Euler flows: radial solutions, line and half-plane integrals, the John
//! and Laplace-type operators on the line manifold, and residual suites.

pub mod config;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod operators;
pub mod quadrature;
pub mod transforms;
pub mod verify;

pub use error::{Error, Result};
