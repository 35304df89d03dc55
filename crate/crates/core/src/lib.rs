//! Numerical toolkit for the stochastic wave equation driven by spatially homogeneous
//! Gaussian noise, discretized on a periodic lattice.
//!
//! The pieces build on each other: [`kernels`] and [`measure`] describe the fundamental
//! solution and the noise covariance, [`noise`] samples the driving noise, [`integrals`]
//! implements the stochastic integrals, [`solver`] integrates the equation,
//! [`malliavin`] differentiates the solution with respect to the noise and [`density`]
//! inspects the law of the result. [`config`] reads run files and [`verify`] holds the
//! self-checking suites.

pub mod config;
pub mod density;
pub mod error;
pub mod fft;
pub mod grid;
pub mod integrals;
pub mod kernels;
pub mod malliavin;
pub mod measure;
pub mod noise;
pub mod par;
pub mod quad;
pub mod solver;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
