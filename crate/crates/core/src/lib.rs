//! Simulation and joint estimation of drift, diffusion and Hurst parameters
//! for SDEs driven by additive fractional Brownian motion.
//!
//! The estimators minimize a distance between the empirical law of an
//! increment-augmented observation process and the stationary law of the
//! model, either in closed form (fractional Ornstein–Uhlenbeck) or
//! approximated by an Euler scheme.

pub mod cf;
pub mod error;
pub mod estimator;
pub mod fbm;
pub mod fou;
pub mod quadrature;
pub mod rng;
pub mod sde;

pub use error::{Error, Result};
pub use rng::RngStream;
