//! Quasi-stationary Monte Carlo on the flat torus [0, 2π)^d.
//!
//! A diffusion dY = ∇A(Y) dt + dW is killed at state-dependent rate κ and
//! instantly reborn from the time-weighted occupation measure of its own past.
//! As wall time grows the occupation measure settles on the quasi-stationary
//! distribution of the killed dynamics. The crate pairs the stochastic engine
//! with a deterministic oracle (discretized generator, resolvent, semigroup and
//! measure flow) so that every statistical claim can be checked against a
//! finite-dimensional computation.

pub mod apt;
pub mod config;
pub mod engine;
pub mod error;
pub mod field;
pub mod kappa;
pub mod measure;
pub mod oracle;
pub mod output;
pub mod rng;
pub mod sde;
pub mod stats;
pub mod torus;
pub mod weights;

pub use error::RescaleError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, RescaleError>;

/// Full circle, the period of every coordinate.
pub const TAU: f64 = 2.0 * std::f64::consts::PI;
