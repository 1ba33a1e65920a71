//! Asymptotic European option pricing under time-changed fast mean-reverting
//! stochastic volatility.
//!
//! Prices are computed as `P0 + sqrt(eps)·P1` by integrating a spectral
//! representation along a shifted contour. The first-order term depends on
//! the fast volatility factor only through the group parameters
//! `(sigma, V2^eps, V3^eps)`; the random business clock enters through its
//! Laplace transform.

pub mod calibration;
pub mod error;
pub mod impliedvol;
pub mod mc_oracle;
pub mod quadrature;
pub mod presets;
pub mod pricing;
pub mod spectral;
pub mod timechange;
pub mod verify;

pub use error::{Error, Result};
pub use spectral::{Contour, GroupParams};
pub use timechange::{CirClock, Clock, CompositeClock, LevyExpCP, LevyExponent, Subordinator};
