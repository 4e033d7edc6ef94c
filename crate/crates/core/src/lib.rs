//! Neural stochastic barrier functions.
//!
//! Trains feed-forward ReLU networks as barrier candidates for discrete-time
//! systems `x[k+1] = F(x[k]) + v[k]` with additive diagonal Gaussian noise, and
//! certifies a lower bound on the probability of staying in a safe set over a
//! finite horizon. Certification combines backward linear bound propagation,
//! closed-form Gaussian box integrals and branch-and-bound refinement of
//! hyperrectangle partitions.
//!
//! Module map:
//! - [`nn`]: networks, forward evaluation and parameter gradients.
//! - [`relaxation`]: interval and linear relaxations (IBP, CROWN, composition
//!   with the dynamics).
//! - [`dynamics`] and [`sets`]: system models, benchmarks and region algebra.
//! - [`noise`]: diagonal Gaussian box probabilities and partial expectations.
//! - [`partition`]: branch-and-bound over hyperrectangles.
//! - [`certifier`]: barrier conditions and the safety bound.
//! - [`trainer`]: robust training loss and the training loop.
//! - [`validator`]: Monte-Carlo estimates used to cross-check certificates.

pub mod certifier;
pub mod dynamics;
mod error;
pub mod json;
pub mod nn;
pub mod noise;
pub mod partition;
pub mod relaxation;
pub mod sets;
pub mod trainer;
pub mod validator;

pub use error::{Error, Result};

/// Slack applied to every certified verdict. Bound propagation runs in plain
/// `f64` without directed rounding.
pub const SOUNDNESS_SLACK: f64 = 1e-9;
