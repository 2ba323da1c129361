//! Terminal-cost training for predictive control via stabilizing value
//! iteration with approximation errors, plus the stability/performance
//! certificates and the certified receding-horizon controller.
//!
//! The crate is organized along the pipeline:
//!
//! - [`system`]: control-affine dynamics, boxes, stage costs, rollouts,
//!   numeric linearization, and the built-in benchmarks.
//! - [`approximator`]: monomial bases, value approximants with analytic
//!   gradients, least-squares fitting, the explicit policy approximant.
//! - [`avi`]: stabilizing value iteration with per-iteration error margins,
//!   the margin/initial-cost scalars and their bound checks.
//! - [`certificates`]: controllability constants, terminal-set scalar,
//!   minimal stabilizing horizons and the performance coefficients.
//! - [`mpc`]: the finite-horizon problem with the trained terminal cost,
//!   the receding-horizon loop and the relaxed-DP verification.

pub mod approximator;
pub mod avi;
pub mod certificates;
pub mod error;
pub mod fmt;
pub mod mpc;
pub mod system;

pub use error::{Error, Result};
