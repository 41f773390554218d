//! Low-rate renewal sampling and communication-constrained drift estimation.
//!
//! The crate simulates random walks that are observed only at sparse
//! sampling times (send-on-delta hitting times or exogenous renewal
//! epochs), computes the estimators of the drift that a remote fusion
//! center can form from those observations, and runs the Monte Carlo
//! experiments that check the renewal-theoretic bounds and limit theorems
//! those estimators rely on.
//!
//! Module map:
//!
//! * [`distributions`]: increment families, closed-form moments, RNG
//!   streams and the limiting average overshoot.
//! * [`renewal`]: streaming path simulation under a sampling scheme.
//! * [`estimators`]: drift and scale estimators plus weighted fusion.
//! * [`theory`]: empirical checks of Wald identities, Lorden bounds and
//!   low-rate convergence rates.
//! * [`fusion`]: the K-sensor one-bit protocol.
//! * [`harness`]: relative-efficiency sweeps and CLT diagnostics.
//! * [`config`] and [`cli`]: the command-line front end.

pub mod cli;
pub mod config;
pub mod distributions;
pub mod error;
pub mod estimators;
pub mod fusion;
pub mod harness;
pub mod renewal;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};
