//! Chance-constrained collision avoidance for a satellite and an uncertain
//! piece of debris.
//!
//! The debris position is known only through its propagated mean and
//! covariance. At each step the controller requires the worst-case CVaR of an
//! ellipsoidal safety cost, over every distribution with those two moments, to
//! be non-positive, and searches thrust sequences with a constrained
//! cross-entropy method inside a receding-horizon loop.
//!
//! Module map:
//! - [`dynamics`]: two-body + drag ECI dynamics, RK4 rollouts
//! - [`uncertainty`]: linear, unscented and Monte Carlo moment propagation
//! - [`risk`]: free-set ellipsoid, closed-form robust CVaR, empirical oracles
//! - [`cem`]: constrained cross-entropy optimizer
//! - [`mpc`]: receding-horizon loop, episodes and batches
//! - [`scenario`], [`config`], [`cli`]: scenario defaults, config files, commands

pub mod cem;
pub mod cli;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod mpc;
pub mod risk;
pub mod scenario;
pub mod seed;
pub mod uncertainty;

pub use error::{Error, Result};
