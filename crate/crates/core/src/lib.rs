//! Simulation and inference toolkit for differences-in-differences under
//! spatially correlated shocks.
//!
//! The crate covers balanced panels ([`panel`]), factor-model generators
//! ([`dgp`]), DID estimators ([`estimators`]), cluster-robust and two-way
//! variance estimators ([`variance`]), closed-form oracles ([`analytics`]),
//! a deterministic parallel Monte Carlo engine ([`montecarlo`]) and
//! placebo audits of user data ([`placebo`]).

pub mod analytics;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod montecarlo;
pub mod panel;
pub mod placebo;
pub mod report;
pub mod rng;
pub mod variance;

pub use error::{Error, ErrorKind, Result};
