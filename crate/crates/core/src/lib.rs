//! Deterministic discrete-event simulation of status-update systems with
//! multiple servers and packet replication, plus tools for measuring the
//! age of information and checking sample-path comparisons between
//! scheduling policies.

pub mod distributions;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod policies;
pub mod sim;
pub mod verification;

pub use error::{ConfigError, SimError};
