//! Analytic model of detector-efficiency-mismatch attacks on a BB84
//! receiver with detector scrambling, an adversarial optimizer playing Eve,
//! and a Monte Carlo simulator that checks the analytic probabilities.

pub mod attack;
pub mod error;
pub mod optimizer;
pub mod oracle;
pub mod receiver;
pub mod squashing;

pub use error::{ModelError, Result};
