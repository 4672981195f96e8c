//! Training-free online LLM routing under per-model budgets.
//!
//! Features for each incoming query are estimated from its nearest historical
//! neighbors, dual weights are fitted on a small observed prefix of the
//! stream, and the remaining queries are routed by the resulting scores. The
//! crate also ships the comparison baselines, offline LP/MILP optima and an
//! experiment harness.

pub mod ann;
pub mod baselines;
pub mod dual;
pub mod error;
pub mod harness;
pub mod ingest;
pub mod metrics;
pub mod oracle;
pub mod router;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
