//! Causal fine-tuning laboratory.
//!
//! Confounded-text simulators, a small trainable encoder with invariant
//! feature learning and front-door adjustment, the comparison baselines, and
//! an exact discrete structural-model oracle for the identification results.

pub mod baselines;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod heads;
pub mod metrics;
pub mod numeric;
pub mod pipeline;
pub mod scm;

pub use error::{Error, Result};
