//! Meta Bayesian optimization with gated transfer from virtual environments.
//!
//! A target task is optimized with a non-myopic two-step lookahead. When a
//! source task's surrogate is sufficiently correlated with the target's,
//! the second step is blended with a greedy rollout under that source.

pub mod acquisition;
pub mod benchmark;
pub mod error;
pub mod gp;
pub mod lowdisc;
pub mod meta;
pub mod optimize;
pub mod oracle;
pub mod policy;
pub mod profile;
pub mod rng;
pub mod session;

pub use error::{Error, Result};
