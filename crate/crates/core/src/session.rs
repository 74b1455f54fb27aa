//! Ask/tell sessions for human-in-the-loop experiments.
//!
//! All randomness is derived from `(config.seed, step)`, so the persisted
//! history is the only state needed to resume: a restored session proposes
//! exactly what the uninterrupted one would have.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{Dataset, Domain};
use crate::meta::VirtualEnvironment;
use crate::policy::{Branch, PolicyConfig, PolicyKind, Proposer};

pub const SESSION_VERSION: u32 = 1;

/// Tolerance for matching a told point against the pending proposal.
pub const MATCH_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendingProposal {
    /// Normalized coordinates.
    pub x: Vec<f64>,
    pub branch: Branch,
    pub selected_env: Option<usize>,
    pub ncc_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionState {
    pub version: u32,
    pub config: PolicyConfig,
    pub domain: Domain,
    /// Observations in normalized coordinates with raw values.
    pub history: Dataset,
    pub off_policy: Vec<bool>,
    pub pending: Option<PendingProposal>,
    #[serde(default)]
    pub f_star: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TellOutcome {
    pub off_policy: bool,
    pub step: usize,
}

impl SessionState {
    pub fn new(config: PolicyConfig, domain: Domain) -> Result<Self> {
        config.validate()?;
        let dim = domain.dim();
        Ok(SessionState {
            version: SESSION_VERSION,
            config,
            domain,
            history: Dataset::new(dim),
            off_policy: Vec::new(),
            pending: None,
            f_star: None,
        })
    }

    pub fn steps(&self) -> usize {
        self.history.len()
    }

    pub fn incumbent(&self) -> Option<f64> {
        self.history.max_value()
    }

    /// Propose the next point (normalized). Repeated asks without a tell
    /// return the same pending proposal.
    pub fn ask(&mut self, envs: &[VirtualEnvironment]) -> Result<PendingProposal> {
        if let Some(p) = &self.pending {
            return Ok(p.clone());
        }
        let dim = self.domain.dim();
        let proposer = Proposer::new(envs, &self.config, dim);
        let pending = if self.history.is_empty() {
            PendingProposal {
                x: proposer.random_point(dim, 0),
                branch: Branch::Init,
                selected_env: None,
                ncc_scores: Vec::new(),
            }
        } else {
            let p = proposer.propose(PolicyKind::Baymoth, &self.history)?;
            PendingProposal {
                x: p.x,
                branch: p.branch,
                selected_env: p.selected_env,
                ncc_scores: p.ncc_scores,
            }
        };
        self.pending = Some(pending.clone());
        Ok(pending)
    }

    /// Record an observation at normalized point `x`. Points that differ
    /// from the pending proposal are accepted and flagged off-policy.
    pub fn tell(&mut self, x: &[f64], y: f64) -> Result<TellOutcome> {
        let pending = self
            .pending
            .as_ref()
            .ok_or_else(|| Error::Session("tell called without a pending ask".into()))?;
        if !y.is_finite() {
            return Err(Error::NonFinite("value"));
        }
        if x.len() != pending.x.len() {
            return Err(Error::DimensionMismatch {
                expected: pending.x.len(),
                got: x.len(),
            });
        }
        let off_policy = x
            .iter()
            .zip(&pending.x)
            .any(|(a, b)| (a - b).abs() > MATCH_TOLERANCE);
        let recorded = if off_policy { x.to_vec() } else { pending.x.clone() };
        self.history.push(&recorded, y)?;
        self.off_policy.push(off_policy);
        self.pending = None;
        Ok(TellOutcome {
            off_policy,
            step: self.history.len(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let state: SessionState = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if state.version != SESSION_VERSION {
            return Err(Error::Session(format!(
                "unsupported session version {}",
                state.version
            )));
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimize::OptimizerConfig;

    fn cfg() -> PolicyConfig {
        PolicyConfig {
            seed: 4,
            optimizer: OptimizerConfig {
                restarts: 1,
                max_iters: 5,
                candidate_pool: 8,
                ..OptimizerConfig::default()
            },
            inner_optimizer: OptimizerConfig {
                restarts: 1,
                max_iters: 5,
                candidate_pool: 8,
                ..OptimizerConfig::inner()
            },
            ..PolicyConfig::default()
        }
    }

    fn f(x: &[f64]) -> f64 {
        -(x[0] - 0.4).powi(2)
    }

    #[test]
    fn ask_tell_increments() {
        let mut s = SessionState::new(cfg(), Domain::unit(1)).unwrap();
        let p = s.ask(&[]).unwrap();
        assert_eq!(p.branch, Branch::Init);
        let out = s.tell(&p.x, f(&p.x)).unwrap();
        assert_eq!(out, TellOutcome { off_policy: false, step: 1 });
        assert!(s.pending.is_none());
    }

    #[test]
    fn tell_without_ask_and_nan_rejected() {
        let mut s = SessionState::new(cfg(), Domain::unit(1)).unwrap();
        assert!(s.tell(&[0.5], 1.0).is_err());
        s.ask(&[]).unwrap();
        assert!(s.tell(&[0.5], f64::NAN).is_err());
    }

    #[test]
    fn off_policy_flagged_and_kept() {
        let mut s = SessionState::new(cfg(), Domain::unit(1)).unwrap();
        let p = s.ask(&[]).unwrap();
        let other = [(p.x[0] + 0.25) % 1.0];
        let out = s.tell(&other, 0.3).unwrap();
        assert!(out.off_policy);
        assert_eq!(s.history.point(0), &other);
    }

    #[test]
    fn restart_reproduces_next_ask() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.json");
        let mut live = SessionState::new(cfg(), Domain::unit(1)).unwrap();
        for _ in 0..3 {
            let p = live.ask(&[]).unwrap();
            live.tell(&p.x, f(&p.x)).unwrap();
        }
        live.save(&path).unwrap();
        let mut restored = SessionState::load(&path).unwrap();
        assert_eq!(restored.ask(&[]).unwrap(), live.ask(&[]).unwrap());
    }
}
