//! The sequential decision loop and its policies.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::acquisition::{baymoth_value, expected_improvement, two_opt_value, AcqContext};
use crate::error::{Error, Result};
use crate::gp::{fit_gp, Dataset, GpModel, KernelConfig, Standardizer};
use crate::meta::{score_environments_profiled, select_by_ids, ReferenceSet, VirtualEnvironment};
use crate::optimize::{maximize_acquisition, OptimizerConfig};
use crate::profile::{timed, Profiler, Stage};
use crate::rng::{derive_seed, substream, Stream};

/// Kernel settings for the four GP roles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Kernels {
    /// Target surrogate (current EI).
    pub lambda0: KernelConfig,
    /// Lookahead surrogate after one simulated observation.
    pub lambda1: KernelConfig,
    /// Source-task environments.
    pub source: KernelConfig,
    /// Comparison GPs fit on virtual histories.
    pub comparison: KernelConfig,
}

impl Default for Kernels {
    fn default() -> Self {
        Kernels {
            lambda0: KernelConfig::rbf(0.2),
            lambda1: KernelConfig::rbf(0.05),
            source: KernelConfig::rbf(0.05),
            comparison: KernelConfig::rbf(0.2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub mc_samples: usize,
    pub budget: usize,
    pub noise: f64,
    pub kernels: Kernels,
    pub optimizer: OptimizerConfig,
    pub inner_optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            alpha: 0.5,
            gamma: 0.7,
            mc_samples: 5,
            budget: 10,
            noise: 1e-6,
            kernels: Kernels::default(),
            optimizer: OptimizerConfig::default(),
            inner_optimizer: OptimizerConfig::inner(),
            seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha must lie in [0,1], got {}", self.alpha)));
        }
        if !self.gamma.is_finite() {
            return Err(Error::InvalidConfig("gamma must be finite".into()));
        }
        if self.mc_samples == 0 {
            return Err(Error::InvalidConfig("mc_samples must be >= 1".into()));
        }
        if self.budget == 0 {
            return Err(Error::InvalidConfig("budget must be >= 1".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::InvalidConfig("noise must be non-negative".into()));
        }
        for k in [
            self.kernels.lambda0,
            self.kernels.lambda1,
            self.kernels.source,
            self.kernels.comparison,
        ] {
            k.validate()?;
        }
        self.optimizer.validate()?;
        self.inner_optimizer.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Baymoth,
    TwoOpt,
    GpboEi,
    Random,
    OracleGated,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Baymoth,
        PolicyKind::TwoOpt,
        PolicyKind::GpboEi,
        PolicyKind::Random,
        PolicyKind::OracleGated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Baymoth => "baymoth",
            PolicyKind::TwoOpt => "two_opt",
            PolicyKind::GpboEi => "gpbo_ei",
            PolicyKind::Random => "random",
            PolicyKind::OracleGated => "oracle_gated",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown policy '{s}'")))
    }
}

/// Which acquisition produced a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Uniform random initial design point.
    Init,
    /// Meta-informed lookahead through a selected environment.
    Meta,
    /// Plain two-step lookahead.
    Fallback,
    /// Non-lookahead baseline (EI or random search).
    Baseline,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Init => "init",
            Branch::Meta => "meta",
            Branch::Fallback => "fallback",
            Branch::Baseline => "baseline",
        }
    }
}

/// Ground truth available for synthetic tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleLabels {
    /// Source the oracle routes through; `None` means fall back.
    pub true_source: Option<usize>,
}

/// A black-box objective on the unit box, to be maximized.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn evaluate(&self, x: &[f64]) -> f64;
    /// True optimum value; regret is measured against it.
    fn f_star(&self) -> f64;
    fn oracle_labels(&self) -> Option<OracleLabels> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub x: Vec<f64>,
    pub y: f64,
    pub branch: Branch,
    pub selected_env: Option<usize>,
    pub ncc_scores: Vec<f64>,
    pub proposal_wall_time: f64,
}

impl StepRecord {
    pub fn ncc_max(&self) -> Option<f64> {
        self.ncc_scores.iter().copied().reduce(f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrajectory {
    pub policy: PolicyKind,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub regret_curve: Vec<f64>,
    pub f_star: f64,
    /// Set when the run stopped early.
    pub failure: Option<String>,
}

impl RunTrajectory {
    pub fn final_regret(&self) -> Option<f64> {
        self.regret_curve.last().copied()
    }

    pub fn best_value(&self) -> Option<f64> {
        self.steps.iter().map(|s| s.y).reduce(f64::max)
    }
}

/// Output of one proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub x: Vec<f64>,
    pub branch: Branch,
    pub selected_env: Option<usize>,
    pub ncc_scores: Vec<f64>,
    pub acquisition_value: f64,
    pub warnings: Vec<String>,
}

/// Everything needed to make proposals within one run.
pub struct Proposer<'a> {
    envs: &'a [VirtualEnvironment],
    cfg: &'a PolicyConfig,
    reference: ReferenceSet,
    oracle: Option<OracleLabels>,
    profiler: Option<&'a Profiler>,
}

impl<'a> Proposer<'a> {
    /// The reference set is drawn once per run from the run seed.
    pub fn new(envs: &'a [VirtualEnvironment], cfg: &'a PolicyConfig, dim: usize) -> Self {
        Proposer {
            envs,
            cfg,
            reference: ReferenceSet::new(dim, derive_seed(cfg.seed, Stream::EnvScoring, 0)),
            oracle: None,
            profiler: None,
        }
    }

    pub fn with_oracle(mut self, oracle: Option<OracleLabels>) -> Self {
        self.oracle = oracle;
        self
    }

    pub fn with_profiler(mut self, profiler: Option<&'a Profiler>) -> Self {
        self.profiler = profiler;
        self
    }

    pub fn reference(&self) -> &ReferenceSet {
        &self.reference
    }

    /// Uniform random point for step index `t` (0 is the initial design).
    pub fn random_point(&self, dim: usize, t: usize) -> Vec<f64> {
        let mut rng = substream(self.cfg.seed, Stream::Init, t as u64);
        (0..dim).map(|_| rng.gen::<f64>()).collect()
    }

    fn target_model(&self, history: &Dataset) -> Result<GpModel> {
        let standardized = Standardizer::fit(history.values()).apply(history);
        fit_gp(&standardized, self.cfg.kernels.lambda0, self.cfg.noise)
    }

    /// Next point after `history` (which must be non-empty).
    pub fn propose(&self, kind: PolicyKind, history: &Dataset) -> Result<Proposal> {
        if history.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let profiler = self.profiler;
        timed(profiler, Stage::ProposalOptimization, || self.propose_inner(kind, history))
    }

    fn propose_inner(&self, kind: PolicyKind, history: &Dataset) -> Result<Proposal> {
        let dim = history.dim();
        let t = history.len();
        if kind == PolicyKind::Random {
            return Ok(Proposal {
                x: self.random_point(dim, t),
                branch: Branch::Baseline,
                selected_env: None,
                ncc_scores: Vec::new(),
                acquisition_value: f64::NAN,
                warnings: Vec::new(),
            });
        }
        let target = self.target_model(history)?;
        let optimizer_seed = derive_seed(self.cfg.seed, Stream::Optimizer, t as u64);

        if kind == PolicyKind::GpboEi {
            let incumbent = target.data().max_value().ok_or(Error::EmptyDataset)?;
            let (x, v) = maximize_acquisition(
                |x| match target.predict_one(x) {
                    Ok((m, var)) => expected_improvement(m, var.sqrt(), incumbent),
                    Err(_) => f64::NEG_INFINITY,
                },
                dim,
                &self.cfg.optimizer,
                optimizer_seed,
            );
            return Ok(Proposal {
                x,
                branch: Branch::Baseline,
                selected_env: None,
                ncc_scores: Vec::new(),
                acquisition_value: v,
                warnings: Vec::new(),
            });
        }

        let mut warnings = Vec::new();
        let (selected, ncc_scores) = match kind {
            PolicyKind::Baymoth => {
                let scored = timed(self.profiler, Stage::Selection, || {
                    score_environments_profiled(
                        &target,
                        self.envs,
                        &self.reference,
                        history,
                        self.cfg.kernels.comparison,
                        self.cfg.noise,
                        self.profiler,
                    )
                });
                match scored {
                    Ok(report) => {
                        warnings.extend(report.warnings);
                        let ids: Vec<usize> = self.envs.iter().map(|e| e.id()).collect();
                        let sel = select_by_ids(&report.scores, &ids, self.cfg.gamma);
                        (sel.selected, report.scores)
                    }
                    Err(e) => {
                        warnings.push(format!("environment scoring failed: {e}"));
                        (None, Vec::new())
                    }
                }
            }
            PolicyKind::OracleGated => {
                let chosen = self.oracle.as_ref().and_then(|o| o.true_source);
                (chosen.filter(|id| self.envs.iter().any(|e| e.id() == *id)), Vec::new())
            }
            _ => (None, Vec::new()),
        };

        let step_seed = derive_seed(self.cfg.seed, Stream::McDraws, t as u64);
        let ctx = AcqContext::new(
            &target,
            self.cfg.kernels.lambda1,
            self.cfg.noise,
            self.cfg.inner_optimizer,
            self.cfg.mc_samples,
            step_seed,
        )?
        .with_profiler(self.profiler);
        let env = selected.and_then(|id| self.envs.iter().find(|e| e.id() == id));
        let profiler = self.profiler;
        let (x, v) = match env {
            Some(env) => maximize_acquisition(
                |x| {
                    timed(profiler, Stage::AcquisitionEvaluation, || {
                        baymoth_value(&ctx, env.model(), self.cfg.alpha, x)
                    })
                    .unwrap_or(f64::NEG_INFINITY)
                },
                dim,
                &self.cfg.optimizer,
                optimizer_seed,
            ),
            None => maximize_acquisition(
                |x| {
                    timed(profiler, Stage::AcquisitionEvaluation, || two_opt_value(&ctx, x))
                        .unwrap_or(f64::NEG_INFINITY)
                },
                dim,
                &self.cfg.optimizer,
                optimizer_seed,
            ),
        };
        Ok(Proposal {
            x,
            branch: if env.is_some() { Branch::Meta } else { Branch::Fallback },
            selected_env: env.map(|e| e.id()),
            ncc_scores,
            acquisition_value: v,
            warnings,
        })
    }
}

/// One BayMOTH proposal with run seed `cfg.seed`.
pub fn propose_baymoth(
    history: &Dataset,
    envs: &[VirtualEnvironment],
    cfg: &PolicyConfig,
) -> Result<Proposal> {
    Proposer::new(envs, cfg, history.dim()).propose(PolicyKind::Baymoth, history)
}

/// Append an observation; rejects non-finite values.
pub fn observe(history: &Dataset, x: &[f64], y: f64) -> Result<Dataset> {
    let mut next = history.clone();
    next.push(x, y)?;
    Ok(next)
}

/// `f_star - best_so_far`, floored at zero, snapped to exactly zero within
/// 1e-9.
pub fn regret_curve(values: &[f64], f_star: f64) -> Vec<f64> {
    let mut best = f64::NEG_INFINITY;
    values
        .iter()
        .map(|&y| {
            best = best.max(y);
            let r = f_star - best;
            if r <= 1e-9 {
                0.0
            } else {
                r
            }
        })
        .collect()
}

/// Run `kind` for `cfg.budget` evaluations starting from one uniform-random
/// point. Failures stop the run and are reported on the trajectory.
pub fn run_policy(
    objective: &dyn Objective,
    envs: &[VirtualEnvironment],
    cfg: &PolicyConfig,
    kind: PolicyKind,
) -> RunTrajectory {
    run_policy_profiled(objective, envs, cfg, kind, None)
}

pub fn run_policy_profiled(
    objective: &dyn Objective,
    envs: &[VirtualEnvironment],
    cfg: &PolicyConfig,
    kind: PolicyKind,
    profiler: Option<&Profiler>,
) -> RunTrajectory {
    let dim = objective.dim();
    let mut traj = RunTrajectory {
        policy: kind,
        seed: cfg.seed,
        steps: Vec::new(),
        regret_curve: Vec::new(),
        f_star: objective.f_star(),
        failure: None,
    };
    if let Err(e) = cfg.validate() {
        traj.failure = Some(e.to_string());
        return traj;
    }
    let proposer = Proposer::new(envs, cfg, dim)
        .with_oracle(objective.oracle_labels())
        .with_profiler(profiler);
    let mut history = Dataset::new(dim);
    for t in 0..cfg.budget {
        let start = Instant::now();
        let proposal = if t == 0 {
            Ok(Proposal {
                x: proposer.random_point(dim, 0),
                branch: Branch::Init,
                selected_env: None,
                ncc_scores: Vec::new(),
                acquisition_value: f64::NAN,
                warnings: Vec::new(),
            })
        } else {
            proposer.propose(kind, &history)
        };
        let elapsed = start.elapsed().as_secs_f64();
        let proposal = match proposal {
            Ok(p) => p,
            Err(e) => {
                traj.failure = Some(format!("step {}: {e}", t + 1));
                break;
            }
        };
        let y = objective.evaluate(&proposal.x);
        if let Err(e) = history.push(&proposal.x, y) {
            traj.failure = Some(format!("step {}: {e}", t + 1));
            break;
        }
        traj.steps.push(StepRecord {
            t: t + 1,
            x: proposal.x,
            y,
            branch: proposal.branch,
            selected_env: proposal.selected_env,
            ncc_scores: proposal.ncc_scores,
            proposal_wall_time: elapsed,
        });
    }
    traj.regret_curve = regret_curve(history.values(), traj.f_star);
    traj
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meta::build_environments;

    struct Bowl;

    impl Objective for Bowl {
        fn dim(&self) -> usize {
            2
        }
        fn evaluate(&self, x: &[f64]) -> f64 {
            1.0 - (x[0] - 0.3).powi(2) - (x[1] - 0.6).powi(2)
        }
        fn f_star(&self) -> f64 {
            1.0
        }
    }

    fn quick_cfg(seed: u64, budget: usize) -> PolicyConfig {
        PolicyConfig {
            budget,
            seed,
            optimizer: OptimizerConfig {
                restarts: 1,
                max_iters: 10,
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

    #[test]
    fn defaults_match_reference_configuration() {
        let c = PolicyConfig::default();
        assert_eq!((c.alpha, c.gamma, c.mc_samples, c.noise), (0.5, 0.7, 5, 1e-6));
        assert_eq!(c.kernels.lambda0.length_scale, 0.2);
        assert_eq!(c.kernels.lambda1.length_scale, 0.05);
        assert_eq!(c.kernels.source.length_scale, 0.05);
        assert_eq!(c.kernels.comparison.length_scale, 0.2);
        assert_eq!((c.optimizer.restarts, c.optimizer.max_iters), (3, 100));
    }

    #[test]
    fn observe_contract() {
        let h = observe(&Dataset::new(1), &[0.5], 1.0).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(observe(&h, &[0.5], 2.0).unwrap().len(), 2);
        assert!(observe(&h, &[0.2], f64::NAN).is_err());
    }

    #[test]
    fn single_step_run_is_random_init() {
        let traj = run_policy(&Bowl, &[], &quick_cfg(3, 1), PolicyKind::Baymoth);
        assert_eq!(traj.steps.len(), 1);
        assert_eq!(traj.steps[0].branch, Branch::Init);
        assert!((traj.regret_curve[0] - (1.0 - traj.steps[0].y)).abs() < 1e-15);
    }

    #[test]
    fn regret_is_monotone_and_snaps_to_zero() {
        let r = regret_curve(&[0.2, 0.1, 0.5, 1.0 - 1e-10], 1.0);
        assert_eq!(r[3], 0.0);
        assert!(r.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn empty_pool_always_falls_back() {
        let traj = run_policy(&Bowl, &[], &quick_cfg(5, 3), PolicyKind::Baymoth);
        assert!(traj.failure.is_none());
        assert!(traj.steps[1..].iter().all(|s| s.branch == Branch::Fallback));
    }

    #[test]
    fn forced_fallback_matches_two_opt_bitwise() {
        let src = {
            let mut d = Dataset::new(2);
            for x in crate::lowdisc::sobol_points(30, 2, 1).chunks(2) {
                d.push(x, Bowl.evaluate(x)).unwrap();
            }
            d
        };
        let envs = build_environments(&[src], KernelConfig::rbf(0.05), 1e-6).unwrap();
        let mut cfg = quick_cfg(11, 4);
        cfg.gamma = 1.01;
        let a = run_policy(&Bowl, &envs, &cfg, PolicyKind::Baymoth);
        let b = run_policy(&Bowl, &envs, &cfg, PolicyKind::TwoOpt);
        let xa: Vec<_> = a.steps.iter().map(|s| s.x.clone()).collect();
        let xb: Vec<_> = b.steps.iter().map(|s| s.x.clone()).collect();
        assert_eq!(xa, xb);
        assert!(a.steps[1..].iter().all(|s| s.branch == Branch::Fallback && !s.ncc_scores.is_empty()));
    }

    #[test]
    fn baselines_run() {
        for kind in [PolicyKind::GpboEi, PolicyKind::Random, PolicyKind::OracleGated] {
            let traj = run_policy(&Bowl, &[], &quick_cfg(2, 4), kind);
            assert_eq!(traj.steps.len(), 4, "{kind}");
            assert!(traj.failure.is_none());
        }
    }

    #[test]
    fn policy_names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.name().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("metabo".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn invalid_config_reported() {
        let mut cfg = quick_cfg(1, 3);
        cfg.alpha = 2.0;
        let traj = run_policy(&Bowl, &[], &cfg, PolicyKind::Baymoth);
        assert!(traj.failure.is_some() && traj.steps.is_empty());
    }
}
