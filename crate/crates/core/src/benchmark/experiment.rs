//! Multi-seed experiment driver, aggregation and ablation sweeps.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tabular::{read_table_file, tabular_objective, TabularObjective};
use super::taskgen::{generate_task_set, Relatedness, TaskSet};
use crate::error::{Error, Result};
use crate::meta::{build_environments, VirtualEnvironment};
use crate::policy::{Branch, Objective, PolicyConfig, PolicyKind, RunTrajectory};
use crate::rng::hash_words;

pub const PLAN_VERSION: u32 = 1;

fn default_dim() -> usize {
    2
}

fn default_sources() -> usize {
    5
}

/// One task family in a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Synthetic {
        label: Relatedness,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_sources")]
        n_sources: usize,
        seed: u64,
    },
    Tabular {
        name: String,
        target: PathBuf,
        #[serde(default)]
        sources: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Gamma,
    Alpha,
    M,
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationAxis::Gamma => "gamma",
            AblationAxis::Alpha => "alpha",
            AblationAxis::M => "m",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    pub axis: AblationAxis,
    pub values: Vec<f64>,
}

fn default_version() -> u32 {
    PLAN_VERSION
}

fn default_policies() -> Vec<PolicyKind> {
    vec![PolicyKind::Baymoth, PolicyKind::TwoOpt]
}

fn default_seeds() -> usize {
    100
}

fn default_budget() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default = "default_version")]
    pub version: u32,
    pub task_sets: Vec<TaskSpec>,
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicyKind>,
    /// Number of paired runs per (policy, task set).
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Master seed; run seeds are derived from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub ablation: Option<Ablation>,
    /// Keep per-step wall times in the trajectory export.
    #[serde(default)]
    pub record_timing: bool,
}

impl ExperimentPlan {
    pub fn new(task_sets: Vec<TaskSpec>, policies: Vec<PolicyKind>, seeds: usize) -> Self {
        ExperimentPlan {
            version: PLAN_VERSION,
            task_sets,
            policies,
            seeds,
            budget: default_budget(),
            seed: 0,
            policy: PolicyConfig::default(),
            ablation: None,
            record_timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != PLAN_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported plan version {} (expected {PLAN_VERSION})",
                self.version
            )));
        }
        if self.seeds == 0 {
            return Err(Error::InvalidConfig("seeds must be >= 1".into()));
        }
        if self.task_sets.is_empty() || self.policies.is_empty() {
            return Err(Error::InvalidConfig("plan needs task sets and policies".into()));
        }
        let mut cfg = self.policy.clone();
        cfg.budget = self.budget;
        cfg.validate()?;
        if let Some(a) = &self.ablation {
            if a.values.is_empty() {
                return Err(Error::InvalidConfig("ablation values must be non-empty".into()));
            }
            for &v in &a.values {
                apply_setting(&cfg, a.axis, v)?.validate()?;
            }
        }
        Ok(())
    }

    fn base_config(&self) -> PolicyConfig {
        PolicyConfig {
            budget: self.budget,
            ..self.policy.clone()
        }
    }
}

/// Copy of `cfg` with one knob changed.
pub fn apply_setting(cfg: &PolicyConfig, axis: AblationAxis, value: f64) -> Result<PolicyConfig> {
    let mut out = cfg.clone();
    match axis {
        AblationAxis::Gamma => out.gamma = value,
        AblationAxis::Alpha => out.alpha = value,
        AblationAxis::M => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "M must be a positive integer, got {value}"
                )));
            }
            out.mc_samples = value as usize;
        }
    }
    Ok(out)
}

/// A task ready to run: objective plus its environment pool.
pub struct PreparedTask {
    pub name: String,
    pub label: Option<Relatedness>,
    pub objective: Box<dyn Objective + Send>,
    pub envs: Vec<VirtualEnvironment>,
    /// Generated task sets only.
    pub task_set: Option<TaskSet>,
}

pub fn prepare_task(spec: &TaskSpec, cfg: &PolicyConfig) -> Result<PreparedTask> {
    match spec {
        TaskSpec::Synthetic {
            label,
            dim,
            n_sources,
            seed,
        } => {
            let ts = generate_task_set(*dim, *n_sources, *label, *seed)?;
            let envs = build_environments(&ts.sources, cfg.kernels.source, cfg.noise)?;
            Ok(PreparedTask {
                name: format!("{label}-d{dim}-s{seed}"),
                label: Some(*label),
                objective: Box::new(ts.clone()),
                envs,
                task_set: Some(ts),
            })
        }
        TaskSpec::Tabular {
            name,
            target,
            sources,
        } => {
            let objective: TabularObjective = tabular_objective(target)?;
            let datasets = sources
                .iter()
                .map(|p| {
                    let table = read_table_file(p)?;
                    if table.dim() != objective.dim() {
                        return Err(Error::Table(format!(
                            "{}: {} input columns, target has {}",
                            p.display(),
                            table.dim(),
                            objective.dim()
                        )));
                    }
                    table.to_dataset(objective.domain())
                })
                .collect::<Result<Vec<_>>>()?;
            let envs = build_environments(&datasets, cfg.kernels.source, cfg.noise)?;
            Ok(PreparedTask {
                name: name.clone(),
                label: None,
                objective: Box::new(objective),
                envs,
                task_set: None,
            })
        }
    }
}

pub fn prepare_tasks(plan: &ExperimentPlan) -> Result<Vec<PreparedTask>> {
    let cfg = plan.base_config();
    plan.task_sets.iter().map(|s| prepare_task(s, &cfg)).collect()
}

/// Run seed for one (task, replicate) cell. Independent of the policy and
/// of any ablated knob, so all of those comparisons are paired.
pub fn run_seed(plan_seed: u64, task_index: usize, seed_index: usize) -> u64 {
    hash_words(&[plan_seed, 0x7a5c, task_index as u64, seed_index as u64])
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub task: String,
    pub task_index: usize,
    pub seed_index: usize,
    /// Ablated knob value, when part of a sweep.
    pub setting: Option<f64>,
    pub trajectory: RunTrajectory,
}

/// Per-step regret statistics over completed runs.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateCurve {
    pub policy: PolicyKind,
    pub task_set: String,
    pub setting: Option<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n_runs: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub runs: Vec<RunRecord>,
    pub curves: Vec<AggregateCurve>,
    pub failures: Vec<String>,
}

/// Per-step sample mean and standard deviation (n - 1 denominator).
pub fn mean_std_curve(curves: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let len = curves.iter().map(|c| c.len()).min().unwrap_or(0);
    let n = curves.len() as f64;
    let mut mean = Vec::with_capacity(len);
    let mut std = Vec::with_capacity(len);
    for t in 0..len {
        let m = curves.iter().map(|c| c[t]).sum::<f64>() / n;
        let v = if curves.len() > 1 {
            curves.iter().map(|c| (c[t] - m).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        mean.push(m);
        std.push(v.sqrt());
    }
    (mean, std)
}

fn completed(r: &RunRecord, budget: usize) -> bool {
    r.trajectory.failure.is_none() && r.trajectory.regret_curve.len() == budget
}

/// Aggregate runs per (setting, task, policy), in first-appearance order.
pub fn aggregate(runs: &[RunRecord], budget: usize) -> Vec<AggregateCurve> {
    let mut keys: Vec<(Option<u64>, String, PolicyKind)> = Vec::new();
    for r in runs {
        let key = (r.setting.map(f64::to_bits), r.task.clone(), r.trajectory.policy);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(setting, task, policy)| {
            let group: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| {
                    r.setting.map(f64::to_bits) == setting && r.task == task && r.trajectory.policy == policy
                })
                .collect();
            let done: Vec<&[f64]> = group
                .iter()
                .filter(|r| completed(r, budget))
                .map(|r| r.trajectory.regret_curve.as_slice())
                .collect();
            let (mean, std) = mean_std_curve(&done);
            AggregateCurve {
                policy,
                task_set: task,
                setting: setting.map(f64::from_bits),
                mean,
                std,
                n_runs: done.len(),
                n_failed: group.len() - done.len(),
            }
        })
        .collect()
}

fn run_cells(
    plan: &ExperimentPlan,
    tasks: &[PreparedTask],
    cfg: &PolicyConfig,
    setting: Option<f64>,
) -> Vec<RunRecord> {
    let cells: Vec<(usize, PolicyKind, usize)> = (0..tasks.len())
        .flat_map(|ti| {
            plan.policies
                .iter()
                .flat_map(move |&p| (0..plan.seeds).map(move |si| (ti, p, si)))
        })
        .collect();
    cells
        .into_par_iter()
        .map(|(ti, policy, si)| {
            let task = &tasks[ti];
            let run_cfg = PolicyConfig {
                seed: run_seed(plan.seed, ti, si),
                ..cfg.clone()
            };
            let trajectory = crate::policy::run_policy(task.objective.as_ref(), &task.envs, &run_cfg, policy);
            RunRecord {
                task: task.name.clone(),
                task_index: ti,
                seed_index: si,
                setting,
                trajectory,
            }
        })
        .collect()
}

fn finish(runs: Vec<RunRecord>, budget: usize) -> ExperimentResult {
    let failures = runs
        .iter()
        .filter_map(|r| {
            r.trajectory.failure.as_ref().map(|f| {
                format!(
                    "{} {} seed {}: {f}",
                    r.task, r.trajectory.policy, r.seed_index
                )
            })
        })
        .collect();
    let curves = aggregate(&runs, budget);
    ExperimentResult {
        runs,
        curves,
        failures,
    }
}

/// Run every (task set, policy, seed) cell of the plan with its base
/// configuration.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentResult> {
    plan.validate()?;
    let tasks = prepare_tasks(plan)?;
    Ok(run_prepared(plan, &tasks, &plan.base_config(), None))
}

pub fn run_prepared(
    plan: &ExperimentPlan,
    tasks: &[PreparedTask],
    cfg: &PolicyConfig,
    setting: Option<f64>,
) -> ExperimentResult {
    finish(run_cells(plan, tasks, cfg, setting), plan.budget)
}

/// One result group per ablated value.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationGroup {
    pub axis: AblationAxis,
    pub value: f64,
    pub result: ExperimentResult,
}

/// Sweep `axis` over `values`, holding everything else (including task and
/// initialization seeds) fixed.
pub fn ablate(axis: AblationAxis, values: &[f64], plan: &ExperimentPlan) -> Result<Vec<AblationGroup>> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("ablation values must be non-empty".into()));
    }
    plan.validate()?;
    let tasks = prepare_tasks(plan)?;
    ablate_prepared(axis, values, plan, &tasks)
}

pub fn ablate_prepared(
    axis: AblationAxis,
    values: &[f64],
    plan: &ExperimentPlan,
    tasks: &[PreparedTask],
) -> Result<Vec<AblationGroup>> {
    values
        .iter()
        .map(|&value| {
            let cfg = apply_setting(&plan.base_config(), axis, value)?;
            cfg.validate()?;
            Ok(AblationGroup {
                axis,
                value,
                result: run_prepared(plan, tasks, &cfg, Some(value)),
            })
        })
        .collect()
}

/// Share of proposal steps routed through each source, or through none.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceUsage {
    /// Percent of steps that fell back.
    pub none: f64,
    /// Percent of steps per selected source id.
    pub sources: BTreeMap<usize, f64>,
    pub steps: usize,
}

impl SourceUsage {
    pub fn of(&self, id: usize) -> f64 {
        self.sources.get(&id).copied().unwrap_or(0.0)
    }
}

/// Usage percentages over all meta/fallback steps of `trajectories`.
/// Initial design points and baseline steps are not proposals of the gated
/// policy and are not counted.
pub fn source_usage<'a>(trajectories: impl IntoIterator<Item = &'a RunTrajectory>) -> Result<SourceUsage> {
    let mut none = 0usize;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for traj in trajectories {
        for s in &traj.steps {
            match (s.branch, s.selected_env) {
                (Branch::Meta, Some(id)) => *counts.entry(id).or_default() += 1,
                (Branch::Fallback, _) => none += 1,
                _ => {}
            }
        }
    }
    let steps = none + counts.values().sum::<usize>();
    if steps == 0 {
        return Err(Error::InvalidConfig("no gated proposal steps to summarize".into()));
    }
    let pct = |c: usize| 100.0 * c as f64 / steps as f64;
    Ok(SourceUsage {
        none: pct(none),
        sources: counts.into_iter().map(|(k, v)| (k, pct(v))).collect(),
        steps,
    })
}

/// Sum of the regret curve.
pub fn area_under_regret(traj: &RunTrajectory) -> f64 {
    traj.regret_curve.iter().sum()
}
