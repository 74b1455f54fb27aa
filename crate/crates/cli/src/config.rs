//! Configuration and plan files (TOML, or JSON by extension).

use std::path::{Path, PathBuf};

use anyhow::Context;
use baymoth::benchmark::experiment::{ExperimentPlan, TaskSpec};
use baymoth::gp::Domain;
use baymoth::policy::PolicyConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const CONFIG_VERSION: u32 = 1;

fn default_version() -> u32 {
    CONFIG_VERSION
}

/// Run configuration for `build-envs` and `session`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub policy: PolicyConfig,
    /// Per-dimension `[lo, hi]` bounds in raw units.
    #[serde(default)]
    pub domain: Option<Vec<[f64; 2]>>,
    /// Known optimum, for regret reporting in `session status`.
    #[serde(default)]
    pub f_star: Option<f64>,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        RunConfigFile {
            version: CONFIG_VERSION,
            policy: PolicyConfig::default(),
            domain: None,
            f_star: None,
        }
    }
}

impl RunConfigFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let cfg: RunConfigFile = parse_file(path)?;
        if cfg.version != CONFIG_VERSION {
            return Err(UsageError(format!(
                "{}: unsupported config version {} (expected {CONFIG_VERSION})",
                path.display(),
                cfg.version
            ))
            .into());
        }
        cfg.policy
            .validate()
            .map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> anyhow::Result<Self> {
        path.map(Self::load).unwrap_or_else(|| Ok(Self::default()))
    }

    pub fn domain(&self) -> anyhow::Result<Option<Domain>> {
        self.domain
            .as_ref()
            .map(|b| {
                Domain::new(b.iter().map(|&[lo, hi]| (lo, hi)).collect())
                    .map_err(|e| UsageError(format!("config domain: {e}")).into())
            })
            .transpose()
    }
}

fn parse_file<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
}

/// Load a plan and resolve tabular paths against the plan's directory.
pub fn load_plan(path: &Path) -> anyhow::Result<ExperimentPlan> {
    let mut plan: ExperimentPlan = parse_file(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    for spec in &mut plan.task_sets {
        if let TaskSpec::Tabular {
            target, sources, ..
        } = spec
        {
            resolve(target);
            sources.iter_mut().for_each(resolve);
        }
    }
    plan.validate()
        .map_err(|e| UsageError(format!("{}: {e}", path.display())))
        .context("invalid plan")?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_unknown_keys() {
        let cfg: RunConfigFile = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfigFile::default());
        let cfg: RunConfigFile = toml::from_str("[policy]\ngamma = 0.9\n").unwrap();
        assert_eq!(cfg.policy.gamma, 0.9);
        assert_eq!(cfg.policy.alpha, 0.5);
        let err = toml::from_str::<RunConfigFile>("[policy]\ngama = 0.9\n").unwrap_err();
        assert!(err.to_string().contains("gama"), "{err}");
    }

    #[test]
    fn plan_from_toml() {
        let plan: ExperimentPlan = toml::from_str(
            r#"
seeds = 3
policies = ["baymoth", "random"]

[[task_sets]]
kind = "synthetic"
label = "low"
seed = 1

[ablation]
axis = "gamma"
values = [0.5, 1.0]
"#,
        )
        .unwrap();
        assert_eq!(plan.seeds, 3);
        assert_eq!(plan.task_sets.len(), 1);
        assert!(plan.validate().is_ok());
    }
}
