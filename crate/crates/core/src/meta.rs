//! Source-task environments and NCC-gated selection.
//!
//! Each source dataset becomes a GP ("alternative virtual environment").
//! Online, the real query locations are replayed through every environment's
//! posterior mean, a comparison GP is fit to that virtual history, and its
//! mean is correlated with the target surrogate's mean on a fixed reference
//! set.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{fit_gp, Dataset, Domain, GpModel, KernelConfig, Standardizer};
use crate::lowdisc::sobol_points;
use crate::profile::{timed, Profiler, Stage};

pub const SNAPSHOT_VERSION: u32 = 1;

/// A fitted source task.
#[derive(Debug, Clone)]
pub struct VirtualEnvironment {
    id: usize,
    model: GpModel,
    raw: Dataset,
    standardization: Standardizer,
}

impl VirtualEnvironment {
    pub fn id(&self) -> usize {
        self.id
    }

    /// GP over the standardized source values.
    pub fn model(&self) -> &GpModel {
        &self.model
    }

    pub fn standardization(&self) -> Standardizer {
        self.standardization
    }

    pub fn dataset(&self) -> &Dataset {
        &self.raw
    }
}

fn build_one(id: usize, data: &Dataset, kernel: KernelConfig, noise: f64) -> Result<VirtualEnvironment> {
    let wrap = |e: Error| Error::Environment {
        id,
        source: Box::new(e),
    };
    if data.is_empty() {
        return Err(wrap(Error::EmptyDataset));
    }
    let standardization = Standardizer::fit(data.values());
    let model = fit_gp(&standardization.apply(data), kernel, noise).map_err(wrap)?;
    Ok(VirtualEnvironment {
        id,
        model,
        raw: data.clone(),
        standardization,
    })
}

/// One environment per dataset, ids assigned by position.
pub fn build_environments(
    meta_datasets: &[Dataset],
    kernel: KernelConfig,
    noise: f64,
) -> Result<Vec<VirtualEnvironment>> {
    if let Some(first) = meta_datasets.first() {
        for (id, d) in meta_datasets.iter().enumerate() {
            if d.dim() != first.dim() {
                return Err(Error::Environment {
                    id,
                    source: Box::new(Error::DimensionMismatch {
                        expected: first.dim(),
                        got: d.dim(),
                    }),
                });
            }
        }
    }
    meta_datasets
        .iter()
        .enumerate()
        .map(|(id, d)| build_one(id, d, kernel, noise))
        .collect()
}

/// Replay `history_points` through the environment's posterior mean.
pub fn virtual_history(env: &VirtualEnvironment, history_points: &Dataset) -> Result<Dataset> {
    if history_points.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let means = env.model.predict_means_flat(history_points.flat_points())?;
    history_points.with_values(means)
}

/// Normalized cross-correlation, clamped to `[-1, 1]`. Zero when either
/// vector is (numerically) constant.
pub fn ncc(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::InvalidConfig("NCC needs at least two entries".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x - ma, y - mb);
        dot += u * v;
        na += u * u;
        nb += v * v;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < 1e-12 || nb < 1e-12 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Shared reference points for NCC scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    dim: usize,
    points: Vec<f64>,
    seed: u64,
}

impl ReferenceSet {
    /// `128 * dim` scrambled Sobol points.
    pub fn new(dim: usize, seed: u64) -> Self {
        Self::with_size(dim, 128 * dim, seed)
    }

    pub fn with_size(dim: usize, size: usize, seed: u64) -> Self {
        assert!(size >= 2, "reference set needs at least two points");
        ReferenceSet {
            dim,
            points: sobol_points(size, dim, seed),
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn flat_points(&self) -> &[f64] {
        &self.points
    }
}

/// Per-environment NCC scores plus any environments that failed to score.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreReport {
    pub scores: Vec<f64>,
    pub warnings: Vec<String>,
}

/// NCC between the target surrogate's mean and each environment's
/// comparison GP on the reference set. `target` is the surrogate fit on the
/// standardized history; comparison GPs standardize their virtual values the
/// same way and use `comparison_kernel`.
pub fn score_environments(
    target: &GpModel,
    envs: &[VirtualEnvironment],
    reference: &ReferenceSet,
    history_points: &Dataset,
    comparison_kernel: KernelConfig,
    noise: f64,
) -> Result<ScoreReport> {
    score_environments_profiled(target, envs, reference, history_points, comparison_kernel, noise, None)
}

pub(crate) fn score_environments_profiled(
    target: &GpModel,
    envs: &[VirtualEnvironment],
    reference: &ReferenceSet,
    history_points: &Dataset,
    comparison_kernel: KernelConfig,
    noise: f64,
    profiler: Option<&Profiler>,
) -> Result<ScoreReport> {
    if history_points.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if envs.is_empty() {
        return Ok(ScoreReport::default());
    }
    let target_mean = target.predict_means_flat(reference.flat_points())?;
    let mut report = ScoreReport::default();
    for env in envs {
        let scored = timed(profiler, Stage::ComparisonGpUpdate, || -> Result<f64> {
            let virt = virtual_history(env, history_points)?;
            let virt = Standardizer::fit(virt.values()).apply(&virt);
            let comparison = fit_gp(&virt, comparison_kernel, noise)?;
            let comparison_mean = comparison.predict_means_flat(reference.flat_points())?;
            ncc(&target_mean, &comparison_mean)
        });
        match scored {
            Ok(s) => report.scores.push(s),
            Err(e) => {
                log::warn!("environment {} could not be scored: {e}", env.id);
                report.warnings.push(format!("environment {}: {e}", env.id));
                report.scores.push(0.0);
            }
        }
    }
    Ok(report)
}

/// Outcome of the threshold rule.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub scores: Vec<f64>,
    /// Id of the selected environment; `None` means fall back.
    pub selected: Option<usize>,
    pub threshold: f64,
}

/// Pick the best-scoring environment if its score strictly exceeds `gamma`.
/// Ties go to the smallest id.
pub fn select_environment(scores: &[f64], envs: &[VirtualEnvironment], gamma: f64) -> SelectionResult {
    let ids: Vec<usize> = envs.iter().map(|e| e.id).collect();
    select_by_ids(scores, &ids, gamma)
}

pub fn select_by_ids(scores: &[f64], ids: &[usize], gamma: f64) -> SelectionResult {
    let mut best: Option<(usize, f64)> = None;
    for (&id, &s) in ids.iter().zip(scores) {
        let replace = match best {
            None => true,
            Some((bid, bs)) => s > bs || (s == bs && id < bid),
        };
        if replace {
            best = Some((id, s));
        }
    }
    SelectionResult {
        scores: scores.to_vec(),
        selected: best.filter(|&(_, s)| s > gamma).map(|(id, _)| id),
        threshold: gamma,
    }
}

/// Serialized environment pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSnapshot {
    pub version: u32,
    pub domain: Domain,
    pub kernel: KernelConfig,
    pub noise: f64,
    pub environments: Vec<EnvironmentRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentRecord {
    pub id: usize,
    pub name: String,
    pub dataset: Dataset,
    pub standardization: Standardizer,
}

impl EnvironmentSnapshot {
    pub fn from_environments(
        envs: &[VirtualEnvironment],
        names: &[String],
        domain: Domain,
        noise: f64,
    ) -> Self {
        let kernel = envs
            .first()
            .map(|e| *e.model.kernel())
            .unwrap_or_else(|| KernelConfig::rbf(0.05));
        EnvironmentSnapshot {
            version: SNAPSHOT_VERSION,
            domain,
            kernel,
            noise,
            environments: envs
                .iter()
                .map(|e| EnvironmentRecord {
                    id: e.id,
                    name: names.get(e.id).cloned().unwrap_or_else(|| format!("source-{}", e.id)),
                    dataset: e.raw.clone(),
                    standardization: e.standardization,
                })
                .collect(),
        }
    }

    /// Refit the environments. Fitting is deterministic, so a restored pool
    /// predicts exactly like the one that was saved.
    pub fn restore(&self) -> Result<Vec<VirtualEnvironment>> {
        if self.version != SNAPSHOT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported environment snapshot version {}",
                self.version
            )));
        }
        self.environments
            .iter()
            .map(|r| {
                let model = fit_gp(&r.standardization.apply(&r.dataset), self.kernel, self.noise)
                    .map_err(|e| Error::Environment {
                        id: r.id,
                        source: Box::new(e),
                    })?;
                Ok(VirtualEnvironment {
                    id: r.id,
                    model,
                    raw: r.dataset.clone(),
                    standardization: r.standardization,
                })
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_source(n: usize, seed: u64, f: impl Fn(&[f64]) -> f64) -> Dataset {
        let pts = sobol_points(n, 2, seed);
        let mut d = Dataset::new(2);
        for x in pts.chunks(2) {
            d.push(x, f(x)).unwrap();
        }
        d
    }

    #[test]
    fn environment_interpolates_standardized_values() {
        let data = Dataset::from_rows(
            1,
            &[vec![0.1], vec![0.3], vec![0.5], vec![0.7], vec![0.9]],
            &[1.0, 4.0, 2.0, 8.0, 5.0],
        )
        .unwrap();
        let envs = build_environments(std::slice::from_ref(&data), KernelConfig::rbf(0.05), 1e-6).unwrap();
        assert_eq!(envs.len(), 1);
        let virt = virtual_history(&envs[0], &data).unwrap();
        let s = envs[0].standardization();
        for (v, y) in virt.values().iter().zip(data.values()) {
            assert!((v - s.forward(*y)).abs() < 1e-3);
        }
        assert_eq!(virt, virtual_history(&envs[0], &data).unwrap());
    }

    #[test]
    fn empty_source_names_its_index() {
        let good = Dataset::from_rows(1, &[vec![0.5]], &[1.0]).unwrap();
        let err = build_environments(&[good, Dataset::new(1)], KernelConfig::rbf(0.05), 1e-6)
            .unwrap_err();
        assert!(matches!(err, Error::Environment { id: 1, .. }), "{err}");
    }

    #[test]
    fn far_point_reverts_to_prior_mean() {
        let data = Dataset::from_rows(1, &[vec![0.0], vec![0.05]], &[1.0, 3.0]).unwrap();
        let envs = build_environments(&[data], KernelConfig::rbf(0.05), 1e-6).unwrap();
        let q = Dataset::from_rows(1, &[vec![1.0]], &[0.0]).unwrap();
        assert!(virtual_history(&envs[0], &q).unwrap().values()[0].abs() < 1e-6);
    }

    #[test]
    fn ncc_reference_cases() {
        let a = [1.0, 3.0, 2.0, 5.0];
        assert!((ncc(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b: Vec<f64> = a.iter().map(|v| 3.0 * v + 7.0).collect();
        assert!((ncc(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let c: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((ncc(&a, &c).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(ncc(&a, &[2.0; 4]).unwrap(), 0.0);
        assert!(ncc(&a, &[1.0, 2.0]).is_err());
        assert!(ncc(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn self_transfer_scores_high() {
        let f = |x: &[f64]| (4.0 * x[0]).sin() + (3.0 * x[1]).cos() * x[0];
        let src = toy_source(100, 4, f);
        let envs = build_environments(std::slice::from_ref(&src), KernelConfig::rbf(0.05), 1e-6).unwrap();
        // History drawn from the same task data the environment was built on.
        let mut hist = Dataset::new(2);
        for i in [3, 17, 42, 64, 90] {
            hist.push(src.point(i), src.values()[i]).unwrap();
        }
        let std_hist = Standardizer::fit(hist.values()).apply(&hist);
        let target = fit_gp(&std_hist, KernelConfig::rbf(0.2), 1e-6).unwrap();
        let reference = ReferenceSet::new(2, 1);
        let report =
            score_environments(&target, &envs, &reference, &hist, KernelConfig::rbf(0.2), 1e-6).unwrap();
        assert!(report.scores[0] >= 0.95, "{:?}", report.scores);
        let again =
            score_environments(&target, &envs, &reference, &hist, KernelConfig::rbf(0.2), 1e-6).unwrap();
        assert_eq!(report, again);
        let empty =
            score_environments(&target, &[], &reference, &hist, KernelConfig::rbf(0.2), 1e-6).unwrap();
        assert!(empty.scores.is_empty());
    }

    #[test]
    fn selection_rule() {
        let ids = [0, 1];
        assert_eq!(select_by_ids(&[0.85, 0.3], &ids, 0.7).selected, Some(0));
        assert_eq!(select_by_ids(&[0.60, 0.55], &ids, 0.7).selected, None);
        assert_eq!(select_by_ids(&[0.99, 1.0], &ids, 1.01).selected, None);
        assert_eq!(select_by_ids(&[0.7, 0.2], &ids, 0.7).selected, None);
        assert_eq!(select_by_ids(&[0.8, 0.8], &ids, 0.7).selected, Some(0));
        assert_eq!(select_by_ids(&[], &[], 0.0).selected, None);
    }

    #[test]
    fn snapshot_round_trip_predicts_identically() {
        let src = toy_source(20, 2, |x| x[0] * x[1]);
        let envs = build_environments(&[src], KernelConfig::rbf(0.05), 1e-6).unwrap();
        let snap = EnvironmentSnapshot::from_environments(&envs, &[], Domain::unit(2), 1e-6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("envs.json");
        snap.save(&path).unwrap();
        let restored = EnvironmentSnapshot::load(&path).unwrap().restore().unwrap();
        let q = [0.37, 0.61];
        assert_eq!(
            envs[0].model().predict_one(&q).unwrap(),
            restored[0].model().predict_one(&q).unwrap()
        );
    }
}
