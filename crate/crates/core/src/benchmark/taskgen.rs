//! Synthetic task families with controlled relatedness.
//!
//! Every function is a random-Fourier-feature draw from a zero-mean GP with
//! an RBF kernel of length-scale 0.2. A test task is the mixture
//! `rho * source_k + sqrt(1 - rho^2) * independent`, of standardized
//! components, rescaled to `[0,1]`; `rho` is bisected until the realized NCC
//! between test and planted source lands in the band of the requested label.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::Dataset;
use crate::lowdisc::sobol_points;
use crate::meta::ncc;
use crate::optimize::{local_ascent, OptimizerConfig};
use crate::policy::{Objective, OracleLabels};
use crate::rng::{hash_words, rng_from_seed};

pub const GENERATOR_LENGTH_SCALE: f64 = 0.2;
const FEATURES: usize = 256;
const MAX_BISECTION: usize = 50;
const MAX_DISTRACTOR_ATTEMPTS: u64 = 500;
pub const TASKSET_VERSION: u32 = 1;

/// NCC at or above which the oracle routes through the most related source.
pub const ORACLE_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relatedness {
    High,
    Medium,
    Moderate,
    Low,
}

impl Relatedness {
    pub const ALL: [Relatedness; 4] = [
        Relatedness::High,
        Relatedness::Medium,
        Relatedness::Moderate,
        Relatedness::Low,
    ];

    /// Admissible band for the realized maximum NCC.
    pub fn band(self) -> (f64, f64) {
        match self {
            Relatedness::High => (0.80, 0.90),
            Relatedness::Medium => (0.50, 0.70),
            Relatedness::Moderate => (0.75, 0.85),
            Relatedness::Low => (-1.0, 0.20),
        }
    }

    /// Value the bisection aims for.
    pub fn target(self) -> f64 {
        match self {
            Relatedness::High => 0.85,
            Relatedness::Medium => 0.60,
            Relatedness::Moderate => 0.82,
            Relatedness::Low => 0.10,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Relatedness::High => "high",
            Relatedness::Medium => "medium",
            Relatedness::Moderate => "moderate",
            Relatedness::Low => "low",
        }
    }
}

impl fmt::Display for Relatedness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Relatedness {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Relatedness::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown relatedness label '{s}'")))
    }
}

/// `sqrt(2/D) * sum_i a_i cos(w_i . x + b_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierFunction {
    dim: usize,
    frequencies: Vec<f64>,
    phases: Vec<f64>,
    amplitudes: Vec<f64>,
}

impl FourierFunction {
    pub fn sample(dim: usize, length_scale: f64, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut frequencies = Vec::with_capacity(FEATURES * dim);
        let mut phases = Vec::with_capacity(FEATURES);
        let mut amplitudes = Vec::with_capacity(FEATURES);
        for _ in 0..FEATURES {
            for _ in 0..dim {
                let z: f64 = rng.sample(StandardNormal);
                frequencies.push(z / length_scale);
            }
            phases.push(rng.gen::<f64>() * 2.0 * PI);
            amplitudes.push(rng.sample::<f64, _>(StandardNormal));
        }
        FourierFunction {
            dim,
            frequencies,
            phases,
            amplitudes,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..FEATURES {
            let w = &self.frequencies[i * self.dim..(i + 1) * self.dim];
            let arg: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.phases[i];
            s += self.amplitudes[i] * arg.cos();
        }
        s * (2.0 / FEATURES as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Term {
    weight: f64,
    shift: f64,
    base: FourierFunction,
}

/// Normalized mixture of Fourier draws, optionally power-transformed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueFunction {
    terms: Vec<Term>,
    lo: f64,
    hi: f64,
    power: f64,
}

impl TrueFunction {
    fn raw(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| t.weight * (t.base.eval(x) - t.shift))
            .sum()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let v = (self.raw(x) - self.lo) / (self.hi - self.lo);
        if self.power == 1.0 {
            v
        } else {
            v.max(0.0).powf(self.power)
        }
    }
}

/// Points on which relatedness is measured.
pub fn ncc_grid(dim: usize) -> Vec<f64> {
    match dim {
        1 => regular_grid(1, 1024),
        2 => regular_grid(2, 64),
        _ => sobol_points(4096, dim, 0x5eed),
    }
}

/// Points on which the optimum is located before local refinement.
pub fn scan_points(dim: usize) -> Vec<f64> {
    match dim {
        1 => regular_grid(1, 200),
        2 => regular_grid(2, 200),
        _ => {
            let mut pts = sobol_points(50_000, dim, 0xa11);
            pts.extend(sobol_points(50_000, dim, 0xb22));
            pts
        }
    }
}

fn regular_grid(dim: usize, per_axis: usize) -> Vec<f64> {
    let step = 1.0 / (per_axis - 1) as f64;
    let total = per_axis.pow(dim as u32);
    let mut out = Vec::with_capacity(total * dim);
    for mut i in 0..total {
        let mut coords = vec![0.0; dim];
        for c in coords.iter_mut().rev() {
            *c = (i % per_axis) as f64 * step;
            i /= per_axis;
        }
        out.extend(coords);
    }
    out
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
    (m, s)
}

fn standardized_term(base: FourierFunction, grid: &[f64], dim: usize) -> (Term, Vec<f64>) {
    let vals: Vec<f64> = grid.chunks(dim).map(|x| base.eval(x)).collect();
    let (m, s) = mean_std(&vals);
    let std_vals = vals.iter().map(|v| (v - m) / s).collect();
    (
        Term {
            weight: 1.0 / s,
            shift: m,
            base,
        },
        std_vals,
    )
}

/// Locate the maximum of `f` on the scan, then polish the best few scan
/// points with a fine compass search. Returns `(argmax, max, scan min)`.
fn locate_max(f: &dyn Fn(&[f64]) -> f64, dim: usize) -> (Vec<f64>, f64, f64) {
    let scan = scan_points(dim);
    let mut scored: Vec<(f64, &[f64])> = scan.chunks(dim).map(|x| (f(x), x)).collect();
    let lo = scored.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let polish = OptimizerConfig {
        restarts: 1,
        max_iters: 400,
        candidate_pool: 1,
        step_tolerance: 1e-7,
        initial_step: 0.01,
    };
    let mut best = (scored[0].1.to_vec(), scored[0].0);
    for &(v0, start) in scored.iter().take(5) {
        let (x, v) = local_ascent(|u| f(u), start.to_vec(), v0, &polish);
        if v > best.1 {
            best = (x, v);
        }
    }
    (best.0, best.1, lo)
}

fn normalized_source(base: FourierFunction, grid: &[f64], dim: usize) -> (TrueFunction, Vec<f64>) {
    let vals: Vec<f64> = grid.chunks(dim).map(|x| base.eval(x)).collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let f = TrueFunction {
        terms: vec![Term {
            weight: 1.0,
            shift: 0.0,
            base,
        }],
        lo,
        hi,
        power: 1.0,
    };
    let norm = vals.iter().map(|v| (v - lo) / (hi - lo)).collect();
    (f, norm)
}

/// Exponent that lifts the upper quartile of `values` (on `[0,1]`) to 0.9,
/// so the top-decile region covers at least a quarter of the domain.
fn broadening_power(values: &[f64]) -> f64 {
    let mut sorted: Vec<f64> = values.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    sorted.sort_by(f64::total_cmp);
    let q75 = sorted[(0.75 * (sorted.len() - 1) as f64).round() as usize];
    if q75 >= 0.9 || q75 <= 0.0 {
        1.0
    } else {
        0.9f64.ln() / q75.ln()
    }
}

fn mix(rho: f64, s: &[f64], g: &[f64]) -> Vec<f64> {
    let c = (1.0 - rho * rho).max(0.0).sqrt();
    s.iter().zip(g).map(|(a, b)| rho * a + c * b).collect()
}

fn min_max_normalize(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// A generated source/test family.
#[derive(Debug, Clone)]
pub struct TaskSet {
    pub dim: usize,
    pub label: Relatedness,
    pub seed: u64,
    /// Index of the source the test task was mixed from.
    pub planted: usize,
    pub rho: f64,
    /// Exponent applied to the normalized test function (1 unless broadened).
    pub power: f64,
    pub sources: Vec<Dataset>,
    pub source_functions: Vec<TrueFunction>,
    pub test: TrueFunction,
    pub f_star: f64,
    pub argmax: Vec<f64>,
    /// NCC of the true test function against each true source on the grid.
    pub realized_ncc: Vec<f64>,
}

impl TaskSet {
    pub fn max_ncc(&self) -> f64 {
        self.realized_ncc.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Source with the highest realized NCC (smallest index on ties).
    pub fn most_related(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.realized_ncc.iter().enumerate() {
            if v > self.realized_ncc[best] {
                best = i;
            }
        }
        best
    }

    pub fn snapshot(&self) -> TaskSetSnapshot {
        TaskSetSnapshot {
            version: TASKSET_VERSION,
            dim: self.dim,
            n_sources: self.sources.len(),
            label: self.label,
            seed: self.seed,
            planted: self.planted,
            rho: self.rho,
            power: self.power,
            realized_ncc: self.realized_ncc.clone(),
            f_star: self.f_star,
            argmax: self.argmax.clone(),
            sources: self.sources.clone(),
        }
    }
}

impl Objective for TaskSet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, x: &[f64]) -> f64 {
        self.test.eval(x)
    }

    fn f_star(&self) -> f64 {
        self.f_star
    }

    fn oracle_labels(&self) -> Option<OracleLabels> {
        let best = self.most_related();
        Some(OracleLabels {
            true_source: (self.realized_ncc[best] >= ORACLE_THRESHOLD).then_some(best),
        })
    }
}

/// Generate a task family whose realized maximum NCC lies in `label`'s band.
pub fn generate_task_set(dim: usize, n_sources: usize, label: Relatedness, seed: u64) -> Result<TaskSet> {
    generate(dim, n_sources, label, seed, None)
}

/// As [`generate_task_set`] but with the mixing weight fixed instead of
/// tuned; the band check is skipped.
pub fn generate_task_set_with_rho(
    dim: usize,
    n_sources: usize,
    label: Relatedness,
    seed: u64,
    rho: f64,
) -> Result<TaskSet> {
    generate(dim, n_sources, label, seed, Some(rho))
}

fn generate(
    dim: usize,
    n_sources: usize,
    label: Relatedness,
    seed: u64,
    forced_rho: Option<f64>,
) -> Result<TaskSet> {
    if !(1..=10).contains(&dim) {
        return Err(Error::Generation(format!("dim must be in 1..=10, got {dim}")));
    }
    if n_sources == 0 {
        return Err(Error::Generation("at least one source is required".into()));
    }
    let broaden = label == Relatedness::Moderate;
    let grid = ncc_grid(dim);
    let planted = (hash_words(&[seed, 0x91a]) % n_sources as u64) as usize;
    let (planted_fn, planted_norm) = normalized_source(
        FourierFunction::sample(dim, GENERATOR_LENGTH_SCALE, hash_words(&[seed, 1, planted as u64, 0])),
        &grid,
        dim,
    );
    let (band_lo, band_hi) = label.band();
    let target = label.target();

    let mut last_err = String::new();
    for attempt in 0..20u64 {
        let s_base = planted_fn.terms[0].base.clone();
        let (s_term, s_std) = standardized_term(s_base, &grid, dim);
        let g_base = FourierFunction::sample(dim, GENERATOR_LENGTH_SCALE, hash_words(&[seed, 2, attempt]));
        let (g_term, g_std) = standardized_term(g_base, &grid, dim);

        let grid_ncc = |rho: f64| -> Result<f64> {
            let mixed = mix(rho, &s_std, &g_std);
            if broaden {
                let norm = min_max_normalize(&mixed);
                let p = broadening_power(&norm);
                let shaped: Vec<f64> = norm.iter().map(|v| v.max(0.0).powf(p)).collect();
                ncc(&shaped, &planted_norm)
            } else {
                ncc(&mixed, &planted_norm)
            }
        };

        let rho = match forced_rho {
            Some(r) => r,
            None => {
                let (mut lo, mut hi) = (0.0f64, 1.0f64);
                if grid_ncc(lo)? > target {
                    last_err = format!("independent component already correlates above {target}");
                    continue;
                }
                let mut found = None;
                for _ in 0..MAX_BISECTION {
                    let mid = 0.5 * (lo + hi);
                    let v = grid_ncc(mid)?;
                    if (v - target).abs() <= 0.01 {
                        found = Some(mid);
                        break;
                    }
                    if v < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                match found {
                    Some(r) => r,
                    None => {
                        return Err(Error::Generation(format!(
                            "bisection for rho did not reach NCC {target} within {MAX_BISECTION} \
                             iterations (bracket [{lo}, {hi}])"
                        )))
                    }
                }
            }
        };

        let c = (1.0 - rho * rho).max(0.0).sqrt();
        let mut test = TrueFunction {
            terms: vec![
                Term {
                    weight: rho * s_term.weight,
                    ..s_term
                },
                Term {
                    weight: c * g_term.weight,
                    ..g_term
                },
            ],
            lo: 0.0,
            hi: 1.0,
            power: 1.0,
        };
        let raw = |x: &[f64]| test.raw(x);
        let (argmax, hi, lo) = locate_max(&raw, dim);
        test.lo = lo;
        test.hi = hi;
        if broaden {
            let scan = scan_points(dim);
            let norm: Vec<f64> = scan.chunks(dim).map(|x| test.eval(x)).collect();
            test.power = broadening_power(&norm);
        }
        let f_star = test.eval(&argmax);
        let test_grid: Vec<f64> = grid.chunks(dim).map(|x| test.eval(x)).collect();
        let planted_ncc = ncc(&test_grid, &planted_norm)?;
        if forced_rho.is_none() && !(band_lo..=band_hi).contains(&planted_ncc) {
            last_err = format!("planted NCC {planted_ncc:.3} left the band after normalization");
            continue;
        }

        // Distractors: independent draws, resampled until they stay clear of
        // the planted source's relatedness.
        let limit = if label == Relatedness::Low { band_hi } else { band_lo - 0.05 };
        let mut source_functions = Vec::with_capacity(n_sources);
        let mut realized_ncc = Vec::with_capacity(n_sources);
        for j in 0..n_sources {
            if j == planted {
                source_functions.push(planted_fn.clone());
                realized_ncc.push(planted_ncc);
                continue;
            }
            let mut accepted = None;
            for k in 0..MAX_DISTRACTOR_ATTEMPTS {
                let base = FourierFunction::sample(
                    dim,
                    GENERATOR_LENGTH_SCALE,
                    hash_words(&[seed, 1, j as u64, 1 + k]),
                );
                let (f, vals) = normalized_source(base, &grid, dim);
                let r = ncc(&test_grid, &vals)?;
                if r <= limit {
                    accepted = Some((f, r));
                    break;
                }
            }
            let (f, r) = accepted.ok_or_else(|| {
                Error::Generation(format!(
                    "no distractor for source {j} stayed below NCC {limit} in \
                     {MAX_DISTRACTOR_ATTEMPTS} draws"
                ))
            })?;
            source_functions.push(f);
            realized_ncc.push(r);
        }

        let sources = source_functions
            .iter()
            .enumerate()
            .map(|(j, f)| {
                let pts = sobol_points(50 * dim, dim, hash_words(&[seed, 3, j as u64]));
                let mut d = Dataset::new(dim);
                for x in pts.chunks(dim) {
                    d.push(x, f.eval(x))?;
                }
                Ok(d)
            })
            .collect::<Result<Vec<_>>>()?;

        return Ok(TaskSet {
            dim,
            label,
            seed,
            planted,
            rho,
            power: test.power,
            sources,
            source_functions,
            test,
            f_star,
            argmax,
            realized_ncc,
        });
    }
    Err(Error::Generation(format!(
        "could not generate a {label} task set for seed {seed}: {last_err}"
    )))
}

/// Serializable description of a generated task set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSetSnapshot {
    pub version: u32,
    pub dim: usize,
    pub n_sources: usize,
    pub label: Relatedness,
    pub seed: u64,
    pub planted: usize,
    pub rho: f64,
    pub power: f64,
    pub realized_ncc: Vec<f64>,
    pub f_star: f64,
    pub argmax: Vec<f64>,
    pub sources: Vec<Dataset>,
}

impl TaskSetSnapshot {
    /// Rebuild the task set from its generator seed and check that it
    /// reproduces the recorded values exactly.
    pub fn regenerate(&self) -> Result<TaskSet> {
        if self.version != TASKSET_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported task-set snapshot version {}",
                self.version
            )));
        }
        let ts = generate_task_set(self.dim, self.n_sources, self.label, self.seed)?;
        if ts.snapshot() != *self {
            return Err(Error::Generation(
                "regenerated task set differs from the snapshot".into(),
            ));
        }
        Ok(ts)
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
    use crate::oracle::grid_argmax;

    #[test]
    fn high_band_realized() {
        let ts = generate_task_set(2, 4, Relatedness::High, 1).unwrap();
        let m = ts.max_ncc();
        assert!((0.80..=0.90).contains(&m), "max NCC {m}");
        assert_eq!(ts.most_related(), ts.planted);
        assert_eq!(ts.sources.len(), 4);
        assert!(ts.sources.iter().all(|d| d.len() == 100));
        assert_eq!(ts.oracle_labels().unwrap().true_source, Some(ts.planted));
    }

    #[test]
    fn low_band_realized() {
        let ts = generate_task_set(2, 4, Relatedness::Low, 2).unwrap();
        assert!(ts.max_ncc() <= 0.2, "{:?}", ts.realized_ncc);
        assert_eq!(ts.oracle_labels().unwrap().true_source, None);
    }

    #[test]
    fn medium_and_moderate_bands() {
        let ts = generate_task_set(2, 3, Relatedness::Medium, 3).unwrap();
        assert!((0.5..=0.7).contains(&ts.max_ncc()));
        let ts = generate_task_set(2, 3, Relatedness::Moderate, 4).unwrap();
        assert!((0.75..=0.85).contains(&ts.max_ncc()));
        let scan = scan_points(2);
        let top = scan.chunks(2).filter(|x| ts.evaluate(x) >= 0.9).count();
        assert!(top as f64 >= 0.25 * (scan.len() / 2) as f64 - 1.0);
    }

    #[test]
    fn forced_unit_rho_copies_source() {
        let ts = generate_task_set_with_rho(2, 2, Relatedness::High, 5, 1.0).unwrap();
        assert!((ts.realized_ncc[ts.planted] - 1.0).abs() <= 0.01);
    }

    #[test]
    fn f_star_verified_on_grid() {
        let ts = generate_task_set(2, 2, Relatedness::High, 6).unwrap();
        let (_, grid_max) = grid_argmax(|x| ts.evaluate(x), 2, 200).unwrap();
        assert!(ts.f_star >= grid_max - 1e-12 && ts.f_star - grid_max <= 1e-3);
        assert_eq!(ts.evaluate(&ts.argmax), ts.f_star);
    }

    #[test]
    fn snapshot_regenerates_exactly() {
        let ts = generate_task_set(2, 2, Relatedness::Medium, 8).unwrap();
        let snap = ts.snapshot();
        let json = serde_json::to_string(&snap).unwrap();
        let back: TaskSetSnapshot = serde_json::from_str(&json).unwrap();
        let again = back.regenerate().unwrap();
        assert_eq!(again.snapshot(), snap);
    }

    #[test]
    fn invalid_arguments() {
        assert!(generate_task_set(0, 2, Relatedness::High, 1).is_err());
        assert!(generate_task_set(11, 2, Relatedness::High, 1).is_err());
        assert!(generate_task_set(2, 0, Relatedness::High, 1).is_err());
    }
}
