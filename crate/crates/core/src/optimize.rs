//! Multi-restart, derivative-free maximization on the unit box.
//!
//! A scrambled Sobol pool is scored first; the best `restarts` pool points
//! seed independent compass (coordinate pattern) searches.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowdisc::sobol_points;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub candidate_pool: usize,
    pub step_tolerance: f64,
    pub initial_step: f64,
}

impl Default for OptimizerConfig {
    /// Outer proposal optimizer: 3 restarts, up to 100 iterations each.
    fn default() -> Self {
        OptimizerConfig {
            restarts: 3,
            max_iters: 100,
            candidate_pool: 64,
            step_tolerance: 1e-3,
            initial_step: 0.1,
        }
    }
}

impl OptimizerConfig {
    /// Reduced budget for the nested maximization over the second step.
    pub fn inner() -> Self {
        OptimizerConfig {
            restarts: 2,
            max_iters: 50,
            candidate_pool: 32,
            step_tolerance: 1e-3,
            initial_step: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.max_iters == 0 || self.candidate_pool == 0 {
            return Err(Error::InvalidConfig(
                "optimizer restarts, max_iters and candidate_pool must be >= 1".into(),
            ));
        }
        if !(self.step_tolerance > 0.0 && self.initial_step > 0.0) {
            return Err(Error::InvalidConfig("optimizer steps must be positive".into()));
        }
        Ok(())
    }
}

/// Higher value wins; equal values go to the lexicographically smaller point.
fn better(v: f64, x: &[f64], best_v: f64, best_x: &[f64]) -> bool {
    match v.total_cmp(&best_v) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => lex_cmp(x, best_x) == Ordering::Less,
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Compass search from `start` (whose value is `start_value`): move to the
/// best improving axis step, halve the step when none improves.
pub fn local_ascent<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    start: Vec<f64>,
    start_value: f64,
    cfg: &OptimizerConfig,
) -> (Vec<f64>, f64) {
    let dim = start.len();
    let mut x = start;
    let mut fx = start_value;
    let mut step = cfg.initial_step;
    let mut trial = x.clone();
    for _ in 0..cfg.max_iters {
        let mut best: Option<(Vec<f64>, f64)> = None;
        for d in 0..dim {
            for sign in [1.0, -1.0] {
                let moved = (x[d] + sign * step).clamp(0.0, 1.0);
                if moved == x[d] {
                    continue;
                }
                trial.copy_from_slice(&x);
                trial[d] = moved;
                let v = sanitize(f(&trial));
                let improves = match &best {
                    Some((bx, bv)) => better(v, &trial, *bv, bx),
                    None => v > fx,
                };
                if improves && v > fx {
                    best = Some((trial.clone(), v));
                }
            }
        }
        match best {
            Some((bx, bv)) => {
                x = bx;
                fx = bv;
            }
            None => {
                step *= 0.5;
                if step < cfg.step_tolerance {
                    break;
                }
            }
        }
    }
    (x, fx)
}

/// Maximize `value_fn` over `[0,1]^dim`. Deterministic given `seed`.
pub fn maximize_acquisition<F: FnMut(&[f64]) -> f64>(
    mut value_fn: F,
    dim: usize,
    cfg: &OptimizerConfig,
    seed: u64,
) -> (Vec<f64>, f64) {
    let pool = sobol_points(cfg.candidate_pool, dim, seed);
    let mut scored: Vec<(Vec<f64>, f64)> = pool
        .chunks(dim)
        .map(|x| (x.to_vec(), sanitize(value_fn(x))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| lex_cmp(&a.0, &b.0)));

    let mut best_x = scored[0].0.clone();
    let mut best_v = scored[0].1;
    for (start, v0) in scored.into_iter().take(cfg.restarts) {
        let (x, v) = local_ascent(&mut value_fn, start, v0, cfg);
        if better(v, &x, best_v, &best_x) {
            best_x = x;
            best_v = v;
        }
    }
    (best_x, best_v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::grid_argmax;

    #[test]
    fn quadratic_peak_found() {
        let f = |x: &[f64]| -x.iter().map(|v| (v - 0.3).powi(2)).sum::<f64>();
        let (x, v) = maximize_acquisition(f, 2, &OptimizerConfig::default(), 1);
        assert!(x.iter().all(|v| (v - 0.3).abs() < 0.01), "{x:?}");
        assert!((v - f(&x)).abs() == 0.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let f = |x: &[f64]| (7.0 * x[0]).sin() * (5.0 * x[1]).cos();
        let a = maximize_acquisition(f, 2, &OptimizerConfig::default(), 9);
        let b = maximize_acquisition(f, 2, &OptimizerConfig::default(), 9);
        assert_eq!(a, b);
    }

    #[test]
    fn stays_inside_box() {
        let f = |x: &[f64]| x[0] + x[1];
        let (x, v) = maximize_acquisition(f, 2, &OptimizerConfig::default(), 3);
        assert_eq!(x, vec![1.0, 1.0]);
        assert_eq!(v, 2.0);
    }

    // Two Gaussian bumps: global at 0.8 (height 1.0), local at 0.2 (height 0.8).
    fn bimodal(x: &[f64]) -> f64 {
        let g = |c: f64, h: f64, w: f64| h * (-(x[0] - c).powi(2) / (2.0 * w * w)).exp();
        g(0.8, 1.0, 0.05) + g(0.2, 0.8, 0.15)
    }

    #[test]
    fn bimodal_global_found_across_seeds() {
        let cfg = OptimizerConfig {
            restarts: 3,
            candidate_pool: 64,
            ..OptimizerConfig::default()
        };
        let (gx, gv) = grid_argmax(bimodal, 1, 100_001).unwrap();
        let hits = (0..100u64)
            .filter(|&s| {
                let (x, v) = maximize_acquisition(bimodal, 1, &cfg, s);
                (x[0] - gx[0]).abs() < 0.01 && (v - gv).abs() < 1e-4
            })
            .count();
        assert!(hits >= 95, "global found in {hits}/100 seeds");
    }

    #[test]
    fn nan_values_never_win() {
        let f = |x: &[f64]| if x[0] > 0.5 { f64::NAN } else { x[0] };
        let (x, v) = maximize_acquisition(f, 1, &OptimizerConfig::default(), 2);
        assert!(x[0] <= 0.5 && v.is_finite());
    }
}
