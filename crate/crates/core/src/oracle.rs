//! Brute-force reference computations for the test suite.
//!
//! Nothing in here calls into the GP or acquisition code: the kernel, the
//! normal density and the linear algebra are all re-derived from scratch so
//! the checks stay independent of the code they check.

use crate::error::{Error, Result};

/// Discrete distribution over scalar outcomes.
#[derive(Debug, Clone)]
pub struct DiscreteSampler {
    outcomes: Vec<f64>,
    cumulative: Vec<f64>,
    probabilities: Vec<f64>,
}

impl DiscreteSampler {
    pub fn new(outcomes: Vec<f64>, probabilities: Vec<f64>) -> Result<Self> {
        if outcomes.len() != probabilities.len() || outcomes.is_empty() {
            return Err(Error::LengthMismatch(outcomes.len(), probabilities.len()));
        }
        if probabilities.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidConfig("negative probability".into()));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        let mut acc = 0.0;
        let cumulative = probabilities
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(DiscreteSampler {
            outcomes,
            cumulative,
            probabilities,
        })
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Inverse-CDF draw from a uniform variate in `[0,1)`.
    pub fn draw(&self, u: f64) -> f64 {
        let idx = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.outcomes.len() - 1);
        self.outcomes[idx]
    }
}

/// Exact mean and variance of `payoff(outcome)` under the sampler.
pub fn enumerate_expectation(sampler: &DiscreteSampler, payoff: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut mean = 0.0;
    let mut second = 0.0;
    for (&o, &p) in sampler.outcomes.iter().zip(&sampler.probabilities) {
        let v = payoff(o);
        mean += p * v;
        second += p * v * v;
    }
    (mean, (second - mean * mean).max(0.0))
}

fn sq_exp(a: &[f64], b: &[f64], length_scale: f64, variance: f64) -> f64 {
    let mut d2 = 0.0;
    for i in 0..a.len() {
        let t = a[i] - b[i];
        d2 += t * t;
    }
    variance * f64::exp(-0.5 * d2 / (length_scale * length_scale))
}

/// Explicit inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert(matrix: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = matrix.len();
    let mut aug: Vec<Vec<f64>> = matrix
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    let scale = matrix
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| aug[a][col].abs().total_cmp(&aug[b][col].abs()))
            .unwrap();
        if aug[pivot][col].abs() <= 1e-13 * scale {
            return Err(Error::NotPositiveDefinite { jitter: 0.0 });
        }
        aug.swap(col, pivot);
        let p = aug[col][col];
        for v in aug[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = aug[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        aug[r][c] -= f * aug[col][c];
                    }
                }
            }
        }
    }
    Ok(aug.into_iter().map(|r| r[n..].to_vec()).collect())
}

/// GP weights `(K + noise I)^{-1} y` via the explicit inverse.
pub fn dense_gp_weights(
    points: &[Vec<f64>],
    values: &[f64],
    length_scale: f64,
    variance: f64,
    noise: f64,
) -> Result<Vec<f64>> {
    let inv = gram_inverse(points, length_scale, variance, noise)?;
    Ok(inv
        .iter()
        .map(|row| row.iter().zip(values).map(|(a, y)| a * y).sum())
        .collect())
}

fn gram_inverse(
    points: &[Vec<f64>],
    length_scale: f64,
    variance: f64,
    noise: f64,
) -> Result<Vec<Vec<f64>>> {
    let n = points.len();
    if n > 50 {
        return Err(Error::InvalidConfig("dense oracle limited to n <= 50".into()));
    }
    let gram: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    sq_exp(&points[i], &points[j], length_scale, variance)
                        + if i == j { noise } else { 0.0 }
                })
                .collect()
        })
        .collect();
    invert(&gram)
}

/// Textbook posterior mean and variance at each query point.
pub fn dense_gp_predict(
    points: &[Vec<f64>],
    values: &[f64],
    length_scale: f64,
    variance: f64,
    noise: f64,
    query: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let inv = gram_inverse(points, length_scale, variance, noise)?;
    let n = points.len();
    let mut means = Vec::new();
    let mut vars = Vec::new();
    for q in query {
        let k: Vec<f64> = points
            .iter()
            .map(|p| sq_exp(q, p, length_scale, variance))
            .collect();
        let mut mean = 0.0;
        let mut quad = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += inv[i][j] * values[j];
                quad += k[i] * inv[i][j] * k[j];
            }
            mean += k[i] * row;
        }
        means.push(mean);
        vars.push(variance - quad);
    }
    Ok((means, vars))
}

fn normal_pdf(v: f64, mean: f64, std: f64) -> f64 {
    let z = (v - mean) / std;
    f64::exp(-0.5 * z * z) / (std * (2.0 * std::f64::consts::PI).sqrt())
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + adaptive(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson integration on `[a, b]`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(&f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `E[max(v - incumbent, 0)]` for `v ~ N(mean, std^2)` by numerical
/// integration over `[max(incumbent, mean - 12 std), mean + 12 std]`.
pub fn ei_quadrature(mean: f64, std: f64, incumbent: f64) -> f64 {
    assert!(std > 0.0, "quadrature oracle needs std > 0");
    let lo = incumbent.max(mean - 12.0 * std);
    let hi = mean + 12.0 * std;
    if lo >= hi {
        return 0.0;
    }
    // Split at the mode so the adaptive rule sees the peak.
    let f = |v: f64| (v - incumbent) * normal_pdf(v, mean, std);
    let mid = mean.clamp(lo, hi);
    integrate(f, lo, mid, 1e-12) + integrate(f, mid, hi, 1e-12)
}

/// Exhaustive search on a regular grid with `resolution` points per axis
/// (endpoints included). Ties keep the lexicographically smallest point.
pub fn grid_argmax(
    f: impl Fn(&[f64]) -> f64,
    dim: usize,
    resolution: usize,
) -> Result<(Vec<f64>, f64)> {
    if resolution < 2 {
        return Err(Error::InvalidConfig("grid resolution must be >= 2".into()));
    }
    let total = (resolution as f64).powi(dim as i32);
    if total > 1e7 {
        return Err(Error::InvalidConfig(format!(
            "grid of {total} points exceeds the 1e7 budget"
        )));
    }
    let step = 1.0 / (resolution - 1) as f64;
    let mut idx = vec![0usize; dim];
    let mut best: Option<(Vec<f64>, f64)> = None;
    loop {
        let x: Vec<f64> = idx.iter().map(|&i| i as f64 * step).collect();
        let v = f(&x);
        if best.as_ref().is_none_or(|(_, bv)| v > *bv) {
            best = Some((x, v));
        }
        // Last axis varies fastest, so iteration is lexicographic.
        let mut d = dim;
        loop {
            if d == 0 {
                return Ok(best.unwrap());
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < resolution {
                break;
            }
            idx[d] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_point_closed_form() {
        let p = vec![vec![0.3]];
        let y = [1.7];
        let (ls, var, noise) = (0.2, 1.3, 1e-3);
        let q = vec![vec![0.45]];
        let (m, v) = dense_gp_predict(&p, &y, ls, var, noise, &q).unwrap();
        let k = var * f64::exp(-0.5 * 0.15f64.powi(2) / (ls * ls));
        assert!((m[0] - k * y[0] / (var + noise)).abs() < 1e-12);
        assert!((v[0] - (var - k * k / (var + noise))).abs() < 1e-12);
    }

    #[test]
    fn singular_rejected() {
        let p = vec![vec![0.3], vec![0.3]];
        assert!(dense_gp_predict(&p, &[1.0, 1.0], 0.2, 1.0, 0.0, &p).is_err());
    }

    #[test]
    fn ei_reference_values() {
        assert!((ei_quadrature(1.0, 1.0, 0.0) - 1.083_315_470_6).abs() < 1e-9);
        assert!(ei_quadrature(0.0, 1.0, 1e6) == 0.0);
        assert!((ei_quadrature(2.0, 1e-6, 1.0) - 1.0).abs() < 1e-9);
        let phi0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((ei_quadrature(0.5, 1.0, 0.5) - phi0).abs() < 1e-9);
    }

    #[test]
    fn enumeration_moments() {
        let s = DiscreteSampler::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        assert_eq!(enumerate_expectation(&s, |v| v), (0.5, 0.25));
        assert_eq!(enumerate_expectation(&s, |_| 3.0).1, 0.0);
        assert_eq!(s.draw(0.49), 0.0);
        assert_eq!(s.draw(0.5), 1.0);
        assert!(DiscreteSampler::new(vec![1.0], vec![0.9]).is_err());
    }

    #[test]
    fn grid_search_rules() {
        let (x, _) = grid_argmax(|x| -(x[0] - 0.3).powi(2) - (x[1] - 0.7).powi(2), 2, 101).unwrap();
        assert!((x[0] - 0.3).abs() <= 0.01 && (x[1] - 0.7).abs() <= 0.01);
        let (x, v) = grid_argmax(|_| 1.0, 2, 5).unwrap();
        assert_eq!((x, v), (vec![0.0, 0.0], 1.0));
        assert!(grid_argmax(|_| 0.0, 8, 10).is_err());
    }
}
