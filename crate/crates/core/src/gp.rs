//! Exact Gaussian-process regression with an isotropic RBF kernel.
//!
//! All models live on the normalized unit box. Values are used as given:
//! callers that want a zero prior mean on standardized values wrap their
//! data with [`Standardizer`] first.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Diagonal jitter ladder tried when a Cholesky factorization fails.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

/// Box domain. Optimization always happens on `[0,1]^dim`; `bounds` maps
/// normalized coordinates back to user units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub bounds: Vec<(f64, f64)>,
}

impl Domain {
    pub fn unit(dim: usize) -> Self {
        Domain {
            bounds: vec![(0.0, 1.0); dim],
        }
    }

    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::InvalidConfig("domain needs at least one dimension".into()));
        }
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidConfig(format!(
                    "dimension {i}: lower bound {lo} must be below upper bound {hi}"
                )));
            }
        }
        Ok(Domain { bounds })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.bounds)
            .map(|(v, (lo, hi))| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.bounds)
            .map(|(v, (lo, hi))| lo + v * (hi - lo))
            .collect()
    }
}

/// Ordered `(point, value)` pairs. Points are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dim: usize,
    points: Vec<f64>,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "dataset dimension must be positive");
        Dataset {
            dim,
            points: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>], values: &[f64]) -> Result<Self> {
        if rows.len() != values.len() {
            return Err(Error::LengthMismatch(rows.len(), values.len()));
        }
        let mut data = Dataset::new(dim);
        for (x, &y) in rows.iter().zip(values) {
            data.push(x, y)?;
        }
        Ok(data)
    }

    pub fn push(&mut self, x: &[f64], y: f64) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("point"));
        }
        if !y.is_finite() {
            return Err(Error::NonFinite("value"));
        }
        self.points.extend_from_slice(x);
        self.values.push(y);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks(self.dim)
    }

    pub fn flat_points(&self) -> &[f64] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Best observed value, `None` when empty.
    pub fn max_value(&self) -> Option<f64> {
        self.values.iter().copied().reduce(f64::max)
    }

    /// Same points with values replaced.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::LengthMismatch(self.len(), values.len()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("value"));
        }
        Ok(Dataset {
            dim: self.dim,
            points: self.points.clone(),
            values,
        })
    }

    fn has_duplicates(&self) -> bool {
        (0..self.len()).any(|i| (0..i).any(|j| self.point(i) == self.point(j)))
    }
}

/// Empirical mean/std standardization of observed values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    /// A single value (or a constant vector) gets unit scale.
    pub fn fit(values: &[f64]) -> Self {
        if values.is_empty() {
            return Standardizer { mean: 0.0, std: 1.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Standardizer {
            mean,
            std: if std > 1e-12 { std } else { 1.0 },
        }
    }

    pub fn forward(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        let values = data.values().iter().map(|&y| self.forward(y)).collect();
        Dataset {
            dim: data.dim,
            points: data.points.clone(),
            values,
        }
    }
}

/// Isotropic RBF kernel configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub length_scale: f64,
    #[serde(default = "unit_variance")]
    pub signal_variance: f64,
}

fn unit_variance() -> f64 {
    1.0
}

impl KernelConfig {
    pub fn rbf(length_scale: f64) -> Self {
        KernelConfig {
            length_scale,
            signal_variance: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "length_scale must be positive, got {}",
                self.length_scale
            )));
        }
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "signal_variance must be positive, got {}",
                self.signal_variance
            )));
        }
        Ok(())
    }

    #[inline]
    fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.signal_variance * (-d2 / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

/// `signal_variance * exp(-|a-b|^2 / (2 l^2))`.
pub fn rbf_kernel(a: &[f64], b: &[f64], cfg: &KernelConfig) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(cfg.eval_unchecked(a, b))
}

/// In-place lower Cholesky of a row-major `n x n` matrix. Only the lower
/// triangle is read; the upper triangle is zeroed.
fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for k in (j + 1)..n {
            a[j * n + k] = 0.0;
        }
    }
    true
}

/// Solve `L x = b` in place for lower-triangular row-major `L`.
#[inline]
fn forward_substitute(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let row = &l[i * n..i * n + i];
        let s: f64 = row.iter().zip(&b[..i]).map(|(a, c)| a * c).sum();
        b[i] = (b[i] - s) / l[i * n + i];
    }
}

/// Solve `L^T x = b` in place.
fn back_substitute(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// A fitted exact GP. Immutable after construction.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: KernelConfig,
    noise: f64,
    data: Dataset,
    /// Row-major lower factor of `K + (noise + jitter) I`.
    chol: Vec<f64>,
    alpha: Vec<f64>,
    jitter: f64,
}

/// Fit an exact GP on `data` with fixed hyperparameters.
pub fn fit_gp(data: &Dataset, kernel: KernelConfig, noise: f64) -> Result<GpModel> {
    kernel.validate()?;
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise must be non-negative, got {noise}")));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if noise == 0.0 && data.has_duplicates() {
        return Err(Error::DuplicatePoints);
    }
    let n = data.len();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            gram[i * n + j] = kernel.eval_unchecked(data.point(i), data.point(j));
        }
    }
    let mut last_jitter = 0.0;
    for &jitter in &JITTER_LADDER {
        let mut chol = gram.clone();
        for i in 0..n {
            chol[i * n + i] += noise + jitter;
        }
        last_jitter = jitter;
        if cholesky_in_place(&mut chol, n) {
            if jitter > 0.0 {
                log::debug!("GP fit needed diagonal jitter {jitter:e}");
            }
            let mut alpha = data.values().to_vec();
            forward_substitute(&chol, n, &mut alpha);
            back_substitute(&chol, n, &mut alpha);
            return Ok(GpModel {
                kernel,
                noise,
                data: data.clone(),
                chol,
                alpha,
                jitter,
            });
        }
    }
    Err(Error::NotPositiveDefinite { jitter: last_jitter })
}

impl GpModel {
    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Row-major lower Cholesky factor.
    pub fn cholesky(&self) -> &[f64] {
        &self.chol
    }

    /// Diagonal jitter that was needed on top of `noise`.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Posterior mean and unclamped variance at one point. `scratch` must
    /// have length `self.len()`.
    #[inline]
    pub(crate) fn predict_raw(&self, x: &[f64], scratch: &mut [f64]) -> (f64, f64) {
        let n = self.len();
        for (i, k) in scratch.iter_mut().enumerate() {
            *k = self.kernel.eval_unchecked(x, self.data.point(i));
        }
        let mean: f64 = scratch.iter().zip(&self.alpha).map(|(k, a)| k * a).sum();
        forward_substitute(&self.chol, n, scratch);
        let reduction: f64 = scratch.iter().map(|v| v * v).sum();
        (mean, self.kernel.signal_variance - reduction)
    }

    /// Posterior mean and variance (clamped at zero) at a single point.
    pub fn predict_one(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.check_dim(x)?;
        let mut scratch = vec![0.0; self.len()];
        let (m, v) = self.predict_raw(x, &mut scratch);
        Ok((m, v.max(0.0)))
    }

    /// Posterior means and variances at each query point.
    pub fn predict(&self, query: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut scratch = vec![0.0; self.len()];
        let mut means = Vec::with_capacity(query.len());
        let mut vars = Vec::with_capacity(query.len());
        for x in query {
            self.check_dim(x)?;
            let (m, v) = self.predict_raw(x, &mut scratch);
            means.push(m);
            vars.push(v.max(0.0));
        }
        Ok((means, vars))
    }

    /// Posterior means at row-major query points.
    pub fn predict_means_flat(&self, flat: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if flat.len() % d != 0 {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: flat.len() % d,
            });
        }
        Ok(flat
            .chunks(d)
            .map(|x| {
                (0..self.len())
                    .map(|i| self.kernel.eval_unchecked(x, self.data.point(i)) * self.alpha[i])
                    .sum()
            })
            .collect())
    }

    /// The model refit on the training data plus one extra observation.
    ///
    /// The factor is extended by one row in `O(n^2)`; if the new pivot is not
    /// positive the model is refit from scratch with jitter escalation.
    pub fn extend(&self, x: &[f64], y: f64) -> Result<GpModel> {
        self.check_dim(x)?;
        if !y.is_finite() {
            return Err(Error::NonFinite("value"));
        }
        let n = self.len();
        let m = n + 1;
        let mut row = vec![0.0; n];
        for (i, r) in row.iter_mut().enumerate() {
            *r = self.kernel.eval_unchecked(x, self.data.point(i));
        }
        forward_substitute(&self.chol, n, &mut row);
        let pivot = self.kernel.signal_variance + self.noise + self.jitter
            - row.iter().map(|v| v * v).sum::<f64>();
        let mut data = self.data.clone();
        data.push(x, y)?;
        if !(pivot > 0.0) || (self.noise == 0.0 && self.data.points().any(|p| p == x)) {
            return fit_gp(&data, self.kernel, self.noise);
        }
        let mut chol = vec![0.0; m * m];
        for i in 0..n {
            chol[i * m..i * m + n].copy_from_slice(&self.chol[i * n..(i + 1) * n]);
        }
        chol[n * m..n * m + n].copy_from_slice(&row);
        chol[n * m + n] = pivot.sqrt();
        let mut alpha = data.values().to_vec();
        forward_substitute(&chol, m, &mut alpha);
        back_substitute(&chol, m, &mut alpha);
        Ok(GpModel {
            kernel: self.kernel,
            noise: self.noise,
            data,
            chol,
            alpha,
            jitter: self.jitter,
        })
    }

    /// Joint posterior draws at `query`; each returned vector has one entry
    /// per query point.
    pub fn sample_posterior(
        &self,
        query: &[Vec<f64>],
        count: usize,
        rng: &mut Rng,
    ) -> Result<Vec<Vec<f64>>> {
        if count == 0 {
            return Err(Error::InvalidConfig("sample count must be at least 1".into()));
        }
        let q = query.len();
        let n = self.len();
        let mut means = Vec::with_capacity(q);
        let mut vs = Vec::with_capacity(q);
        for x in query {
            self.check_dim(x)?;
            let mut v: Vec<f64> = (0..n)
                .map(|i| self.kernel.eval_unchecked(x, self.data.point(i)))
                .collect();
            means.push(v.iter().zip(&self.alpha).map(|(k, a)| k * a).sum::<f64>());
            forward_substitute(&self.chol, n, &mut v);
            vs.push(v);
        }
        let mut cov = vec![0.0; q * q];
        for i in 0..q {
            for j in 0..=i {
                let prior = self.kernel.eval_unchecked(&query[i], &query[j]);
                let red: f64 = vs[i].iter().zip(&vs[j]).map(|(a, b)| a * b).sum();
                cov[i * q + j] = prior - red;
            }
        }
        let factor = psd_factor(&cov, q, self.kernel.signal_variance)?;
        let mut out = Vec::with_capacity(count);
        let mut z = vec![0.0; q];
        for _ in 0..count {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            let draw = (0..q)
                .map(|i| {
                    means[i]
                        + factor[i * q..i * q + i + 1]
                            .iter()
                            .zip(&z)
                            .map(|(l, zi)| l * zi)
                            .sum::<f64>()
                })
                .collect();
            out.push(draw);
        }
        Ok(out)
    }
}

/// Lower factor of a positive semi-definite covariance. Pivots within
/// round-off of zero yield zero columns; clearly negative pivots trigger the
/// jitter ladder.
fn psd_factor(cov: &[f64], q: usize, scale: f64) -> Result<Vec<f64>> {
    let tol = 1e-12 * scale.max(1.0);
    let mut last = 0.0;
    for &jitter in &JITTER_LADDER {
        last = jitter;
        let mut l = vec![0.0; q * q];
        let mut ok = true;
        for j in 0..q {
            let mut d = cov[j * q + j] + jitter;
            for k in 0..j {
                d -= l[j * q + k] * l[j * q + k];
            }
            if d < -tol || !d.is_finite() {
                ok = false;
                break;
            }
            if d <= tol {
                continue;
            }
            let d = d.sqrt();
            l[j * q + j] = d;
            for i in (j + 1)..q {
                let mut s = cov[i * q + j];
                for k in 0..j {
                    s -= l[i * q + k] * l[j * q + k];
                }
                l[i * q + j] = s / d;
            }
        }
        if ok {
            return Ok(l);
        }
    }
    Err(Error::NotPositiveDefinite { jitter: last })
}
