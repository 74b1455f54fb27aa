//! Expected Improvement, the two-step lookahead (2-OPT) and the
//! meta-informed lookahead that mixes a source environment's fantasies with
//! a greedy improvement term.
//!
//! Within one proposal the Monte Carlo normals and the inner optimizer seed
//! are fixed, so every acquisition is a deterministic, smooth-in-`x`
//! function of the candidate point while the outer optimizer runs.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gp::{fit_gp, GpModel, KernelConfig};
use crate::optimize::{maximize_acquisition, OptimizerConfig};
use crate::profile::{timed, Profiler, Stage};
use crate::rng::{derive_seed, rng_from_seed, Stream};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Closed-form EI of `N(mean, std^2)` over `incumbent`.
pub fn expected_improvement(mean: f64, std: f64, incumbent: f64) -> f64 {
    if !(std > 0.0) {
        return (mean - incumbent).max(0.0);
    }
    let z = (mean - incumbent) / std;
    let pdf = INV_SQRT_2PI * (-0.5 * z * z).exp();
    (std * (z * std_normal_cdf(z) + pdf)).max(0.0)
}

/// `max(0, fantasy - incumbent)`.
pub fn greedy_improvement(fantasy_value: f64, incumbent: f64) -> f64 {
    (fantasy_value - incumbent).max(0.0)
}

/// Sample mean and sample standard deviation of Monte Carlo payoffs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub sample_std: f64,
}

impl McEstimate {
    pub fn from_payoffs(payoffs: &[f64]) -> Self {
        let m = payoffs.len();
        assert!(m >= 1, "at least one payoff is required");
        let estimate = payoffs.iter().sum::<f64>() / m as f64;
        let sample_std = if m > 1 {
            (payoffs.iter().map(|p| (p - estimate).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt()
        } else {
            0.0
        };
        McEstimate {
            estimate,
            sample_std,
        }
    }
}

/// Average of `m` i.i.d. payoffs of draws from `sampler`.
pub fn mc_estimate<T, R: rand::Rng>(
    mut sampler: impl FnMut(&mut R) -> T,
    mut payoff: impl FnMut(&T) -> f64,
    m: usize,
    rng: &mut R,
) -> McEstimate {
    let payoffs: Vec<f64> = (0..m).map(|_| payoff(&sampler(rng))).collect();
    McEstimate::from_payoffs(&payoffs)
}

/// Per-proposal state shared by every acquisition evaluation.
pub struct AcqContext<'a> {
    target: &'a GpModel,
    lookahead_base: GpModel,
    incumbent: f64,
    inner: OptimizerConfig,
    normals: Vec<f64>,
    inner_seed: u64,
    profiler: Option<&'a Profiler>,
}

impl<'a> AcqContext<'a> {
    /// `target` is the surrogate over the (standardized) history; the
    /// lookahead models reuse its data with `lambda1_kernel`.
    pub fn new(
        target: &'a GpModel,
        lambda1_kernel: KernelConfig,
        noise: f64,
        inner: OptimizerConfig,
        mc_samples: usize,
        step_seed: u64,
    ) -> Result<Self> {
        if mc_samples == 0 {
            return Err(Error::InvalidConfig("mc_samples must be >= 1".into()));
        }
        inner.validate()?;
        let lookahead_base = fit_gp(target.data(), lambda1_kernel, noise)?;
        let incumbent = target.data().max_value().ok_or(Error::EmptyDataset)?;
        let mut rng = rng_from_seed(derive_seed(step_seed, Stream::McDraws, 0));
        let normals = (0..mc_samples).map(|_| rng.sample(StandardNormal)).collect();
        Ok(AcqContext {
            target,
            lookahead_base,
            incumbent,
            inner,
            normals,
            inner_seed: derive_seed(step_seed, Stream::InnerOptimizer, 0),
            profiler: None,
        })
    }

    pub fn with_profiler(mut self, profiler: Option<&'a Profiler>) -> Self {
        self.profiler = profiler;
        self
    }

    pub fn incumbent(&self) -> f64 {
        self.incumbent
    }

    pub fn mc_samples(&self) -> usize {
        self.normals.len()
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    pub fn target(&self) -> &GpModel {
        self.target
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// EI of the current surrogate at `x`.
    pub fn current_ei(&self, x: &[f64]) -> Result<f64> {
        timed(self.profiler, Stage::CurrentEi, || {
            let (m, v) = self.target.predict_one(x)?;
            Ok(expected_improvement(m, v.sqrt(), self.incumbent))
        })
    }

    /// Scalar fantasies `mu(x) + sigma(x) z_m` under `model`, one per fixed
    /// normal.
    pub fn fantasies(&self, model: &GpModel, x: &[f64]) -> Result<Vec<f64>> {
        let (m, v) = model.predict_one(x)?;
        let s = v.sqrt();
        Ok(self.normals.iter().map(|z| m + s * z).collect())
    }
}

/// Best EI over the second step after appending `(x_next, fantasy_value)`
/// to the history, refit with the lookahead kernel.
pub fn lookahead_inner_value(ctx: &AcqContext, x_next: &[f64], fantasy_value: f64) -> Result<f64> {
    ctx.check_point(x_next)?;
    let model = ctx.lookahead_base.extend(x_next, fantasy_value)?;
    let incumbent = ctx.incumbent.max(fantasy_value);
    let mut scratch = vec![0.0; model.len()];
    let (_, best) = timed(ctx.profiler, Stage::FutureEi, || {
        maximize_acquisition(
            |x| {
                let (m, v) = model.predict_raw(x, &mut scratch);
                expected_improvement(m, v.max(0.0).sqrt(), incumbent)
            },
            ctx.dim(),
            &ctx.inner,
            ctx.inner_seed,
        )
    });
    Ok(best.max(0.0))
}

/// Shared body of the lookahead acquisitions: `EI_0(x)` plus the average of
/// `(1 - alpha) * inner + alpha * greedy` over fantasies drawn from
/// `fantasy_model`. `alpha = None` is the plain lookahead sum.
fn lookahead_value(
    ctx: &AcqContext,
    fantasy_model: &GpModel,
    alpha: Option<f64>,
    x: &[f64],
) -> Result<(f64, McEstimate)> {
    ctx.check_point(x)?;
    let current = ctx.current_ei(x)?;
    let estimate = timed(ctx.profiler, Stage::HorizonStep, || -> Result<McEstimate> {
        let draws = ctx.fantasies(fantasy_model, x)?;
        let payoffs = draws
            .iter()
            .map(|&omega| match alpha {
                None => lookahead_inner_value(ctx, x, omega),
                // The inner term has zero weight; skipping it leaves the sum
                // bit-for-bit unchanged.
                Some(1.0) => Ok(greedy_improvement(omega, ctx.incumbent)),
                Some(a) => {
                    let inner = lookahead_inner_value(ctx, x, omega)?;
                    Ok((1.0 - a) * inner + a * greedy_improvement(omega, ctx.incumbent))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(McEstimate::from_payoffs(&payoffs))
    })?;
    Ok((current + estimate.estimate, estimate))
}

/// Two-step lookahead: `EI_0(x) + E_{GP_t}[max EI_1]`.
pub fn two_opt_value(ctx: &AcqContext, x: &[f64]) -> Result<f64> {
    Ok(lookahead_value(ctx, ctx.target, None, x)?.0)
}

/// Meta-informed lookahead with fantasies drawn from a source environment's
/// posterior at `x`; each draw feeds both the inner lookahead and the greedy
/// term.
pub fn baymoth_value(ctx: &AcqContext, env_model: &GpModel, alpha: f64, x: &[f64]) -> Result<f64> {
    Ok(baymoth_estimate(ctx, env_model, alpha, x)?.0)
}

/// [`baymoth_value`] together with the Monte Carlo estimate of the
/// expectation term.
pub fn baymoth_estimate(
    ctx: &AcqContext,
    env_model: &GpModel,
    alpha: f64,
    x: &[f64],
) -> Result<(f64, McEstimate)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("alpha must lie in [0,1], got {alpha}")));
    }
    if env_model.dim() != ctx.dim() {
        return Err(Error::DimensionMismatch {
            expected: ctx.dim(),
            got: env_model.dim(),
        });
    }
    lookahead_value(ctx, env_model, Some(alpha), x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::Dataset;
    use crate::oracle::{ei_quadrature, grid_argmax};

    fn toy_model() -> GpModel {
        let data = Dataset::from_rows(1, &[vec![0.2], vec![0.8]], &[0.0, 0.0]).unwrap();
        fit_gp(&data, KernelConfig::rbf(0.2), 1e-6).unwrap()
    }

    #[test]
    fn ei_reference_points() {
        assert_eq!(expected_improvement(0.0, 0.0, 1.0), 0.0);
        assert_eq!(expected_improvement(2.0, 0.0, 1.0), 1.0);
        assert!((expected_improvement(1.0, 1.0, 0.0) - 1.083_32).abs() < 1e-5);
        assert!((expected_improvement(0.3, 1.0, 0.3) - 0.398_94).abs() < 1e-5);
        assert!((expected_improvement(0.3, 1.0, 0.3) - INV_SQRT_2PI).abs() < 1e-6);
    }

    #[test]
    fn ei_matches_quadrature_spot_checks() {
        for &(m, s, i) in &[(0.0, 1e-4, 0.0), (-1.0, 3.0, 2.0), (0.5, 0.2, -0.1)] {
            assert!((expected_improvement(m, s, i) - ei_quadrature(m, s, i)).abs() < 1e-6);
        }
    }

    #[test]
    fn greedy_term() {
        assert_eq!(greedy_improvement(5.0, 3.0), 2.0);
        assert_eq!(greedy_improvement(2.0, 3.0), 0.0);
        assert_eq!(greedy_improvement(3.0, 3.0), 0.0);
    }

    #[test]
    fn mc_constant_payoff() {
        let mut rng = rng_from_seed(1);
        let e = mc_estimate(|r: &mut crate::rng::Rng| r.gen::<f64>(), |_| 2.5, 7, &mut rng);
        assert_eq!(e.estimate, 2.5);
        assert_eq!(e.sample_std, 0.0);
    }

    #[test]
    fn inner_value_matches_grid() {
        let target = toy_model();
        let ctx = AcqContext::new(&target, KernelConfig::rbf(0.05), 1e-6, OptimizerConfig::inner(), 1, 3)
            .unwrap();
        let v = lookahead_inner_value(&ctx, &[0.5], 1.0).unwrap();
        let aug = Dataset::from_rows(1, &[vec![0.2], vec![0.8], vec![0.5]], &[0.0, 0.0, 1.0]).unwrap();
        let gp1 = fit_gp(&aug, KernelConfig::rbf(0.05), 1e-6).unwrap();
        let (gx, gv) = grid_argmax(
            |x| {
                let (m, var) = gp1.predict_one(x).unwrap();
                expected_improvement(m, var.sqrt(), 1.0)
            },
            1,
            1001,
        )
        .unwrap();
        assert!(v >= 0.0);
        assert!((v - gv).abs() < 1e-3, "inner {v} vs grid {gv} at {gx:?}");
    }

    #[test]
    fn two_opt_at_least_current_ei() {
        let target = toy_model();
        let ctx = AcqContext::new(&target, KernelConfig::rbf(0.05), 1e-6, OptimizerConfig::inner(), 3, 8)
            .unwrap();
        for x in [0.0, 0.35, 0.5, 0.9] {
            let v = two_opt_value(&ctx, &[x]).unwrap();
            assert!(v.is_finite() && v >= ctx.current_ei(&[x]).unwrap());
        }
    }

    #[test]
    fn alpha_zero_on_target_equals_two_opt_bitwise() {
        let target = toy_model();
        let ctx = AcqContext::new(&target, KernelConfig::rbf(0.05), 1e-6, OptimizerConfig::inner(), 5, 21)
            .unwrap();
        for x in [0.1, 0.43, 0.77] {
            let a = two_opt_value(&ctx, &[x]).unwrap();
            let b = baymoth_value(&ctx, &target, 0.0, &[x]).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn degenerate_env_is_deterministic() {
        let target = toy_model();
        let env_data = Dataset::from_rows(1, &[vec![0.4]], &[1.5]).unwrap();
        let env = fit_gp(&env_data, KernelConfig::rbf(0.05), 0.0).unwrap();
        let ctx = AcqContext::new(&target, KernelConfig::rbf(0.05), 1e-6, OptimizerConfig::inner(), 4, 2)
            .unwrap();
        let x = [0.4];
        let v = baymoth_value(&ctx, &env, 0.5, &x).unwrap();
        let mu = env.predict_one(&x).unwrap().0;
        let expected = ctx.current_ei(&x).unwrap()
            + 0.5 * lookahead_inner_value(&ctx, &x, mu).unwrap()
            + 0.5 * greedy_improvement(mu, ctx.incumbent());
        assert!((v - expected).abs() < 1e-9);
    }

    #[test]
    fn alpha_out_of_range_rejected() {
        let target = toy_model();
        let ctx = AcqContext::new(&target, KernelConfig::rbf(0.05), 1e-6, OptimizerConfig::inner(), 1, 0)
            .unwrap();
        assert!(baymoth_value(&ctx, &target, 1.5, &[0.5]).is_err());
        assert!(two_opt_value(&ctx, &[0.5, 0.5]).is_err());
    }
}
