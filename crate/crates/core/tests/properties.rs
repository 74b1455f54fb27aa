//! Property tests against the independent oracles.

use baymoth::acquisition::{expected_improvement, greedy_improvement, McEstimate};
use baymoth::gp::{fit_gp, Dataset, KernelConfig, Standardizer};
use baymoth::meta::ncc;
use baymoth::oracle::{dense_gp_predict, ei_quadrature};
use baymoth::policy::regret_curve;
use proptest::prelude::*;

fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-100.0f64..100.0, n),
            prop::collection::vec(-100.0f64..100.0, n),
        )
    })
}

proptest! {
    #[test]
    fn ncc_is_bounded_symmetric_and_affine_invariant(
        (a, b) in vec_pair(),
        scale in 0.01f64..100.0,
        shift in -1e3f64..1e3,
    ) {
        let r = ncc(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r));
        prop_assert_eq!(r.to_bits(), ncc(&b, &a).unwrap().to_bits());
        let bt: Vec<f64> = b.iter().map(|v| scale * v + shift).collect();
        prop_assert!((ncc(&a, &bt).unwrap() - r).abs() < 1e-9);
        let neg: Vec<f64> = b.iter().map(|v| -v).collect();
        prop_assert!((ncc(&a, &neg).unwrap() + r).abs() < 1e-12);
    }

    #[test]
    fn ei_matches_quadrature_and_is_monotone(
        mean in -4.0f64..4.0,
        std in 0.01f64..4.0,
        inc in -4.0f64..4.0,
        dm in 0.0f64..1.0,
    ) {
        let ei = expected_improvement(mean, std, inc);
        prop_assert!(ei >= 0.0);
        prop_assert!((ei - ei_quadrature(mean, std, inc)).abs() < 1e-6);
        prop_assert!(expected_improvement(mean + dm, std, inc) >= ei);
        prop_assert!(expected_improvement(mean, std, inc + dm) <= ei);
        prop_assert!(ei >= (mean - inc).max(0.0) - 1e-12);
    }

    #[test]
    fn greedy_term_is_nonnegative_hinge(w in -10.0f64..10.0, inc in -10.0f64..10.0) {
        let g = greedy_improvement(w, inc);
        prop_assert_eq!(g, (w - inc).max(0.0));
    }

    #[test]
    fn gp_agrees_with_dense_solve(
        seed_pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, -3.0f64..3.0), 1..15),
        ls in 0.1f64..0.8,
        q in (0.0f64..1.0, 0.0f64..1.0),
    ) {
        let pts: Vec<Vec<f64>> = seed_pts.iter().map(|p| vec![p.0, p.1]).collect();
        let ys: Vec<f64> = seed_pts.iter().map(|p| p.2).collect();
        let data = Dataset::from_rows(2, &pts, &ys);
        prop_assume!(data.is_ok());
        let gp = fit_gp(&data.unwrap(), KernelConfig::rbf(ls), 1e-2).unwrap();
        let query = vec![vec![q.0, q.1]];
        let (m, v) = gp.predict(&query).unwrap();
        let (om, ov) = dense_gp_predict(&pts, &ys, ls, 1.0, 1e-2, &query).unwrap();
        prop_assert!((m[0] - om[0]).abs() < 1e-8);
        prop_assert!((v[0] - ov[0].max(0.0)).abs() < 1e-8);
        prop_assert!(v[0] >= 0.0 && v[0] <= 1.0 + 1e-12);
    }

    #[test]
    fn rank_one_extension_equals_refit(
        seed_pts in prop::collection::vec((0.0f64..1.0, -3.0f64..3.0), 2..12),
        x in 0.0f64..1.0,
        y in -3.0f64..3.0,
    ) {
        let pts: Vec<Vec<f64>> = seed_pts.iter().map(|p| vec![p.0]).collect();
        let ys: Vec<f64> = seed_pts.iter().map(|p| p.1).collect();
        let data = Dataset::from_rows(1, &pts, &ys);
        prop_assume!(data.is_ok());
        let data = data.unwrap();
        let gp = fit_gp(&data, KernelConfig::rbf(0.2), 1e-3).unwrap();
        let mut grown = data.clone();
        prop_assume!(grown.push(&[x], y).is_ok());
        let ext = gp.extend(&[x], y).unwrap();
        let refit = fit_gp(&grown, KernelConfig::rbf(0.2), 1e-3).unwrap();
        for q in [0.0, 0.33, 0.5, 0.91] {
            let a = ext.predict_one(&[q]).unwrap();
            let b = refit.predict_one(&[q]).unwrap();
            prop_assert!((a.0 - b.0).abs() < 1e-6 && (a.1 - b.1).abs() < 1e-6);
        }
    }

    #[test]
    fn standardizer_round_trips(values in prop::collection::vec(-1e3f64..1e3, 1..30)) {
        let s = Standardizer::fit(&values);
        prop_assert!(s.std > 0.0);
        for v in &values {
            prop_assert!((s.inverse(s.forward(*v)) - v).abs() < 1e-9 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn regret_curves_are_monotone(values in prop::collection::vec(0.0f64..1.0, 1..20)) {
        let curve = regret_curve(&values, 1.0);
        prop_assert_eq!(curve.len(), values.len());
        prop_assert!(curve.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(curve.iter().all(|r| *r >= 0.0));
    }

    #[test]
    fn mc_estimate_moments(payoffs in prop::collection::vec(-5.0f64..5.0, 1..20)) {
        let e = McEstimate::from_payoffs(&payoffs);
        let mean = payoffs.iter().sum::<f64>() / payoffs.len() as f64;
        prop_assert!((e.estimate - mean).abs() < 1e-12);
        prop_assert!(e.sample_std >= 0.0);
    }
}
