use std::sync::Arc;

use approx::assert_relative_eq;
use proptest::prelude::*;

use sis_core::baselines::gl_twist;
use sis_core::density1d::{ProposalDensity, StdNormal};
use sis_core::estimators::first_difference_variance;
use sis_core::models::{conditional_mvn_sample, GaussianCreditModel, Portfolio, TCopulaCreditModel, Transformation};
use sis_core::rng::{std_normal_cdf, std_normal_quantile, stratum_value, PseudoSource};

fn small_portfolio() -> Portfolio {
    Portfolio::from_parts(
        vec![1.0, 4.0, 9.0, 16.0],
        vec![0.05, 0.1, 0.02, 0.01],
        vec![vec![0.5, 0.1], vec![0.7, 0.2], vec![0.3, 0.3], vec![0.1, 0.6]],
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn stratum_value_stays_in_its_stratum(n in 1usize..10_000, frac in 0.0f64..1.0, u in 0.0f64..1.0) {
        let i = ((n as f64 * frac) as usize).min(n - 1);
        let v = stratum_value(i, u, 1.0 / n as f64);
        prop_assert!(v >= i as f64 / n as f64 - 1e-12);
        prop_assert!(v <= (i + 1) as f64 / n as f64 + 1e-12);
    }

    #[test]
    fn location_scale_quantile_inverts_cdf(k in -6.0f64..6.0, sigma in 0.2f64..3.0, u in 1e-9f64..(1.0 - 1e-9)) {
        let g = ProposalDensity::location_scale(Arc::new(StdNormal), k, sigma).unwrap();
        let t = g.quantile(u);
        assert_relative_eq!(g.cdf(t), u, epsilon = 1e-12, max_relative = 1e-9);
    }

    #[test]
    fn location_scale_weights_are_positive_and_finite(k in -6.0f64..6.0, sigma in 0.2f64..3.0, z in -8.0f64..8.0) {
        // Within 8σ of k, where the proposal puts its draws; far outside, the true
        // weight leaves the f64 range.
        let g = ProposalDensity::location_scale(Arc::new(StdNormal), k, sigma).unwrap();
        let w = g.weight(k + sigma * z).unwrap();
        prop_assert!(w > 0.0 && w.is_finite());
    }

    #[test]
    fn normal_quantile_round_trip(u in 1e-300f64..0.5) {
        let x = std_normal_quantile(u).unwrap();
        assert_relative_eq!(std_normal_cdf(x), u, max_relative = 1e-9);
    }

    #[test]
    fn twist_solves_its_root_condition(
        p in prop::collection::vec(0.001f64..0.2, 1..30),
        frac in 0.05f64..0.95,
    ) {
        let c: Vec<f64> = (0..p.len()).map(|k| 1.0 + (k % 5) as f64).collect();
        let mean: f64 = p.iter().zip(&c).map(|(p, c)| p * c).sum();
        let total: f64 = c.iter().sum();
        let l = mean + frac * (total - mean);
        let tw = gl_twist(&p, &c, l).unwrap();
        let twisted: f64 = tw.q.iter().zip(&c).map(|(q, c)| q * c).sum();
        prop_assert!(tw.theta > 0.0);
        prop_assert!((twisted - l).abs() < 1e-8, "twisted mean {} vs l {}", twisted, l);
    }

    #[test]
    fn first_difference_variance_is_nonnegative(
        pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..10.0), 2..200),
    ) {
        let (psi, w): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert!(first_difference_variance(&psi, &w).unwrap() >= 0.0);
        let ones = vec![1.0; w.len()];
        prop_assert_eq!(first_difference_variance(&ones, &w).unwrap(), 0.0);
    }

    #[test]
    fn conditional_sample_lands_on_the_index(seed in any::<u64>(), t in -10.0f64..10.0, raw in prop::collection::vec(-1.0f64..1.0, 1..12)) {
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-3);
        let beta: Vec<f64> = raw.iter().map(|x| x / norm).collect();
        let mut z = vec![0.0; beta.len()];
        conditional_mvn_sample(&beta, t, &mut PseudoSource::new(seed), &mut z);
        let proj: f64 = beta.iter().zip(&z).map(|(b, z)| b * z).sum();
        prop_assert!((proj - t).abs() < 1e-9);
    }

    #[test]
    fn gaussian_loss_grows_with_the_factors(
        z in prop::collection::vec(-4.0f64..4.0, 2),
        eps in prop::collection::vec(-4.0f64..4.0, 4),
        shift in 0.0f64..3.0,
    ) {
        // Loadings are nonnegative, so raising every factor raises every aᵀZ.
        let m = GaussianCreditModel::from_portfolio(small_portfolio());
        let up: Vec<f64> = z.iter().map(|v| v + shift).collect();
        let (lo, hi) = (m.loss(&z, &eps), m.loss(&up, &eps));
        prop_assert!(hi >= lo);
        prop_assert!((0.0..=30.0).contains(&lo));
    }

    #[test]
    fn t_loss_grows_with_the_shock(
        z in prop::collection::vec(-4.0f64..4.0, 2),
        eps in prop::collection::vec(-4.0f64..4.0, 4),
        w in 0.05f64..10.0,
        factor in 1.0f64..5.0,
    ) {
        let m = TCopulaCreditModel::from_portfolio(small_portfolio(), 5.0, Transformation::T2, false).unwrap();
        prop_assert!(m.loss(w * factor, &z, &eps) >= m.loss(w, &z, &eps));
    }

    #[test]
    fn cmc_survival_is_a_decreasing_probability(
        z in prop::collection::vec(-4.0f64..4.0, 2),
        eps in prop::collection::vec(-4.0f64..4.0, 4),
        l in 0.0f64..30.0,
        dl in 0.0f64..10.0,
    ) {
        let m = TCopulaCreditModel::from_portfolio(small_portfolio(), 12.0, Transformation::T2, true).unwrap();
        let s = m.cmc_survival(&z, &eps, l);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!(m.cmc_survival(&z, &eps, l + dl) <= s);
    }
}
