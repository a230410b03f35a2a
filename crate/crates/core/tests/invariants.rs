use proptest::prelude::*;

use fairreg::estimator::fit;
use fairreg::linalg::{gram_eigs, max_inverse_eig_check};
use fairreg::lower_bound::{build_family, kl_conditional, packed_kl, two_point_bound, SignCode};
use fairreg::metrics::{conditional_law, projected_mean_bounds, unfairness, w2_empirical, w2_gaussian, GaussianLaw1D};
use fairreg::model::{random_valid_params, sample_dataset, validate_params, GroupAffineRegressor, ModelParams, RandomValidSpec};
use fairreg::oracle::{analytic_excess_risk, build_fdp, quantile_compose_fdp};
use fairreg::rng;
use fairreg::vecops::{dot, norm};
use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

fn params_strategy() -> impl Strategy<Value = ModelParams> {
    (1usize..7, 2usize..5, 1.2f64..3.0, 0.2f64..2.0, 0.3f64..2.0, any::<u64>()).prop_map(
        |(d, m, b, u, sx, seed)| {
            let mut spec = RandomValidSpec::new(b, u);
            spec.sigma_x = sx;
            random_valid_params(&spec, d, m, seed).unwrap()
        },
    )
}

/// Exact excess risk against the unconstrained regression function.
fn risk_vs_bayes(f: &GroupAffineRegressor, p: &ModelParams) -> f64 {
    (0..p.m)
        .map(|s| {
            let dw: Vec<f64> = f.w[s].iter().zip(&p.beta[s]).map(|(a, b)| a - b).collect();
            p.p[s] * (p.sigma_x.powi(2) * dot(&dw, &dw) + (dot(&dw, &p.mu[s]) + f.b[s]).powi(2))
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_params_are_admissible(p in params_strategy()) {
        prop_assert!(validate_params(&p).is_empty());
    }

    #[test]
    fn oracle_matches_quantile_composition(p in params_strategy(), seed in any::<u64>()) {
        let oracle = build_fdp(&p).unwrap();
        let mut r = rng::stream(seed, &[0]);
        for _ in 0..50 {
            let s = r.random_range(0..p.m);
            let x: Vec<f64> = (0..p.d).map(|j| p.mu[s][j] + 3.0 * p.sigma_x * r.random_range(-1.0..1.0)).collect();
            let a = oracle.fdp.evaluate(&x, s).unwrap();
            let b = quantile_compose_fdp(&p, &x, s).unwrap();
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn oracle_output_law_is_shared(p in params_strategy()) {
        let oracle = build_fdp(&p).unwrap();
        for s in 0..p.m {
            let law = conditional_law(&oracle.fdp, &p, s).unwrap();
            prop_assert!((law.mean - oracle.const_term).abs() < 1e-12);
            prop_assert!((law.std - p.sigma_x * oracle.bar_norm).abs() < 1e-12);
        }
        let u = unfairness(&oracle.fdp, &p).unwrap();
        prop_assert!(u.w2_max < 1e-10 && u.kol_max < 1e-10 && u.avg_w2 < 1e-10);
    }

    #[test]
    fn risk_is_nonnegative_and_zero_at_oracle(p in params_strategy(), seed in any::<u64>()) {
        let oracle = build_fdp(&p).unwrap();
        prop_assert_eq!(analytic_excess_risk(&oracle.fdp, &oracle).unwrap(), 0.0);
        let mut r = rng::stream(seed, &[1]);
        let w = (0..p.m).map(|_| (0..p.d).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let b = (0..p.m).map(|_| r.random_range(-1.0..1.0)).collect();
        let f = GroupAffineRegressor::new(w, b).unwrap();
        prop_assert!(analytic_excess_risk(&f, &oracle).unwrap() > 0.0);
    }

    #[test]
    fn fair_perturbations_are_no_better(p in params_strategy(), seed in any::<u64>()) {
        // Every perturbation keeps a common slope norm and a common output mean,
        // so its output law is the same in every group.
        let oracle = build_fdp(&p).unwrap();
        let best = risk_vs_bayes(&oracle.fdp, &p);
        let gap = oracle.unfair_gap();
        prop_assert!((best - gap).abs() <= 1e-9 * (1.0 + gap));
        let mut r = rng::stream(seed, &[2]);
        for _ in 0..20 {
            let scale = oracle.bar_norm * (1.0 + r.random_range(-0.2..0.2));
            let center = oracle.const_term + r.random_range(-0.3..0.3);
            let w: Vec<Vec<f64>> = oracle.fdp.w.iter().map(|w| {
                let v: Vec<f64> = w.iter().map(|x| x + 0.2 * oracle.bar_norm * r.random_range(-1.0..1.0)).collect();
                let n = norm(&v);
                v.iter().map(|x| scale * x / n).collect()
            }).collect();
            let b = w.iter().zip(&p.mu).map(|(w, mu)| center - dot(w, mu)).collect();
            let f = GroupAffineRegressor::new(w, b).unwrap();
            prop_assert!(unfairness(&f, &p).unwrap().w2_max < 1e-9);
            prop_assert!(risk_vs_bayes(&f, &p) >= best - 1e-9);
        }
    }

    #[test]
    fn fitted_regressor_matches_plugin_formula(p in params_strategy(), seed in any::<u64>()) {
        let data = sample_dataset(&p, 60 * p.d * p.m + 200, seed).unwrap();
        let (f, est) = fit(&data, p.d, p.m, seed ^ 1).unwrap();
        for (x, s, _) in data.records().take(50) {
            let a = f.evaluate(x, s).unwrap();
            let b = est.plugin_value(x, s);
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        // The projected-mean bound needs the fitted slope norm below B.
        if est.norm_hat_bar <= p.b_bound {
            for bound in projected_mean_bounds(&f, &est, &p).unwrap() {
                prop_assert!(bound.holds(1e-9), "{bound:?}");
            }
        }
    }

    #[test]
    fn w2_zero_iff_laws_coincide(p in params_strategy(), seed in any::<u64>()) {
        let mut r = rng::stream(seed, &[3]);
        let w: Vec<Vec<f64>> = (0..p.m).map(|_| (0..p.d).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let b: Vec<f64> = (0..p.m).map(|_| r.random_range(-1.0..1.0)).collect();
        let f = GroupAffineRegressor::new(w, b).unwrap();
        let laws: Vec<_> = (0..p.m).map(|s| conditional_law(&f, &p, s).unwrap()).collect();
        let same = laws.iter().all(|l| (l.mean - laws[0].mean).abs() < 1e-12 && (l.std - laws[0].std).abs() < 1e-12);
        prop_assert_eq!(unfairness(&f, &p).unwrap().w2_max == 0.0, same);
    }

    #[test]
    fn packed_kl_closed_form(d in 2usize..10, m in 1usize..5, seed in any::<u64>()) {
        let mut r = rng::stream(seed, &[4]);
        let b: Vec<f64> = (0..m).map(|_| r.random_range(0.2..3.0)).collect();
        let e: Vec<f64> = (0..m).map(|_| r.random_range(0.01..1.0)).collect();
        let fam = build_family(d, m, &b, &e).unwrap().with_sigmas(r.random_range(0.3..2.0), r.random_range(0.3..2.0));
        let mask = (1u64 << (d - 1)) - 1;
        let v = SignCode { blocks: (0..m).map(|_| r.random::<u64>() & mask).collect() };
        let w = SignCode { blocks: (0..m).map(|_| r.random::<u64>() & mask).collect() };
        let counts: Vec<usize> = (0..m).map(|_| r.random_range(0..1000)).collect();
        let a = kl_conditional(&fam.params_of(&v), &fam.params_of(&w), &counts).unwrap();
        let c = packed_kl(&fam, &v, &w, &counts);
        prop_assert!((a - c).abs() <= 1e-10 * (1.0 + c));
    }

    #[test]
    fn two_point_bound_is_symmetric(p in params_strategy(), seed in any::<u64>()) {
        let mut r = rng::stream(seed, &[5]);
        let mut q = p.clone();
        for s in 0..p.m {
            for j in 0..p.d {
                q.beta[s][j] += 0.3 * r.random_range(-1.0..1.0);
                q.mu[s][j] += 0.5 * p.sigma_x * r.random_range(-1.0..1.0) / (p.d as f64).sqrt();
            }
        }
        let ab = two_point_bound(&p, &q).unwrap();
        let ba = two_point_bound(&q, &p).unwrap();
        prop_assert!((ab.tight - ba.tight).abs() <= 1e-12 * (1.0 + ab.tight));
        prop_assert!(ab.tight >= ab.simplified && ab.simplified > 0.0);
        prop_assert_eq!(two_point_bound(&p, &p).unwrap().tight, 0.0);
    }

    #[test]
    fn gram_eigenvalues_are_nonnegative(n in 1usize..30, d in 1usize..6, seed in any::<u64>()) {
        let mut r = rng::stream(seed, &[6]);
        let x = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut r));
        let e = gram_eigs(&x).unwrap();
        prop_assert!(e.lambda_min >= -1e-10 && e.lambda_max >= e.lambda_min);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn empirical_w2_converges(ma in -5.0f64..5.0, sa in 0.1f64..5.0, mb in -5.0f64..5.0, sb in 0.1f64..5.0, seed in any::<u64>()) {
        let m = 20_000;
        let mut r = rng::stream(seed, &[7]);
        let xs: Vec<f64> = (0..m).map(|_| ma + sa * Distribution::<f64>::sample(&StandardNormal, &mut r)).collect();
        let ys: Vec<f64> = (0..m).map(|_| mb + sb * Distribution::<f64>::sample(&StandardNormal, &mut r)).collect();
        let exact = w2_gaussian(GaussianLaw1D::new(ma, sa).unwrap(), GaussianLaw1D::new(mb, sb).unwrap());
        let emp = w2_empirical(&xs, &ys).unwrap();
        // Three standard deviations of the empirical mean difference.
        let tol = 3.0 * (sa * sa + sb * sb).sqrt() / (m as f64).sqrt();
        prop_assert!((emp - exact).abs() < tol, "{emp} vs {exact}");
    }
}

#[test]
fn inverse_eigenvalue_expectation_below_bound() {
    for (d, n) in [(1, 10), (3, 40), (5, 200)] {
        let c = max_inverse_eig_check(&vec![0.3; d], 1.2, n, 200, d as u64).unwrap();
        assert!(c.mean.is_finite() && c.mean > 0.0 && c.mean <= c.bound);
    }
}
