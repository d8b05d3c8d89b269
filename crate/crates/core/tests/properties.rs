//! Randomized invariants of the model, estimator, selectors, tests, lower
//! bounds and the Monte Carlo harness.

use proptest::prelude::*;
use qfunc::estimator::{components, estimate, estimate_alternative, risk_bound, RiskConstants};
use qfunc::lower_bounds::{build_two_point, chi2_mixture_vs_null, worst_case_prior, Construction};
use qfunc::montecarlo::{fit_rate_slope, run_statistic, ExperimentReport, McSettings};
use qfunc::selection::{select_k_epsilon, select_k_gof, select_k_sd, select_k_sigma, select_k_star};
use qfunc::sequence_model::{
    check_membership, eval_family, sample_observations, ProblemInstance, Regime, Role, SequenceFamily,
};
use qfunc::testing::{gof_statistic, sd_statistic, sd_threshold};

fn poly_instance(n: usize, a: f64, p: f64, eps: f64, sigma: f64) -> ProblemInstance<f64> {
    ProblemInstance::builder(n)
        .alpha(SequenceFamily::alpha(Regime::Polynomial(a)).unwrap())
        .gamma(SequenceFamily::gamma(Regime::Polynomial(p)).unwrap())
        .noise(eps, sigma)
        .build()
        .unwrap()
}

fn regime() -> impl Strategy<Value = Regime<f64>> {
    prop_oneof![
        (0.0..3.0f64).prop_map(Regime::Polynomial),
        (0.0..0.5f64).prop_map(Regime::Exponential),
        Just(Regime::ConstantOne),
    ]
}

/// Smallest minimizer of `k ↦ max_c cols[c](k)` computed the slow way.
fn brute_argmin(objective: impl Fn(usize) -> f64, k_max: usize) -> (usize, f64) {
    let mut best = (1, f64::INFINITY);
    for k in 1..=k_max {
        let v = objective(k);
        if v < best.1 {
            best = (k, v);
        }
    }
    best
}

/// Selector name, returned k, returned objective, oracle objective.
type Case<'a> = (&'static str, usize, f64, &'a dyn Fn(usize) -> f64);

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn families_are_normalized_and_monotone(r in regime(), j in 1usize..200) {
        let alpha = SequenceFamily::new(r.clone(), Role::Alpha).unwrap();
        let gamma = SequenceFamily::new(r, Role::Gamma).unwrap();
        prop_assert_eq!(eval_family(&alpha, 1), 1.0);
        prop_assert_eq!(eval_family(&gamma, 1), 1.0);
        prop_assert!(eval_family(&alpha, j) > 0.0);
        prop_assert!(eval_family(&alpha, j + 1) <= eval_family(&alpha, j));
        prop_assert!(eval_family(&gamma, j + 1) >= eval_family(&gamma, j));
    }

    #[test]
    fn cloning_identity_and_determinism(
        seed in any::<u64>(),
        eps in 0.0..1.0f64,
        sigma in 0.0..=1.0f64,
        n in 1usize..40,
    ) {
        let inst = poly_instance(n, 1.0, 1.0, eps, sigma);
        let obs = sample_observations(&inst, seed);
        prop_assert_eq!(obs.len(), n);
        for j in 0..n {
            prop_assert_eq!((obs.y_plus[j] + obs.y_minus[j]) / 2.0, obs.y[j]);
        }
        prop_assert_eq!(obs, sample_observations(&inst, seed));
    }

    #[test]
    fn f32_and_f64_observations_agree(seed in any::<u64>(), eps in 0.01..0.5f64) {
        let i64 = poly_instance(10, 1.0, 1.0, eps, 0.1);
        let i32 = ProblemInstance::<f32>::builder(10).noise(eps as f32, 0.1).build().unwrap();
        let (a, b) = (sample_observations(&i64, seed), sample_observations(&i32, seed));
        for j in 0..10 {
            prop_assert!((a.x[j] - b.x[j] as f64).abs() < 1e-4, "x_{} {} vs {}", j, a.x[j], b.x[j]);
            prop_assert!((a.y[j] - b.y[j] as f64).abs() < 1e-4);
        }
    }

    #[test]
    fn noiseless_estimators_are_exact(
        theta in prop::collection::vec(-0.3..0.3f64, 1..12),
        reference in prop::collection::vec(-0.3..0.3f64, 1..12),
        signs in prop::collection::vec(prop::bool::ANY, 12),
        seed in any::<u64>(),
    ) {
        let n = 12;
        let signs: Vec<i8> = signs.iter().map(|s| if *s { 1 } else { -1 }).collect();
        let inst = ProblemInstance::builder(n)
            .omega(SequenceFamily::omega(Regime::Polynomial(-0.5)).unwrap())
            .noise(0.0, 0.0)
            .theta(theta)
            .theta_ref(reference)
            .lambda_signs(signs)
            .build()
            .unwrap();
        let obs = sample_observations(&inst, seed);
        for k in [1, 5, n] {
            let q = inst.q_truncated(k);
            prop_assert!(close(estimate(&inst, &obs, k).unwrap(), q) || (q.abs() < 1e-15));
            let alt = estimate_alternative(&inst, &obs, k).unwrap();
            prop_assert!((alt - q).abs() <= 1e-12, "alt {} vs {}", alt, q);
        }
    }

    #[test]
    fn stability_event_is_the_cutoff(seed in any::<u64>(), sigma in 0.0..=1.0f64, j in 1usize..8) {
        let inst = poly_instance(8, 1.0, 1.0, 0.1, sigma);
        let obs = sample_observations(&inst, seed);
        let c = components(&inst, &obs, j);
        let ym = obs.y_minus[j - 1];
        prop_assert_eq!(c.omega_event, ym * ym >= 3.0 * sigma * sigma);
        if sigma == 0.0 && ym != 0.0 {
            prop_assert!(c.omega_event);
        }
    }

    #[test]
    fn gof_statistic_is_unit_weight_estimate(seed in any::<u64>(), k in 1usize..20, sigma in 0.0..0.3f64) {
        let reference: Vec<f64> = (1..=20).map(|j| 0.4 / (j * j) as f64).collect();
        let inst = poly_instance(20, 1.0, 1.0, 0.05, sigma).with_theta_ref(reference).unwrap();
        let obs = sample_observations(&inst, seed);
        prop_assert_eq!(gof_statistic(&inst, &obs, k).unwrap().to_bits(), estimate(&inst, &obs, k).unwrap().to_bits());
    }

    #[test]
    fn risk_bound_terms_are_nonnegative_and_sum(
        a in 0.0..2.5f64,
        p in 0.3..2.5f64,
        eps in 1e-4..1.0f64,
        sigma in 0.0..1.0f64,
        k in 1usize..60,
    ) {
        let b = risk_bound(&poly_instance(60, a, p, eps, sigma), k, RiskConstants::default()).unwrap();
        let terms = b.terms();
        prop_assert!(terms.iter().all(|t| *t >= 0.0));
        prop_assert!(close(terms.iter().sum::<f64>(), b.total));
    }

    #[test]
    fn risk_bound_grows_with_noise(a in 0.0..2.0f64, p in 0.3..2.0f64, eps in 1e-3..0.5f64, k in 1usize..40) {
        let lo = risk_bound(&poly_instance(40, a, p, eps, 0.01), k, RiskConstants::default()).unwrap();
        let hi = risk_bound(&poly_instance(40, a, p, 2.0 * eps, 0.02), k, RiskConstants::default()).unwrap();
        for (l, h) in lo.terms().iter().zip(hi.terms()) {
            prop_assert!(*l <= h * (1.0 + 1e-12));
        }
    }

    #[test]
    fn selectors_match_brute_force(
        a in 0.0..2.5f64,
        p in 0.3..2.5f64,
        eps in 1e-4..0.5f64,
        sigma in 0.0..0.5f64,
        k_max in 1usize..80,
    ) {
        let inst = poly_instance(80, a, p, eps, sigma);
        let al = |j: usize| (j as f64).powf(-a);
        let ga = |j: usize| (j as f64).powf(p);
        let (e2, s2) = (eps * eps, sigma * sigma);
        let bias = |k: usize| ga(k).powi(-4);
        let run_max = |k: usize, f: &dyn Fn(usize) -> f64| (1..=k).map(f).fold(0.0, f64::max);
        let eps_obj = |k: usize| {
            let sum: f64 = (1..=k).map(|j| al(j).powi(-4)).sum();
            (e2 * e2 * sum).max(e2 * run_max(k, &|j| 1.0 / (al(j) * ga(j)).powi(2))).max(bias(k))
        };
        let sigma_obj = |k: usize| {
            (s2 * run_max(k, &|j| 1.0 / (al(j).powi(2) * ga(j).powi(4))))
                .max(s2 * s2 * run_max(k, &|j| 1.0 / (al(j) * ga(j)).powi(4)))
                .max(bias(k))
        };
        let sd_obj = |k: usize| (e2 * e2 * (1..=k).map(|j| al(j).powi(-4)).sum::<f64>()).max(bias(k));
        let gof_obj = |k: usize| {
            (e2 * (1..=k).map(|j| al(j).powi(-4)).sum::<f64>().sqrt())
                .max(s2 * run_max(k, &|j| 1.0 / (al(j) * ga(j)).powi(2)))
                .max(ga(k).powi(-2))
        };
        let cases: [Case; 4] = [
            ("k_eps", select_k_epsilon(&inst, k_max).unwrap().k, select_k_epsilon(&inst, k_max).unwrap().objective, &eps_obj),
            ("k_sigma", select_k_sigma(&inst, k_max).unwrap().k, select_k_sigma(&inst, k_max).unwrap().objective, &sigma_obj),
            ("k_sd", select_k_sd(&inst, k_max).unwrap().k, select_k_sd(&inst, k_max).unwrap().objective, &sd_obj),
            ("k_gof", select_k_gof(&inst, k_max).unwrap().k, select_k_gof(&inst, k_max).unwrap().objective, &gof_obj),
        ];
        for (name, k, objective, f) in cases {
            let (bk, bv) = brute_argmin(f, k_max);
            prop_assert!(close(objective, f(k)), "{}: objective {} vs {}", name, objective, f(k));
            // the minimum agrees; a different index is only allowed on a numerical tie
            prop_assert!(close(objective, bv), "{}: k={} ({}) vs brute k={} ({})", name, k, objective, bk, bv);
            prop_assert!(k <= bk || close(f(bk), objective), "{}: not the smallest minimizer", name);
        }
        let star = select_k_star(&inst, k_max).unwrap();
        prop_assert_eq!(star.k, select_k_epsilon(&inst, k_max).unwrap().k.min(select_k_sigma(&inst, k_max).unwrap().k));
    }

    #[test]
    fn k_eps_non_increasing_in_noise(a in 0.0..2.0f64, p in 0.3..2.0f64, eps in 1e-4..0.25f64) {
        let k = |e: f64| select_k_epsilon(&poly_instance(2000, a, p, e, 0.0), 2000).unwrap().k;
        prop_assert!(k(2.0 * eps) <= k(eps));
    }

    #[test]
    fn sd_test_is_scale_invariant_at_the_null(seed in any::<u64>(), s in 0.1..10.0f64, k in 1usize..15) {
        let inst = poly_instance(15, 1.0, 1.0, 0.05, 0.01);
        let scaled = inst.with_noise(0.05 * s, 0.01).unwrap();
        let obs = sample_observations(&inst, seed);
        let mut obs_s = obs.clone();
        obs_s.x.iter_mut().for_each(|x| *x *= s);
        let (t, t_s) = (sd_statistic(&inst, &obs, k).unwrap(), sd_statistic(&scaled, &obs_s, k).unwrap());
        let (h, h_s) = (sd_threshold(&inst, k, 0.05).unwrap().threshold, sd_threshold(&scaled, k, 0.05).unwrap().threshold);
        prop_assert!((t_s - s * s * t).abs() <= 1e-9 * (s * s * t).abs().max(h_s));
        prop_assert!(close(h_s, s * s * h));
        if (t - h).abs() > 1e-9 * h {
            prop_assert_eq!(t >= h, t_s >= h_s);
        }
    }

    #[test]
    fn chi2_is_nonnegative(
        lambda in prop::collection::vec(0.01..2.0f64, 6),
        beta in prop::collection::vec(0.0..1.0f64, 6),
        eps in 0.01..1.0f64,
        kappa in 1usize..6,
    ) {
        let c = chi2_mixture_vs_null(&lambda, &beta, eps, kappa).unwrap();
        prop_assert!(c >= 0.0);
    }

    #[test]
    fn two_point_hypotheses_are_members_with_unit_kl(
        eps in 1e-3..0.5f64,
        sigma in 1e-3..0.5f64,
        a in 0.0..2.0f64,
        p in 0.3..2.0f64,
        radius in 0.5..3.0f64,
        d in 1.2..3.0f64,
    ) {
        let reference: Vec<f64> = (1..=40).map(|j| 0.1 * radius / ((j * j) as f64 * j as f64)).collect();
        let inst = ProblemInstance::builder(40)
            .alpha(SequenceFamily::alpha(Regime::Polynomial(a)).unwrap())
            .gamma(SequenceFamily::gamma(Regime::Polynomial(p)).unwrap())
            .noise(eps, sigma)
            .radius(radius)
            .d(d)
            .theta_ref(reference)
            .build()
            .unwrap();
        for c in Construction::ALL {
            let pair = build_two_point(&inst, c).unwrap();
            prop_assert!(pair.kl <= 1.0 + 1e-12, "{}: kl {}", c, pair.kl);
            prop_assert!(pair.gap() >= 0.0);
            for (theta, lambda) in [(&pair.theta_plus, &pair.lambda_plus), (&pair.theta_minus, &pair.lambda_minus)] {
                let h = inst.with_theta(theta.clone()).unwrap().with_lambda(lambda.clone()).unwrap();
                let m = check_membership(&h);
                prop_assert!(m.ellipsoid_sum <= radius * radius * (1.0 + 1e-12), "{}", c);
                prop_assert!(m.ellipsoid_sum_ref <= radius * radius * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn hypercube_vertices_share_the_functional(eps in 1e-3..0.2f64, a in 0.0..2.0f64, p in 0.3..2.0f64, mask in any::<u64>()) {
        let inst = poly_instance(200, a, p, eps, 0.0);
        let (prior, cert) = worst_case_prior(&inst, 200).unwrap();
        prop_assert!(cert.nu >= 1.0);
        let signs: Vec<bool> = (0..prior.kappa).map(|i| (mask >> (i % 64)) & 1 == 1).collect();
        let v = inst.with_theta(prior.vertex(&signs)).unwrap();
        prop_assert!(check_membership(&v).ellipsoid_sum <= 1.0 + 1e-12);
        prop_assert!(close(v.q_value(), 2.0 * prior.psi));
    }

    #[test]
    fn report_standard_error(values in prop::collection::vec(-100.0..100.0f64, 2..50)) {
        let r = ExperimentReport::from_values("x", &values, 0).unwrap();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        prop_assert!((r.mean - mean).abs() <= 1e-9 * (1.0 + mean.abs()));
        prop_assert!((r.variance - var).abs() <= 1e-9 * (1.0 + var));
        prop_assert!((r.std_error - (r.variance / n).sqrt()).abs() <= 1e-15 * (1.0 + r.std_error));
    }

    #[test]
    fn slope_fit_recovers_power_laws(slope in -4.0..4.0f64, c in 0.01..100.0f64) {
        let pts: Vec<(f64, f64)> = (3..10).map(|i| {
            let x = 2f64.powi(-i);
            (x, c * x.powf(slope))
        }).collect();
        let fit = fit_rate_slope(&pts).unwrap();
        prop_assert!((fit.slope - slope).abs() < 1e-9);
        prop_assert!((fit.intercept - c.ln()).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn reports_do_not_depend_on_worker_count(seed in any::<u64>(), workers in 2usize..9) {
        let inst = poly_instance(30, 1.0, 1.0, 0.05, 0.02);
        let stat = |s: u64| estimate(&inst, &sample_observations(&inst, s), 10);
        let one = run_statistic("est", 200, &McSettings::new(seed).with_workers(1), stat).unwrap();
        let many = run_statistic("est", 200, &McSettings::new(seed).with_workers(workers), stat).unwrap();
        prop_assert_eq!(one.mean.to_bits(), many.mean.to_bits());
        prop_assert_eq!(one.variance.to_bits(), many.variance.to_bits());
    }
}

/// A known-mean statistic lands within four standard errors in at least 99 of
/// 100 independent harness runs.
#[test]
fn standard_errors_are_honest() {
    let inst = poly_instance(3, 1.0, 1.0, 0.3, 0.1);
    let lambda2 = inst.lambda()[1].powi(2);
    let hits = (0..100u64)
        .filter(|run| {
            let r = run_statistic("v", 2000, &McSettings::new(1000 + run).with_workers(2), |s| {
                Ok(components(&inst, &sample_observations(&inst, s), 2).v)
            })
            .unwrap();
            r.z_score(lambda2).abs() <= 4.0
        })
        .count();
    assert!(hits >= 99, "{hits}/100 runs within 4 SE");
}
