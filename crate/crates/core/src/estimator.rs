//! Truncated series estimators of `Q(θ) = Σ ω_j² (θ_j − θ°_j)²` and the
//! term-by-term upper bound on their mean squared error.

use serde::Serialize;

use crate::error::Result;
use crate::scalar::{CompensatedSum, Scalar};
use crate::sequence_model::{ObservationSet, ProblemInstance};

/// Per-coordinate building blocks of the cloned estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComponentTriple<T> {
    /// `(X_j − Y′_j θ°_j)² − ε² − 2 (θ°_j)² σ²`, unbiased for `λ_j² (θ_j − θ°_j)²`.
    pub u: T,
    /// `Y″_j² − 2σ²`, unbiased for `λ_j²`.
    pub v: T,
    /// `Y″_j² ≥ 3σ²`.
    pub omega_event: bool,
}

/// `U_j`, `V_j` and the stability event for 1-based index `j`.
///
/// # Panics
/// If `j` is zero or exceeds the observation length.
pub fn components<T: Scalar>(
    inst: &ProblemInstance<T>,
    obs: &ObservationSet<T>,
    j: usize,
) -> ComponentTriple<T> {
    let i = j - 1;
    let eps2 = inst.eps() * inst.eps();
    let sigma2 = inst.sigma() * inst.sigma();
    let two = T::lit(2.0);
    let r = inst.theta_ref()[i];
    let resid = obs.x[i] - obs.y_plus[i] * r;
    let ym2 = obs.y_minus[i] * obs.y_minus[i];
    ComponentTriple {
        u: resid * resid - eps2 - two * r * r * sigma2,
        v: ym2 - two * sigma2,
        omega_event: ym2 >= T::lit(3.0) * sigma2,
    }
}

/// Shared core of [`estimate`] and the goodness-of-fit statistic: `weights`
/// returns `ω_j²` for 0-based index `i`, `None` means unit weights.
pub(crate) fn weighted_ratio_sum<T: Scalar>(
    inst: &ProblemInstance<T>,
    obs: &ObservationSet<T>,
    k: usize,
    weights: Option<&[T]>,
) -> T {
    let mut acc = CompensatedSum::new();
    for j in 1..=k {
        let c = components(inst, obs, j);
        // indicator first: no division for excluded terms
        if !c.omega_event || c.v.is_zero() {
            continue;
        }
        let ratio = c.u / c.v;
        match weights {
            Some(w) => acc.add(w[j - 1] * w[j - 1] * ratio),
            None => acc.add(ratio),
        }
    }
    acc.value()
}

/// Sample-cloned truncated series estimator `Σ_{j≤k} ω_j² (U_j/V_j) 1{Ω_j}`.
pub fn estimate<T: Scalar>(
    inst: &ProblemInstance<T>,
    obs: &ObservationSet<T>,
    k: usize,
) -> Result<T> {
    inst.check_k(k)?;
    Ok(weighted_ratio_sum(inst, obs, k, Some(inst.omega_values())))
}

/// Single-sample estimator built from `X` and `Y` only, with cut-off `Y_j² ≥ 2σ²`.
///
/// Each term carries the weight `ω_j²`; for `ω ≡ 1` this is
/// `Σ (X²−ε²)/(Y²−σ²) 1 − 2 Σ θ° X/Y 1 + Σ (θ°)²`.
#[allow(clippy::needless_range_loop)]
pub fn estimate_alternative<T: Scalar>(
    inst: &ProblemInstance<T>,
    obs: &ObservationSet<T>,
    k: usize,
) -> Result<T> {
    inst.check_k(k)?;
    let eps2 = inst.eps() * inst.eps();
    let sigma2 = inst.sigma() * inst.sigma();
    let two = T::lit(2.0);
    let w = inst.omega_values();
    let mut ratio_part = CompensatedSum::new();
    let mut cross_part = CompensatedSum::new();
    let mut ref_part = CompensatedSum::new();
    for i in 0..k {
        let w2 = w[i] * w[i];
        let r = inst.theta_ref()[i];
        ref_part.add(w2 * r * r);
        let (x, y) = (obs.x[i], obs.y[i]);
        let y2 = y * y;
        if y2 < two * sigma2 || y.is_zero() {
            continue;
        }
        ratio_part.add(w2 * (x * x - eps2) / (y2 - sigma2));
        cross_part.add(w2 * r * x / y);
    }
    Ok(ratio_part.value() - two * cross_part.value() + ref_part.value())
}

/// Multiplier for the bound terms whose constants are not explicit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskConstants<T> {
    pub c_aux: T,
}

impl<T: Scalar> Default for RiskConstants<T> {
    fn default() -> Self {
        Self { c_aux: T::one() }
    }
}

/// The seven terms of the pointwise risk bound at truncation `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskBoundBreakdown<T> {
    pub k: usize,
    pub t_eps4: T,
    pub t_sigma4_ref: T,
    pub t_eps2_diff: T,
    pub t_sigma2_ref_diff: T,
    pub t_sigma4_gamma: T,
    pub t_sigma2_gamma: T,
    pub t_bias: T,
    pub total: T,
}

impl<T: Scalar> RiskBoundBreakdown<T> {
    pub const CSV_HEADER: [&'static str; 9] = [
        "k",
        "t_eps4",
        "t_sigma4_ref",
        "t_eps2_diff",
        "t_sigma2_ref_diff",
        "t_sigma4_gamma",
        "t_sigma2_gamma",
        "t_bias",
        "total",
    ];

    pub fn terms(&self) -> [T; 7] {
        [
            self.t_eps4,
            self.t_sigma4_ref,
            self.t_eps2_diff,
            self.t_sigma2_ref_diff,
            self.t_sigma4_gamma,
            self.t_sigma2_gamma,
            self.t_bias,
        ]
    }

    pub fn csv_record(&self) -> Vec<String> {
        std::iter::once(self.k.to_string())
            .chain(self.terms().iter().map(|t| t.to_string()))
            .chain(std::iter::once(self.total.to_string()))
            .collect()
    }
}

/// Upper bound on `E[(q̂_k − Q(θ))²]` for the instance's `θ`, `θ°`.
///
/// Explicit constants: `672d⁴`, `2688d⁴`, `672d²`, `1344d²` for the
/// variance terms, `48d²L² min(1, σ²α⁻²)` for the stability cut-off, and the
/// exact tail `ω_k⁴/γ_k⁴ (Σ_{k<j≤n_max} γ_j² (θ_j−θ°_j)²)²` for the bias.
/// The two terms driven by the fluctuation of `λ_j²/V_j` carry `c_aux · L²`.
pub fn risk_bound<T: Scalar>(
    inst: &ProblemInstance<T>,
    k: usize,
    constants: RiskConstants<T>,
) -> Result<RiskBoundBreakdown<T>> {
    inst.check_k(k)?;
    let d2 = inst.d() * inst.d();
    let d4 = d2 * d2;
    let l2 = inst.radius() * inst.radius();
    let eps2 = inst.eps() * inst.eps();
    let sigma2 = inst.sigma() * inst.sigma();
    let (alpha, gamma, omega) = (inst.alpha_values(), inst.gamma_values(), inst.omega_values());
    let (theta, theta_ref) = (inst.theta(), inst.theta_ref());

    let mut s_eps4 = CompensatedSum::new();
    let mut s_sigma4_ref = CompensatedSum::new();
    let mut s_eps2_diff = CompensatedSum::new();
    let mut s_sigma2_ref_diff = CompensatedSum::new();
    let mut s_sigma4_gamma = CompensatedSum::new();
    let mut s_sigma2_gamma = CompensatedSum::new();
    let mut s_cutoff = CompensatedSum::new();
    for i in 0..k {
        let w4 = omega[i].powi(4);
        let ia2 = alpha[i].powi(-2);
        let ia4 = ia2 * ia2;
        let ig2 = gamma[i].powi(-2);
        let r2 = theta_ref[i] * theta_ref[i];
        let diff2 = (theta[i] - theta_ref[i]).powi(2);
        s_eps4.add(w4 * ia4);
        s_sigma4_ref.add(w4 * ia4 * r2 * r2);
        s_eps2_diff.add(w4 * ia2 * diff2);
        s_sigma2_ref_diff.add(w4 * ia2 * r2 * diff2);
        s_sigma4_gamma.add(w4 * ia4 * ig2 * diff2);
        s_sigma2_gamma.add(w4 * ia2 * ig2 * diff2);
        s_cutoff.add(w4 * ig2 * diff2 * T::one().min(sigma2 * ia2));
    }
    let tail: T = crate::scalar::compensated_sum(
        (k..inst.n_max()).map(|i| gamma[i] * gamma[i] * (theta[i] - theta_ref[i]).powi(2)),
    );
    let ratio = omega[k - 1] / gamma[k - 1];
    let sigma4 = sigma2 * sigma2;
    let eps4 = eps2 * eps2;
    let c = constants.c_aux * l2;

    let t_eps4 = T::lit(672.0) * d4 * eps4 * s_eps4.value();
    let t_sigma4_ref = T::lit(2688.0) * d4 * sigma4 * s_sigma4_ref.value();
    let t_eps2_diff = T::lit(672.0) * d2 * eps2 * s_eps2_diff.value();
    let t_sigma2_ref_diff = T::lit(1344.0) * d2 * sigma2 * s_sigma2_ref_diff.value();
    let t_sigma4_gamma = c * sigma4 * s_sigma4_gamma.value();
    let t_sigma2_gamma =
        c * sigma2 * s_sigma2_gamma.value() + T::lit(48.0) * d2 * l2 * s_cutoff.value();
    let t_bias = ratio.powi(4) * tail * tail;
    let total = crate::scalar::compensated_sum([
        t_eps4,
        t_sigma4_ref,
        t_eps2_diff,
        t_sigma2_ref_diff,
        t_sigma4_gamma,
        t_sigma2_gamma,
        t_bias,
    ]);
    Ok(RiskBoundBreakdown {
        k,
        t_eps4,
        t_sigma4_ref,
        t_eps2_diff,
        t_sigma2_ref_diff,
        t_sigma4_gamma,
        t_sigma2_gamma,
        t_bias,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::sequence_model::{sample_observations, Regime, Role, SequenceFamily};

    fn flat(n: usize) -> crate::sequence_model::InstanceBuilder<f64> {
        ProblemInstance::builder(n)
            .alpha(SequenceFamily::constant(Role::Alpha))
            .gamma(SequenceFamily::gamma(Regime::Polynomial(1.0)).unwrap())
    }

    #[test]
    fn noiseless_components() {
        let inst = flat(3).noise(0.0, 0.0).theta(vec![0.7, 0.2]).theta_ref(vec![0.3, 0.2, 0.1]).build().unwrap();
        let obs = sample_observations(&inst, 3);
        let c = components(&inst, &obs, 1);
        assert_eq!(c.u, (0.7_f64 - 0.3).powi(2));
        assert_eq!(c.v, 1.0);
        assert!(c.omega_event);
    }

    #[test]
    fn omega_event_matches_definition() {
        let inst = flat(50).noise(0.1, 0.8).build().unwrap();
        let obs = sample_observations(&inst, 9);
        for j in 1..=50 {
            let c = components(&inst, &obs, j);
            assert_eq!(c.omega_event, obs.y_minus[j - 1].powi(2) >= 3.0 * 0.64);
        }
    }

    #[test]
    fn noiseless_recovery_of_both_estimators() {
        let theta: Vec<f64> = vec![0.5, -0.25, 0.125, 0.0, 0.3];
        let theta_ref: Vec<f64> = vec![0.1, 0.1, -0.2, 0.05, 0.0];
        let inst = ProblemInstance::builder(5)
            .noise(0.0, 0.0)
            .theta(theta.clone())
            .theta_ref(theta_ref.clone())
            .lambda_signs(vec![1, -1, 1, -1, 1])
            .build()
            .unwrap();
        let obs = sample_observations(&inst, 0);
        let truth: f64 = theta.iter().zip(&theta_ref).map(|(a, b)| (a - b).powi(2)).sum();
        let q = estimate(&inst, &obs, 5).unwrap();
        let q_alt = estimate_alternative(&inst, &obs, 5).unwrap();
        assert!((q - truth).abs() < 1e-14 * truth.max(1.0), "{q} vs {truth}");
        assert!((q_alt - truth).abs() < 1e-14 * truth.max(1.0), "{q_alt} vs {truth}");
    }

    #[test]
    fn unit_eigenvalues_give_bit_exact_recovery() {
        let theta = vec![0.5, -0.25, 0.125];
        let inst = flat(3).noise(0.0, 0.0).theta(theta.clone()).build().unwrap();
        let obs = sample_observations(&inst, 0);
        let truth = 0.25 + 0.0625 + 0.015625;
        assert_eq!(estimate(&inst, &obs, 3).unwrap(), truth);
    }

    #[test]
    fn single_term_sum_matches_component() {
        let inst = flat(4).noise(0.2, 0.1).theta(vec![0.6]).build().unwrap();
        let obs = sample_observations(&inst, 17);
        let c = components(&inst, &obs, 1);
        let expected = if c.omega_event { c.u / c.v } else { 0.0 };
        assert_eq!(estimate(&inst, &obs, 1).unwrap(), expected);
    }

    #[test]
    fn truncation_bounds_are_enforced() {
        let inst = flat(4).build().unwrap();
        let obs = sample_observations(&inst, 1);
        assert_eq!(estimate(&inst, &obs, 0), Err(Error::TruncationOutOfRange { k: 0, n_max: 4 }));
        assert!(estimate_alternative(&inst, &obs, 5).is_err());
        assert!(risk_bound(&inst, 5, RiskConstants::default()).is_err());
    }

    #[test]
    fn zero_reference_reduces_alternative_to_ratio_sum() {
        let inst = flat(6).noise(0.3, 0.2).theta(vec![0.4, 0.3]).build().unwrap();
        let obs = sample_observations(&inst, 8);
        let direct: f64 = (0..6)
            .filter(|&i| obs.y[i].powi(2) >= 2.0 * 0.04)
            .map(|i| (obs.x[i].powi(2) - 0.09) / (obs.y[i].powi(2) - 0.04))
            .sum();
        let q = estimate_alternative(&inst, &obs, 6).unwrap();
        assert!((q - direct).abs() < 1e-12);
    }

    #[test]
    fn excluded_terms_contribute_nothing() {
        // σ large relative to λ: many Ω_j fail
        let inst = ProblemInstance::builder(40).noise(0.1, 1.0).theta(vec![0.2; 5]).build().unwrap();
        let obs = sample_observations(&inst, 5);
        let manual: f64 = (1..=40)
            .map(|j| components(&inst, &obs, j))
            .filter(|c| c.omega_event)
            .map(|c| c.u / c.v)
            .sum();
        let q = estimate(&inst, &obs, 40).unwrap();
        assert!((q - manual).abs() < 1e-9 * manual.abs().max(1.0));
        assert!(q.is_finite());
    }

    #[test]
    fn null_difference_kills_difference_terms() {
        let t = vec![0.3, 0.1, 0.05];
        let inst = ProblemInstance::builder(10).theta(t.clone()).theta_ref(t).build().unwrap();
        let b = risk_bound(&inst, 4, RiskConstants::default()).unwrap();
        assert_eq!(b.t_eps2_diff, 0.0);
        assert_eq!(b.t_sigma2_ref_diff, 0.0);
        assert_eq!(b.t_sigma4_gamma, 0.0);
        assert_eq!(b.t_sigma2_gamma, 0.0);
        assert_eq!(b.t_bias, 0.0);
        assert!(b.t_eps4 > 0.0 && b.t_sigma4_ref > 0.0);
    }

    #[test]
    fn sigma_zero_term_selection() {
        let (eps, d, th): (f64, f64, f64) = (0.2, 1.3, 0.4);
        let inst = ProblemInstance::builder(3)
            .alpha(SequenceFamily::constant(Role::Alpha))
            .noise(eps, 0.0)
            .d(d)
            .theta(vec![th, 0.1, 0.05])
            .build()
            .unwrap();
        let b = risk_bound(&inst, 1, RiskConstants::default()).unwrap();
        let tail: f64 = 4.0 * 0.01 + 9.0 * 0.0025;
        let bias = tail * tail;
        let expected = 672.0 * d.powi(4) * eps.powi(4) + 672.0 * d * d * eps * eps * th * th + bias;
        assert!((b.total - expected).abs() < 1e-12 * expected);
        assert!((b.t_bias - bias).abs() < 1e-15);
        let sum: f64 = b.terms().iter().sum();
        assert!((sum - b.total).abs() < 1e-12 * b.total);
        assert!(b.terms().iter().all(|t| *t >= 0.0));
    }

    #[test]
    fn breakdown_csv_record() {
        let inst = ProblemInstance::builder(5).theta(vec![0.1]).build().unwrap();
        let b = risk_bound(&inst, 2, RiskConstants::default()).unwrap();
        let rec = b.csv_record();
        assert_eq!(rec.len(), RiskBoundBreakdown::<f64>::CSV_HEADER.len());
        assert_eq!(rec[0], "2");
        assert_eq!(rec[8].parse::<f64>().unwrap(), b.total);
    }
}
