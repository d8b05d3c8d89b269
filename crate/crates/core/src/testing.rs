//! Signal detection (`θ = 0`) and goodness-of-fit (`θ = θ°`) tests built on
//! the truncated series statistics.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::weighted_ratio_sum;
use crate::scalar::{compensated_sum, Scalar};
use crate::selection::{check_noise, select_k_gof, select_k_sd, BalanceCertificate, RateExponent, RegimeKind};
use crate::sequence_model::{ObservationSet, ProblemInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    /// Signal detection, `θ° = 0`.
    Sd,
    /// Goodness of fit to a reference `θ°` with no zero coordinate.
    Gof,
}

impl TestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TestKind::Sd => "sd",
            TestKind::Gof => "gof",
        }
    }
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sd" => Ok(TestKind::Sd),
            "gof" => Ok(TestKind::Gof),
            _ => Err(Error::param("test", format!("unknown test `{s}` (expected sd or gof)"))),
        }
    }
}

/// Separation rate, constant and resulting rejection threshold `c_tilde · phi2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Threshold<T> {
    pub phi2: T,
    pub c_tilde: T,
    pub threshold: T,
}

/// `γ_k⁻² ≤ √ν φ²`, required for the type II guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SideCondition<T> {
    pub nu: T,
    /// `γ_k⁻²`.
    pub lhs: T,
    /// `√ν φ²`.
    pub rhs: T,
    pub holds: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestOutcome<T> {
    pub statistic: T,
    pub threshold: T,
    /// `statistic ≥ threshold`; when `φ² = 0` (exact observations) the
    /// threshold is zero and rejection requires `statistic > 0`.
    pub reject: bool,
    pub k_used: usize,
    /// `φ²` at `k_used`.
    pub rate_value: T,
    pub c_tilde: T,
    pub side_condition: SideCondition<T>,
}

/// Tuning knobs shared by both tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOptions<T> {
    /// Search range for the truncation; `None` means `n_max`.
    pub k_max: Option<usize>,
    /// `ν` for the side condition; `None` uses the realized balance ratio.
    pub nu: Option<T>,
    /// Factor applied to the type I constant.
    pub c_multiplier: T,
}

impl<T: Scalar> Default for TestOptions<T> {
    fn default() -> Self {
        Self {
            k_max: None,
            nu: None,
            c_multiplier: T::one(),
        }
    }
}

fn check_delta<T: Scalar>(delta: T) -> Result<()> {
    if delta > T::zero() && delta < T::one() {
        Ok(())
    } else {
        Err(Error::param("delta", "must lie in (0, 1)"))
    }
}

fn check_zero_reference<T: Scalar>(inst: &ProblemInstance<T>) -> Result<()> {
    match inst.theta_ref().iter().position(|r| !r.is_zero()) {
        Some(i) => Err(Error::NonZeroReference { j: i + 1 }),
        None => Ok(()),
    }
}

fn check_full_reference<T: Scalar>(inst: &ProblemInstance<T>, k: usize) -> Result<()> {
    match inst.theta_ref()[..k].iter().position(|r| r.is_zero()) {
        Some(i) => Err(Error::ZeroReferenceCoordinate { j: i + 1 }),
        None => Ok(()),
    }
}

fn sum_inv_alpha4<T: Scalar>(inst: &ProblemInstance<T>, k: usize) -> T {
    compensated_sum(inst.alpha_values()[..k].iter().map(|a| a.powi(-4)))
}

/// `Σ_{j≤k} α_j⁻² (X_j² − ε²)`. Uses `X` only.
pub fn sd_statistic<T: Scalar>(inst: &ProblemInstance<T>, obs: &ObservationSet<T>, k: usize) -> Result<T> {
    check_zero_reference(inst)?;
    inst.check_k(k)?;
    let eps2 = inst.eps() * inst.eps();
    Ok(compensated_sum(
        (0..k).map(|i| inst.alpha_values()[i].powi(-2) * (obs.x[i] * obs.x[i] - eps2)),
    ))
}

/// `φ² = ε² (Σ_{j≤k} α_j⁻⁴)^{1/2}`, `C̃ = max(√8 δ^{-1/2}, 32 d² δ⁻¹)`.
pub fn sd_threshold<T: Scalar>(inst: &ProblemInstance<T>, k: usize, delta: T) -> Result<Threshold<T>> {
    inst.check_k(k)?;
    check_delta(delta)?;
    let phi2 = inst.eps() * inst.eps() * sum_inv_alpha4(inst, k).sqrt();
    let c_tilde = (T::lit(8.0).sqrt() / delta.sqrt()).max(T::lit(32.0) * inst.d() * inst.d() / delta);
    Ok(Threshold {
        phi2,
        c_tilde,
        threshold: c_tilde * phi2,
    })
}

/// Goodness-of-fit statistic: the cloned estimator with unit weights.
pub fn gof_statistic<T: Scalar>(inst: &ProblemInstance<T>, obs: &ObservationSet<T>, k: usize) -> Result<T> {
    inst.check_k(k)?;
    check_full_reference(inst, k)?;
    Ok(weighted_ratio_sum(inst, obs, k, None))
}

/// `φ² = max(ε² (Σ α⁻⁴)^{1/2}, σ² max α⁻²γ⁻²)`, `C̃ = (2(672d⁴ + 2688d⁴L⁴)/δ)^{1/2}`.
pub fn gof_threshold<T: Scalar>(inst: &ProblemInstance<T>, k: usize, delta: T) -> Result<Threshold<T>> {
    inst.check_k(k)?;
    check_delta(delta)?;
    let eps_part = inst.eps() * inst.eps() * sum_inv_alpha4(inst, k).sqrt();
    let max_ag = (0..k)
        .map(|i| (inst.alpha_values()[i] * inst.gamma_values()[i]).powi(-2))
        .fold(T::zero(), T::max);
    let sigma_part = crate::scalar::scaled(inst.sigma() * inst.sigma(), max_ag);
    let phi2 = eps_part.max(sigma_part);
    let d4 = inst.d().powi(4);
    let l4 = inst.radius().powi(4);
    let c_tilde = (T::lit(2.0) * (T::lit(672.0) * d4 + T::lit(2688.0) * d4 * l4) / delta).sqrt();
    Ok(Threshold {
        phi2,
        c_tilde,
        threshold: c_tilde * phi2,
    })
}

fn side_condition<T: Scalar>(inst: &ProblemInstance<T>, k: usize, phi2: T, nu: Option<T>) -> SideCondition<T> {
    let lhs = inst.gamma_values()[k - 1].powi(-2);
    let nu = nu.unwrap_or_else(|| BalanceCertificate::new(k, phi2 * phi2, lhs * lhs).nu);
    let rhs = nu.sqrt() * phi2;
    SideCondition {
        nu,
        lhs,
        rhs,
        holds: lhs <= rhs,
    }
}

/// Truncation and threshold fixed ahead of seeing data, so one plan can be
/// applied to many observation sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestPlan<T> {
    pub kind: TestKind,
    pub k: usize,
    pub rate_value: T,
    /// Type I constant after the multiplier.
    pub c_tilde: T,
    pub threshold: T,
    pub side_condition: SideCondition<T>,
}

impl<T: Scalar> TestPlan<T> {
    /// Rejection rule. When `φ² = 0` (exact observations) the threshold is
    /// zero and rejection requires a strictly positive statistic.
    pub fn decide(&self, statistic: T) -> bool {
        if self.rate_value.is_zero() {
            statistic > T::zero()
        } else {
            statistic >= self.threshold
        }
    }

    pub fn statistic(&self, inst: &ProblemInstance<T>, obs: &ObservationSet<T>) -> Result<T> {
        match self.kind {
            TestKind::Sd => sd_statistic(inst, obs, self.k),
            TestKind::Gof => gof_statistic(inst, obs, self.k),
        }
    }

    pub fn apply(&self, inst: &ProblemInstance<T>, obs: &ObservationSet<T>) -> Result<TestOutcome<T>> {
        let statistic = self.statistic(inst, obs)?;
        Ok(TestOutcome {
            statistic,
            threshold: self.threshold,
            reject: self.decide(statistic),
            k_used: self.k,
            rate_value: self.rate_value,
            c_tilde: self.c_tilde,
            side_condition: self.side_condition,
        })
    }
}

/// Select `k` and compute the threshold for `kind`.
pub fn plan_test<T: Scalar>(
    kind: TestKind,
    inst: &ProblemInstance<T>,
    delta: T,
    opts: &TestOptions<T>,
) -> Result<TestPlan<T>> {
    let k_max = opts.k_max.unwrap_or(inst.n_max());
    let (k, thr) = match kind {
        TestKind::Sd => {
            check_zero_reference(inst)?;
            let k = select_k_sd(inst, k_max)?.k;
            (k, sd_threshold(inst, k, delta)?)
        }
        TestKind::Gof => {
            let k = select_k_gof(inst, k_max)?.k;
            check_full_reference(inst, k)?;
            (k, gof_threshold(inst, k, delta)?)
        }
    };
    if !(opts.c_multiplier > T::zero() && opts.c_multiplier.is_finite()) {
        return Err(Error::param("c_multiplier", "must be positive and finite"));
    }
    let c_tilde = thr.c_tilde * opts.c_multiplier;
    let side = side_condition(inst, k, thr.phi2, opts.nu);
    if !side.holds {
        log::warn!(
            "{kind} test: side condition γ_k⁻² ≤ √ν φ² fails at k = {k} (γ_k⁻² = {}, √ν φ² = {}, ν = {})",
            side.lhs,
            side.rhs,
            side.nu
        );
    }
    Ok(TestPlan {
        kind,
        k,
        rate_value: thr.phi2,
        c_tilde,
        threshold: c_tilde * thr.phi2,
        side_condition: side,
    })
}

/// Signal-detection test at `k = ksd` with default options.
pub fn sd_test<T: Scalar>(inst: &ProblemInstance<T>, obs: &ObservationSet<T>, delta: T) -> Result<TestOutcome<T>> {
    sd_test_with(inst, obs, delta, &TestOptions::default())
}

pub fn sd_test_with<T: Scalar>(
    inst: &ProblemInstance<T>,
    obs: &ObservationSet<T>,
    delta: T,
    opts: &TestOptions<T>,
) -> Result<TestOutcome<T>> {
    plan_test(TestKind::Sd, inst, delta, opts)?.apply(inst, obs)
}

/// Goodness-of-fit test at `k = kgof` with default options.
pub fn gof_test<T: Scalar>(inst: &ProblemInstance<T>, obs: &ObservationSet<T>, delta: T) -> Result<TestOutcome<T>> {
    gof_test_with(inst, obs, delta, &TestOptions::default())
}

pub fn gof_test_with<T: Scalar>(
    inst: &ProblemInstance<T>,
    obs: &ObservationSet<T>,
    delta: T,
    opts: &TestOptions<T>,
) -> Result<TestOutcome<T>> {
    plan_test(TestKind::Gof, inst, delta, opts)?.apply(inst, obs)
}

/// Dispatch on [`TestKind`].
pub fn run_test<T: Scalar>(
    kind: TestKind,
    inst: &ProblemInstance<T>,
    obs: &ObservationSet<T>,
    delta: T,
    opts: &TestOptions<T>,
) -> Result<TestOutcome<T>> {
    plan_test(kind, inst, delta, opts)?.apply(inst, obs)
}

/// Minimax separation rate `φ²` for the given problem and regime.
pub fn predicted_testing_rate<T: Scalar>(kind: TestKind, regime: RegimeKind, p: T, a: T, eps: T, sigma: T) -> Result<T> {
    if !(p > T::zero() && p.is_finite()) {
        return Err(Error::param("p", "must be positive"));
    }
    if !(a > T::zero() && a.is_finite()) {
        return Err(Error::param("a", "must be positive"));
    }
    check_noise(eps, sigma)?;
    let two = T::lit(2.0);
    let log_factor = |x: T| {
        if x.is_zero() {
            T::zero()
        } else {
            x * x * x.ln().abs().powf(two * a + T::lit(0.5))
        }
    };
    let eps_part = match regime {
        RegimeKind::MildSobolev => eps.powf(T::lit(8.0) * p / (T::lit(4.0) * (a + p) + T::one())),
        RegimeKind::MildAnalytic => log_factor(eps),
        RegimeKind::SevereSobolev => RateExponent::LogPower(two * p).eval(eps),
        RegimeKind::SevereAnalytic => eps.powf(two * p / (a + p)),
    };
    if kind == TestKind::Sd {
        return Ok(eps_part);
    }
    let sigma_part = match regime {
        RegimeKind::MildSobolev | RegimeKind::SevereAnalytic => (sigma * sigma).max(sigma.powf(two * p / a)),
        RegimeKind::MildAnalytic => sigma * sigma,
        RegimeKind::SevereSobolev => RateExponent::LogPower(two * p).eval(sigma),
    };
    Ok(eps_part.max(sigma_part))
}
