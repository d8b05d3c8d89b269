//! Truncation selectors (exact argmin over `1..=k_max`) and closed-form rate
//! predictions for the four illustrative regimes.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::{scaled, CompensatedSum, Scalar};
use crate::sequence_model::{ProblemInstance, Regime, SequenceFamily};

/// A selected truncation index with the objective it attains.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionResult<T> {
    pub k: usize,
    /// Maximum of `term_values`.
    pub objective: T,
    /// The balanced terms evaluated at `k`.
    pub term_values: Vec<(String, T)>,
}

impl<T: Scalar> SelectionResult<T> {
    pub fn term(&self, name: &str) -> Option<T> {
        self.term_values.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// NaN from `0 · ∞` style products counts as "infinitely bad".
fn sanitize<T: Scalar>(x: T) -> T {
    if x.is_nan() {
        T::infinity()
    } else {
        x
    }
}

fn max_of<T: Scalar>(xs: impl IntoIterator<Item = T>) -> T {
    xs.into_iter().fold(T::neg_infinity(), |m, x| if x > m { x } else { m })
}

/// Smallest `k` minimizing the maximum across the columns; `cols[c][k-1]`.
pub(crate) fn argmin_of_max<T: Scalar>(names: &[&str], cols: &[Vec<T>]) -> SelectionResult<T> {
    let k_max = cols[0].len();
    let mut best_k = 1;
    let mut best = T::infinity();
    for i in 0..k_max {
        let obj = max_of(cols.iter().map(|c| sanitize(c[i])));
        if obj < best {
            best = obj;
            best_k = i + 1;
        }
    }
    let term_values = names
        .iter()
        .zip(cols)
        .map(|(n, c)| (n.to_string(), sanitize(c[best_k - 1])))
        .collect::<Vec<_>>();
    SelectionResult {
        k: best_k,
        objective: max_of(term_values.iter().map(|t| t.1)),
        term_values,
    }
}

fn check_k_max<T: Scalar>(inst: &ProblemInstance<T>, k_max: usize) -> Result<()> {
    if k_max == 0 {
        return Err(Error::param("k_max", "must be at least 1"));
    }
    if k_max > inst.n_max() {
        return Err(Error::TruncationOutOfRange {
            k: k_max,
            n_max: inst.n_max(),
        });
    }
    Ok(())
}

fn prefix_sums<T: Scalar>(xs: impl Iterator<Item = T>) -> Vec<T> {
    let mut acc = CompensatedSum::new();
    xs.map(|x| {
        acc.add(sanitize(x));
        acc.value()
    })
    .collect()
}

fn running_max<T: Scalar>(xs: impl Iterator<Item = T>) -> Vec<T> {
    let mut m = T::neg_infinity();
    xs.map(|x| {
        let x = sanitize(x);
        if x > m {
            m = x;
        }
        m
    })
    .collect()
}

/// Per-index sequence values truncated at `k_max`.
struct Seqs<'a, T> {
    alpha: &'a [T],
    gamma: &'a [T],
    omega: &'a [T],
}

impl<'a, T: Scalar> Seqs<'a, T> {
    fn new(inst: &'a ProblemInstance<T>, k_max: usize) -> Self {
        Self {
            alpha: &inst.alpha_values()[..k_max],
            gamma: &inst.gamma_values()[..k_max],
            omega: &inst.omega_values()[..k_max],
        }
    }

    fn len(&self) -> usize {
        self.alpha.len()
    }

    /// `ω_i^{ew} α_i^{-ea} γ_i^{-eg}` evaluated as a product of ratios.
    fn ratio(&self, i: usize, ew: i32, ea: i32, eg: i32) -> T {
        self.omega[i].powi(ew) / (self.alpha[i].powi(ea) * self.gamma[i].powi(eg))
    }

    fn map(&self, f: impl Fn(usize) -> T) -> std::vec::IntoIter<T> {
        (0..self.len()).map(f).collect::<Vec<_>>().into_iter()
    }

    /// `ω_k⁴ / γ_k⁴`.
    fn bias(&self) -> Vec<T> {
        (0..self.len()).map(|i| (self.omega[i] / self.gamma[i]).powi(4)).collect()
    }
}

fn eps_columns<T: Scalar>(inst: &ProblemInstance<T>, s: &Seqs<T>) -> Vec<Vec<T>> {
    let eps2 = inst.eps() * inst.eps();
    let sum = prefix_sums(s.map(|i| s.ratio(i, 4, 4, 0)));
    let mx = running_max(s.map(|i| s.ratio(i, 4, 2, 2)));
    vec![
        sum.iter().map(|v| scaled(eps2 * eps2, *v)).collect(),
        mx.iter().map(|v| scaled(eps2, *v)).collect(),
        s.bias(),
    ]
}

fn sigma_columns<T: Scalar>(inst: &ProblemInstance<T>, s: &Seqs<T>) -> Vec<Vec<T>> {
    let sigma2 = inst.sigma() * inst.sigma();
    let m2 = running_max(s.map(|i| s.ratio(i, 4, 2, 4)));
    let m4 = running_max(s.map(|i| s.ratio(i, 4, 4, 4)));
    vec![
        m2.iter().map(|v| scaled(sigma2, *v)).collect(),
        m4.iter().map(|v| scaled(sigma2 * sigma2, *v)).collect(),
        s.bias(),
    ]
}

const EPS_TERMS: [&str; 3] = ["eps4_sum", "eps2_max", "bias"];
const SIGMA_TERMS: [&str; 3] = ["sigma2_max", "sigma4_max", "bias"];

/// `k_ε`: balances `ε⁴ Σ ω⁴α⁻⁴`, `ε² max ω⁴/(α²γ²)` and `ω_k⁴/γ_k⁴`.
pub fn select_k_epsilon<T: Scalar>(inst: &ProblemInstance<T>, k_max: usize) -> Result<SelectionResult<T>> {
    check_k_max(inst, k_max)?;
    let s = Seqs::new(inst, k_max);
    Ok(argmin_of_max(&EPS_TERMS, &eps_columns(inst, &s)))
}

/// `k_σ`: balances `σ² max ω⁴/(α²γ⁴)`, `σ⁴ max ω⁴/(α⁴γ⁴)` and `ω_k⁴/γ_k⁴`.
pub fn select_k_sigma<T: Scalar>(inst: &ProblemInstance<T>, k_max: usize) -> Result<SelectionResult<T>> {
    check_k_max(inst, k_max)?;
    let s = Seqs::new(inst, k_max);
    Ok(argmin_of_max(&SIGMA_TERMS, &sigma_columns(inst, &s)))
}

/// `k* = min(k_ε, k_σ)`; the objective is the largest of the five rate terms at `k*`.
pub fn select_k_star<T: Scalar>(inst: &ProblemInstance<T>, k_max: usize) -> Result<SelectionResult<T>> {
    check_k_max(inst, k_max)?;
    let s = Seqs::new(inst, k_max);
    let ec = eps_columns(inst, &s);
    let sc = sigma_columns(inst, &s);
    let k = argmin_of_max(&EPS_TERMS, &ec).k.min(argmin_of_max(&SIGMA_TERMS, &sc).k);
    let term_values: Vec<(String, T)> = [
        ("eps4_sum", &ec[0]),
        ("eps2_max", &ec[1]),
        ("bias", &ec[2]),
        ("sigma2_max", &sc[0]),
        ("sigma4_max", &sc[1]),
    ]
    .iter()
    .map(|(n, c)| (n.to_string(), sanitize(c[k - 1])))
    .collect();
    Ok(SelectionResult {
        k,
        objective: max_of(term_values.iter().map(|t| t.1)),
        term_values,
    })
}

/// `ksd`: balances `ε⁴ Σ α⁻⁴` and `γ_k⁻⁴`.
pub fn select_k_sd<T: Scalar>(inst: &ProblemInstance<T>, k_max: usize) -> Result<SelectionResult<T>> {
    check_k_max(inst, k_max)?;
    let s = Seqs::new(inst, k_max);
    let eps4 = inst.eps().powi(4);
    let sum = prefix_sums(s.map(|i| s.alpha[i].powi(-4)));
    let cols = vec![
        sum.iter().map(|v| scaled(eps4, *v)).collect(),
        s.gamma.iter().map(|g| g.powi(-4)).collect(),
    ];
    Ok(argmin_of_max(&["eps4_sum", "bias"], &cols))
}

/// `kgof`: balances `ε² (Σ α⁻⁴)^{1/2}`, `σ² max α⁻²γ⁻²` and `γ_k⁻²`.
pub fn select_k_gof<T: Scalar>(inst: &ProblemInstance<T>, k_max: usize) -> Result<SelectionResult<T>> {
    check_k_max(inst, k_max)?;
    let s = Seqs::new(inst, k_max);
    let eps2 = inst.eps() * inst.eps();
    let sigma2 = inst.sigma() * inst.sigma();
    let sum = prefix_sums(s.map(|i| s.alpha[i].powi(-4)));
    let mx = running_max(s.map(|i| s.ratio(i, 0, 2, 2)));
    let cols = vec![
        sum.iter().map(|v| scaled(eps2, v.sqrt())).collect(),
        mx.iter().map(|v| scaled(sigma2, *v)).collect(),
        s.gamma.iter().map(|g| g.powi(-2)).collect(),
    ];
    Ok(argmin_of_max(&["eps2_sqrt_sum", "sigma2_max", "bias"], &cols))
}

/// κ of the hypercube construction: balances `ε⁴ Σ ω⁴α⁻⁴` and `ω_k⁴/γ_k⁴`.
pub fn select_kappa_hypercube<T: Scalar>(inst: &ProblemInstance<T>, k_max: usize) -> Result<SelectionResult<T>> {
    check_k_max(inst, k_max)?;
    let s = Seqs::new(inst, k_max);
    let cols = eps_columns(inst, &s);
    Ok(argmin_of_max(&["eps4_sum", "bias"], &[cols[0].clone(), cols[2].clone()]))
}

/// κ of the two-point construction in `ε`: balances `ε² ω_k⁴/(α_k²γ_k²)` and `ω_k⁴/γ_k⁴`.
pub fn select_kappa_eps_two_point<T: Scalar>(inst: &ProblemInstance<T>, k_max: usize) -> Result<SelectionResult<T>> {
    check_k_max(inst, k_max)?;
    let s = Seqs::new(inst, k_max);
    let eps2 = inst.eps() * inst.eps();
    let cols = vec![s.map(|i| scaled(eps2, s.ratio(i, 4, 2, 2))).collect(), s.bias()];
    Ok(argmin_of_max(&["eps2_term", "bias"], &cols))
}

/// κ of the two-point construction in `σ`: minimizes `ω_k⁴/γ_k⁴ · max(σ²α_k⁻², 1)`.
pub fn select_kappa_sigma_two_point<T: Scalar>(inst: &ProblemInstance<T>, k_max: usize) -> Result<SelectionResult<T>> {
    check_k_max(inst, k_max)?;
    let s = Seqs::new(inst, k_max);
    let sigma2 = inst.sigma() * inst.sigma();
    let cols = vec![s
        .map(|i| {
            let b = (s.omega[i] / s.gamma[i]).powi(4);
            scaled(b, scaled(sigma2, s.alpha[i].powi(-2)).max(T::one()))
        })
        .collect()];
    Ok(argmin_of_max(&["weighted_bias"], &cols))
}

/// How far two supposedly comparable quantities are apart: `ν = max(r, 1/r)`
/// for `r = lhs / rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BalanceCertificate<T> {
    pub k: usize,
    pub lhs: T,
    pub rhs: T,
    pub ratio: T,
    pub nu: T,
}

impl<T: Scalar> BalanceCertificate<T> {
    pub fn new(k: usize, lhs: T, rhs: T) -> Self {
        let ratio = lhs / rhs;
        let nu = if ratio.is_nan() || ratio.is_zero() || ratio.is_infinite() {
            T::infinity()
        } else {
            ratio.max(ratio.recip())
        };
        Self { k, lhs, rhs, ratio, nu }
    }
}

/// Certificate for `ε⁴ Σ_{j≤k} ω_j⁴α_j⁻⁴ ≍ ω_k⁴γ_k⁻⁴`.
pub fn hypercube_balance<T: Scalar>(inst: &ProblemInstance<T>, k: usize) -> Result<BalanceCertificate<T>> {
    inst.check_k(k)?;
    let s = Seqs::new(inst, k);
    let sum = crate::scalar::compensated_sum(s.map(|i| s.ratio(i, 4, 4, 0)));
    let lhs = scaled(inst.eps().powi(4), sum);
    Ok(BalanceCertificate::new(k, lhs, s.bias()[k - 1]))
}

/// The four illustrative combinations of eigenvalue decay and smoothness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeKind {
    /// `α_j = j^{-a}`, `γ_j = j^p`.
    MildSobolev,
    /// `α_j = j^{-a}`, `γ_j = e^{p(j-1)}`.
    MildAnalytic,
    /// `α_j = e^{-a(j-1)}`, `γ_j = j^p`.
    SevereSobolev,
    /// `α_j = e^{-a(j-1)}`, `γ_j = e^{p(j-1)}`.
    SevereAnalytic,
}

impl RegimeKind {
    pub const ALL: [RegimeKind; 4] = [
        RegimeKind::MildSobolev,
        RegimeKind::MildAnalytic,
        RegimeKind::SevereSobolev,
        RegimeKind::SevereAnalytic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegimeKind::MildSobolev => "mild-sobolev",
            RegimeKind::MildAnalytic => "mild-analytic",
            RegimeKind::SevereSobolev => "severe-sobolev",
            RegimeKind::SevereAnalytic => "severe-analytic",
        }
    }

    /// Identify the regime and `(p, a)` from closed-form `α` and `γ` families.
    pub fn detect<T: Scalar>(alpha: &SequenceFamily<T>, gamma: &SequenceFamily<T>) -> Option<(Self, T, T)> {
        use Regime::{Exponential as E, Polynomial as P};
        match (alpha.regime(), gamma.regime()) {
            (P(a), P(p)) => Some((RegimeKind::MildSobolev, *p, *a)),
            (P(a), E(p)) => Some((RegimeKind::MildAnalytic, *p, *a)),
            (E(a), P(p)) => Some((RegimeKind::SevereSobolev, *p, *a)),
            (E(a), E(p)) => Some((RegimeKind::SevereAnalytic, *p, *a)),
            _ => None,
        }
    }

    /// Families `(α, γ)` realizing the regime with parameters `p`, `a`.
    pub fn families<T: Scalar>(self, p: T, a: T) -> Result<(SequenceFamily<T>, SequenceFamily<T>)> {
        let (alpha, gamma) = match self {
            RegimeKind::MildSobolev => (Regime::Polynomial(a), Regime::Polynomial(p)),
            RegimeKind::MildAnalytic => (Regime::Polynomial(a), Regime::Exponential(p)),
            RegimeKind::SevereSobolev => (Regime::Exponential(a), Regime::Polynomial(p)),
            RegimeKind::SevereAnalytic => (Regime::Exponential(a), Regime::Exponential(p)),
        };
        Ok((SequenceFamily::alpha(alpha)?, SequenceFamily::gamma(gamma)?))
    }
}

impl fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegimeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RegimeKind::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::param("regime", format!("unknown regime `{s}`")))
    }
}

/// Rate zones of the polynomial/polynomial case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Zone {
    Nonparametric,
    Mixed,
    Parametric,
}

/// Exponent of one noise level in a rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RateExponent<T> {
    /// `x^e`.
    Power(T),
    /// `|ln x|^{-e}`.
    LogPower(T),
}

impl<T: Scalar> RateExponent<T> {
    pub fn eval(self, x: T) -> T {
        match self {
            RateExponent::Power(e) => x.powf(e),
            RateExponent::LogPower(e) => {
                if x.is_zero() {
                    T::zero()
                } else {
                    x.ln().abs().powf(-e)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatePrediction<T> {
    pub regime: RegimeKind,
    pub exponent_eps: RateExponent<T>,
    pub exponent_sigma: RateExponent<T>,
    /// Only for [`RegimeKind::MildSobolev`].
    pub zone: Option<Zone>,
}

impl<T: Scalar> RatePrediction<T> {
    pub fn value(&self, eps: T, sigma: T) -> T {
        self.exponent_eps.eval(eps).max(self.exponent_sigma.eval(sigma))
    }
}

fn check_smoothness<T: Scalar>(p: T, a: T) -> Result<()> {
    if !(p > T::zero() && p.is_finite()) {
        return Err(Error::param("p", "must be positive"));
    }
    if !(a > T::zero() && a.is_finite()) {
        return Err(Error::param("a", "must be positive"));
    }
    Ok(())
}

pub(crate) fn check_noise<T: Scalar>(eps: T, sigma: T) -> Result<()> {
    if !(eps >= T::zero() && eps <= T::one()) {
        return Err(Error::param("eps", "must lie in [0, 1]"));
    }
    if !(sigma >= T::zero() && sigma <= T::one()) {
        return Err(Error::param("sigma", "must lie in [0, 1]"));
    }
    Ok(())
}

/// Minimax estimation rate exponents. `ε^{e} ∨ ε²` is folded into `ε^{min(e, 2)}`.
pub fn rate_prediction<T: Scalar>(regime: RegimeKind, p: T, a: T) -> Result<RatePrediction<T>> {
    check_smoothness(p, a)?;
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let sigma_poly = RateExponent::Power((four * p / a).min(two));
    let (exponent_eps, exponent_sigma, zone) = match regime {
        RegimeKind::MildSobolev => {
            let e = T::lit(16.0) * p / (four * a + four * p + T::one());
            let zone = if p >= a + T::lit(0.25) {
                Zone::Parametric
            } else if two * p >= a {
                Zone::Mixed
            } else {
                Zone::Nonparametric
            };
            (RateExponent::Power(e.min(two)), sigma_poly, Some(zone))
        }
        RegimeKind::MildAnalytic => (RateExponent::Power(two), RateExponent::Power(two), None),
        RegimeKind::SevereSobolev => (RateExponent::LogPower(four * p), RateExponent::LogPower(four * p), None),
        RegimeKind::SevereAnalytic => (RateExponent::Power((four * p / (p + a)).min(two)), sigma_poly, None),
    };
    Ok(RatePrediction {
        regime,
        exponent_eps,
        exponent_sigma,
        zone,
    })
}

/// Minimax estimation rate at noise levels `(ε, σ)`.
pub fn predicted_rate<T: Scalar>(regime: RegimeKind, p: T, a: T, eps: T, sigma: T) -> Result<T> {
    check_noise(eps, sigma)?;
    Ok(rate_prediction(regime, p, a)?.value(eps, sigma))
}

/// One row of a selector sweep over noise levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow<T> {
    pub eps: T,
    pub sigma: T,
    pub k_eps: usize,
    pub k_sigma: usize,
    pub k_star: usize,
    pub k_sd: usize,
    pub k_gof: usize,
    /// Objective of `k*`.
    pub objective: T,
    /// NaN when the families are not one of the closed-form regimes.
    pub predicted_rate: T,
}

impl<T: Scalar> SweepRow<T> {
    pub const CSV_HEADER: [&'static str; 9] = [
        "eps",
        "sigma",
        "k_eps",
        "k_sigma",
        "k_star",
        "k_sd",
        "k_gof",
        "objective",
        "predicted_rate",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.eps.to_string(),
            self.sigma.to_string(),
            self.k_eps.to_string(),
            self.k_sigma.to_string(),
            self.k_star.to_string(),
            self.k_sd.to_string(),
            self.k_gof.to_string(),
            self.objective.to_string(),
            self.predicted_rate.to_string(),
        ]
    }
}

/// All selectors at one noise level.
pub fn sweep_row<T: Scalar>(inst: &ProblemInstance<T>, k_max: usize) -> Result<SweepRow<T>> {
    let star = select_k_star(inst, k_max)?;
    let predicted = match RegimeKind::detect(inst.alpha(), inst.gamma()) {
        Some((r, p, a)) if p > T::zero() && a > T::zero() => predicted_rate(r, p, a, inst.eps(), inst.sigma())?,
        _ => T::nan(),
    };
    Ok(SweepRow {
        eps: inst.eps(),
        sigma: inst.sigma(),
        k_eps: select_k_epsilon(inst, k_max)?.k,
        k_sigma: select_k_sigma(inst, k_max)?.k,
        k_star: star.k,
        k_sd: select_k_sd(inst, k_max)?.k,
        k_gof: select_k_gof(inst, k_max)?.k,
        objective: star.objective,
        predicted_rate: predicted,
    })
}

/// [`sweep_row`] over a grid of `(ε, σ)` pairs.
pub fn sweep<T: Scalar>(inst: &ProblemInstance<T>, grid: &[(T, T)], k_max: usize) -> Result<Vec<SweepRow<T>>> {
    grid.iter()
        .map(|(e, s)| sweep_row(&inst.with_noise(*e, *s)?, k_max))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence_model::Role;

    fn base(eps: f64, sigma: f64, n: usize) -> ProblemInstance<f64> {
        ProblemInstance::builder(n).noise(eps, sigma).build().unwrap()
    }

    #[test]
    fn worked_example_k_epsilon() {
        let r = select_k_epsilon(&base(0.1, 0.0, 50), 50).unwrap();
        assert_eq!(r.k, 3);
        assert!((r.objective - 1.0 / 81.0).abs() < 1e-15);
        assert!((r.term("eps2_max").unwrap() - 0.01).abs() < 1e-15);
        // the three terms at k = 3
        assert!((r.term("eps4_sum").unwrap() - 98.0e-4).abs() < 1e-15);
        assert!((r.term("bias").unwrap() - 1.0 / 81.0).abs() < 1e-15);
    }

    #[test]
    fn large_noise_truncates_at_one() {
        let i = base(1.0, 1.0, 30);
        assert_eq!(select_k_epsilon(&i, 30).unwrap().k, 1);
        assert_eq!(select_k_sigma(&i, 30).unwrap().k, 1);
        assert_eq!(select_k_sd(&i, 30).unwrap().k, 1);
        assert_eq!(select_k_gof(&i, 30).unwrap().k, 1);
    }

    #[test]
    fn zero_noise_selects_k_max() {
        let i = base(0.0, 0.0, 40);
        assert_eq!(select_k_epsilon(&i, 25).unwrap().k, 25);
        assert_eq!(select_k_sigma(&i, 25).unwrap().k, 25);
        assert_eq!(select_k_sd(&i, 25).unwrap().k, 25);
        assert_eq!(select_k_gof(&i, 25).unwrap().k, 25);
        assert_eq!(select_k_star(&i, 25).unwrap().k, 25);
    }

    #[test]
    fn k_star_degenerate_cases() {
        let i = base(0.05, 0.0, 200);
        assert_eq!(select_k_star(&i, 200).unwrap().k, select_k_epsilon(&i, 200).unwrap().k);
        let i = base(0.0, 0.05, 200);
        assert_eq!(select_k_star(&i, 200).unwrap().k, select_k_sigma(&i, 200).unwrap().k);
    }

    #[test]
    fn k_max_validation() {
        let i = base(0.1, 0.1, 10);
        assert!(select_k_epsilon(&i, 0).is_err());
        assert!(select_k_gof(&i, 11).is_err());
    }

    #[test]
    fn objective_is_max_of_terms() {
        let i = base(0.03, 0.2, 300);
        for r in [
            select_k_epsilon(&i, 300).unwrap(),
            select_k_sigma(&i, 300).unwrap(),
            select_k_star(&i, 300).unwrap(),
            select_k_sd(&i, 300).unwrap(),
            select_k_gof(&i, 300).unwrap(),
        ] {
            let m = r.term_values.iter().map(|t| t.1).fold(f64::MIN, f64::max);
            assert_eq!(m, r.objective);
        }
    }

    #[test]
    fn overflowing_exponential_sequences_stay_finite_in_k() {
        let (alpha, gamma) = RegimeKind::SevereAnalytic.families(1.0, 2.0).unwrap();
        let i = ProblemInstance::builder(400).alpha(alpha).gamma(gamma).noise(0.01, 0.01).build();
        // α underflows before 400 at rate 2
        assert!(i.is_err());
        let (alpha, gamma) = RegimeKind::SevereAnalytic.families(1.0, 1.0).unwrap();
        let i: ProblemInstance<f64> = ProblemInstance::builder(300).alpha(alpha).gamma(gamma).noise(0.01, 0.01).build().unwrap();
        for r in [select_k_epsilon(&i, 300).unwrap(), select_k_gof(&i, 300).unwrap()] {
            assert!(r.k < 20 && r.objective.is_finite());
        }
    }

    #[test]
    fn kappa_selectors() {
        let i = base(0.1, 0.3, 100);
        let h = select_kappa_hypercube(&i, 100).unwrap();
        assert_eq!(h.term_values.len(), 2);
        let t = select_kappa_eps_two_point(&i, 100).unwrap();
        // flat ε² term against j⁻⁴: any k ≥ 4 ties up to rounding
        assert!(t.k >= 4);
        assert!((t.objective - 0.01).abs() < 1e-15);
        let s = select_kappa_sigma_two_point(&i, 100).unwrap();
        assert!(s.objective > 0.0);
    }

    #[test]
    fn balance_certificate() {
        let c = BalanceCertificate::new(3, 2.0_f64, 0.5);
        assert_eq!(c.ratio, 4.0);
        assert_eq!(c.nu, 4.0);
        let c = BalanceCertificate::new(3, 0.5_f64, 2.0);
        assert_eq!(c.nu, 4.0);
        assert!(BalanceCertificate::new(1, 0.0_f64, 1.0).nu.is_infinite());
        let i = base(0.1, 0.0, 50);
        let k = select_kappa_hypercube(&i, 50).unwrap().k;
        let c = hypercube_balance(&i, k).unwrap();
        assert!(c.nu >= 1.0 && c.nu < 10.0);
    }

    #[test]
    fn table_rates() {
        let r = predicted_rate(RegimeKind::MildSobolev, 1.0, 1.0, 0.1, 1e-9).unwrap();
        assert!((r - 0.1_f64.powf(16.0 / 9.0)).abs() < 1e-15);
        assert!((r - 1.668e-2).abs() < 5e-6);
        for (p, a) in [(0.5, 1.0), (3.0, 2.0)] {
            let r: f64 = predicted_rate(RegimeKind::MildAnalytic, p, a, 0.2, 0.3).unwrap();
            assert!((r - 0.09).abs() < 1e-15);
        }
        let e = (-10.0_f64).exp();
        let r = predicted_rate(RegimeKind::SevereSobolev, 1.0, 1.0, e, e).unwrap();
        assert!((r - 1e-4).abs() < 1e-15);
        let r: f64 = predicted_rate(RegimeKind::SevereAnalytic, 1.0, 1.0, 0.1, 0.0).unwrap();
        assert!((r - 0.01).abs() < 1e-15);
        assert!(predicted_rate(RegimeKind::MildSobolev, 0.0, 1.0, 0.1, 0.1).is_err());
        assert!(predicted_rate(RegimeKind::MildSobolev, 1.0, -1.0, 0.1, 0.1).is_err());
    }

    #[test]
    fn zones() {
        let z = |p: f64, a: f64| rate_prediction(RegimeKind::MildSobolev, p, a).unwrap().zone.unwrap();
        assert_eq!(z(1.0, 1.0), Zone::Mixed);
        assert_eq!(z(1.25, 1.0), Zone::Parametric);
        assert_eq!(z(2.0, 1.0), Zone::Parametric);
        assert_eq!(z(0.5, 1.0), Zone::Mixed);
        assert_eq!(z(0.4, 1.0), Zone::Nonparametric);
        assert!(rate_prediction(RegimeKind::MildAnalytic, 1.0, 1.0).unwrap().zone.is_none());
    }

    #[test]
    fn regime_detection_round_trip() {
        for r in RegimeKind::ALL {
            let (alpha, gamma) = r.families(1.5, 0.5).unwrap();
            assert_eq!(RegimeKind::detect(&alpha, &gamma), Some((r, 1.5, 0.5)));
            assert_eq!(r.as_str().parse::<RegimeKind>().unwrap(), r);
        }
        assert!("mild".parse::<RegimeKind>().is_err());
        let c = SequenceFamily::<f64>::constant(Role::Alpha);
        assert_eq!(RegimeKind::detect(&c, &c), None);
    }

    #[test]
    fn sweep_rows() {
        let i = base(0.1, 0.01, 100);
        let rows = sweep(&i, &[(0.1, 0.01), (0.01, 0.01)], 100).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[1].k_eps >= rows[0].k_eps);
        assert_eq!(rows[0].csv_record().len(), SweepRow::<f64>::CSV_HEADER.len());
        assert!(rows[0].predicted_rate > 0.0);
    }
}
