//! Lower-bound certificates: the hypercube prior in `ε`, the two-point
//! hypotheses in `ε`, `σ` and for goodness of fit, their Gaussian
//! divergences, and the resulting minimax bounds.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::{compensated_sum, Scalar};
use crate::selection::{
    hypercube_balance, select_k_gof, select_kappa_eps_two_point, select_kappa_hypercube, select_kappa_sigma_two_point,
    BalanceCertificate,
};
use crate::sequence_model::{check_membership_tol, ProblemInstance};

/// Relative slack when checking class membership of boundary constructions.
fn membership_tol<T: Scalar>() -> T {
    T::epsilon() * T::lit(64.0)
}

/// `χ²(P_μ, P_0) = Π_{j≤κ} cosh(λ_j²β_j²/ε²) − 1` for the uniform prior on the
/// sign hypercube with magnitudes `β`. Evaluated as `expm1(Σ ln cosh)`, so the
/// result is `+∞` once it exceeds the floating range.
pub fn chi2_mixture_vs_null<T: Scalar>(lambda: &[T], beta: &[T], eps: T, kappa: usize) -> Result<T> {
    if eps.is_nan() || eps <= T::zero() {
        return Err(Error::param("eps", "must be positive for the chi-square divergence"));
    }
    for (name, v) in [("lambda", lambda), ("beta", beta)] {
        if v.len() < kappa {
            return Err(Error::LengthMismatch {
                name,
                got: v.len(),
                expected: kappa,
            });
        }
    }
    let ln2 = T::lit(std::f64::consts::LN_2);
    let log_prod = compensated_sum((0..kappa).map(|j| {
        let x = (lambda[j] * beta[j] / eps).powi(2);
        // ln cosh x = x + ln(1 + e^{-2x}) − ln 2 for x ≥ 0
        x + (-(x + x)).exp().ln_1p() - ln2
    }));
    Ok(log_prod.exp_m1())
}

/// `Σ_j (m1_j − m2_j)² / (2 v_j)` for product Gaussians with common variances.
pub fn kl_gaussian_products<T: Scalar>(mean1: &[T], mean2: &[T], var_per_coord: &[T]) -> Result<T> {
    if mean2.len() != mean1.len() {
        return Err(Error::LengthMismatch {
            name: "mean2",
            got: mean2.len(),
            expected: mean1.len(),
        });
    }
    if var_per_coord.len() != mean1.len() {
        return Err(Error::LengthMismatch {
            name: "var_per_coord",
            got: var_per_coord.len(),
            expected: mean1.len(),
        });
    }
    if let Some(index) = var_per_coord.iter().position(|v| v.is_nan() || *v <= T::zero()) {
        return Err(Error::NonPositiveVariance { index });
    }
    Ok(compensated_sum(
        (0..mean1.len()).map(|j| (mean1[j] - mean2[j]).powi(2) / (T::lit(2.0) * var_per_coord[j])),
    ))
}

/// KL between the laws of `(X, Y)` for two parameter pairs. A noiseless block
/// contributes 0 when its means agree and `+∞` otherwise.
fn kl_observations<T: Scalar>(
    inst: &ProblemInstance<T>,
    theta: (&[T], &[T]),
    lambda: (&[T], &[T]),
) -> Result<T> {
    let x1: Vec<T> = theta.0.iter().zip(lambda.0).map(|(t, l)| *t * *l).collect();
    let x2: Vec<T> = theta.1.iter().zip(lambda.1).map(|(t, l)| *t * *l).collect();
    let block = |m1: &[T], m2: &[T], sd: T| -> Result<T> {
        if sd.is_zero() {
            Ok(if m1 == m2 { T::zero() } else { T::infinity() })
        } else {
            kl_gaussian_products(m1, m2, &vec![sd * sd; m1.len()])
        }
    };
    Ok(block(&x1, &x2, inst.eps())? + block(lambda.0, lambda.1, inst.sigma())?)
}

/// Uniform prior on `{θ^τ : τ ∈ {±1}^κ}`, `θ^τ_i = τ_i β_i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypercubePrior<T> {
    pub kappa: usize,
    /// `β_1..β_κ`.
    pub magnitude_per_coord: Vec<T>,
    /// Half the common functional value of every vertex.
    pub psi: T,
    /// `χ²(P_μ, P_0)` with `λ = α`.
    pub chi2: T,
    pub scale: T,
    /// `Σ γ_j² β_j²`.
    pub ellipsoid_sum: T,
    #[serde(skip)]
    n_max: usize,
}

impl<T: Scalar> HypercubePrior<T> {
    /// Vertex for the sign pattern `signs` (`true` is `+1`, missing entries `+1`),
    /// zero-padded to `n_max`.
    pub fn vertex(&self, signs: &[bool]) -> Vec<T> {
        let mut v = vec![T::zero(); self.n_max];
        for (i, b) in self.magnitude_per_coord.iter().enumerate() {
            v[i] = if signs.get(i).copied().unwrap_or(true) { *b } else { -*b };
        }
        v
    }

    /// `ψ² · e^{−χ²} / 4`.
    pub fn risk_lower_bound(&self) -> T {
        self.psi * self.psi * lower_bound_value(LowerBound::Hypercube { beta: self.chi2 })
    }
}

/// Magnitudes `β_i = scale · ε · ω_i α_i⁻² / (Σ_{j≤κ} ω_j⁴ α_j⁻⁴)^{1/4}`.
pub fn build_hypercube_prior<T: Scalar>(inst: &ProblemInstance<T>, kappa: usize, scale: T) -> Result<HypercubePrior<T>> {
    inst.check_k(kappa)?;
    if !(scale > T::zero() && scale.is_finite()) {
        return Err(Error::param("scale", "must be positive and finite"));
    }
    let (alpha, gamma, omega) = (inst.alpha_values(), inst.gamma_values(), inst.omega_values());
    let s = compensated_sum((0..kappa).map(|i| (omega[i] / (alpha[i] * alpha[i])).powi(4)));
    let c = scale * inst.eps() / s.sqrt().sqrt();
    let beta: Vec<T> = (0..kappa).map(|i| c * omega[i] / (alpha[i] * alpha[i])).collect();
    let ellipsoid = compensated_sum((0..kappa).map(|i| (gamma[i] * beta[i]).powi(2)));
    let l2 = inst.radius() * inst.radius();
    if ellipsoid > l2 * (T::one() + membership_tol()) {
        return Err(Error::Membership(format!(
            "hypercube vertices leave the ellipsoid: Σ γ²β² = {ellipsoid} > L² = {l2}; reduce the scale"
        )));
    }
    let q = compensated_sum((0..kappa).map(|i| (omega[i] * beta[i]).powi(2)));
    let chi2 = chi2_mixture_vs_null(alpha, &beta, inst.eps(), kappa)?;
    Ok(HypercubePrior {
        kappa,
        magnitude_per_coord: beta,
        psi: q / T::lit(2.0),
        chi2,
        scale,
        ellipsoid_sum: ellipsoid,
        n_max: inst.n_max(),
    })
}

/// Hypercube prior at the balancing `κ`, with `scale = L ν^{-1/4}` for the
/// realized balance ratio `ν`.
pub fn worst_case_prior<T: Scalar>(inst: &ProblemInstance<T>, k_max: usize) -> Result<(HypercubePrior<T>, BalanceCertificate<T>)> {
    let kappa = select_kappa_hypercube(inst, k_max)?.k;
    let cert = hypercube_balance(inst, kappa)?;
    let scale = inst.radius() * cert.nu.powf(T::lit(-0.25));
    Ok((build_hypercube_prior(inst, kappa, scale)?, cert))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    /// Single coordinate at `κ`, rate `ε² ω_κ⁴/(α_κ²γ_κ²)`.
    EpsA,
    /// First coordinate, parametric rate `ε²`.
    EpsB,
    /// Perturbed eigenvalue at `κ`, rate `ω_κ⁴/γ_κ⁴`.
    SigmaA,
    /// Perturbed first eigenvalue, parametric rate `σ²`.
    SigmaB,
    /// Goodness-of-fit null against a shrunken reference coordinate.
    Gof,
}

impl Construction {
    pub const ALL: [Construction; 5] = [
        Construction::EpsA,
        Construction::EpsB,
        Construction::SigmaA,
        Construction::SigmaB,
        Construction::Gof,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Construction::EpsA => "eps_a",
            Construction::EpsB => "eps_b",
            Construction::SigmaA => "sigma_a",
            Construction::SigmaB => "sigma_b",
            Construction::Gof => "gof",
        }
    }
}

impl fmt::Display for Construction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Construction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Construction::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::param("construction", format!("unknown construction `{s}`")))
    }
}

/// Two hypotheses `(θ^±, λ^±)`. For [`Construction::Gof`] the minus side is
/// the null `(θ°, λ°)` and `q` measures `Σ (θ_j − θ°_j)²`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisPair<T> {
    pub construction: Construction,
    pub kappa: usize,
    /// `ζ`, or `c̃` for goodness of fit.
    pub zeta: T,
    /// Balance ratio used for `ζ`; 1 where the construction needs none.
    pub nu: T,
    pub theta_plus: Vec<T>,
    pub theta_minus: Vec<T>,
    pub lambda_plus: Vec<T>,
    pub lambda_minus: Vec<T>,
    pub q_plus: T,
    pub q_minus: T,
    /// `KL(P_+, P_-)` of the `(X, Y)` laws.
    pub kl: T,
}

impl<T: Scalar> HypothesisPair<T> {
    pub fn gap(&self) -> T {
        self.q_plus - self.q_minus
    }

    /// `gap²/16` for estimation, `1 − (KL/2)^{1/2}` for testing.
    pub fn bound(&self) -> T {
        match self.construction {
            Construction::Gof => lower_bound_value(LowerBound::TestingKl { kl: self.kl }),
            _ => lower_bound_value(LowerBound::TwoPoint { gap: self.gap() }),
        }
    }
}

fn coordinate_vec<T: Scalar>(base: &[T], idx: usize, value: T) -> Vec<T> {
    let mut v = base.to_vec();
    v[idx] = value;
    v
}

fn ensure_member<T: Scalar>(inst: &ProblemInstance<T>, theta: &[T], lambda: &[T], what: &str) -> Result<()> {
    let candidate = inst.with_theta(theta.to_vec())?.with_lambda(lambda.to_vec())?;
    let m = check_membership_tol(&candidate, membership_tol());
    if !(m.theta_in_class && m.theta_ref_in_class && m.lambda_in_class) {
        return Err(Error::Membership(format!(
            "{what} hypothesis outside the classes (θ: {}, θ°: {}, λ: {}); check L, d and the reference",
            m.theta_in_class, m.theta_ref_in_class, m.lambda_in_class
        )));
    }
    Ok(())
}

/// Build the two hypotheses of `construction`. `κ` is chosen over `1..=n_max`.
pub fn build_two_point<T: Scalar>(inst: &ProblemInstance<T>, construction: Construction) -> Result<HypothesisPair<T>> {
    let n = inst.n_max();
    let (alpha, gamma) = (inst.alpha_values(), inst.gamma_values());
    let one = T::one();
    let two = T::lit(2.0);
    let (l, d) = (inst.radius(), inst.d());
    let zeros = vec![T::zero(); n];
    let inv_d_gap = one - d.recip();

    let (kappa, zeta, nu, theta_plus, theta_minus, lambda_plus, lambda_minus);
    let mut base = inst.with_theta_ref(Vec::new())?;
    match construction {
        Construction::EpsA => {
            kappa = select_kappa_eps_two_point(inst, n)?.k;
            let i = kappa - 1;
            let g2 = gamma[i].powi(-2);
            let cert = BalanceCertificate::new(kappa, crate::scalar::scaled(inst.eps() * inst.eps(), alpha[i].powi(-2) * g2), g2 * g2);
            nu = cert.nu;
            zeta = T::lit(0.5).min(two.sqrt() / (l * d * nu.sqrt()));
            let c = l / two / gamma[i];
            theta_plus = coordinate_vec(&zeros, i, c * (one + zeta));
            theta_minus = coordinate_vec(&zeros, i, c * (one - zeta));
            lambda_plus = alpha.to_vec();
            lambda_minus = alpha.to_vec();
        }
        Construction::EpsB => {
            kappa = 1;
            nu = one;
            zeta = (l / two).min((two.sqrt() * d).recip());
            theta_plus = coordinate_vec(&zeros, 0, (one + inst.eps()) * zeta);
            theta_minus = coordinate_vec(&zeros, 0, (one - inst.eps()) * zeta);
            lambda_plus = alpha.to_vec();
            lambda_minus = alpha.to_vec();
        }
        Construction::SigmaA => {
            kappa = select_kappa_sigma_two_point(inst, n)?.k;
            let i = kappa - 1;
            let cert = BalanceCertificate::new(kappa, crate::scalar::scaled(inst.sigma() * inst.sigma(), alpha[i].powi(-2)), one);
            nu = cert.nu;
            zeta = (two * nu).sqrt().recip().min(inv_d_gap);
            let c = l / d / gamma[i];
            theta_plus = coordinate_vec(&zeros, i, c * (one + zeta));
            theta_minus = coordinate_vec(&zeros, i, c * (one - zeta));
            lambda_plus = coordinate_vec(alpha, i, (one - zeta) * alpha[i]);
            lambda_minus = coordinate_vec(alpha, i, (one + zeta) * alpha[i]);
        }
        Construction::SigmaB => {
            kappa = 1;
            nu = one;
            zeta = two.sqrt().recip().min(inv_d_gap);
            let s = inst.sigma() * zeta;
            theta_plus = coordinate_vec(&zeros, 0, (one + s) * l / two);
            theta_minus = coordinate_vec(&zeros, 0, (one - s) * l / two);
            lambda_plus = coordinate_vec(alpha, 0, one - s);
            lambda_minus = coordinate_vec(alpha, 0, one + s);
        }
        Construction::Gof => {
            let k_gof = select_k_gof(inst, n)?.k;
            // first maximizer of α⁻²γ⁻² over 1..=kgof
            let mut i = 0;
            for j in 1..k_gof {
                if alpha[j] * gamma[j] < alpha[i] * gamma[i] {
                    i = j;
                }
            }
            kappa = i + 1;
            let r = inst.theta_ref();
            if r[i].is_zero() {
                return Err(Error::ZeroReferenceCoordinate { j: kappa });
            }
            let s = inst.sigma() / (alpha[i] * gamma[i]);
            nu = one;
            zeta = if s.is_zero() {
                two.sqrt().recip()
            } else {
                two.sqrt().recip().min(inv_d_gap / s)
            };
            let cs = zeta * s;
            theta_minus = r.to_vec();
            theta_plus = coordinate_vec(r, i, r[i] * (one - cs) / (one + cs));
            lambda_minus = coordinate_vec(alpha, i, (one - cs) * alpha[i]);
            lambda_plus = coordinate_vec(alpha, i, (one + cs) * alpha[i]);
            base = inst.clone();
        }
    }

    ensure_member(&base, &theta_plus, &lambda_plus, "plus")?;
    ensure_member(&base, &theta_minus, &lambda_minus, "minus")?;

    let (q_plus, q_minus) = match construction {
        Construction::Gof => {
            let r = inst.theta_ref();
            let sep = |t: &[T]| compensated_sum(t.iter().zip(r).map(|(a, b)| (*a - *b).powi(2)));
            (sep(&theta_plus), sep(&theta_minus))
        }
        _ => (
            base.with_theta(theta_plus.clone())?.q_value(),
            base.with_theta(theta_minus.clone())?.q_value(),
        ),
    };
    let kl = kl_observations(inst, (&theta_plus, &theta_minus), (&lambda_plus, &lambda_minus))?;
    Ok(HypothesisPair {
        construction,
        kappa,
        zeta,
        nu,
        theta_plus,
        theta_minus,
        lambda_plus,
        lambda_minus,
        q_plus,
        q_minus,
        kl,
    })
}

/// Inputs of the closed-form reductions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LowerBound<T> {
    /// `χ² ≤ β` for a prior with constant functional: `e^{−β}/4`.
    Hypercube { beta: T },
    /// Functional gap between two hypotheses with `KL ≤ 1`: `gap²/16`.
    TwoPoint { gap: T },
    /// `1 − (χ²)^{1/2}`.
    TestingChi2 { chi2: T },
    /// `1 − (KL/2)^{1/2}`.
    TestingKl { kl: T },
}

/// Value of the reduction bound. Testing bounds are returned as computed and
/// can be negative when the divergence is large.
pub fn lower_bound_value<T: Scalar>(bound: LowerBound<T>) -> T {
    match bound {
        LowerBound::Hypercube { beta } => (-beta).exp() / T::lit(4.0),
        LowerBound::TwoPoint { gap } => gap * gap / T::lit(16.0),
        LowerBound::TestingChi2 { chi2 } => T::one() - chi2.sqrt(),
        LowerBound::TestingKl { kl } => T::one() - (kl / T::lit(2.0)).sqrt(),
    }
}
