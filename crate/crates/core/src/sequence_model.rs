//! Observation model `X_j = λ_j θ_j + ε ξ_j`, `Y_j = λ_j + σ η_j`, the smoothness
//! classes the parameters live in, and the cloned eigenvalue samples.
//!
//! Every sequence is truncated at a horizon `n_max`; coordinates beyond it are
//! treated as zero.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::{compensated_sum, Scalar};

/// Shape of a weight sequence. Values are normalized so the first entry is 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Regime<T> {
    /// `j^{∓e}`: decaying for `alpha`, growing for `gamma`, `j^e` for `omega`.
    Polynomial(T),
    /// `e^{∓r(j-1)}`, signs as for [`Regime::Polynomial`].
    Exponential(T),
    ConstantOne,
    /// Tabulated values; indices past the end repeat the last entry.
    Explicit(Vec<T>),
}

/// Which sequence of the model a family describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Role {
    /// Eigenvalue decay, non-increasing.
    Alpha,
    /// Ellipsoid weights, non-decreasing.
    Gamma,
    /// Functional weights.
    Omega,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceFamily<T> {
    regime: Regime<T>,
    role: Role,
}

impl<T: Scalar> SequenceFamily<T> {
    pub fn new(regime: Regime<T>, role: Role) -> Result<Self> {
        let name = match role {
            Role::Alpha => "alpha",
            Role::Gamma => "gamma",
            Role::Omega => "omega",
        };
        match &regime {
            Regime::Polynomial(e) | Regime::Exponential(e) => {
                if !e.is_finite() {
                    return Err(Error::param(name, "exponent must be finite"));
                }
                if role != Role::Omega && *e < T::zero() {
                    return Err(Error::param(name, "exponent must be nonnegative"));
                }
            }
            Regime::ConstantOne => {}
            Regime::Explicit(v) => {
                if v.is_empty() {
                    return Err(Error::param(name, "explicit values must be nonempty"));
                }
                if v.iter().any(|x| !x.is_finite() || *x <= T::zero()) {
                    return Err(Error::param(name, "explicit values must be finite and positive"));
                }
                if v[0] != T::one() {
                    return Err(Error::param(name, "first explicit value must equal 1"));
                }
                let monotone = match role {
                    Role::Alpha => v.windows(2).all(|w| w[1] <= w[0]),
                    Role::Gamma => v.windows(2).all(|w| w[1] >= w[0]),
                    Role::Omega => true,
                };
                if !monotone {
                    let dir = if role == Role::Alpha { "non-increasing" } else { "non-decreasing" };
                    return Err(Error::param(name, format!("explicit values must be {dir}")));
                }
            }
        }
        Ok(Self { regime, role })
    }

    pub fn alpha(regime: Regime<T>) -> Result<Self> {
        Self::new(regime, Role::Alpha)
    }

    pub fn gamma(regime: Regime<T>) -> Result<Self> {
        Self::new(regime, Role::Gamma)
    }

    pub fn omega(regime: Regime<T>) -> Result<Self> {
        Self::new(regime, Role::Omega)
    }

    pub fn constant(role: Role) -> Self {
        Self {
            regime: Regime::ConstantOne,
            role,
        }
    }

    pub fn regime(&self) -> &Regime<T> {
        &self.regime
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// Value at index `j` (1-based).
    pub fn eval(&self, j: usize) -> T {
        assert!(j >= 1, "sequence indices start at 1");
        let sign = if self.role == Role::Alpha { -T::one() } else { T::one() };
        match &self.regime {
            Regime::Polynomial(e) => T::from_index(j).powf(sign * *e),
            Regime::Exponential(r) => (sign * *r * T::from_index(j - 1)).exp(),
            Regime::ConstantOne => T::one(),
            Regime::Explicit(v) => v[j.min(v.len()) - 1],
        }
    }

    /// Values at indices `1..=n`.
    pub fn values(&self, n: usize) -> Vec<T> {
        (1..=n).map(|j| self.eval(j)).collect()
    }
}

/// Evaluate `family` at index `j ≥ 1`.
pub fn eval_family<T: Scalar>(family: &SequenceFamily<T>, j: usize) -> T {
    family.eval(j)
}

/// Full configuration of the model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemInstance<T> {
    theta: Vec<T>,
    theta_ref: Vec<T>,
    lambda: Vec<T>,
    eps: T,
    sigma: T,
    radius: T,
    d: T,
    n_max: usize,
    alpha: SequenceFamily<T>,
    gamma: SequenceFamily<T>,
    omega: SequenceFamily<T>,
    #[serde(skip)]
    alpha_vals: Vec<T>,
    #[serde(skip)]
    gamma_vals: Vec<T>,
    #[serde(skip)]
    omega_vals: Vec<T>,
}

/// Builder for [`ProblemInstance`]; unset fields take the documented defaults.
#[derive(Debug, Clone)]
pub struct InstanceBuilder<T> {
    n_max: usize,
    alpha: SequenceFamily<T>,
    gamma: SequenceFamily<T>,
    omega: SequenceFamily<T>,
    eps: T,
    sigma: T,
    radius: T,
    d: T,
    theta: Vec<T>,
    theta_ref: Vec<T>,
    lambda: Option<Vec<T>>,
    lambda_factor: T,
    lambda_signs: Vec<i8>,
}

impl<T: Scalar> InstanceBuilder<T> {
    /// Defaults: `α_j = j^{-1}`, `γ_j = j`, `ω ≡ 1`, `ε = 0.1`, `σ = 0.01`,
    /// `L = d = 1`, `θ = θ° = 0`, `λ = α`.
    pub fn new(n_max: usize) -> Self {
        Self {
            n_max,
            alpha: SequenceFamily {
                regime: Regime::Polynomial(T::one()),
                role: Role::Alpha,
            },
            gamma: SequenceFamily {
                regime: Regime::Polynomial(T::one()),
                role: Role::Gamma,
            },
            omega: SequenceFamily::constant(Role::Omega),
            eps: T::lit(0.1),
            sigma: T::lit(0.01),
            radius: T::one(),
            d: T::one(),
            theta: Vec::new(),
            theta_ref: Vec::new(),
            lambda: None,
            lambda_factor: T::one(),
            lambda_signs: Vec::new(),
        }
    }

    pub fn alpha(mut self, f: SequenceFamily<T>) -> Self {
        self.alpha = f;
        self
    }

    pub fn gamma(mut self, f: SequenceFamily<T>) -> Self {
        self.gamma = f;
        self
    }

    pub fn omega(mut self, f: SequenceFamily<T>) -> Self {
        self.omega = f;
        self
    }

    pub fn noise(mut self, eps: T, sigma: T) -> Self {
        self.eps = eps;
        self.sigma = sigma;
        self
    }

    pub fn radius(mut self, radius: T) -> Self {
        self.radius = radius;
        self
    }

    pub fn d(mut self, d: T) -> Self {
        self.d = d;
        self
    }

    /// Shorter vectors are zero-padded to `n_max`.
    pub fn theta(mut self, theta: Vec<T>) -> Self {
        self.theta = theta;
        self
    }

    pub fn theta_ref(mut self, theta_ref: Vec<T>) -> Self {
        self.theta_ref = theta_ref;
        self
    }

    /// Explicit eigenvalues (length exactly `n_max`); overrides factor and signs.
    pub fn lambda(mut self, lambda: Vec<T>) -> Self {
        self.lambda = Some(lambda);
        self
    }

    /// `λ_j = factor · sign_j · α_j`.
    pub fn lambda_factor(mut self, factor: T) -> Self {
        self.lambda_factor = factor;
        self
    }

    /// Sign mask for `λ`; missing entries are `+1`.
    pub fn lambda_signs(mut self, signs: Vec<i8>) -> Self {
        self.lambda_signs = signs;
        self
    }

    pub fn build(self) -> Result<ProblemInstance<T>> {
        let n = self.n_max;
        if n == 0 {
            return Err(Error::param("n_max", "must be positive"));
        }
        let alpha_vals = self.alpha.values(n);
        let lambda = match self.lambda {
            Some(l) => {
                if l.len() != n {
                    return Err(Error::LengthMismatch {
                        name: "lambda",
                        got: l.len(),
                        expected: n,
                    });
                }
                l
            }
            None => {
                if self.lambda_signs.iter().any(|s| *s != 1 && *s != -1) {
                    return Err(Error::param("lambda_sign", "entries must be +1 or -1"));
                }
                if self.lambda_signs.len() > n {
                    return Err(Error::LengthMismatch {
                        name: "lambda_sign",
                        got: self.lambda_signs.len(),
                        expected: n,
                    });
                }
                alpha_vals
                    .iter()
                    .enumerate()
                    .map(|(i, a)| {
                        let s = self.lambda_signs.get(i).copied().unwrap_or(1);
                        let a = *a * self.lambda_factor;
                        if s < 0 {
                            -a
                        } else {
                            a
                        }
                    })
                    .collect()
            }
        };
        let theta = pad("theta", self.theta, n)?;
        let theta_ref = pad("theta_ref", self.theta_ref, n)?;
        ProblemInstance::from_parts(
            theta,
            theta_ref,
            lambda,
            self.eps,
            self.sigma,
            self.radius,
            self.d,
            n,
            self.alpha,
            self.gamma,
            self.omega,
        )
    }
}

fn pad<T: Scalar>(name: &'static str, mut v: Vec<T>, n: usize) -> Result<Vec<T>> {
    if v.len() > n {
        return Err(Error::LengthMismatch {
            name,
            got: v.len(),
            expected: n,
        });
    }
    v.resize(n, T::zero());
    Ok(v)
}

impl<T: Scalar> ProblemInstance<T> {
    pub fn builder(n_max: usize) -> InstanceBuilder<T> {
        InstanceBuilder::new(n_max)
    }

    #[allow(clippy::too_many_arguments)]
    fn from_parts(
        theta: Vec<T>,
        theta_ref: Vec<T>,
        lambda: Vec<T>,
        eps: T,
        sigma: T,
        radius: T,
        d: T,
        n_max: usize,
        alpha: SequenceFamily<T>,
        gamma: SequenceFamily<T>,
        omega: SequenceFamily<T>,
    ) -> Result<Self> {
        if !(eps >= T::zero() && eps <= T::one()) {
            return Err(Error::param("eps", "must lie in [0, 1]"));
        }
        if !(sigma >= T::zero() && sigma <= T::one()) {
            return Err(Error::param("sigma", "must lie in [0, 1]"));
        }
        if !(radius > T::zero() && radius.is_finite()) {
            return Err(Error::param("L", "must be positive and finite"));
        }
        if !(d >= T::one() && d.is_finite()) {
            return Err(Error::param("d", "must be ≥ 1"));
        }
        for (name, v) in [("theta", &theta), ("theta_ref", &theta_ref), ("lambda", &lambda)] {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::param(name, "entries must be finite"));
            }
        }
        let roles = [(&alpha, Role::Alpha), (&gamma, Role::Gamma), (&omega, Role::Omega)];
        for (f, role) in roles {
            if f.role != role {
                return Err(Error::param("families", format!("expected a {role:?} family")));
            }
        }
        let alpha_vals = alpha.values(n_max);
        let gamma_vals = gamma.values(n_max);
        let omega_vals = omega.values(n_max);
        // ω/γ must be non-increasing; allow a few ulps of slack for transcendental evaluation.
        let slack = T::one() + T::epsilon() * T::lit(16.0);
        for j in 1..n_max {
            let prev = omega_vals[j - 1] / gamma_vals[j - 1];
            let cur = omega_vals[j] / gamma_vals[j];
            if cur > prev * slack {
                return Err(Error::param(
                    "omega",
                    format!("omega/gamma must be non-increasing (fails at j = {})", j + 1),
                ));
            }
        }
        if alpha_vals.iter().chain(&gamma_vals).chain(&omega_vals).any(|x| !(x.is_finite() && *x > T::zero())) {
            return Err(Error::param(
                "families",
                "sequence values must be finite and positive up to n_max",
            ));
        }
        Ok(Self {
            theta,
            theta_ref,
            lambda,
            eps,
            sigma,
            radius,
            d,
            n_max,
            alpha,
            gamma,
            omega,
            alpha_vals,
            gamma_vals,
            omega_vals,
        })
    }

    fn rebuild(self) -> Result<Self> {
        Self::from_parts(
            self.theta,
            self.theta_ref,
            self.lambda,
            self.eps,
            self.sigma,
            self.radius,
            self.d,
            self.n_max,
            self.alpha,
            self.gamma,
            self.omega,
        )
    }

    /// Same instance at different noise levels.
    pub fn with_noise(&self, eps: T, sigma: T) -> Result<Self> {
        let mut next = self.clone();
        next.eps = eps;
        next.sigma = sigma;
        next.rebuild()
    }

    /// Same instance with a new signal (zero-padded to `n_max`).
    pub fn with_theta(&self, theta: Vec<T>) -> Result<Self> {
        let mut next = self.clone();
        next.theta = pad("theta", theta, self.n_max)?;
        next.rebuild()
    }

    pub fn with_theta_ref(&self, theta_ref: Vec<T>) -> Result<Self> {
        let mut next = self.clone();
        next.theta_ref = pad("theta_ref", theta_ref, self.n_max)?;
        next.rebuild()
    }

    pub fn with_lambda(&self, lambda: Vec<T>) -> Result<Self> {
        if lambda.len() != self.n_max {
            return Err(Error::LengthMismatch {
                name: "lambda",
                got: lambda.len(),
                expected: self.n_max,
            });
        }
        let mut next = self.clone();
        next.lambda = lambda;
        next.rebuild()
    }

    /// Replace the functional weights.
    pub fn with_omega(&self, omega: SequenceFamily<T>) -> Result<Self> {
        let mut next = self.clone();
        next.omega = omega;
        next.rebuild()
    }

    pub fn theta(&self) -> &[T] {
        &self.theta
    }
    pub fn theta_ref(&self) -> &[T] {
        &self.theta_ref
    }
    pub fn lambda(&self) -> &[T] {
        &self.lambda
    }
    pub fn eps(&self) -> T {
        self.eps
    }
    pub fn sigma(&self) -> T {
        self.sigma
    }
    /// Ellipsoid radius `L`.
    pub fn radius(&self) -> T {
        self.radius
    }
    /// Hyperrectangle constant `d`.
    pub fn d(&self) -> T {
        self.d
    }
    pub fn n_max(&self) -> usize {
        self.n_max
    }
    pub fn alpha(&self) -> &SequenceFamily<T> {
        &self.alpha
    }
    pub fn gamma(&self) -> &SequenceFamily<T> {
        &self.gamma
    }
    pub fn omega(&self) -> &SequenceFamily<T> {
        &self.omega
    }
    /// `α_1..α_{n_max}`.
    pub fn alpha_values(&self) -> &[T] {
        &self.alpha_vals
    }
    pub fn gamma_values(&self) -> &[T] {
        &self.gamma_vals
    }
    pub fn omega_values(&self) -> &[T] {
        &self.omega_vals
    }

    /// `Q(θ)` over the full horizon.
    pub fn q_value(&self) -> T {
        self.q_truncated(self.n_max)
    }

    /// `Σ_{j≤k} ω_j² (θ_j − θ°_j)²`.
    pub fn q_truncated(&self, k: usize) -> T {
        let k = k.min(self.n_max);
        compensated_sum((0..k).map(|i| {
            let diff = self.theta[i] - self.theta_ref[i];
            self.omega_vals[i] * self.omega_vals[i] * diff * diff
        }))
    }

    pub(crate) fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.n_max {
            Err(Error::TruncationOutOfRange {
                k,
                n_max: self.n_max,
            })
        } else {
            Ok(())
        }
    }
}

/// Outcome of [`check_membership`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Membership<T> {
    pub theta_in_class: bool,
    pub theta_ref_in_class: bool,
    pub lambda_in_class: bool,
    /// `Σ γ_j² θ_j²`.
    pub ellipsoid_sum: T,
    /// `Σ γ_j² (θ°_j)²`.
    pub ellipsoid_sum_ref: T,
}

impl<T> Membership<T> {
    /// `θ`, `θ°` and `λ` all inside their classes.
    pub fn in_class(&self) -> bool {
        self.theta_in_class && self.theta_ref_in_class && self.lambda_in_class
    }
}

/// `Σ_j γ_j² θ_j²` over the common length.
pub fn ellipsoid_sum<T: Scalar>(theta: &[T], gamma: &[T]) -> T {
    compensated_sum(theta.iter().zip(gamma).map(|(t, g)| *g * *g * *t * *t))
}

/// Whether `d⁻¹ α_j ≤ |λ_j| ≤ d α_j` for every index.
pub fn lambda_in_hyperrectangle<T: Scalar>(lambda: &[T], alpha: &[T], d: T) -> bool {
    lambda
        .iter()
        .zip(alpha)
        .all(|(l, a)| *a / d <= l.abs() && l.abs() <= d * *a)
}

pub fn check_membership<T: Scalar>(inst: &ProblemInstance<T>) -> Membership<T> {
    check_membership_tol(inst, T::zero())
}

/// [`check_membership`] with every bound relaxed by the factor `1 + rel_tol`.
pub fn check_membership_tol<T: Scalar>(inst: &ProblemInstance<T>, rel_tol: T) -> Membership<T> {
    let slack = T::one() + rel_tol;
    let l2 = inst.radius * inst.radius * slack;
    let ellipsoid = ellipsoid_sum(&inst.theta, &inst.gamma_vals);
    let ellipsoid_ref = ellipsoid_sum(&inst.theta_ref, &inst.gamma_vals);
    let lambda_in_class = inst
        .lambda
        .iter()
        .zip(&inst.alpha_vals)
        .all(|(l, a)| *a / inst.d <= l.abs() * slack && l.abs() <= inst.d * *a * slack);
    Membership {
        theta_in_class: ellipsoid <= l2,
        theta_ref_in_class: ellipsoid_ref <= l2,
        lambda_in_class,
        ellipsoid_sum: ellipsoid,
        ellipsoid_sum_ref: ellipsoid_ref,
    }
}

/// One realization of `X`, `Y` and the cloned pair `Y′`, `Y″`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservationSet<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub y_plus: Vec<T>,
    pub y_minus: Vec<T>,
    pub seed: u64,
}

/// Split `y` into `y ± σ η̃`.
///
/// Returns `(y_mid, y_plus, y_minus)` with `y_mid = (y_plus + y_minus) / 2`
/// evaluated in the scalar type, so the cloning identity holds exactly in
/// floating point; `y_mid` differs from `y` by at most a rounding error.
pub fn clone_pair<T: Scalar>(y: T, sigma: T, eta_tilde: T) -> (T, T, T) {
    let s = sigma * eta_tilde;
    let y_plus = y + s;
    let y_minus = y - s;
    let y_mid = (y_plus + y_minus) / T::lit(2.0);
    (y_mid, y_plus, y_minus)
}

/// Draws for a single coordinate; shared by [`sample_observations`] and the
/// per-coordinate Monte Carlo routines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateDraw<T> {
    pub x: T,
    pub y: T,
    pub y_plus: T,
    pub y_minus: T,
}

/// Sample coordinate values given `λ_j`, `θ_j`. Consumes `ξ`, `η`, `η̃` in that order.
pub fn sample_coordinate<T: Scalar, R: rand::Rng + ?Sized>(
    rng: &mut R,
    lambda: T,
    theta: T,
    eps: T,
    sigma: T,
) -> CoordinateDraw<T> {
    let xi = T::standard_normal(rng);
    let eta = T::standard_normal(rng);
    let eta_tilde = T::standard_normal(rng);
    let x = lambda * theta + eps * xi;
    let (y, y_plus, y_minus) = clone_pair(lambda + sigma * eta, sigma, eta_tilde);
    CoordinateDraw {
        x,
        y,
        y_plus,
        y_minus,
    }
}

/// Deterministic in `seed`: equal seeds give bit-identical observations.
pub fn sample_observations<T: Scalar>(inst: &ProblemInstance<T>, seed: u64) -> ObservationSet<T> {
    sample_prefix(inst, seed, inst.n_max)
}

/// The first `len` coordinates of [`sample_observations`] for the same seed.
///
/// # Panics
/// If `len > n_max`.
pub fn sample_prefix<T: Scalar>(inst: &ProblemInstance<T>, seed: u64, len: usize) -> ObservationSet<T> {
    assert!(len <= inst.n_max, "prefix longer than the horizon");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = len;
    let mut obs = ObservationSet {
        x: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        y_plus: Vec::with_capacity(n),
        y_minus: Vec::with_capacity(n),
        seed,
    };
    for j in 0..n {
        let c = sample_coordinate(&mut rng, inst.lambda[j], inst.theta[j], inst.eps, inst.sigma);
        obs.x.push(c.x);
        obs.y.push(c.y);
        obs.y_plus.push(c.y_plus);
        obs.y_minus.push(c.y_minus);
    }
    obs
}

impl<T: Scalar> ObservationSet<T> {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// CSV with header `j,x,y,y_plus,y_minus`; values use shortest round-trip formatting.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["j", "x", "y", "y_plus", "y_minus"])?;
        for j in 0..self.len() {
            w.write_record([
                (j + 1).to_string(),
                self.x[j].to_string(),
                self.y[j].to_string(),
                self.y_plus[j].to_string(),
                self.y_minus[j].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `Σ_{j≤horizon} ω_j² (θ_j − θ°_j)²`.
pub fn quad_functional<T: Scalar>(
    theta: &[T],
    theta_ref: &[T],
    omega: &SequenceFamily<T>,
    horizon: usize,
) -> Result<T> {
    for (name, v) in [("theta", theta), ("theta_ref", theta_ref)] {
        if v.len() < horizon {
            return Err(Error::LengthMismatch {
                name,
                got: v.len(),
                expected: horizon,
            });
        }
    }
    Ok(compensated_sum((0..horizon).map(|i| {
        let w = omega.eval(i + 1);
        let diff = theta[i] - theta_ref[i];
        w * w * diff * diff
    })))
}
