//! Replicated experiments: risk, test error rates, moment identities and
//! log–log rate slopes.
//!
//! Every replication draws its own seed from the master seed and its index,
//! results are gathered in index order and reduced sequentially, so reports
//! do not depend on the number of worker threads.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{components, estimate};
use crate::lower_bounds::worst_case_prior;
use crate::scalar::{compensated_sum, Scalar};
use crate::selection::{select_k_gof, select_k_sd, select_k_star, RegimeKind};
use crate::sequence_model::{check_membership, sample_prefix, ProblemInstance};
use crate::testing::{plan_test, TestKind, TestOptions, TestPlan};

/// Master seed and thread count for an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McSettings {
    pub master_seed: u64,
    pub workers: usize,
}

impl McSettings {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            ..Self::default()
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    /// Same worker count, master seed re-derived from `tag`.
    pub fn derive(&self, tag: u64) -> Self {
        Self {
            master_seed: derive_seed(self.master_seed, tag),
            workers: self.workers,
        }
    }
}

impl Default for McSettings {
    fn default() -> Self {
        Self {
            master_seed: 0,
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        }
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `index` under `master`.
pub fn replication_seed(master: u64, index: u64) -> u64 {
    master ^ splitmix64(index)
}

/// Independent master seed for a sub-experiment labelled `tag`.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    splitmix64(master ^ splitmix64(tag ^ 0xA5A5_A5A5_A5A5_A5A5))
}

/// Run `f(seed)` for `reps` replications and return the results in
/// replication order.
pub fn replicate<R, F>(settings: &McSettings, reps: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(u64) -> Result<R> + Sync + Send,
{
    if settings.workers == 0 {
        return Err(Error::param("workers", "must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.workers)
        .build()
        .map_err(|e| Error::param("workers", e.to_string()))?;
    let master = settings.master_seed;
    pool.install(|| {
        (0..reps as u64)
            .into_par_iter()
            .map(|i| f(replication_seed(master, i)))
            .collect()
    })
}

/// Mean, variance and standard error of one scalar statistic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport<T> {
    pub statistic_name: String,
    pub mean: T,
    /// Unbiased sample variance.
    pub variance: T,
    /// `√(variance / reps)`.
    pub std_error: T,
    pub reps: usize,
    pub master_seed: u64,
    pub metadata: BTreeMap<String, String>,
}

impl<T: Scalar> ExperimentReport<T> {
    pub const CSV_HEADER: [&'static str; 7] =
        ["statistic", "mean", "variance", "std_error", "reps", "master_seed", "metadata"];

    /// Two-pass compensated summary of `values`.
    ///
    /// # Errors
    /// Fewer than two values.
    pub fn from_values(name: impl Into<String>, values: &[T], master_seed: u64) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::param("reps", "at least two replications are needed"));
        }
        let nf = T::from_index(n);
        let mean = compensated_sum(values.iter().copied()) / nf;
        let variance = compensated_sum(values.iter().map(|&v| (v - mean) * (v - mean))) / T::from_index(n - 1);
        Ok(Self {
            statistic_name: name.into(),
            mean,
            variance,
            std_error: (variance / nf).sqrt(),
            reps: n,
            master_seed,
            metadata: BTreeMap::new(),
        })
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    /// `(mean − target) / std_error`; zero when both the error and the
    /// standard error vanish.
    pub fn z_score(&self, target: T) -> T {
        let d = self.mean - target;
        if d.is_zero() {
            T::zero()
        } else {
            d / self.std_error
        }
    }

    pub fn csv_record(&self) -> Vec<String> {
        let meta: Vec<String> = self.metadata.iter().map(|(k, v)| format!("{k}={v}")).collect();
        vec![
            self.statistic_name.clone(),
            self.mean.to_string(),
            self.variance.to_string(),
            self.std_error.to_string(),
            self.reps.to_string(),
            self.master_seed.to_string(),
            meta.join(";"),
        ]
    }
}

fn check_reps(reps: usize) -> Result<()> {
    if reps < 2 {
        Err(Error::param("reps", "must be at least 2"))
    } else {
        Ok(())
    }
}

/// Replicate a scalar statistic and summarize it.
pub fn run_statistic<T, F>(name: &str, reps: usize, settings: &McSettings, f: F) -> Result<ExperimentReport<T>>
where
    T: Scalar,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    check_reps(reps)?;
    let values = replicate(settings, reps, f)?;
    ExperimentReport::from_values(name, &values, settings.master_seed)
}

/// How the risk experiment chooses its truncation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KRule {
    Fixed(usize),
    KStar,
    KSd,
    KGof,
}

impl KRule {
    pub fn resolve<T: Scalar>(self, inst: &ProblemInstance<T>) -> Result<usize> {
        let n = inst.n_max();
        match self {
            KRule::Fixed(k) => {
                inst.check_k(k)?;
                Ok(k)
            }
            KRule::KStar => Ok(select_k_star(inst, n)?.k),
            KRule::KSd => Ok(select_k_sd(inst, n)?.k),
            KRule::KGof => Ok(select_k_gof(inst, n)?.k),
        }
    }

    fn label(self) -> String {
        match self {
            KRule::Fixed(k) => format!("fixed({k})"),
            KRule::KStar => "k_star".into(),
            KRule::KSd => "k_sd".into(),
            KRule::KGof => "k_gof".into(),
        }
    }
}

/// Empirical `E[(q̂_k − Q(θ))²]` with `Q` over the full horizon.
pub fn run_risk_experiment<T: Scalar>(
    inst: &ProblemInstance<T>,
    rule: KRule,
    reps: usize,
    settings: &McSettings,
) -> Result<ExperimentReport<T>> {
    let k = rule.resolve(inst)?;
    let q = inst.q_value();
    let report = run_statistic("squared_error", reps, settings, |seed| {
        let obs = sample_prefix(inst, seed, k);
        let e = estimate(inst, &obs, k)? - q;
        Ok(e * e)
    })?;
    Ok(report
        .with_meta("k", k)
        .with_meta("k_rule", rule.label())
        .with_meta("q", q)
        .with_meta("eps", inst.eps())
        .with_meta("sigma", inst.sigma()))
}

/// Unit direction on `j ≤ k` with coordinates proportional to `α_j⁻²`.
pub fn alternative_direction<T: Scalar>(inst: &ProblemInstance<T>, k: usize) -> Result<Vec<T>> {
    inst.check_k(k)?;
    let raw: Vec<T> = inst.alpha_values()[..k].iter().map(|a| a.powi(-2)).collect();
    let norm = compensated_sum(raw.iter().map(|r| *r * *r)).sqrt();
    if !(norm > T::zero() && norm.is_finite()) {
        return Err(Error::param("alpha", "α⁻² direction is not normalizable"));
    }
    let mut d = vec![T::zero(); inst.n_max()];
    for (slot, r) in d.iter_mut().zip(raw) {
        *slot = r / norm;
    }
    Ok(d)
}

/// Error rates of one test at one separation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerReport<T> {
    pub plan: TestPlan<T>,
    pub separation_multiple: T,
    /// `‖θ − θ°‖²` of the alternative.
    pub separation2: T,
    /// Whether the alternative lies in the ellipsoid and hyperrectangle.
    pub alternative_in_class: bool,
    pub type1: ExperimentReport<T>,
    pub type2: ExperimentReport<T>,
}

/// Type I error at `θ = θ°` and type II error at
/// `θ = θ° + m φ u` with `u` from [`alternative_direction`] at the test's `k`.
/// The instance's own `θ` is ignored. Null and alternative share seeds.
pub fn run_power_experiment<T: Scalar>(
    inst: &ProblemInstance<T>,
    kind: TestKind,
    delta: T,
    separation_multiple: T,
    reps: usize,
    settings: &McSettings,
    opts: &TestOptions<T>,
) -> Result<PowerReport<T>> {
    check_reps(reps)?;
    if !(separation_multiple >= T::zero() && separation_multiple.is_finite()) {
        return Err(Error::param("separation_multiple", "must be nonnegative and finite"));
    }
    let null = inst.with_theta(inst.theta_ref().to_vec())?;
    let plan = plan_test(kind, &null, delta, opts)?;
    let dist = separation_multiple * plan.rate_value.sqrt();
    let dir = alternative_direction(&null, plan.k)?;
    let theta: Vec<T> = null.theta_ref().iter().zip(&dir).map(|(r, u)| *r + dist * *u).collect();
    let alt = null.with_theta(theta)?;
    let in_class = check_membership(&alt).in_class();
    let k = plan.k;
    let pairs = replicate(settings, reps, |seed| {
        let n = plan.statistic(&null, &sample_prefix(&null, seed, k))?;
        let a = plan.statistic(&alt, &sample_prefix(&alt, seed, k))?;
        Ok((plan.decide(n), plan.decide(a)))
    })?;
    let indicator = |b: bool| if b { T::one() } else { T::zero() };
    let rejects: Vec<T> = pairs.iter().map(|p| indicator(p.0)).collect();
    let accepts: Vec<T> = pairs.iter().map(|p| indicator(!p.1)).collect();
    let meta = |r: ExperimentReport<T>| {
        r.with_meta("test", kind)
            .with_meta("k", k)
            .with_meta("delta", delta)
            .with_meta("threshold", plan.threshold)
            .with_meta("separation_multiple", separation_multiple)
    };
    Ok(PowerReport {
        plan,
        separation_multiple,
        separation2: dist * dist,
        alternative_in_class: in_class,
        type1: meta(ExperimentReport::from_values("type1", &rejects, settings.master_seed)?),
        type2: meta(ExperimentReport::from_values("type2", &accepts, settings.master_seed)?),
    })
}

/// Outcome of a separation search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration<T> {
    /// Smallest grid multiple reaching the target, if any.
    pub multiple: Option<T>,
    /// `(multiple, type II)` for every grid point visited.
    pub visited: Vec<(T, T)>,
}

/// `start · ratio^i`, `i < count`.
pub fn geometric_grid<T: Scalar>(start: T, ratio: T, count: usize) -> Vec<T> {
    (0..count).map(|i| start * ratio.powi(i as i32)).collect()
}

/// Walk `grid` upwards and stop at the first multiple whose empirical type II
/// error is at most `target`.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_separation<T: Scalar>(
    inst: &ProblemInstance<T>,
    kind: TestKind,
    delta: T,
    target: T,
    grid: &[T],
    reps: usize,
    settings: &McSettings,
    opts: &TestOptions<T>,
) -> Result<Calibration<T>> {
    let mut visited = Vec::new();
    for &m in grid {
        let r = run_power_experiment(inst, kind, delta, m, reps, settings, opts)?;
        visited.push((m, r.type2.mean));
        if r.type2.mean <= target {
            return Ok(Calibration {
                multiple: Some(m),
                visited,
            });
        }
    }
    Ok(Calibration {
        multiple: None,
        visited,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Equality,
    UpperBound,
}

/// One Monte Carlo moment paired with its closed form or bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentCheck<T> {
    pub name: String,
    pub report: ExperimentReport<T>,
    pub target: T,
    pub kind: TargetKind,
    pub z: T,
}

impl<T: Scalar> MomentCheck<T> {
    /// `|z| ≤ tol` for equalities, `z ≤ tol` for bounds.
    pub fn passes(&self, tol: T) -> bool {
        match self.kind {
            TargetKind::Equality => self.z.abs() <= tol,
            TargetKind::UpperBound => self.z <= tol,
        }
    }

    pub const CSV_HEADER: [&'static str; 8] =
        ["check", "kind", "mean", "std_error", "target", "z", "reps", "master_seed"];

    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.name.clone(),
            match self.kind {
                TargetKind::Equality => "equality".into(),
                TargetKind::UpperBound => "upper_bound".into(),
            },
            self.report.mean.to_string(),
            self.report.std_error.to_string(),
            self.target.to_string(),
            self.z.to_string(),
            self.report.reps.to_string(),
            self.report.master_seed.to_string(),
        ]
    }
}

/// Closed-form moments of coordinate `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentTargets<T> {
    pub mean_u: T,
    pub var_u: T,
    pub mean_v: T,
    /// `E(λ² − V)² = 8σ⁴ + 8σ²λ²`.
    pub central2_v: T,
    /// `E(λ² − V)⁴ = 192λ⁴σ⁴ + 1920λ²σ⁶ + 960σ⁸`.
    pub central4_v: T,
    /// Bound on `E[λ⁴/V² 1Ω]`.
    pub inv_v2_bound: T,
    /// `12 d² min(1, σ² α⁻²)`.
    pub omega_c_bound: T,
}

pub fn moment_targets<T: Scalar>(inst: &ProblemInstance<T>, j: usize) -> Result<MomentTargets<T>> {
    if j == 0 {
        return Err(Error::param("j", "coordinates are 1-based"));
    }
    inst.check_k(j)?;
    let i = j - 1;
    let (eps, sigma) = (inst.eps(), inst.sigma());
    let lambda = inst.lambda()[i];
    let r = inst.theta_ref()[i];
    let diff = inst.theta()[i] - r;
    let s = eps * eps + T::lit(2.0) * sigma * sigma * r * r;
    let l2 = lambda * lambda;
    let s2 = sigma * sigma;
    let d2 = inst.d() * inst.d();
    let alpha = inst.alpha_values()[i];
    Ok(MomentTargets {
        mean_u: l2 * diff * diff,
        var_u: T::lit(2.0) * s * s + T::lit(4.0) * s * l2 * diff * diff,
        mean_v: l2,
        central2_v: T::lit(8.0) * s2 * s2 + T::lit(8.0) * s2 * l2,
        central4_v: T::lit(192.0) * l2 * l2 * s2 * s2 + T::lit(1920.0) * l2 * s2 * s2 * s2 + T::lit(960.0) * s2.powi(4),
        inv_v2_bound: T::lit(168.0),
        omega_c_bound: T::lit(12.0) * d2 * T::one().min(crate::scalar::scaled(s2, alpha.powi(-2))),
    })
}

/// Monte Carlo checks of the per-coordinate moment identities and bounds at
/// coordinate `j`.
pub fn verify_moment_identities<T: Scalar>(
    inst: &ProblemInstance<T>,
    j: usize,
    reps: usize,
    settings: &McSettings,
) -> Result<Vec<MomentCheck<T>>> {
    check_reps(reps)?;
    let t = moment_targets(inst, j)?;
    let l2 = t.mean_v;
    let rows = replicate(settings, reps, |seed| {
        let obs = sample_prefix(inst, seed, j);
        let c = components(inst, &obs, j);
        let w = if c.omega_event && !c.v.is_zero() { c.v.recip() } else { T::zero() };
        let dv = l2 - c.v;
        let du = c.u - t.mean_u;
        let inv2 = if c.omega_event && !c.v.is_zero() { l2 * l2 / (c.v * c.v) } else { T::zero() };
        Ok([
            c.u,
            du * du,
            c.v,
            dv * dv,
            dv.powi(4),
            inv2,
            if c.omega_event { T::zero() } else { T::one() },
            du * w,
        ])
    })?;
    let specs: [(&str, T, TargetKind); 8] = [
        ("mean_u", t.mean_u, TargetKind::Equality),
        ("var_u", t.var_u, TargetKind::Equality),
        ("mean_v", t.mean_v, TargetKind::Equality),
        ("central2_v", t.central2_v, TargetKind::Equality),
        ("central4_v", t.central4_v, TargetKind::Equality),
        ("inv_v2_on_omega", t.inv_v2_bound, TargetKind::UpperBound),
        ("prob_omega_c", t.omega_c_bound, TargetKind::UpperBound),
        ("cov_u_inv_v", T::zero(), TargetKind::Equality),
    ];
    let mut out = Vec::with_capacity(specs.len());
    for (col, (name, target, kind)) in specs.into_iter().enumerate() {
        let values: Vec<T> = rows.iter().map(|r| r[col]).collect();
        let report = ExperimentReport::from_values(name, &values, settings.master_seed)?
            .with_meta("j", j)
            .with_meta("eps", inst.eps())
            .with_meta("sigma", inst.sigma())
            .with_meta("lambda", inst.lambda()[j - 1]);
        let z = report.z_score(target);
        out.push(MomentCheck {
            name: name.to_string(),
            report,
            target,
            kind,
            z,
        });
    }
    Ok(out)
}

/// Least squares line through `(log x, log y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit<T> {
    pub slope: T,
    pub intercept: T,
    pub r_squared: T,
}

/// Ordinary least squares of `log(risk)` on `log(noise_level)`.
pub fn fit_rate_slope<T: Scalar>(points: &[(T, T)]) -> Result<SlopeFit<T>> {
    if points.len() < 3 {
        return Err(Error::param("points", "at least three points are needed"));
    }
    if let Some(p) = points.iter().find(|(x, y)| !(*x > T::zero() && *y > T::zero() && x.is_finite() && y.is_finite())) {
        return Err(Error::param("points", format!("nonpositive or non-finite point ({}, {})", p.0, p.1)));
    }
    let n = T::from_index(points.len());
    let lx: Vec<T> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<T> = points.iter().map(|p| p.1.ln()).collect();
    let mx = compensated_sum(lx.iter().copied()) / n;
    let my = compensated_sum(ly.iter().copied()) / n;
    let sxx = compensated_sum(lx.iter().map(|x| (*x - mx) * (*x - mx)));
    if sxx.is_zero() {
        return Err(Error::param("points", "noise levels must not all be equal"));
    }
    let sxy = compensated_sum(lx.iter().zip(&ly).map(|(x, y)| (*x - mx) * (*y - my)));
    let syy = compensated_sum(ly.iter().map(|y| (*y - my) * (*y - my)));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse = compensated_sum(lx.iter().zip(&ly).map(|(x, y)| {
        let r = *y - intercept - slope * *x;
        r * r
    }));
    let r_squared = if syy.is_zero() { T::one() } else { T::one() - sse / syy };
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Risk at one noise level of a slope experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopePoint<T> {
    pub eps: T,
    pub kappa: usize,
    pub k: usize,
    pub report: ExperimentReport<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeReport<T> {
    pub points: Vec<SlopePoint<T>>,
    pub fit: SlopeFit<T>,
}

/// Risk of the estimator at `k*` over an `ε` grid, with the truth at each
/// level set to the all-plus vertex of the worst-case hypercube prior, and the
/// fitted log–log slope. `σ` is taken from `base`.
pub fn run_slope_experiment<T: Scalar>(
    base: &ProblemInstance<T>,
    eps_grid: &[T],
    reps: usize,
    settings: &McSettings,
) -> Result<SlopeReport<T>> {
    let mut points = Vec::with_capacity(eps_grid.len());
    for (idx, &eps) in eps_grid.iter().enumerate() {
        let inst = base.with_noise(eps, base.sigma())?;
        let (prior, _) = worst_case_prior(&inst, inst.n_max())?;
        let truth = inst.with_theta(prior.vertex(&[]))?;
        let report = run_risk_experiment(&truth, KRule::KStar, reps, &settings.derive(idx as u64))?
            .with_meta("kappa", prior.kappa);
        let k = KRule::KStar.resolve(&truth)?;
        log::info!("slope point eps = {eps}: kappa = {}, k = {k}, risk = {}", prior.kappa, report.mean);
        points.push(SlopePoint {
            eps,
            kappa: prior.kappa,
            k,
            report,
        });
    }
    let fit = fit_rate_slope(&points.iter().map(|p| (p.eps, p.report.mean)).collect::<Vec<_>>())?;
    Ok(SlopeReport { points, fit })
}

/// `ε = 2^{-lo}, …, 2^{-hi}`.
pub fn dyadic_grid<T: Scalar>(lo: i32, hi: i32) -> Vec<T> {
    (lo..=hi).map(|e| T::lit(2.0).powi(-e)).collect()
}

/// Mildly ill-posed Sobolev instance with `p = a = 1`, `N = 200`, `ε = 0.05`,
/// `σ = 0.01`, `λ = α`, `θ = θ° = 0`.
pub fn standard_instance() -> Result<ProblemInstance<f64>> {
    let (alpha, gamma) = RegimeKind::MildSobolev.families(1.0, 1.0)?;
    ProblemInstance::builder(200).alpha(alpha).gamma(gamma).noise(0.05, 0.01).build()
}

/// Reference `θ°_j = 0.5 j⁻²`, nonzero everywhere and inside the unit ellipsoid.
pub fn standard_reference(n: usize) -> Vec<f64> {
    (1..=n).map(|j| 0.5 / (j as f64).powi(2)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence_model::{sample_observations, Role, SequenceFamily};

    fn quick() -> McSettings {
        McSettings::new(11).with_workers(2)
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let s: Vec<u64> = (0..1000).map(|i| replication_seed(5, i)).collect();
        let mut u = s.clone();
        u.sort_unstable();
        u.dedup();
        assert_eq!(u.len(), s.len());
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_ne!(derive_seed(5, 0), derive_seed(5, 1));
    }

    #[test]
    fn report_summary() {
        let r = ExperimentReport::from_values("x", &[1.0_f64, 2.0, 3.0, 4.0], 9).unwrap();
        assert_eq!(r.mean, 2.5);
        assert!((r.variance - 5.0 / 3.0).abs() < 1e-15);
        assert!((r.std_error - (r.variance / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(r.reps, 4);
        assert!(ExperimentReport::from_values("x", &[1.0_f64], 9).is_err());
        assert_eq!(r.csv_record().len(), ExperimentReport::<f64>::CSV_HEADER.len());
    }

    #[test]
    fn worker_count_does_not_change_reports() {
        let inst = standard_instance().unwrap().with_theta(vec![0.3, 0.1]).unwrap();
        let a = run_risk_experiment(&inst, KRule::KStar, 500, &quick().with_workers(1)).unwrap();
        let b = run_risk_experiment(&inst, KRule::KStar, 500, &quick().with_workers(8)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert!(replicate(&McSettings::new(1).with_workers(0), 3, Ok).is_err());
    }

    #[test]
    fn exact_observations_have_zero_risk() {
        let inst = ProblemInstance::<f64>::builder(50)
            .noise(0.0, 0.0)
            .theta(vec![0.4, 0.2, 0.1])
            .build()
            .unwrap();
        let r = run_risk_experiment(&inst, KRule::Fixed(50), 20, &quick()).unwrap();
        assert!(r.mean.abs() < 1e-28);
        assert!(run_risk_experiment(&inst, KRule::Fixed(51), 20, &quick()).is_err());
        assert!(run_risk_experiment(&inst, KRule::Fixed(3), 1, &quick()).is_err());
    }

    #[test]
    fn single_coordinate_risk_is_var_u() {
        let inst = ProblemInstance::<f64>::builder(1)
            .alpha(SequenceFamily::constant(Role::Alpha))
            .noise(1.0, 0.0)
            .build()
            .unwrap();
        let r = run_risk_experiment(&inst, KRule::Fixed(1), 200_000, &quick()).unwrap();
        assert!(r.z_score(2.0).abs() < 4.0, "{r:?}");
    }

    #[test]
    fn prefix_sampling_matches_full_draw() {
        let inst = standard_instance().unwrap().with_theta(vec![0.3, 0.1]).unwrap();
        let full = sample_observations(&inst, 77);
        let k = 9;
        let a = estimate(&inst, &full, k).unwrap();
        let b = estimate(&inst, &sample_prefix(&inst, 77, k), k).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn exact_null_never_rejects() {
        let inst = standard_instance().unwrap().with_noise(0.0, 0.0).unwrap();
        let r = run_power_experiment(&inst, TestKind::Sd, 0.05, 1.0, 50, &quick(), &TestOptions::default()).unwrap();
        assert_eq!(r.type1.mean, 0.0);
    }

    #[test]
    fn huge_separation_is_always_detected() {
        let inst = standard_instance().unwrap();
        let r = run_power_experiment(&inst, TestKind::Sd, 0.05, 1000.0, 400, &quick(), &TestOptions::default()).unwrap();
        assert!(r.type2.mean < 0.01);
        assert!(r.type1.mean <= 0.05);
        assert!(!r.alternative_in_class);
        let g = inst.with_theta_ref(standard_reference(200)).unwrap();
        let r = run_power_experiment(&g, TestKind::Gof, 0.05, 1000.0, 400, &quick(), &TestOptions::default()).unwrap();
        assert!(r.type2.mean < 0.01);
    }

    #[test]
    fn alternative_direction_is_unit() {
        let inst = standard_instance().unwrap();
        let d = alternative_direction(&inst, 4).unwrap();
        let n: f64 = d.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-15);
        assert_eq!(d[4], 0.0);
        assert!((d[1] / d[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn calibration_stops_at_first_success() {
        let inst = standard_instance().unwrap();
        let grid = geometric_grid(1.0, 4.0, 6);
        let c = calibrate_separation(&inst, TestKind::Sd, 0.05, 0.05, &grid, 200, &quick(), &TestOptions::default())
            .unwrap();
        let m = c.multiple.unwrap();
        assert_eq!(c.visited.last().unwrap().0, m);
        assert!(c.visited[..c.visited.len() - 1].iter().all(|v| v.1 > 0.05));
    }

    #[test]
    fn moment_targets_closed_forms() {
        let inst = ProblemInstance::<f64>::builder(3)
            .alpha(SequenceFamily::constant(Role::Alpha))
            .noise(0.3, 0.5)
            .build()
            .unwrap();
        let t = moment_targets(&inst, 2).unwrap();
        assert!((t.central2_v - 2.5).abs() < 1e-15);
        assert!((t.central4_v - 45.75).abs() < 1e-12);
        assert!((t.omega_c_bound - 3.0).abs() < 1e-15);
        assert!(moment_targets(&inst, 0).is_err());
        assert!(moment_targets(&inst, 4).is_err());
    }

    #[test]
    fn exact_eigenvalues_have_zero_central_moments() {
        let inst = ProblemInstance::<f64>::builder(3).noise(0.2, 0.0).build().unwrap();
        let checks = verify_moment_identities(&inst, 2, 100, &quick()).unwrap();
        for name in ["mean_v", "central2_v", "central4_v"] {
            let c = checks.iter().find(|c| c.name == name).unwrap();
            assert_eq!(c.report.variance, 0.0);
            assert!(c.passes(0.0), "{name}");
        }
    }

    #[test]
    fn moment_identities_hold() {
        let inst = ProblemInstance::<f64>::builder(2)
            .alpha(SequenceFamily::constant(Role::Alpha))
            .noise(0.4, 0.3)
            .theta(vec![0.2, 0.5])
            .theta_ref(vec![0.1, 0.2])
            .build()
            .unwrap();
        for c in verify_moment_identities(&inst, 2, 200_000, &quick()).unwrap() {
            assert!(c.passes(4.0), "{} z = {}", c.name, c.z);
        }
    }

    #[test]
    fn slope_fit_basics() {
        let pts: Vec<(f64, f64)> = [0.5, 0.1, 0.02, 0.004].iter().map(|&e: &f64| (e, 3.0 * e.powf(1.778))).collect();
        let f = fit_rate_slope(&pts).unwrap();
        assert!((f.slope - 1.778).abs() < 1e-12);
        assert!((f.intercept - 3.0_f64.ln()).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let flat = fit_rate_slope(&[(0.1, 2.0), (0.2, 2.0), (0.3, 2.0)]).unwrap();
        assert_eq!(flat.slope, 0.0);
        assert_eq!(flat.r_squared, 1.0);
        assert!(fit_rate_slope(&[(0.1, 2.0), (0.2, 2.0)]).is_err());
        assert!(fit_rate_slope(&[(0.1, 2.0), (0.2, 0.0), (0.3, 1.0)]).is_err());
        assert!(fit_rate_slope(&[(0.1, 2.0), (0.1, 1.0), (0.1, 3.0)]).is_err());
    }

    #[test]
    fn standard_reference_is_in_the_unit_ellipsoid() {
        let inst = standard_instance().unwrap();
        let g = inst.with_theta_ref(standard_reference(200)).unwrap().with_theta(standard_reference(200)).unwrap();
        assert!(check_membership(&g).in_class());
    }
}
