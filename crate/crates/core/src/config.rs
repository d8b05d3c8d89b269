//! Run configuration loaded from TOML.
//!
//! ```toml
//! [instance]
//! regime = "mild-sobolev"   # mild-sobolev | mild-analytic | severe-sobolev | severe-analytic
//! p = 1.0
//! a = 1.0
//! eps = 0.05
//! sigma = 0.01
//! L = 1.0
//! d = 1.0
//! N_max = 200
//! theta = [0.3, 0.1]                        # zero-padded, or
//! theta_ref = { scale = 0.5, decay = 2.0 }  # scale · j^(-decay), optional `support`
//! lambda_factor = 1.0
//! lambda_signs = [1, -1]
//!
//! [run]
//! seed = 7
//! reps = 1000
//! format = "csv"
//! ```
//!
//! Every key is optional. Unknown keys are errors, and all semantic problems
//! are reported together.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;
use toml::{Table, Value};

use crate::error::Result as CoreResult;
use crate::lower_bounds::Construction;
use crate::selection::RegimeKind;
use crate::sequence_model::{ProblemInstance, Regime, Role, SequenceFamily};

pub const DEFAULT_N_MAX: usize = 10_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

impl ConfigError {
    /// Individual messages; a syntax error yields one.
    pub fn messages(&self) -> Vec<String> {
        match self {
            ConfigError::Invalid(v) => v.clone(),
            other => vec![other.to_string()],
        }
    }
}

/// A sequence given by value or by a power-law profile.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum VectorSpec {
    Zero,
    Values(Vec<f64>),
    /// `scale · j^{-decay}` for `j ≤ support` (all of `N_max` when `None`).
    Power { scale: f64, decay: f64, support: Option<usize> },
}

impl VectorSpec {
    pub fn materialize(&self, n: usize) -> Vec<f64> {
        match self {
            VectorSpec::Zero => vec![0.0; n],
            VectorSpec::Values(v) => {
                let mut out = v.clone();
                out.resize(n.max(v.len()), 0.0);
                out
            }
            VectorSpec::Power { scale, decay, support } => {
                let s = support.unwrap_or(n).min(n);
                (1..=n)
                    .map(|j| if j <= s { scale * (j as f64).powf(-decay) } else { 0.0 })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceSpec {
    pub regime: RegimeKind,
    pub p: f64,
    pub a: f64,
    /// `ω_j = j^{omega_exponent}`.
    pub omega_exponent: f64,
    pub eps: f64,
    pub sigma: f64,
    pub radius: f64,
    pub d: f64,
    pub n_max: usize,
    pub theta: VectorSpec,
    pub theta_ref: VectorSpec,
    pub lambda_factor: f64,
    pub lambda_signs: Vec<i8>,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            regime: RegimeKind::MildSobolev,
            p: 1.0,
            a: 1.0,
            omega_exponent: 0.0,
            eps: 0.1,
            sigma: 0.01,
            radius: 1.0,
            d: 1.0,
            n_max: DEFAULT_N_MAX,
            theta: VectorSpec::Zero,
            theta_ref: VectorSpec::Zero,
            lambda_factor: 1.0,
            lambda_signs: Vec::new(),
        }
    }
}

impl InstanceSpec {
    pub fn validate(&self, errors: &mut Vec<String>) {
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                errors.push(msg.to_string());
            }
        };
        need(self.p > 0.0 && self.p.is_finite(), "p must be > 0");
        need(self.a > 0.0 && self.a.is_finite(), "a must be > 0");
        need(self.omega_exponent.is_finite(), "omega_exponent must be finite");
        need(self.eps > 0.0 && self.eps <= 1.0, "eps must lie in (0, 1]");
        need((0.0..=1.0).contains(&self.sigma), "sigma must lie in [0, 1]");
        need(self.radius > 0.0 && self.radius.is_finite(), "L must be > 0");
        need(self.d >= 1.0 && self.d.is_finite(), "d must be ≥ 1");
        need(self.n_max >= 1, "N_max must be ≥ 1");
        need(
            self.lambda_factor > 0.0 && self.lambda_factor.is_finite(),
            "lambda_factor must be > 0",
        );
        need(
            self.lambda_signs.iter().all(|s| *s == 1 || *s == -1),
            "lambda_signs entries must be 1 or -1",
        );
        need(self.lambda_signs.len() <= self.n_max, "lambda_signs is longer than N_max");
        for (name, spec) in [("theta", &self.theta), ("theta_ref", &self.theta_ref)] {
            match spec {
                VectorSpec::Zero => {}
                VectorSpec::Values(v) => {
                    if v.len() > self.n_max {
                        errors.push(format!("{name} has {} entries but N_max = {}", v.len(), self.n_max));
                    }
                    if v.iter().any(|x| !x.is_finite()) {
                        errors.push(format!("{name} entries must be finite"));
                    }
                }
                VectorSpec::Power { scale, decay, support } => {
                    if !scale.is_finite() || !decay.is_finite() {
                        errors.push(format!("{name} scale and decay must be finite"));
                    }
                    if *support == Some(0) {
                        errors.push(format!("{name} support must be ≥ 1"));
                    }
                }
            }
        }
    }

    /// Build the model instance. `λ_j = lambda_factor · sign_j · α_j`.
    pub fn build(&self) -> CoreResult<ProblemInstance<f64>> {
        let (alpha, gamma) = self.regime.families(self.p, self.a)?;
        let omega = SequenceFamily::new(Regime::Polynomial(self.omega_exponent), Role::Omega)?;
        ProblemInstance::builder(self.n_max)
            .alpha(alpha)
            .gamma(gamma)
            .omega(omega)
            .noise(self.eps, self.sigma)
            .radius(self.radius)
            .d(self.d)
            .theta(self.theta.materialize(self.n_max))
            .theta_ref(self.theta_ref.materialize(self.n_max))
            .lambda_factor(self.lambda_factor)
            .lambda_signs(self.lambda_signs.clone())
            .build()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(format!("unknown format `{s}` (expected csv or json)")),
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        })
    }
}

/// Parameters shared by the subcommands.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSettings {
    pub seed: u64,
    pub reps: usize,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
    /// `None` uses every available core.
    pub workers: Option<usize>,
    pub delta: f64,
    pub k: Option<usize>,
    pub k_max: Option<usize>,
    pub c_aux: f64,
    pub c_multiplier: f64,
    pub nu: Option<f64>,
    pub construction: Option<Construction>,
    /// Coordinate for moment checks (1-based).
    pub j: usize,
    pub separation_multiple: Option<f64>,
    pub calibration_start: f64,
    pub calibration_ratio: f64,
    pub calibration_steps: usize,
    pub eps_grid: Vec<f64>,
    pub slope_target: Option<f64>,
    pub slope_tolerance: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            reps: 1000,
            out: None,
            format: OutputFormat::Csv,
            workers: None,
            delta: 0.05,
            k: None,
            k_max: None,
            c_aux: 1.0,
            c_multiplier: 1.0,
            nu: None,
            construction: None,
            j: 1,
            separation_multiple: None,
            calibration_start: 1.0,
            calibration_ratio: std::f64::consts::SQRT_2,
            calibration_steps: 30,
            eps_grid: (4..=9).map(|e| 2f64.powi(-e)).collect(),
            slope_target: None,
            slope_tolerance: 0.2,
        }
    }
}

impl RunSettings {
    pub fn validate(&self, n_max: usize, errors: &mut Vec<String>) {
        let mut need = |ok: bool, msg: String| {
            if !ok {
                errors.push(msg);
            }
        };
        need(self.reps >= 2, "reps must be ≥ 2".into());
        need(self.workers != Some(0), "workers must be ≥ 1".into());
        need(self.delta > 0.0 && self.delta < 1.0, "delta must lie in (0, 1)".into());
        if let Some(k) = self.k {
            need(k >= 1 && k <= n_max, format!("k must lie in 1..={n_max}"));
        }
        if let Some(k) = self.k_max {
            need(k >= 1 && k <= n_max, format!("k_max must lie in 1..={n_max}"));
        }
        need(self.j >= 1 && self.j <= n_max, format!("j must lie in 1..={n_max}"));
        need(self.c_aux > 0.0 && self.c_aux.is_finite(), "c_aux must be > 0".into());
        need(
            self.c_multiplier > 0.0 && self.c_multiplier.is_finite(),
            "c_multiplier must be > 0".into(),
        );
        if let Some(nu) = self.nu {
            need(nu > 0.0, "nu must be > 0".into());
        }
        if let Some(m) = self.separation_multiple {
            need(m >= 0.0 && m.is_finite(), "separation_multiple must be ≥ 0".into());
        }
        need(self.calibration_start > 0.0, "calibration_start must be > 0".into());
        need(self.calibration_ratio > 1.0, "calibration_ratio must be > 1".into());
        need(self.calibration_steps >= 1, "calibration_steps must be ≥ 1".into());
        need(self.eps_grid.len() >= 3, "eps_grid needs at least 3 levels".into());
        need(
            self.eps_grid.iter().all(|e| *e > 0.0 && *e <= 1.0),
            "eps_grid entries must lie in (0, 1]".into(),
        );
        need(
            self.slope_tolerance > 0.0 && self.slope_tolerance.is_finite(),
            "slope_tolerance must be > 0".into(),
        );
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RunConfig {
    pub instance: InstanceSpec,
    pub run: RunSettings,
}

impl RunConfig {
    /// All semantic errors, empty when valid.
    pub fn errors(&self) -> Vec<String> {
        let mut errors = Vec::new();
        self.instance.validate(&mut errors);
        self.run.validate(self.instance.n_max, &mut errors);
        errors
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let errors = self.errors();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }
}

impl FromStr for RunConfig {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        parse_config(s)
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Collects type and range errors while reading a table.
struct Reader {
    errors: Vec<String>,
}

impl Reader {
    fn float(&mut self, t: &Table, section: &str, key: &str, slot: &mut f64) {
        match t.get(key) {
            None => {}
            Some(Value::Float(f)) => *slot = *f,
            Some(Value::Integer(i)) => *slot = *i as f64,
            Some(_) => self.errors.push(format!("{section}.{key} must be a number")),
        }
    }

    fn opt_float(&mut self, t: &Table, section: &str, key: &str, slot: &mut Option<f64>) {
        if t.contains_key(key) {
            let mut v = 0.0;
            self.float(t, section, key, &mut v);
            *slot = Some(v);
        }
    }

    fn uint(&mut self, t: &Table, section: &str, key: &str) -> Option<u64> {
        match t.get(key) {
            None => None,
            Some(Value::Integer(i)) if *i >= 0 => Some(*i as u64),
            Some(_) => {
                self.errors.push(format!("{section}.{key} must be a nonnegative integer"));
                None
            }
        }
    }

    fn usize(&mut self, t: &Table, section: &str, key: &str, slot: &mut usize) {
        if let Some(v) = self.uint(t, section, key) {
            *slot = v as usize;
        }
    }

    fn string<'a>(&mut self, t: &'a Table, section: &str, key: &str) -> Option<&'a str> {
        match t.get(key) {
            None => None,
            Some(Value::String(s)) => Some(s),
            Some(_) => {
                self.errors.push(format!("{section}.{key} must be a string"));
                None
            }
        }
    }

    fn floats(&mut self, v: &Value, what: &str) -> Option<Vec<f64>> {
        let Value::Array(items) = v else {
            self.errors.push(format!("{what} must be an array of numbers"));
            return None;
        };
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            match item {
                Value::Float(f) => out.push(*f),
                Value::Integer(i) => out.push(*i as f64),
                _ => {
                    self.errors.push(format!("{what} must be an array of numbers"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn unknown(&mut self, t: &Table, section: &str, known: &[&str]) {
        for k in t.keys() {
            if !known.contains(&k.as_str()) {
                self.errors.push(format!("unknown key `{section}.{k}`"));
            }
        }
    }

    fn vector(&mut self, t: &Table, key: &str) -> Option<VectorSpec> {
        let what = format!("instance.{key}");
        match t.get(key)? {
            v @ Value::Array(_) => self.floats(v, &what).map(VectorSpec::Values),
            Value::Table(spec) => {
                self.unknown(spec, &what, &["scale", "decay", "support"]);
                let (mut scale, mut decay) = (1.0, 0.0);
                self.float(spec, &what, "scale", &mut scale);
                self.float(spec, &what, "decay", &mut decay);
                let support = self.uint(spec, &what, "support").map(|s| s as usize);
                Some(VectorSpec::Power { scale, decay, support })
            }
            Value::String(s) if s == "zero" => Some(VectorSpec::Zero),
            _ => {
                self.errors.push(format!("{what} must be an array, a {{ scale, decay }} table or \"zero\""));
                None
            }
        }
    }
}

const INSTANCE_KEYS: &[&str] = &[
    "regime", "p", "a", "omega_exponent", "eps", "sigma", "L", "d", "N_max", "theta", "theta_ref",
    "lambda_factor", "lambda_signs",
];

const RUN_KEYS: &[&str] = &[
    "seed", "reps", "out", "format", "workers", "delta", "k", "k_max", "c_aux", "c_multiplier", "nu",
    "construction", "j", "separation_multiple", "calibration_start", "calibration_ratio",
    "calibration_steps", "eps_grid", "slope_target", "slope_tolerance",
];

fn read_instance(r: &mut Reader, t: &Table, spec: &mut InstanceSpec) {
    const S: &str = "instance";
    r.unknown(t, S, INSTANCE_KEYS);
    if let Some(s) = r.string(t, S, "regime") {
        match s.parse::<RegimeKind>() {
            Ok(k) => spec.regime = k,
            Err(e) => r.errors.push(e.to_string()),
        }
    }
    r.float(t, S, "p", &mut spec.p);
    r.float(t, S, "a", &mut spec.a);
    r.float(t, S, "omega_exponent", &mut spec.omega_exponent);
    r.float(t, S, "eps", &mut spec.eps);
    r.float(t, S, "sigma", &mut spec.sigma);
    r.float(t, S, "L", &mut spec.radius);
    r.float(t, S, "d", &mut spec.d);
    r.usize(t, S, "N_max", &mut spec.n_max);
    r.float(t, S, "lambda_factor", &mut spec.lambda_factor);
    if let Some(v) = r.vector(t, "theta") {
        spec.theta = v;
    }
    if let Some(v) = r.vector(t, "theta_ref") {
        spec.theta_ref = v;
    }
    if let Some(v) = t.get("lambda_signs") {
        if let Some(xs) = r.floats(v, "instance.lambda_signs") {
            spec.lambda_signs = xs
                .iter()
                .map(|x| if *x == 1.0 { 1 } else if *x == -1.0 { -1 } else { 0 })
                .collect();
        }
    }
}

fn read_run(r: &mut Reader, t: &Table, run: &mut RunSettings) {
    const S: &str = "run";
    r.unknown(t, S, RUN_KEYS);
    if let Some(v) = r.uint(t, S, "seed") {
        run.seed = v;
    }
    r.usize(t, S, "reps", &mut run.reps);
    if let Some(s) = r.string(t, S, "out") {
        run.out = Some(PathBuf::from(s));
    }
    if let Some(s) = r.string(t, S, "format") {
        match s.parse() {
            Ok(f) => run.format = f,
            Err(e) => r.errors.push(e),
        }
    }
    run.workers = r.uint(t, S, "workers").map(|v| v as usize).or(run.workers);
    r.float(t, S, "delta", &mut run.delta);
    run.k = r.uint(t, S, "k").map(|v| v as usize).or(run.k);
    run.k_max = r.uint(t, S, "k_max").map(|v| v as usize).or(run.k_max);
    r.float(t, S, "c_aux", &mut run.c_aux);
    r.float(t, S, "c_multiplier", &mut run.c_multiplier);
    r.opt_float(t, S, "nu", &mut run.nu);
    if let Some(s) = r.string(t, S, "construction") {
        match s.parse::<Construction>() {
            Ok(c) => run.construction = Some(c),
            Err(e) => r.errors.push(e.to_string()),
        }
    }
    r.usize(t, S, "j", &mut run.j);
    r.opt_float(t, S, "separation_multiple", &mut run.separation_multiple);
    r.float(t, S, "calibration_start", &mut run.calibration_start);
    r.float(t, S, "calibration_ratio", &mut run.calibration_ratio);
    r.usize(t, S, "calibration_steps", &mut run.calibration_steps);
    if let Some(v) = t.get("eps_grid") {
        if let Some(g) = r.floats(v, "run.eps_grid") {
            run.eps_grid = g;
        }
    }
    r.opt_float(t, S, "slope_target", &mut run.slope_target);
    r.float(t, S, "slope_tolerance", &mut run.slope_tolerance);
}

/// Parse and validate a TOML configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        ConfigError::Syntax {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    let mut cfg = RunConfig::default();
    let mut r = Reader { errors: Vec::new() };
    r.unknown(&table, "", &["instance", "run"]);
    for (section, known) in [("instance", true), ("run", false)] {
        match table.get(section) {
            None => {}
            Some(Value::Table(t)) if known => read_instance(&mut r, t, &mut cfg.instance),
            Some(Value::Table(t)) => read_run(&mut r, t, &mut cfg.run),
            Some(_) => r.errors.push(format!("`{section}` must be a table")),
        }
    }
    // range checks only make sense once every field parsed
    let mut errors = r.errors;
    if errors.is_empty() {
        errors = cfg.errors();
    } else {
        errors.extend(cfg.errors());
    }
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(errors))
    }
}
