//! `qfunc`: simulate, estimate, select truncations, test, evaluate rates and
//! lower bounds, and run Monte Carlo experiments.
//!
//! Settings come from built-in defaults, then `--config FILE`, then flags;
//! later sources win. Exit status is 0 on success, 2 on invalid input and 1
//! on I/O failures.

mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use qfunc::config::{parse_config, ConfigError, OutputFormat, RunConfig};
use qfunc::estimator::{estimate, estimate_alternative, risk_bound, RiskBoundBreakdown, RiskConstants};
use qfunc::lower_bounds::{build_two_point, worst_case_prior, Construction};
use qfunc::montecarlo::{
    calibrate_separation, geometric_grid, replicate, run_power_experiment, run_risk_experiment,
    run_slope_experiment, verify_moment_identities, ExperimentReport, KRule, McSettings, MomentCheck,
};
use qfunc::selection::{predicted_rate, select_k_star, sweep_row, RegimeKind, SweepRow};
use qfunc::sequence_model::{sample_observations, sample_prefix};
use qfunc::testing::{plan_test, predicted_testing_rate, TestKind, TestOptions};
use qfunc::Instance;

use output::Table;

#[derive(Parser, Debug)]
#[command(name = "qfunc", version, about = "Quadratic functionals in a sequence model with noisy eigenvalues")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Overrides for config-file values.
#[derive(Args, Debug, Default)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_format)]
    format: Option<OutputFormat>,
    /// Worker threads for replications (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_parser = parse_regime)]
    regime: Option<RegimeKind>,
    #[arg(long, global = true)]
    p: Option<f64>,
    #[arg(long, global = true)]
    a: Option<f64>,
    #[arg(long, global = true)]
    eps: Option<f64>,
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// Ellipsoid radius `L`.
    #[arg(long = "radius", visible_alias = "L", global = true)]
    radius: Option<f64>,
    #[arg(long, global = true)]
    d: Option<f64>,
    #[arg(long = "n-max", global = true)]
    n_max: Option<usize>,
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Fixed truncation.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Upper end of the truncation search.
    #[arg(long = "k-max", global = true)]
    k_max: Option<usize>,
    #[arg(long = "c-aux", global = true)]
    c_aux: Option<f64>,
    /// Factor on the test's type I constant.
    #[arg(long = "c-multiplier", global = true)]
    c_multiplier: Option<f64>,
    /// Balance ratio for the testing side condition.
    #[arg(long, global = true)]
    nu: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw one observation set (`j,x,y,y_plus,y_minus`).
    Simulate,
    /// Estimate `Q(θ)` from one observation set.
    Estimate {
        /// Append the risk bound breakdown at `k`.
        #[arg(long)]
        bound: bool,
        /// Also report the single-sample estimator.
        #[arg(long)]
        alternative: bool,
    },
    /// Truncations chosen by every selector at the configured noise levels.
    SelectK,
    /// Run a test over `reps` replications (`rep,statistic,threshold,reject`).
    Test {
        #[arg(value_enum)]
        kind: KindArg,
    },
    /// Minimax rate of estimation, or of testing with `--test`.
    Rates {
        #[arg(long, value_enum)]
        test: Option<KindArg>,
    },
    /// Lower-bound constructions; all estimation ones when none is named.
    LowerBound {
        /// eps_a, eps_b, sigma_a, sigma_b, gof or hypercube.
        #[arg(long)]
        construction: Option<String>,
    },
    /// Monte Carlo experiments.
    #[command(subcommand)]
    Experiment(Experiment),
}

#[derive(Subcommand, Debug)]
enum Experiment {
    /// Mean squared error of the estimator.
    Risk {
        #[arg(long = "k-rule", value_enum, default_value = "k-star")]
        k_rule: KRuleArg,
    },
    /// Type I and type II errors; calibrates the separation when none is given.
    Power {
        #[arg(long, value_enum, default_value = "sd")]
        test: KindArg,
        /// Alternative at distance `multiple · φ` from the reference.
        #[arg(long)]
        multiple: Option<f64>,
    },
    /// Risk at hypercube worst-case truths over the `eps` grid, with the log–log slope.
    Slope {
        /// Comma-separated `ε` levels.
        #[arg(long = "eps-grid", value_delimiter = ',')]
        eps_grid: Option<Vec<f64>>,
        /// Expected slope; a pass/fail line is printed to stderr.
        #[arg(long)]
        target: Option<f64>,
    },
    /// Moment identities and bounds at one coordinate.
    Moments {
        #[arg(long)]
        j: Option<usize>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum KindArg {
    Sd,
    Gof,
}

impl From<KindArg> for TestKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Sd => TestKind::Sd,
            KindArg::Gof => TestKind::Gof,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum KRuleArg {
    Fixed,
    KStar,
    KSd,
    KGof,
}

fn parse_format(s: &str) -> std::result::Result<OutputFormat, String> {
    s.parse()
}

fn parse_regime(s: &str) -> std::result::Result<RegimeKind, String> {
    s.parse().map_err(|e: qfunc::Error| e.to_string())
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| anyhow!("cannot read {}: {e}", path.display()))?;
            parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    let (i, r) = (&mut cfg.instance, &mut cfg.run);
    macro_rules! set {
        ($flag:expr, $slot:expr) => {
            if let Some(v) = $flag.clone() {
                $slot = v;
            }
        };
    }
    set!(c.regime, i.regime);
    set!(c.p, i.p);
    set!(c.a, i.a);
    set!(c.eps, i.eps);
    set!(c.sigma, i.sigma);
    set!(c.radius, i.radius);
    set!(c.d, i.d);
    set!(c.n_max, i.n_max);
    set!(c.seed, r.seed);
    set!(c.reps, r.reps);
    set!(c.format, r.format);
    set!(c.delta, r.delta);
    set!(c.c_aux, r.c_aux);
    set!(c.c_multiplier, r.c_multiplier);
    if c.out.is_some() {
        r.out = c.out.clone();
    }
    if c.workers.is_some() {
        r.workers = c.workers;
    }
    if c.k.is_some() {
        r.k = c.k;
    }
    if c.k_max.is_some() {
        r.k_max = c.k_max;
    }
    if c.nu.is_some() {
        r.nu = c.nu;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn settings(cfg: &RunConfig) -> McSettings {
    let s = McSettings::new(cfg.run.seed);
    match cfg.run.workers {
        Some(w) => s.with_workers(w),
        None => s,
    }
}

fn test_options(cfg: &RunConfig) -> TestOptions<f64> {
    TestOptions {
        k_max: cfg.run.k_max,
        nu: cfg.run.nu,
        c_multiplier: cfg.run.c_multiplier,
    }
}

fn emit(cfg: &RunConfig, t: &Table) -> Result<()> {
    t.emit(cfg.run.format, cfg.run.out.as_deref())
}

fn report_table(reports: &[ExperimentReport<f64>]) -> Table {
    let mut t = Table::new(&ExperimentReport::<f64>::CSV_HEADER);
    for r in reports {
        t.push(r.csv_record());
    }
    t
}

fn simulate(cfg: &RunConfig, inst: &Instance) -> Result<()> {
    let obs = sample_observations(inst, cfg.run.seed);
    if cfg.run.format == OutputFormat::Csv {
        match &cfg.run.out {
            Some(p) => obs.write_csv(std::fs::File::create(p)?)?,
            None => obs.write_csv(std::io::stdout().lock())?,
        }
        return Ok(());
    }
    let mut t = Table::new(&["j", "x", "y", "y_plus", "y_minus"]);
    for i in 0..obs.len() {
        t.push(vec![
            (i + 1).to_string(),
            obs.x[i].to_string(),
            obs.y[i].to_string(),
            obs.y_plus[i].to_string(),
            obs.y_minus[i].to_string(),
        ]);
    }
    emit(cfg, &t)
}

fn estimate_cmd(cfg: &RunConfig, inst: &Instance, bound: bool, alternative: bool) -> Result<()> {
    let k = match cfg.run.k {
        Some(k) => k,
        None => select_k_star(inst, cfg.run.k_max.unwrap_or(inst.n_max()))?.k,
    };
    let obs = sample_observations(inst, cfg.run.seed);
    let mut header = vec!["k".to_string(), "estimate".into()];
    let mut row = vec![k.to_string(), estimate(inst, &obs, k)?.to_string()];
    if alternative {
        header.push("estimate_alternative".into());
        row.push(estimate_alternative(inst, &obs, k)?.to_string());
    }
    header.push("q_true".into());
    row.push(inst.q_value().to_string());
    if bound {
        let b = risk_bound(inst, k, RiskConstants { c_aux: cfg.run.c_aux })?;
        header.extend(RiskBoundBreakdown::<f64>::CSV_HEADER[1..].iter().map(|s| format!("bound_{s}")));
        row.extend(b.csv_record().into_iter().skip(1));
    }
    let mut t = Table::new(&header);
    t.push(row);
    emit(cfg, &t)
}

fn select_cmd(cfg: &RunConfig, inst: &Instance) -> Result<()> {
    let row = sweep_row(inst, cfg.run.k_max.unwrap_or(inst.n_max()))?;
    let mut t = Table::new(&SweepRow::<f64>::CSV_HEADER);
    t.push(row.csv_record());
    emit(cfg, &t)
}

fn test_cmd(cfg: &RunConfig, inst: &Instance, kind: TestKind) -> Result<()> {
    let plan = plan_test(kind, inst, cfg.run.delta, &test_options(cfg))?;
    let outcomes = replicate(&settings(cfg), cfg.run.reps, |seed| {
        plan.apply(inst, &sample_prefix(inst, seed, plan.k))
    })?;
    let mut t = Table::new(&["rep", "statistic", "threshold", "reject"]);
    let mut rejected = 0usize;
    for (rep, o) in outcomes.iter().enumerate() {
        rejected += o.reject as usize;
        t.push(vec![rep.to_string(), o.statistic.to_string(), o.threshold.to_string(), o.reject.to_string()]);
    }
    eprintln!(
        "{kind} test: k = {}, phi2 = {}, threshold = {}, side condition holds = {}, rejected {rejected}/{}",
        plan.k,
        plan.rate_value,
        plan.threshold,
        plan.side_condition.holds,
        outcomes.len()
    );
    emit(cfg, &t)
}

fn rates_cmd(cfg: &RunConfig, test: Option<TestKind>) -> Result<()> {
    let i = &cfg.instance;
    let value = match test {
        None => predicted_rate(i.regime, i.p, i.a, i.eps, i.sigma)?,
        Some(kind) => predicted_testing_rate(kind, i.regime, i.p, i.a, i.eps, i.sigma)?,
    };
    if cfg.run.format == OutputFormat::Csv && cfg.run.out.is_none() {
        println!("{value:.3e}");
        return Ok(());
    }
    let mut t = Table::new(&["regime", "p", "a", "eps", "sigma", "test", "rate"]);
    t.push(vec![
        i.regime.to_string(),
        i.p.to_string(),
        i.a.to_string(),
        i.eps.to_string(),
        i.sigma.to_string(),
        test.map_or("none".to_string(), |k| k.to_string()),
        value.to_string(),
    ]);
    emit(cfg, &t)
}

const LOWER_BOUND_HEADER: [&str; 10] =
    ["construction", "kappa", "zeta", "nu", "q_plus", "q_minus", "gap", "kl", "chi2", "bound"];

fn lower_bound_cmd(cfg: &RunConfig, inst: &Instance, construction: Option<&str>) -> Result<()> {
    let names: Vec<String> = match construction.map(str::to_string).or(cfg.run.construction.map(|c| c.to_string())) {
        Some(n) => vec![n],
        None => ["hypercube", "eps_a", "eps_b", "sigma_a", "sigma_b"].iter().map(|s| s.to_string()).collect(),
    };
    let mut t = Table::new(&LOWER_BOUND_HEADER);
    for name in names {
        if name == "hypercube" {
            let (prior, cert) = worst_case_prior(inst, cfg.run.k_max.unwrap_or(inst.n_max()))?;
            let gap = 2.0 * prior.psi;
            t.push(vec![
                name,
                prior.kappa.to_string(),
                prior.scale.to_string(),
                cert.nu.to_string(),
                gap.to_string(),
                "0".into(),
                gap.to_string(),
                "NaN".into(),
                prior.chi2.to_string(),
                prior.risk_lower_bound().to_string(),
            ]);
            continue;
        }
        let c: Construction = name.parse()?;
        let pair = build_two_point(inst, c)?;
        t.push(vec![
            name,
            pair.kappa.to_string(),
            pair.zeta.to_string(),
            pair.nu.to_string(),
            pair.q_plus.to_string(),
            pair.q_minus.to_string(),
            pair.gap().to_string(),
            pair.kl.to_string(),
            "NaN".into(),
            pair.bound().to_string(),
        ]);
    }
    emit(cfg, &t)
}

fn experiment_cmd(cfg: &RunConfig, inst: &Instance, e: &Experiment) -> Result<()> {
    let mc = settings(cfg);
    match e {
        Experiment::Risk { k_rule } => {
            let rule = match (k_rule, cfg.run.k) {
                (KRuleArg::Fixed, Some(k)) => KRule::Fixed(k),
                (KRuleArg::Fixed, None) => bail!(ConfigError::Invalid(vec!["--k-rule fixed needs --k".into()])),
                (KRuleArg::KStar, _) => KRule::KStar,
                (KRuleArg::KSd, _) => KRule::KSd,
                (KRuleArg::KGof, _) => KRule::KGof,
            };
            let r = run_risk_experiment(inst, rule, cfg.run.reps, &mc)?;
            let k = rule.resolve(inst)?;
            let b = risk_bound(inst, k, RiskConstants { c_aux: cfg.run.c_aux })?;
            let within = r.mean <= b.total;
            let r = r
                .with_meta("risk_bound", b.total)
                .with_meta("c_aux", cfg.run.c_aux)
                .with_meta("within_bound", within);
            emit(cfg, &report_table(&[r]))
        }
        Experiment::Power { test, multiple } => {
            let kind = TestKind::from(*test);
            let opts = test_options(cfg);
            let delta = cfg.run.delta;
            let multiple = match multiple.or(cfg.run.separation_multiple) {
                Some(m) => m,
                None => {
                    let grid =
                        geometric_grid(cfg.run.calibration_start, cfg.run.calibration_ratio, cfg.run.calibration_steps);
                    let c = calibrate_separation(inst, kind, delta, delta, &grid, cfg.run.reps, &mc.derive(1), &opts)?;
                    for (m, t2) in &c.visited {
                        eprintln!("calibration: multiple = {m}, type2 = {t2}");
                    }
                    c.multiple
                        .ok_or_else(|| anyhow!("no grid multiple reached type II ≤ {delta}; widen the calibration grid"))?
                }
            };
            let r = run_power_experiment(inst, kind, delta, multiple, cfg.run.reps, &mc, &opts)?;
            let tag = |x: ExperimentReport<f64>| {
                x.with_meta("separation2", r.separation2)
                    .with_meta("alternative_in_class", r.alternative_in_class)
            };
            emit(cfg, &report_table(&[tag(r.type1.clone()), tag(r.type2.clone())]))
        }
        Experiment::Slope { eps_grid, target } => {
            let grid = eps_grid.clone().unwrap_or_else(|| cfg.run.eps_grid.clone());
            if grid.len() < 3 || grid.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
                bail!(ConfigError::Invalid(vec!["eps grid needs at least 3 levels in (0, 1]".into()]));
            }
            let r = run_slope_experiment(inst, &grid, cfg.run.reps, &mc)?;
            let mut t = Table::new(&[
                "eps", "kappa", "k", "risk", "std_error", "reps", "master_seed", "slope", "intercept", "r_squared",
            ]);
            for p in &r.points {
                t.push(vec![
                    p.eps.to_string(),
                    p.kappa.to_string(),
                    p.k.to_string(),
                    p.report.mean.to_string(),
                    p.report.std_error.to_string(),
                    p.report.reps.to_string(),
                    p.report.master_seed.to_string(),
                    r.fit.slope.to_string(),
                    r.fit.intercept.to_string(),
                    r.fit.r_squared.to_string(),
                ]);
            }
            if let Some(target) = target.or(cfg.run.slope_target) {
                let rel = (r.fit.slope - target).abs() / target.abs();
                let verdict = if rel <= cfg.run.slope_tolerance { "PASS" } else { "FAIL" };
                eprintln!(
                    "{verdict}: slope {:.4} vs target {target:.4} (relative deviation {rel:.3}, tolerance {})",
                    r.fit.slope, cfg.run.slope_tolerance
                );
            }
            emit(cfg, &t)
        }
        Experiment::Moments { j } => {
            let j = j.unwrap_or(cfg.run.j);
            let checks = verify_moment_identities(inst, j, cfg.run.reps, &mc)?;
            let mut t = Table::new(&MomentCheck::<f64>::CSV_HEADER);
            for c in &checks {
                t.push(c.csv_record());
            }
            emit(cfg, &t)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    if let Command::Rates { test } = cli.command {
        return rates_cmd(&cfg, test.map(TestKind::from));
    }
    let inst = cfg.instance.build()?;
    match &cli.command {
        Command::Simulate => simulate(&cfg, &inst),
        Command::Estimate { bound, alternative } => estimate_cmd(&cfg, &inst, *bound, *alternative),
        Command::SelectK => select_cmd(&cfg, &inst),
        Command::Test { kind } => test_cmd(&cfg, &inst, (*kind).into()),
        Command::Rates { .. } => unreachable!(),
        Command::LowerBound { construction } => lower_bound_cmd(&cfg, &inst, construction.as_deref()),
        Command::Experiment(e) => experiment_cmd(&cfg, &inst, e),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let invalid = e.downcast_ref::<ConfigError>().is_some()
        || matches!(e.downcast_ref::<qfunc::Error>(), Some(err) if !matches!(err, qfunc::Error::Io(_)));
    if invalid {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
