//! Subcommand bodies. Each returns the files to emit and its audits; nothing
//! touches the file system here.

use nsfide_core::density::{criterion_statistics, CriterionReport};
use nsfide_core::model::Model;
use nsfide_core::moments::{crude_second_moment_bound, monte_carlo_moments, Estimate, SupEstimate};
use nsfide_core::resolvent::resolvent_identity_residual;
use nsfide_core::solver::{DerivativeScope, TruncationNotice};
use nsfide_core::{Error, Result};
use serde::Serialize;

use crate::config::{functional, RunConfig};
use crate::output::{num, Bundle, Csv};
use crate::validate::{self, Audit, CriterionResult};

#[derive(Debug)]
pub struct RunOutcome {
    pub bundle: Bundle,
    pub audits: Vec<Audit>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.audits.iter().all(|a| a.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Audit> {
        self.audits.iter().filter(|a| !a.passed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Density,
    Resolvent,
    FbmTest,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Density => "density",
            Self::Resolvent => "resolvent",
            Self::FbmTest => "fbm-test",
            Self::Validate => "validate",
        }
    }
}

pub fn run(command: Command, cfg: &RunConfig) -> Result<RunOutcome> {
    match command {
        Command::Simulate => simulate(cfg),
        Command::Density => density(cfg),
        Command::Resolvent => resolvent(cfg),
        Command::FbmTest => fbm_test(cfg),
        Command::Validate => validate_all(cfg),
    }
}

#[derive(Serialize)]
struct Version {
    package: &'static str,
    git_rev: &'static str,
}

const VERSION: Version = Version {
    package: env!("CARGO_PKG_VERSION"),
    git_rev: env!("NSFIDE_GIT_REV"),
};

#[derive(Serialize)]
struct Summary<'a, R: Serialize> {
    command: &'static str,
    version: Version,
    config: &'a RunConfig,
    results: R,
    passed: bool,
    audits: &'a [Audit],
}

fn finish(command: Command, cfg: &RunConfig, mut bundle: Bundle, results: impl Serialize, audits: Vec<Audit>) -> RunOutcome {
    let summary = Summary {
        command: command.name(),
        version: VERSION,
        config: cfg,
        results,
        passed: audits.iter().all(|a| a.passed),
        audits: &audits,
    };
    bundle.add_json("summary.json", &summary);
    RunOutcome { bundle, audits }
}

fn model(cfg: &RunConfig) -> Result<Model> {
    Model::new(cfg.model.clone())
}

#[derive(Serialize)]
struct SimulateResults {
    n_paths: usize,
    seed: u64,
    sup_mean_sq_norm: SupEstimate,
    sup_mean_sq_norm_half: SupEstimate,
    derivative_sups: Vec<SupEstimate>,
    derivative_sups_half: Vec<SupEstimate>,
    /// `[k−1][block−1]`.
    derivative_block_sups: Vec<Vec<Option<SupEstimate>>>,
    continuity: f64,
    crude_bound: f64,
    block_term_max_z: f64,
    truncation_notices: Vec<TruncationNotice>,
}

pub fn simulate(cfg: &RunConfig) -> Result<RunOutcome> {
    let m = model(cfg)?;
    let mc = &cfg.monte_carlo;
    let rep = monte_carlo_moments(&m, mc.paths, mc.seed, DerivativeScope::Required)?;
    let mut bundle = Bundle::default();

    let mut csv = Csv::new(&["t", "mean_sq_norm", "se", "variance"]);
    for (i, t) in rep.t.iter().enumerate() {
        let Estimate { mean, se } = rep.mean_sq_norm[i];
        let variance: f64 = rep.mode_variance[i].iter().sum();
        csv.row([num(*t), num(mean), num(se), num(variance)]);
    }
    bundle.add("moments.csv", csv.into_string());

    let mut csv = Csv::new(&["block", "t", "mode", "mean", "se"]);
    for (b, terms) in rep.block_terms.iter().enumerate() {
        let (_, last) = m.block_range(b + 1);
        for (n, e) in terms.iter().enumerate() {
            csv.row([(b + 1).to_string(), num(m.grid.t(last)), (n + 1).to_string(), num(e.mean), num(e.se)]);
        }
    }
    bundle.add("block_terms.csv", csv.into_string());

    let sup = rep.full.sup_mean_sq_norm.value.mean;
    let bound = crude_second_moment_bound(&m);
    let z = rep.block_term_max_z();
    let finite = sup.is_finite() && rep.full.derivative_sups.iter().all(|s| s.value.mean.is_finite());
    let audits = vec![
        Audit::new("moment sups finite", finite, format!("sup E|x|^2 = {sup:.6e}")),
        Audit::new(
            "second moment under the crude bound with 1.5x headroom",
            1.5 * sup <= bound,
            format!("1.5 * {sup:.6e} vs {bound:.6e}"),
        ),
        Audit::new(
            "Skorohod block terms zero-mean within 3 SE",
            z <= 3.0,
            format!("max |z| = {z:.3}"),
        ),
        Audit::new(
            "hierarchy complete",
            rep.notices.is_empty(),
            format!("{} truncation notices", rep.notices.len()),
        ),
    ];
    let results = SimulateResults {
        n_paths: rep.n_paths,
        seed: rep.seed,
        sup_mean_sq_norm: rep.full.sup_mean_sq_norm,
        sup_mean_sq_norm_half: rep.half.sup_mean_sq_norm,
        derivative_sups: rep.full.derivative_sups.clone(),
        derivative_sups_half: rep.half.derivative_sups.clone(),
        derivative_block_sups: rep.derivative_block_sups.clone(),
        continuity: rep.continuity,
        crude_bound: bound,
        block_term_max_z: z,
        truncation_notices: rep.notices.clone(),
    };
    Ok(finish(Command::Simulate, cfg, bundle, results, audits))
}

#[derive(Serialize)]
struct CriterionSummary {
    functional: String,
    t: f64,
    epsilon: f64,
    n_values: usize,
    fraction_positive: f64,
    min: f64,
    quartiles: [f64; 3],
    max: f64,
    mean: f64,
    /// Seeds where the functional is not differentiable at `x(t)`.
    degenerate: Vec<u64>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn criterion_summary(r: &CriterionReport) -> CriterionSummary {
    let mut v: Vec<f64> = r.values.iter().map(|p| p.1).collect();
    v.sort_by(f64::total_cmp);
    CriterionSummary {
        functional: r.functional.clone(),
        t: r.t,
        epsilon: r.epsilon,
        n_values: v.len(),
        fraction_positive: r.fraction_positive,
        min: r.min,
        quartiles: [quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75)],
        max: r.max,
        mean: r.mean,
        degenerate: r.degenerate.clone(),
    }
}

pub fn density(cfg: &RunConfig) -> Result<RunOutcome> {
    let m = model(cfg)?;
    let t = cfg.density.t.unwrap_or(m.spec.horizon);
    let i = m
        .grid
        .index_of(t)
        .ok_or_else(|| Error::Argument(format!("density.t = {t} is not a grid time")))?;
    let functionals = cfg
        .density
        .functionals
        .iter()
        .map(|name| functional(name, m.n_modes()).map_err(Error::Config))
        .collect::<Result<Vec<_>>>()?;
    let mc = &cfg.monte_carlo;
    let reports = criterion_statistics(&m, i, mc.paths, mc.seed, cfg.density.epsilon, &functionals)?;

    let mut bundle = Bundle::default();
    for (k, (r, name)) in reports.iter().zip(&cfg.density.functionals).enumerate() {
        let mut csv = Csv::new(&["seed", "criterion"]);
        for (seed, v) in &r.values {
            csv.row([seed.to_string(), num(*v)]);
        }
        let file = if k == 0 { "density.csv".to_string() } else { format!("density_{name}.csv") };
        bundle.add(&file, csv.into_string());
    }
    let nonneg = reports.iter().all(|r| r.values.iter().all(|(_, v)| *v >= 0.0));
    let audits = vec![Audit::new(
        "criterion values nonnegative",
        nonneg,
        format!("{} functionals, {} paths", reports.len(), mc.paths),
    )];
    let results: Vec<CriterionSummary> = reports.iter().map(criterion_summary).collect();
    Ok(finish(Command::Density, cfg, bundle, results, audits))
}

#[derive(Serialize)]
struct ResolventResults {
    growth_n: f64,
    growth_beta: f64,
    identity_residual: f64,
}

pub fn resolvent(cfg: &RunConfig) -> Result<RunOutcome> {
    let m = model(cfg)?;
    let mut bundle = Bundle::default();
    bundle.add("resolvent.csv", m.table.to_csv());
    let growth = m.table.growth_audit();
    let residual = resolvent_identity_residual(&m.table, &m.kernel);
    let at_zero = (0..m.n_modes()).all(|n| m.table.value(n, 0) == 1.0);
    let audits = vec![
        Audit::new("R(0) = I", at_zero, format!("{} modes", m.n_modes())),
        Audit::new(
            "growth bound N e^(beta t) with N <= 2",
            growth.passes(),
            format!("N = {:.6}, beta = {:.6}", growth.n_const, growth.beta),
        ),
    ];
    let results = ResolventResults {
        growth_n: growth.n_const,
        growth_beta: growth.beta,
        identity_residual: residual,
    };
    Ok(finish(Command::Resolvent, cfg, bundle, results, audits))
}

pub fn fbm_test(cfg: &RunConfig) -> Result<RunOutcome> {
    let f = &cfg.fbm_test;
    let rows = validate::covariance_table(&f.hurst, f.points, f.paths, cfg.monte_carlo.seed)?;
    let mut csv = Csv::new(&["hurst", "s", "t", "empirical", "se", "exact"]);
    for r in &rows {
        csv.row([num(r.hurst), num(r.s), num(r.t), num(r.empirical), num(r.se), num(r.exact)]);
    }
    let mut bundle = Bundle::default();
    bundle.add("fbm_covariance.csv", csv.into_string());
    let audits = vec![validate::covariance_audit(&rows)];
    Ok(finish(Command::FbmTest, cfg, bundle, rows.len(), audits))
}

/// The oracle suite, followed by the moment audits of the configured model.
pub fn validate_all(cfg: &RunConfig) -> Result<RunOutcome> {
    let results: Vec<CriterionResult> = validate::CRITERIA
        .iter()
        .map(|c| validate::run_criterion(c.0))
        .collect::<Result<_>>()?;
    let mut audits: Vec<Audit> = results
        .iter()
        .flat_map(|r| {
            r.audits.iter().map(move |a| Audit {
                name: format!("[{}] {}", r.id, a.name),
                ..a.clone()
            })
        })
        .collect();
    let sim = simulate(cfg)?;
    audits.extend(sim.audits.into_iter().map(|a| Audit {
        name: format!("[config model] {}", a.name),
        ..a
    }));
    Ok(finish(Command::Validate, cfg, Bundle::default(), results, audits))
}
