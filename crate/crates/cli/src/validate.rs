//! Oracle suite behind `nsfide validate` and the acceptance tests.

use std::time::Instant;

use nsfide_core::density::{criterion_statistics, density_criterion, last_interval_derivative_cell, lower_bound_epsilon, Functional};
use nsfide_core::fbm::{
    covariance, inner_product_h, weight_phi, CholeskySampler, FbmKernel, FbmSample, HurstParameter, KernelQuadrature,
    ScalarFunctionOnGrid, WienerSampler,
};
use nsfide_core::grid::TimeGrid;
use nsfide_core::model::{InitialSpec, Model, ModelSpec, RegistryRef};
use nsfide_core::moments::{crude_second_moment_bound, monte_carlo_moments, self_convergence};
use nsfide_core::quadrature::GaussLegendre;
use nsfide_core::resolvent::{resolvent_identity_residual, solve_mode_resolvent, MemoryKernel, ResolventTable};
use nsfide_core::seed::derive_seed;
use nsfide_core::solver::{DerivativeScope, PathSolver};
use nsfide_core::spectral::SpectralField;
use nsfide_core::stochastic::{skorohod_integral, trace_correction, DerivativeSurface, IntegrandTrajectory, ResolventWeight};
use nsfide_core::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Audit {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Audit {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: usize,
    pub title: &'static str,
    pub passed: bool,
    pub audits: Vec<Audit>,
    /// Wall-clock time; kept out of the summary so that it stays reproducible.
    #[serde(skip)]
    pub seconds: f64,
    #[serde(skip)]
    pub time_limit: Option<f64>,
}

impl CriterionResult {
    pub fn within_time(&self) -> bool {
        self.time_limit.is_none_or(|l| self.seconds < l)
    }
}

pub const CRITERIA: [(usize, &str, Option<f64>); 9] = [
    (1, "fBm covariance", Some(30.0)),
    (2, "Wiener-representation sampler", Some(60.0)),
    (3, "K* isometry", None),
    (4, "resolvent oracles", Some(10.0)),
    (5, "Skorohod integral of fBm", Some(60.0)),
    (6, "linear model end to end", Some(120.0)),
    (7, "nonlinear model", Some(600.0)),
    (8, "density criterion", Some(300.0)),
    (9, "reproducibility", None),
];

const Z: f64 = 3.0;

pub fn run_criterion(id: usize) -> Result<CriterionResult> {
    let &(_, title, time_limit) = CRITERIA
        .iter()
        .find(|c| c.0 == id)
        .ok_or_else(|| Error::Argument(format!("no criterion {id}")))?;
    let start = Instant::now();
    let audits = match id {
        1 => fbm_covariance(&[0.6, 0.75, 0.9], 8, 20_000, 1)?,
        2 => wiener_sampler(20_000, 2)?,
        3 => k_star_isometry()?,
        4 => resolvent_oracles()?,
        5 => skorohod_of_fbm(10_000, 5)?,
        6 => linear_model(10_000, 6)?,
        7 => nonlinear_model(2_000, 7)?,
        8 => density(200, 8)?,
        _ => reproducibility()?,
    };
    Ok(CriterionResult {
        id,
        title,
        passed: audits.iter().all(|a| a.passed),
        audits,
        seconds: start.elapsed().as_secs_f64(),
        time_limit,
    })
}

/// Sample mean and its standard error, summed in index order.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn hurst(h: f64) -> Result<HurstParameter> {
    HurstParameter::new(h)
}

fn sub_seed(seed: u64, stream: usize) -> u64 {
    derive_seed(seed, u64::MAX - stream as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovarianceRow {
    pub hurst: f64,
    pub s: f64,
    pub t: f64,
    pub empirical: f64,
    pub se: f64,
    pub exact: f64,
}

impl CovarianceRow {
    pub fn z(&self) -> f64 {
        (self.empirical - self.exact).abs() / self.se
    }
}

fn sample_points(paths: usize, seed: u64, indices: &[usize], sample: impl Fn(u64) -> FbmSample + Sync) -> Vec<Vec<f64>> {
    (0..paths)
        .into_par_iter()
        .map(|p| {
            let s = sample(derive_seed(seed, p as u64));
            indices.iter().map(|&i| s.values[i]).collect()
        })
        .collect()
}

/// `(mean, se)` of `X_a X_b` for every pair `a ≤ b`.
fn product_moments(paths: &[Vec<f64>]) -> Vec<(usize, usize, f64, f64)> {
    let k = paths[0].len();
    let mut out = Vec::new();
    for a in 0..k {
        for b in a..k {
            let prods: Vec<f64> = paths.iter().map(|v| v[a] * v[b]).collect();
            let (m, se) = mean_se(&prods);
            out.push((a, b, m, se));
        }
    }
    out
}

/// Empirical `E[B^H(s)B^H(t)]` from the Cholesky sampler on `points` equally
/// spaced times in `(0, 1]`.
pub fn covariance_table(hursts: &[f64], points: usize, paths: usize, seed: u64) -> Result<Vec<CovarianceRow>> {
    let grid = TimeGrid::new(1.0, points)?;
    let indices: Vec<usize> = (1..=points).collect();
    let mut rows = Vec::new();
    for (k, &h) in hursts.iter().enumerate() {
        let hp = hurst(h)?;
        let sampler = CholeskySampler::new(grid, hp)?;
        let samples = sample_points(paths, sub_seed(seed, k), &indices, |s| sampler.sample(s));
        for (a, b, empirical, se) in product_moments(&samples) {
            let (s, t) = (grid.t(indices[a]), grid.t(indices[b]));
            rows.push(CovarianceRow {
                hurst: h,
                s,
                t,
                empirical,
                se,
                exact: covariance(s, t, hp)?,
            });
        }
    }
    Ok(rows)
}

pub fn covariance_audit(rows: &[CovarianceRow]) -> Audit {
    let worst = rows.iter().map(|r| r.z()).fold(0.0, f64::max);
    let bad = rows.iter().filter(|r| !(r.z() <= Z)).count();
    Audit::new(
        "fbm covariance within 3 SE",
        bad == 0,
        format!("{} entries, {bad} outside, max |z| = {worst:.3}", rows.len()),
    )
}

pub fn fbm_covariance(hursts: &[f64], points: usize, paths: usize, seed: u64) -> Result<Vec<Audit>> {
    Ok(vec![covariance_audit(&covariance_table(hursts, points, paths, seed)?)])
}

pub fn wiener_sampler(paths: usize, seed: u64) -> Result<Vec<Audit>> {
    let grid = TimeGrid::new(1.0, 64)?;
    let indices: Vec<usize> = (1..=8).map(|k| 8 * k).collect();
    let last = indices.len() - 1;
    let mut audits = Vec::new();
    for (k, h) in [0.6, 0.75, 0.9].into_iter().enumerate() {
        let hp = hurst(h)?;
        let wiener = WienerSampler::new(grid, hp, KernelQuadrature::default())?;
        let chol = CholeskySampler::new(grid, hp)?;
        let w = product_moments(&sample_points(paths, sub_seed(seed, 2 * k), &indices, |s| wiener.sample(s)));
        let c = product_moments(&sample_points(paths, sub_seed(seed, 2 * k + 1), &indices, |s| chol.sample(s)));

        let &(_, _, var_t, se_t) = w.iter().find(|e| e.0 == last && e.1 == last).expect("diagonal entry");
        let n = indices[last];
        let target = grid.t(n).powf(2.0 * h);
        let bias = wiener.covariance_bias(n, n, hp);
        audits.push(Audit::new(
            format!("wiener variance at T, H = {h}"),
            (var_t - target).abs() <= Z * se_t + bias,
            format!("{var_t:.6} vs T^2H = {target:.6}, se {se_t:.2e}, quadrature bias {bias:.2e}"),
        ));

        // both samples against the Gram matrix the Cholesky sampler factorizes
        let (mut w_ok, mut c_ok) = (true, true);
        let (mut w_worst, mut c_worst, mut two_sample): (f64, f64, f64) = (0.0, 0.0, 0.0);
        for (x, y) in w.iter().zip(&c) {
            let (a, b) = (indices[x.0], indices[x.1]);
            let exact = covariance(grid.t(a), grid.t(b), hp)?;
            let bias = wiener.covariance_bias(a, b, hp);
            let zw = ((x.2 - exact).abs() - bias) / x.3;
            let zc = (y.2 - exact).abs() / y.3;
            w_ok &= zw <= Z;
            c_ok &= zc <= Z;
            w_worst = w_worst.max(zw);
            c_worst = c_worst.max(zc);
            two_sample = two_sample.max(((x.2 - y.2).abs() - bias) / x.3.hypot(y.3));
        }
        audits.push(Audit::new(
            format!("wiener covariance matches the Cholesky covariance, H = {h}"),
            w_ok,
            format!(
                "{} entries, max (|diff| - bias)/se = {w_worst:.3}; two-sample statistic against Cholesky draws {two_sample:.3}",
                w.len()
            ),
        ));
        audits.push(Audit::new(
            format!("Cholesky draws match their covariance, H = {h}"),
            c_ok,
            format!("{} entries, max |z| = {c_worst:.3}", c.len()),
        ));
    }
    Ok(audits)
}

/// Test functions for the `K_H^*` isometry.
pub fn isometry_functions(grid: TimeGrid) -> Result<Vec<(&'static str, ScalarFunctionOnGrid)>> {
    Ok(vec![
        ("indicator", ScalarFunctionOnGrid::indicator(grid, 0.5)?),
        ("one", ScalarFunctionOnGrid::from_fn(grid, |_| 1.0)),
        ("linear", ScalarFunctionOnGrid::from_fn(grid, |t| t)),
        ("sine", ScalarFunctionOnGrid::from_fn(grid, |t| (3.0 * t).sin())),
        ("mixed", ScalarFunctionOnGrid::from_fn(grid, |t| if t < 0.25 { -1.0 } else { 0.5 + t * t })),
    ])
}

pub fn k_star_isometry() -> Result<Vec<Audit>> {
    let grid = TimeGrid::new(1.0, 16)?;
    let mut audits = Vec::new();
    for h in [0.6, 0.75, 0.9] {
        let hp = hurst(h)?;
        let coarse = FbmKernel::new(hp, KernelQuadrature::default());
        let fine = FbmKernel::new(hp, KernelQuadrature::default().refined());
        for (name, phi) in isometry_functions(grid)? {
            let target = inner_product_h(&phi, &phi, hp)?;
            let e0 = ((coarse.k_star_norm_sq(&phi) - target) / target).abs();
            let e1 = ((fine.k_star_norm_sq(&phi) - target) / target).abs();
            audits.push(Audit::new(
                format!("isometry {name}, H = {h}"),
                e0 <= 2e-2 && e1 < e0,
                format!("relative error {e0:.3e}, refined {e1:.3e}"),
            ));
        }
    }
    Ok(audits)
}

/// `r'' + r' + 2r = 0`-type reduction for `λ = β = 1`: `r = e^{−t/2}(cos ωt − sin ωt/√3)`.
fn constant_kernel_oracle(t: f64) -> f64 {
    let w = 3f64.sqrt() / 2.0;
    (-0.5 * t).exp() * ((w * t).cos() - (w * t).sin() / 3f64.sqrt())
}

pub fn resolvent_oracles() -> Result<Vec<Audit>> {
    let max_err = |r: &[f64], g: TimeGrid, f: &dyn Fn(f64) -> f64| {
        r.iter().enumerate().map(|(i, v)| (v - f(g.t(i))).abs()).fold(0.0, f64::max)
    };
    let g = TimeGrid::new(2.0, 2000)?;
    let e_exp = max_err(&solve_mode_resolvent(1.0, &MemoryKernel::Zero, g)?, g, &|t| (-t).exp());
    let g2 = TimeGrid::new(4.0, 4000)?;
    let e_const = max_err(
        &solve_mode_resolvent(1.0, &MemoryKernel::Constant { beta: 1.0 }, g2)?,
        g2,
        &constant_kernel_oracle,
    );
    let mut audits = vec![
        Audit::new("memoryless mode is exponential", e_exp <= 1e-6, format!("max error {e_exp:.3e}")),
        Audit::new("constant kernel matches ODE closed form", e_const <= 1e-5, format!("max error {e_const:.3e}")),
    ];
    for b in [
        MemoryKernel::Zero,
        MemoryKernel::Constant { beta: 1.0 },
        MemoryKernel::ExpDecay { beta: 1.0, a: 2.0 },
    ] {
        let rc = resolvent_identity_residual(&ResolventTable::build(TimeGrid::new(1.0, 500)?, vec![1.0], &b)?, &b);
        let rf = resolvent_identity_residual(&ResolventTable::build(TimeGrid::new(1.0, 1000)?, vec![1.0], &b)?, &b);
        let drop = rc / rf;
        let order = drop.log2();
        audits.push(Audit::new(
            format!("residual drops 4x under halving, {}", b.name()),
            (order - 2.0).abs() <= 0.1,
            format!("residual {rc:.3e} -> {rf:.3e}, ratio {drop:.3}, observed order {order:.3}"),
        ));
    }
    Ok(audits)
}

pub fn skorohod_of_fbm(paths: usize, seed: u64) -> Result<Vec<Audit>> {
    let n = 128;
    let t_max = 1.0;
    let h = 0.7;
    let hp = hurst(h)?;
    let grid = TimeGrid::new(t_max, n)?;
    // u = B^H: D_l u(t_j) = 1 on cells l ≤ j
    let rows = (0..grid.n_points()).map(|j| vec![SpectralField { coeffs: vec![1.0] }; j + 1]).collect();
    let surface = DerivativeSurface::new(grid, rows)?;

    let trace = trace_correction(&surface, None, ResolventWeight::Identity, hp, 0, n)?.coeffs[0];
    let gl = GaussLegendre::new(16);
    let oracle = gl.integrate_graded(0.0, t_max, 40, |t| {
        gl.integrate_graded(0.0, t, 40, |v| if v > 0.0 { weight_phi(v, hp) } else { 0.0 })
    });
    let trace_err = ((trace - oracle) / oracle).abs();

    let sampler = CholeskySampler::new(grid, hp)?;
    let half_t2h = 0.5 * t_max.powf(2.0 * h);
    let vals = (0..paths)
        .into_par_iter()
        .map(|p| {
            let s = sampler.sample(derive_seed(seed, p as u64));
            let u = IntegrandTrajectory::scalar(grid, &s.values)?;
            let v = skorohod_integral(&u, &surface, None, ResolventWeight::Identity, &s, hp, 0, n)?.coeffs[0];
            Ok((v, 0.5 * s.values[n].powi(2) - half_t2h))
        })
        .collect::<Result<Vec<_>>>()?;
    let path_err = vals.iter().map(|(v, e)| (v - e).abs()).fold(0.0, f64::max) / half_t2h;
    let (mean, se) = mean_se(&vals.iter().map(|p| p.0).collect::<Vec<_>>());
    Ok(vec![
        Audit::new(
            "trace part against nested quadrature",
            trace_err <= 1e-3,
            format!("{trace:.10} vs {oracle:.10}, relative {trace_err:.3e}"),
        ),
        Audit::new(
            "pathwise Ito formula",
            path_err <= 1e-3,
            format!("max relative deviation {path_err:.3e} over {paths} paths"),
        ),
        Audit::new(
            "zero mean within 3 SE",
            mean.abs() <= Z * se,
            format!("mean {mean:.4e}, se {se:.4e}"),
        ),
    ])
}

/// Sine coefficients of `a·y(π − y)` by Gauss–Legendre quadrature.
fn parabola_coefficients(a: f64, n_modes: usize) -> Vec<f64> {
    let gl = GaussLegendre::new(24);
    let pi = std::f64::consts::PI;
    (1..=n_modes)
        .map(|n| {
            gl.integrate_composite(0.0, pi, 8, |y| a * y * (pi - y) * (2.0 / pi).sqrt() * (n as f64 * y).sin())
        })
        .collect()
}

pub fn linear_spec() -> ModelSpec {
    ModelSpec {
        hurst: 0.7,
        horizon: 1.0,
        delay: 0.5,
        blocks: None,
        dt: 1.0 / 128.0,
        n_modes: 4,
        space_points: 15,
        derivative_depth: 2,
        g: RegistryRef::new("zero", &[]),
        f: RegistryRef::new("zero", &[]),
        sigma: RegistryRef::new("constant", &[0.5]),
        kernel: RegistryRef::new("zero", &[]),
        initial: InitialSpec {
            alpha: "constant".into(),
            alpha_params: vec![1.0],
            field: "parabola".into(),
            field_params: vec![1.0],
        },
    }
}

pub fn linear_model(paths: usize, seed: u64) -> Result<Vec<Audit>> {
    let model = Model::new(linear_spec())?;
    let hp = model.hurst;
    let report = monte_carlo_moments(&model, paths, seed, DerivativeScope::Minimal)?;
    let a0 = parabola_coefficients(1.0, model.n_modes());
    let sigma_hat = model.basis.analyze(&vec![0.5; model.basis.grid().n_points()])?.coeffs;
    let lambda: Vec<f64> = (1..=model.n_modes()).map(|n| (n * n) as f64).collect();
    let grid = model.grid;
    let gaussian_se = (2.0 / (paths as f64 - 1.0)).sqrt();

    let mut mean_worst: f64 = 0.0;
    let mut var_worst: f64 = 0.0;
    let mut mean_ok = true;
    let mut var_ok = true;
    let mut var_scale: f64 = 0.0;
    let mut checks = Vec::new();
    for t in [0.25, 0.5, 0.75, 1.0] {
        let i = grid.index_of(t).expect("grid time");
        for n in 0..model.n_modes() {
            let integrand: Vec<f64> = (0..grid.n_points())
                .map(|j| if j < i { (-lambda[n] * (t - grid.t(j))).exp() * sigma_hat[n] } else { 0.0 })
                .collect();
            let f = ScalarFunctionOnGrid::new(grid, integrand)?;
            let v = inner_product_h(&f, &f, hp)?;
            var_scale = var_scale.max(v);
            checks.push((i, n, (-lambda[n] * t).exp() * a0[n], v));
        }
    }
    // modes where the oracle variance vanishes can only carry rounding noise
    let floor = 1e-14 * var_scale;
    for (i, n, mean_target, v) in checks {
        let est = report.mode_mean[i][n];
        let dev = (est.mean - mean_target).abs();
        let ok = dev <= Z * est.se + floor.sqrt();
        mean_ok &= ok;
        if v > floor {
            mean_worst = mean_worst.max(dev / est.se);
        }
        let s2 = report.mode_variance[i][n];
        let dev = (s2 - v).abs();
        var_ok &= dev <= Z * v * gaussian_se + floor;
        if v > floor {
            var_worst = var_worst.max(dev / (v * gaussian_se));
        }
    }
    Ok(vec![
        Audit::new(
            "per-mode mean is the semigroup applied to the initial value",
            mean_ok,
            format!("16 checks, max |z| = {mean_worst:.3}"),
        ),
        Audit::new(
            "per-mode variance matches the Wiener-integral oracle",
            var_ok,
            format!("16 checks, max |z| = {var_worst:.3}"),
        ),
    ])
}

/// The nonlinear reference model: tanh coefficients, exponentially decaying
/// memory, three delay blocks.
pub fn reference_spec() -> ModelSpec {
    ModelSpec {
        hurst: 0.7,
        horizon: 0.75,
        delay: 0.25,
        blocks: Some(3),
        dt: 1.0 / 512.0,
        n_modes: 32,
        space_points: 127,
        derivative_depth: 2,
        g: RegistryRef::new("scaled_tanh", &[0.1, 1.0]),
        f: RegistryRef::new("scaled_tanh", &[0.5, 1.0]),
        sigma: RegistryRef::new("scaled_tanh", &[0.8, 1.0]),
        kernel: RegistryRef::new("exp_decay", &[1.0, 2.0]),
        initial: InitialSpec {
            alpha: "constant".into(),
            alpha_params: vec![1.0],
            field: "parabola".into(),
            field_params: vec![1.0],
        },
    }
}

pub fn block_consistency(model: &Model, paths: usize, seed: u64) -> Result<Audit> {
    let solver = PathSolver::new(model, DerivativeScope::Required);
    let mut ok = true;
    for p in 0..paths {
        let s = derive_seed(seed, p as u64);
        let full = solver.solve_path(s)?;
        let mut st = solver.initial_state(model.sample_fbm(s).increments())?;
        let mut snapshots = Vec::new();
        for n in 0..model.n_blocks {
            solver.solve_block(n, &mut st)?;
            snapshots.push(st.trajectory().to_vec());
        }
        ok &= st.trajectory() == full.trajectory();
        for snap in &snapshots {
            ok &= &full.trajectory()[..snap.len()] == snap.as_slice();
        }
    }
    Ok(Audit::new(
        "block consistency (exact)",
        ok,
        format!("{paths} paths, {} blocks each", model.n_blocks),
    ))
}

/// Stored `D_u x(t)` against `R(t − u)σ(x(u − r))` at `pairs` pseudo-random
/// `(u, t)` with `t − r < u < t`.
pub fn last_interval_identity(model: &Model, pairs: usize, seed: u64) -> Result<Audit> {
    let solver = PathSolver::new(model, DerivativeScope::AllBlocks);
    let n_paths = 5;
    let states = (0..n_paths)
        .map(|p| solver.solve_path(derive_seed(seed, p)))
        .collect::<Result<Vec<_>>>()?;
    let n = model.n_steps() as u64;
    let mut worst: f64 = 0.0;
    let mut missing = 0;
    for k in 0..pairs as u64 {
        let r = derive_seed(seed ^ 0x5eed, k);
        let st = &states[(r % n_paths) as usize];
        let i = 1 + (derive_seed(r, 1) % n) as usize;
        let window = i.min(model.n_delay) as u64;
        let c = i - 1 - (derive_seed(r, 2) % window) as usize;
        let closed = last_interval_derivative_cell(st, model, i, c)?;
        let Some(stored) = st.d1(i, c) else {
            missing += 1;
            continue;
        };
        let scale = closed.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let err = closed.iter().zip(&stored).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
        worst = worst.max(err);
    }
    Ok(Audit::new(
        "last-interval derivative identity",
        missing == 0 && worst <= 1e-13,
        format!("{pairs} pairs, max relative deviation {worst:.3e}, {missing} not stored"),
    ))
}

pub fn nonlinear_model(paths: usize, seed: u64) -> Result<Vec<Audit>> {
    let model = Model::new(reference_spec())?;
    let mut audits = vec![block_consistency(&model, 10, seed)?];

    let report = monte_carlo_moments(&model, paths, seed, DerivativeScope::Required)?;
    let z = report.block_term_max_z();
    let n_terms: usize = report.block_terms.iter().map(Vec::len).sum();
    audits.push(Audit::new(
        "Skorohod block terms zero-mean within 3 SE",
        z <= Z,
        format!("{n_terms} terms over {paths} paths, max |z| = {z:.3}"),
    ));

    audits.push(last_interval_identity(&model, 50, seed)?);

    let sup = report.full.sup_mean_sq_norm.value.mean;
    let bound = crude_second_moment_bound(&model);
    let finite = sup.is_finite() && report.full.derivative_sups.iter().all(|s| s.value.mean.is_finite());
    audits.push(Audit::new(
        "moment sups finite and stable under doubling",
        finite && report.sups_stable(Z),
        format!(
            "sup E|x|^2: {:.6} ({} paths) vs {:.6} ({} paths); derivative sups {}",
            sup,
            report.full.n_paths,
            report.half.sup_mean_sq_norm.value.mean,
            report.half.n_paths,
            report
                .full
                .derivative_sups
                .iter()
                .map(|s| format!("{:.4e}", s.value.mean))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    ));
    audits.push(Audit::new(
        "second moment under the crude bound with 1.5x headroom",
        1.5 * sup <= bound,
        format!("1.5 * {sup:.6} vs {bound:.6}"),
    ));
    audits.push(Audit::new(
        "hierarchy complete",
        report.notices.is_empty(),
        format!("{} truncation notices", report.notices.len()),
    ));

    let mut coarse = reference_spec();
    coarse.dt = 1.0 / 64.0;
    let diffs = self_convergence(&Model::new(coarse)?, 3, 200, seed)?;
    audits.push(Audit::new(
        "three-level self-convergence is monotone",
        diffs.windows(2).all(|w| w[1] < w[0]),
        format!(
            "RMS differences {}",
            diffs.iter().map(|d| format!("{d:.4e}")).collect::<Vec<_>>().join(", ")
        ),
    ));
    Ok(audits)
}

pub fn density(paths: usize, seed: u64) -> Result<Vec<Audit>> {
    let mut audits = Vec::new();
    let with = |edit: &dyn Fn(&mut ModelSpec)| {
        let mut s = reference_spec();
        edit(&mut s);
        Model::new(s)
    };
    let e1 = |m: &Model| Functional::Linear(SpectralField::basis_vector(m.n_modes(), 1).coeffs);

    let zero = with(&|s| s.sigma = RegistryRef::new("zero", &[]))?;
    let i = zero.n_steps();
    let reps = criterion_statistics(&zero, i, paths, seed, 1e-10, &[e1(&zero), Functional::Norm, Functional::NormUnnormalized])?;
    audits.push(Audit::new(
        "zero noise gives fraction_positive = 0",
        reps.iter().all(|r| r.fraction_positive == 0.0),
        reps.iter()
            .map(|r| format!("{}: {}", r.functional, r.fraction_positive))
            .collect::<Vec<_>>()
            .join(", "),
    ));

    let shifted = with(&|s| s.sigma = RegistryRef::new("scaled_tanh", &[0.3, 1.0, 0.5]))?;
    let delta = shifted.sigma.lower_bound();
    let eps = lower_bound_epsilon(&shifted, i, delta);
    let rep = &criterion_statistics(&shifted, i, paths, seed, eps, &[e1(&shifted)])?[0];
    audits.push(Audit::new(
        "noise bounded below gives fraction_positive = 1",
        delta > 0.0 && rep.fraction_positive == 1.0,
        format!("delta {delta}, epsilon {eps:.4e}, fraction {}, min {:.4e}", rep.fraction_positive, rep.min),
    ));

    let c = 0.8;
    let det = with(&|s| {
        s.g = RegistryRef::new("zero", &[]);
        s.f = RegistryRef::new("zero", &[]);
        s.sigma = RegistryRef::new("constant", &[c]);
        s.kernel = RegistryRef::new("zero", &[]);
    })?;
    let st = PathSolver::new(&det, DerivativeScope::Minimal).solve_path(seed)?;
    let c1 = det.basis.analyze(&vec![c; det.basis.grid().n_points()])?.coeffs[0];
    let r = det.spec.delay;
    // ∫_{t−r}^t (e^{−(t−u)} c_1)² du
    let exact = c1 * c1 * (1.0 - (-2.0 * r).exp()) / 2.0;
    let v = density_criterion(&st, &det, i, &e1(&det))?.unwrap_or(f64::NAN);
    let rel = ((v - exact) / exact).abs();
    audits.push(Audit::new(
        "deterministic noise matches closed-form quadrature",
        rel <= 1e-4,
        format!("{v:.10} vs {exact:.10}, relative {rel:.3e}"),
    ));
    Ok(audits)
}

/// Small configuration used for the in-process reproducibility check.
pub fn reproducibility_config() -> RunConfig {
    let mut model = reference_spec();
    model.dt = 1.0 / 64.0;
    model.n_modes = 8;
    model.space_points = 31;
    let mut cfg = RunConfig::with_model(model);
    cfg.monte_carlo.paths = 24;
    cfg.monte_carlo.seed = 9;
    cfg
}

pub fn reproducibility() -> Result<Vec<Audit>> {
    let cfg = reproducibility_config();
    let run = |threads: usize| -> Result<Vec<(String, String)>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Internal(e.to_string()))?;
        pool.install(|| {
            let mut files = crate::runs::simulate(&cfg)?.bundle.files;
            files.extend(crate::runs::density(&cfg)?.bundle.files);
            Ok(files)
        })
    };
    let a = run(1)?;
    let b = run(1)?;
    let c = run(8)?;
    Ok(vec![
        Audit::new("identical bytes across two runs", a == b, format!("{} files compared", a.len())),
        Audit::new("identical bytes across 1 and 8 threads", a == c, format!("{} files compared", a.len())),
    ])
}
