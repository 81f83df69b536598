//! Resolvent of the memory equation `v' = Av + ∫_0^t b(t−s) A v(s) ds` in the
//! sine basis, where `A e_n = −n² e_n`. Each mode solves the scalar Volterra
//! equation `r' = −λ r − λ ∫_0^t b(t−s) r(s) ds`, `r(0) = 1`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};
use crate::grid::TimeGrid;
use crate::spectral::SpectralField;

/// Magnitude above which a mode is declared unstable.
const BLOWUP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum MemoryKernel {
    Zero,
    Constant { beta: f64 },
    /// `β·e^{−a t}`.
    ExpDecay { beta: f64, a: f64 },
}

impl MemoryKernel {
    pub fn registry_lookup(name: &str, params: &[f64]) -> Result<Self> {
        let k = match (name, params) {
            ("zero", []) => Self::Zero,
            ("constant", [beta]) => Self::Constant { beta: *beta },
            ("exp_decay", [beta, a]) => {
                if *a < 0.0 {
                    return Err(Error::Config("exp_decay rate must be nonnegative".into()));
                }
                Self::ExpDecay { beta: *beta, a: *a }
            }
            ("zero" | "constant" | "exp_decay", _) => {
                return Err(Error::Config(format!(
                    "memory kernel '{name}' given {} parameters",
                    params.len()
                )))
            }
            (other, _) => return Err(Error::Config(format!("unknown memory kernel '{other}'"))),
        };
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("memory kernel parameters must be finite".into()));
        }
        Ok(k)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::Constant { .. } => "constant",
            Self::ExpDecay { .. } => "exp_decay",
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Constant { beta } => beta,
            Self::ExpDecay { beta, a } => beta * (-a * t).exp(),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            Self::Zero | Self::Constant { .. } => 0.0,
            Self::ExpDecay { beta, a } => -a * beta * (-a * t).exp(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            Self::Zero => true,
            Self::Constant { beta } | Self::ExpDecay { beta, .. } => beta == 0.0,
        }
    }
}

/// `λ_n = n²` for `n = 1..=n_modes`.
pub fn eigenvalues(n_modes: usize) -> Vec<f64> {
    (1..=n_modes).map(|n| (n * n) as f64).collect()
}

/// Implicit trapezoidal step with a trapezoidal convolution sum; O(n²).
pub fn solve_mode_resolvent(lambda: f64, b: &MemoryKernel, grid: TimeGrid) -> Result<Vec<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(argument(format!("eigenvalue must be positive, got {lambda}")));
    }
    let n = grid.n_steps();
    let dt = grid.dt();
    let bk: Vec<f64> = (0..=n).map(|k| b.value(k as f64 * dt)).collect();
    let memory = !b.is_zero();
    let mut r = vec![0.0; n + 1];
    r[0] = 1.0;
    // F_i = −λ r_i − λ conv_i, conv_i = dt[½b_i r_0 + Σ_{0<j<i} b_{i−j} r_j + ½b_0 r_i]
    let conv_partial = |r: &[f64], i: usize| -> f64 {
        if !memory || i == 0 {
            return 0.0;
        }
        let mut s = 0.5 * bk[i] * r[0];
        for j in 1..i {
            s += bk[i - j] * r[j];
        }
        dt * s
    };
    let mut f_prev = -lambda * r[0];
    let denom = 1.0 + 0.5 * dt * lambda * (1.0 + 0.5 * dt * bk[0]);
    for i in 0..n {
        let s_next = conv_partial(&r, i + 1);
        let rn = (r[i] + 0.5 * dt * f_prev - 0.5 * dt * lambda * s_next) / denom;
        if !rn.is_finite() || rn.abs() > BLOWUP {
            return Err(Error::Numerical(format!(
                "resolvent mode λ = {lambda} became unstable at t = {} (|r| = {})",
                grid.t(i + 1),
                rn.abs()
            )));
        }
        r[i + 1] = rn;
        f_prev = -lambda * rn - lambda * (s_next + 0.5 * dt * bk[0] * rn);
    }
    Ok(r)
}

/// Fitted growth constants `|r_n(t)| ≤ N e^{βt}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthAudit {
    pub n_const: f64,
    pub beta: f64,
}

impl GrowthAudit {
    pub fn passes(&self) -> bool {
        self.n_const.is_finite() && self.beta.is_finite() && self.n_const <= 2.0
    }
}

/// `r_n(t_i)` for every mode, built once and shared read-only.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolventTable {
    grid: TimeGrid,
    eigenvalues: Vec<f64>,
    /// `entries[n][i] = r_n(t_i)`.
    entries: Vec<Vec<f64>>,
}

impl ResolventTable {
    pub fn build(grid: TimeGrid, eigenvalues: Vec<f64>, b: &MemoryKernel) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(argument("resolvent table needs at least one eigenvalue"));
        }
        let entries = eigenvalues
            .par_iter()
            .map(|&l| solve_mode_resolvent(l, b, grid))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            eigenvalues,
            entries,
        })
    }

    /// Table for the first `n_modes` Dirichlet eigenvalues.
    pub fn for_modes(grid: TimeGrid, n_modes: usize, b: &MemoryKernel) -> Result<Self> {
        Self::build(grid, eigenvalues(n_modes), b)
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn mode(&self, n: usize) -> &[f64] {
        &self.entries[n]
    }

    pub fn value(&self, n: usize, i: usize) -> f64 {
        self.entries[n][i]
    }

    /// `(r_1(t_i), …, r_N(t_i))`.
    pub fn at(&self, i: usize) -> Vec<f64> {
        self.entries.iter().map(|m| m[i]).collect()
    }

    pub fn apply(&self, t_index: usize, x: &SpectralField) -> Result<SpectralField> {
        if t_index > self.grid.n_steps() {
            return Err(argument(format!("time index {t_index} is outside the table grid")));
        }
        if x.n_modes() != self.n_modes() {
            return Err(argument(format!(
                "field has {} modes, resolvent has {}",
                x.n_modes(),
                self.n_modes()
            )));
        }
        Ok(SpectralField {
            coeffs: x
                .coeffs
                .iter()
                .zip(&self.entries)
                .map(|(c, m)| c * m[t_index])
                .collect(),
        })
    }

    /// Least-squares slope of `log|r_n|` per mode (points with `|r| < 1e−12`
    /// skipped), `β` the largest slope and `N = max |r_n(t_i)| e^{−β t_i}`.
    pub fn growth_audit(&self) -> GrowthAudit {
        let mut beta = f64::NEG_INFINITY;
        for m in &self.entries {
            let pts: Vec<(f64, f64)> = m
                .iter()
                .enumerate()
                .filter(|(_, r)| r.abs() >= 1e-12)
                .map(|(i, r)| (self.grid.t(i), r.abs().ln()))
                .collect();
            if pts.len() < 2 {
                continue;
            }
            let k = pts.len() as f64;
            let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
            if sxx > 0.0 {
                beta = beta.max(sxy / sxx);
            }
        }
        if !beta.is_finite() {
            beta = 0.0;
        }
        let n_const = self
            .entries
            .iter()
            .flat_map(|m| m.iter().enumerate().map(|(i, r)| r.abs() * (-beta * self.grid.t(i)).exp()))
            .fold(0.0, f64::max);
        GrowthAudit { n_const, beta }
    }

    /// CSV `t,r_1,…,r_N`, one row per time point.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for n in 1..=self.eigenvalues.len() {
            let _ = write!(out, ",r_{n}");
        }
        out.push('\n');
        for i in 0..=self.grid.n_steps() {
            let _ = write!(out, "{:.16e}", self.grid.t(i));
            for m in &self.entries {
                let _ = write!(out, ",{:.16e}", m[i]);
            }
            out.push('\n');
        }
        out
    }
}

pub fn apply_resolvent(table: &ResolventTable, t_index: usize, x: &SpectralField) -> Result<SpectralField> {
    table.apply(t_index, x)
}

/// `max_n max_i |r_n'(t_i) + λ_n r_n(t_i) + λ_n ∫_0^{t_i} b(t_i−s) r_n(s) ds| / λ_n`
/// over the lowest five modes, central differences at interior points.
pub fn resolvent_identity_residual(table: &ResolventTable, b: &MemoryKernel) -> f64 {
    let grid = table.grid;
    let n = grid.n_steps();
    let dt = grid.dt();
    let bk: Vec<f64> = (0..=n).map(|k| b.value(k as f64 * dt)).collect();
    let mut worst: f64 = 0.0;
    for (m, &lambda) in table.entries.iter().zip(&table.eigenvalues).take(5) {
        for i in 1..n {
            let deriv = (m[i + 1] - m[i - 1]) / (2.0 * dt);
            let mut conv = 0.5 * (bk[i] * m[0] + bk[0] * m[i]);
            for j in 1..i {
                conv += bk[i - j] * m[j];
            }
            conv *= dt;
            let res = (deriv + lambda * m[i] + lambda * conv).abs() / lambda;
            worst = worst.max(res);
        }
    }
    worst
}

/// Grid samples of a forcing term `q(t_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingFunction {
    pub grid: TimeGrid,
    pub values: Vec<SpectralField>,
}

impl ForcingFunction {
    pub fn new(grid: TimeGrid, values: Vec<SpectralField>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(argument(format!(
                "forcing needs {} samples, got {}",
                grid.n_points(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TimeGrid, q: SpectralField) -> Self {
        Self {
            grid,
            values: vec![q; grid.n_points()],
        }
    }
}

/// `v(t_i) = R(t_i)v0 + ∫_0^{t_i} R(t_i−s) q(s) ds`, trapezoidal in `s`.
pub fn mild_solution_deterministic(
    table: &ResolventTable,
    v0: &SpectralField,
    q: &ForcingFunction,
) -> Result<Vec<SpectralField>> {
    if q.grid != table.grid {
        return Err(argument("forcing is sampled on a different grid than the resolvent"));
    }
    let nm = table.n_modes();
    if v0.n_modes() != nm || q.values.iter().any(|f| f.n_modes() != nm) {
        return Err(argument("mode count mismatch in deterministic mild solution"));
    }
    let dt = table.grid.dt();
    let steps = table.grid.n_steps();
    let mut out = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let coeffs = (0..nm)
            .map(|n| {
                let r = &table.entries[n];
                let mut acc = 0.0;
                for j in 0..=i {
                    let w = if j == 0 || j == i { 0.5 } else { 1.0 };
                    acc += w * r[i - j] * q.values[j].coeffs[n];
                }
                r[i] * v0.coeffs[n] + if i == 0 { 0.0 } else { dt * acc }
            })
            .collect();
        out.push(SpectralField { coeffs });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(t: f64, n: usize) -> TimeGrid {
        TimeGrid::new(t, n).unwrap()
    }

    /// `e^{−t/2}(cos ωt − sin(ωt)/√3)`, ω = √3/2: the λ = β = 1 resolvent
    /// for constant memory (roots of z² + z + 1).
    fn constant_kernel_oracle(t: f64) -> f64 {
        let w = 3f64.sqrt() / 2.0;
        (-0.5 * t).exp() * ((w * t).cos() - (w * t).sin() / 3f64.sqrt())
    }

    #[test]
    fn memoryless_mode_is_exponential() {
        let g = grid(2.0, 2000);
        let r = solve_mode_resolvent(1.0, &MemoryKernel::Zero, g).unwrap();
        assert_eq!(r[0], 1.0);
        let err = r.iter().enumerate().map(|(i, v)| (v - (-g.t(i)).exp()).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_memory_matches_second_order_ode() {
        let g = grid(4.0, 4000);
        let r = solve_mode_resolvent(1.0, &MemoryKernel::Constant { beta: 1.0 }, g).unwrap();
        let err = r
            .iter()
            .enumerate()
            .map(|(i, v)| (v - constant_kernel_oracle(g.t(i))).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn residual_is_second_order() {
        for b in [
            MemoryKernel::Zero,
            MemoryKernel::Constant { beta: 1.0 },
            MemoryKernel::ExpDecay { beta: 1.0, a: 2.0 },
        ] {
            let coarse = ResolventTable::build(grid(1.0, 500), vec![1.0], &b).unwrap();
            let fine = ResolventTable::build(grid(1.0, 1000), vec![1.0], &b).unwrap();
            let rc = resolvent_identity_residual(&coarse, &b);
            let rf = resolvent_identity_residual(&fine, &b);
            assert!(rf < 1e-4, "{b:?}: {rf}");
            let order = (rc / rf).log2();
            assert!(order >= 1.9, "{b:?}: order {order}");
        }
    }

    #[test]
    fn every_mode_starts_at_one() {
        let b = MemoryKernel::ExpDecay { beta: 0.7, a: 1.5 };
        let t = ResolventTable::for_modes(grid(0.5, 64), 16, &b).unwrap();
        assert!(t.at(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn apply_identity_and_semigroup() {
        let g = grid(1.0, 200);
        let t = ResolventTable::for_modes(g, 4, &MemoryKernel::Zero).unwrap();
        let x = SpectralField::new(vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(t.apply(0, &x).unwrap(), x);
        let y = t.apply(200, &x).unwrap();
        for (n, (a, b)) in y.coeffs.iter().zip(&x.coeffs).enumerate() {
            let l = ((n + 1) * (n + 1)) as f64;
            assert!((a - b * (-l).exp()).abs() < 1e-4 * b.abs().max(1e-3));
        }
        assert_eq!(t.apply(7, &SpectralField::zeros(4)).unwrap(), SpectralField::zeros(4));
        assert!(t.apply(3, &SpectralField::zeros(5)).is_err());
        assert!(t.apply(201, &x).is_err());
    }

    #[test]
    fn growth_audit_bounds_tested_kernels() {
        for b in [
            MemoryKernel::Zero,
            MemoryKernel::Constant { beta: 1.0 },
            MemoryKernel::ExpDecay { beta: 1.0, a: 2.0 },
        ] {
            let t = ResolventTable::for_modes(grid(2.0, 1024), 16, &b).unwrap();
            let a = t.growth_audit();
            assert!(a.passes(), "{b:?}: {a:?}");
        }
    }

    #[test]
    fn unstable_configuration_is_flagged() {
        // negative memory makes r grow like e^{t}
        let b = MemoryKernel::Constant { beta: -60.0 };
        let err = solve_mode_resolvent(1.0, &b, grid(20.0, 2000)).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn higher_modes_decay_faster_without_memory() {
        let t = ResolventTable::for_modes(grid(1.0, 64), 8, &MemoryKernel::Zero).unwrap();
        for n in 0..7 {
            for i in 0..=64 {
                assert!(t.value(n + 1, i).abs() <= t.value(n, i).abs() + 1e-8);
            }
        }
    }

    /// First grid index where any mode changes sign.
    fn first_sign_change(t: &ResolventTable) -> usize {
        (0..t.n_modes())
            .filter_map(|n| t.mode(n).iter().position(|&v| v <= 0.0))
            .min()
            .unwrap_or(t.grid().n_points())
    }

    #[test]
    fn higher_modes_decay_faster_before_sign_changes() {
        for b in [
            MemoryKernel::Constant { beta: 0.2 },
            MemoryKernel::ExpDecay { beta: 0.5, a: 1.0 },
        ] {
            let t = ResolventTable::for_modes(grid(1.0, 128), 8, &b).unwrap();
            let stop = first_sign_change(&t);
            assert!(stop > 1);
            for n in 0..7 {
                for i in 0..stop {
                    assert!(t.value(n + 1, i).abs() <= t.value(n, i).abs() + 1e-8, "{b:?} n={n} i={i}");
                }
            }
        }
    }

    #[test]
    fn memory_kernels_break_pointwise_mode_ordering() {
        // With constant memory each overdamped mode has a slow tail of sign
        // opposite to its fast part; mode λ = 49 crosses zero while the faster
        // λ = 64 mode is already in its tail. Closed form:
        // r = (f e^{−ft} − s e^{−st})/(f − s), s + f = λ, s f = λβ.
        let exact = |lambda: f64, beta: f64, t: f64| {
            let d = (lambda * lambda - 4.0 * lambda * beta).sqrt();
            let (s, f) = ((lambda - d) / 2.0, (lambda + d) / 2.0);
            (f * (-f * t).exp() - s * (-s * t).exp()) / (f - s)
        };
        let t_cross = {
            let d = (49f64 * 49.0 - 4.0 * 49.0 * 0.2).sqrt();
            let (s, f) = ((49.0 - d) / 2.0, (49.0 + d) / 2.0);
            (f / s).ln() / (f - s)
        };
        assert!(exact(49.0, 0.2, t_cross).abs() < 1e-12);
        assert!(exact(64.0, 0.2, t_cross).abs() > 1e-3);
        let g = grid(0.5, 2000);
        let t = ResolventTable::build(g, vec![49.0, 64.0], &MemoryKernel::Constant { beta: 0.2 }).unwrap();
        let i = g.index_of((t_cross / g.dt()).round() * g.dt()).unwrap();
        assert!(t.value(1, i).abs() > t.value(0, i).abs() + 1e-8);
    }

    #[test]
    fn deterministic_mild_solution_examples() {
        let g = grid(1.0, 1000);
        let t = ResolventTable::for_modes(g, 4, &MemoryKernel::Zero).unwrap();
        let v0 = SpectralField::new(vec![1.0, 0.5, -0.3, 0.1]).unwrap();
        let zero = ForcingFunction::constant(g, SpectralField::zeros(4));
        let v = mild_solution_deterministic(&t, &v0, &zero).unwrap();
        assert_eq!(v[0], v0);
        assert_eq!(v[500], t.apply(500, &v0).unwrap());

        let c = SpectralField::new(vec![1.0, -1.0, 2.0, 0.5]).unwrap();
        let q = ForcingFunction::constant(g, c.clone());
        let v = mild_solution_deterministic(&t, &SpectralField::zeros(4), &q).unwrap();
        for n in 0..4 {
            let l = ((n + 1) * (n + 1)) as f64;
            let exact = c.coeffs[n] * (1.0 - (-l).exp()) / l;
            assert!((v[1000].coeffs[n] - exact).abs() < 1e-5);
        }
        let other = ForcingFunction::constant(grid(1.0, 10), c);
        assert!(mild_solution_deterministic(&t, &v0, &other).is_err());
    }

    /// RK4 on the augmented ODE system `v' = −λ(v + w) + q`, `w' = βv − a w`
    /// (`a = 0` for constant memory).
    fn method_of_lines(lambda: f64, beta: f64, a: f64, v0: f64, q: f64, t: f64, steps: usize) -> f64 {
        let h = t / steps as f64;
        let rhs = |v: f64, w: f64| (-lambda * (v + w) + q, beta * v - a * w);
        let (mut v, mut w) = (v0, 0.0);
        for _ in 0..steps {
            let k1 = rhs(v, w);
            let k2 = rhs(v + 0.5 * h * k1.0, w + 0.5 * h * k1.1);
            let k3 = rhs(v + 0.5 * h * k2.0, w + 0.5 * h * k2.1);
            let k4 = rhs(v + h * k3.0, w + h * k3.1);
            v += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            w += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        v
    }

    #[test]
    fn mild_solution_matches_method_of_lines() {
        let g = grid(1.0, 1000);
        let v0 = SpectralField::new(vec![1.0, -0.4, 0.2, 0.05, -0.02, 0.01]).unwrap();
        let q = SpectralField::new(vec![0.5, 0.3, -0.2, 0.1, 0.0, 0.05]).unwrap();
        for (b, beta, a) in [
            (MemoryKernel::Constant { beta: 0.8 }, 0.8, 0.0),
            (MemoryKernel::ExpDecay { beta: 1.0, a: 2.0 }, 1.0, 2.0),
        ] {
            let t = ResolventTable::for_modes(g, 6, &b).unwrap();
            let v = mild_solution_deterministic(&t, &v0, &ForcingFunction::constant(g, q.clone())).unwrap();
            let mut err2 = 0.0;
            for n in 0..6 {
                let l = ((n + 1) * (n + 1)) as f64;
                let e = method_of_lines(l, beta, a, v0.coeffs[n], q.coeffs[n], 1.0, 20_000);
                err2 += (v[1000].coeffs[n] - e).powi(2);
            }
            assert!(err2.sqrt() < 1e-4, "{b:?}: {}", err2.sqrt());
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let t = ResolventTable::for_modes(grid(1.0, 4), 2, &MemoryKernel::Zero).unwrap();
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[0], "t,r_1,r_2");
        assert!(lines[1].starts_with("0.0000000000000000e0,1.0000000000000000e0"));
    }

    #[test]
    fn registry_rejects_unknown_and_bad_arity() {
        assert!(MemoryKernel::registry_lookup("power", &[1.0]).is_err());
        assert!(MemoryKernel::registry_lookup("constant", &[]).is_err());
        assert_eq!(
            MemoryKernel::registry_lookup("exp_decay", &[1.0, 2.0]).unwrap(),
            MemoryKernel::ExpDecay { beta: 1.0, a: 2.0 }
        );
    }
}
