//! Stochastic integrals against fBm on a grid: left-point Young sums, the
//! Malliavin trace correction and the Skorohod integral built from them.
//!
//! Integrands are treated cell by cell as `u(s) ≈ u(t_j) + d_j (B^H(s) − B^H(t_j))`
//! on `[t_j, t_{j+1})`, where `d_j` is the derivative of the integrand with
//! respect to its own cell's increment (the diagonal of the
//! [`DerivativeSurface`]). The pathwise sum then picks up `½ d_j ΔB_j²` and
//! the trace correction the half-cell weight `½⟨1_j, 1_j⟩_𝓗`. For integrands
//! evaluated at delayed times the diagonal vanishes and both reduce to the
//! plain left-point forms.

use crate::error::{argument, Result};
use crate::fbm::{cell_pairing, inner_product_h, FbmSample, HurstParameter, ScalarFunctionOnGrid};
use crate::grid::TimeGrid;
use crate::resolvent::ResolventTable;
use crate::spectral::{PointwiseMultiplier, SpectralBasis, SpectralField};

/// Field-valued integrand sampled at grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrandTrajectory {
    pub grid: TimeGrid,
    pub fields: Vec<SpectralField>,
}

impl IntegrandTrajectory {
    pub fn new(grid: TimeGrid, fields: Vec<SpectralField>) -> Result<Self> {
        if fields.len() != grid.n_points() {
            return Err(argument(format!(
                "integrand needs {} samples, got {}",
                grid.n_points(),
                fields.len()
            )));
        }
        let nm = fields[0].n_modes();
        if fields.iter().any(|f| f.n_modes() != nm) {
            return Err(argument("integrand samples have different mode counts"));
        }
        Ok(Self { grid, fields })
    }

    /// One-mode trajectory from scalar samples.
    pub fn scalar(grid: TimeGrid, values: &[f64]) -> Result<Self> {
        Self::new(grid, values.iter().map(|&v| SpectralField { coeffs: vec![v] }).collect())
    }

    pub fn zeros(grid: TimeGrid, n_modes: usize) -> Self {
        Self {
            grid,
            fields: vec![SpectralField::zeros(n_modes); grid.n_points()],
        }
    }

    pub fn n_modes(&self) -> usize {
        self.fields[0].n_modes()
    }

    /// Scalar grid function of mode `n`.
    pub fn mode(&self, n: usize) -> ScalarFunctionOnGrid {
        ScalarFunctionOnGrid {
            grid: self.grid,
            values: self.fields.iter().map(|f| f.coeffs[n]).collect(),
        }
    }
}

/// `rows[j][l]`: derivative of the integrand at `t_j` with respect to the
/// increment of cell `l ≤ j`. The diagonal `rows[j][j]` is the in-cell
/// derivative described in the module docs.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeSurface {
    pub grid: TimeGrid,
    pub rows: Vec<Vec<SpectralField>>,
}

impl DerivativeSurface {
    pub fn zeros(grid: TimeGrid, n_modes: usize) -> Self {
        let rows = (0..grid.n_points())
            .map(|j| vec![SpectralField::zeros(n_modes); j + 1])
            .collect();
        Self { grid, rows }
    }

    pub fn new(grid: TimeGrid, rows: Vec<Vec<SpectralField>>) -> Result<Self> {
        if rows.len() != grid.n_points() {
            return Err(argument("derivative surface needs one row per grid point"));
        }
        for (j, row) in rows.iter().enumerate() {
            if row.len() > j + 1 {
                return Err(argument(format!(
                    "derivative row {j} has entries beyond the diagonal (u > s)"
                )));
            }
        }
        Ok(Self { grid, rows })
    }

    fn entry(&self, j: usize, l: usize) -> Option<&SpectralField> {
        self.rows[j].get(l)
    }
}

/// `R(t − s)` acting coefficient-wise, or the identity.
#[derive(Debug, Clone, Copy)]
pub enum ResolventWeight<'a> {
    Identity,
    Kernel { table: &'a ResolventTable, t_index: usize },
}

impl ResolventWeight<'_> {
    fn apply_at(&self, j: usize, x: &mut [f64]) -> Result<()> {
        if let ResolventWeight::Kernel { table, t_index } = *self {
            if j > t_index {
                return Err(argument(format!(
                    "resolvent weight R(t_{t_index} − t_{j}) needs s ≤ t"
                )));
            }
            for (n, c) in x.iter_mut().enumerate() {
                *c *= table.value(n, t_index - j);
            }
        }
        Ok(())
    }
}

/// Per-time pointwise multipliers (e.g. `σ'(x(s−r))`) with the basis they act in.
#[derive(Debug, Clone, Copy)]
pub struct MultiplierField<'a> {
    pub basis: &'a SpectralBasis,
    pub values: &'a [PointwiseMultiplier],
}

fn check_window(grid: TimeGrid, i_from: usize, i_to: usize) -> Result<()> {
    if i_from > i_to || i_to > grid.n_steps() {
        return Err(argument(format!(
            "window [{i_from}, {i_to}] is not inside the grid of {} steps",
            grid.n_steps()
        )));
    }
    Ok(())
}

/// `Σ_{i_from ≤ j < i_to} u(t_j)(B^H(t_{j+1}) − B^H(t_j))`.
pub fn young_riemann_sum(
    integrand: &IntegrandTrajectory,
    fbm: &FbmSample,
    i_from: usize,
    i_to: usize,
) -> Result<SpectralField> {
    if integrand.grid != fbm.grid {
        return Err(argument("integrand and fBm sample live on different grids"));
    }
    check_window(integrand.grid, i_from, i_to)?;
    let mut acc = SpectralField::zeros(integrand.n_modes());
    for j in i_from..i_to {
        acc.axpy(fbm.values[j + 1] - fbm.values[j], &integrand.fields[j]);
    }
    Ok(acc)
}

/// `Σ_{s-cells j in window} R(t − t_j) m_j ⊙ [Σ_{l<j} W(j,l) D_l u_j + ½W(j,j) D_j u_j]`
/// where `W(j,l) = ⟨1_j, 1_l⟩_𝓗`.
pub fn trace_correction(
    derivative: &DerivativeSurface,
    multiplier: Option<MultiplierField<'_>>,
    weight: ResolventWeight<'_>,
    h: HurstParameter,
    i_from: usize,
    i_to: usize,
) -> Result<SpectralField> {
    let grid = derivative.grid;
    check_window(grid, i_from, i_to)?;
    let pairing = cell_pairing(h, grid.dt(), grid.n_points());
    let n_modes = derivative
        .rows
        .iter()
        .flat_map(|r| r.first())
        .map(|f| f.n_modes())
        .next()
        .unwrap_or(0);
    let mut acc = vec![0.0; n_modes];
    for j in i_from..i_to {
        let mut p = vec![0.0; n_modes];
        for (l, d) in derivative.rows[j].iter().enumerate() {
            let w = if l == j { 0.5 * pairing[0] } else { pairing[j - l] };
            for (pc, dc) in p.iter_mut().zip(&d.coeffs) {
                *pc += w * dc;
            }
        }
        if let Some(m) = multiplier {
            let field = SpectralField { coeffs: p };
            p = m.values[j].apply(m.basis, &field)?.coeffs;
        }
        weight.apply_at(j, &mut p)?;
        for (a, v) in acc.iter_mut().zip(&p) {
            *a += v;
        }
    }
    Ok(SpectralField { coeffs: acc })
}

/// Diagonal (in-cell) pathwise contribution `Σ_j ½ R(t−t_j) m_j ⊙ D_j u_j ΔB_j²`.
fn diagonal_pathwise(
    derivative: &DerivativeSurface,
    multiplier: Option<MultiplierField<'_>>,
    weight: ResolventWeight<'_>,
    fbm: &FbmSample,
    i_from: usize,
    i_to: usize,
    n_modes: usize,
) -> Result<SpectralField> {
    let mut acc = vec![0.0; n_modes];
    for j in i_from..i_to {
        let Some(d) = derivative.entry(j, j) else {
            continue;
        };
        if d.coeffs.iter().all(|&c| c == 0.0) {
            continue;
        }
        let db = fbm.values[j + 1] - fbm.values[j];
        let mut p = d.coeffs.clone();
        if let Some(m) = multiplier {
            p = m.values[j].apply(m.basis, d)?.coeffs;
        }
        weight.apply_at(j, &mut p)?;
        for (a, v) in acc.iter_mut().zip(&p) {
            *a += 0.5 * db * db * v;
        }
    }
    Ok(SpectralField { coeffs: acc })
}

/// Skorohod integral of `integrand` over cells `i_from..i_to`: pathwise sum
/// minus the trace correction.
///
/// `integrand` holds the full integrand (e.g. `R(t−s)σ(x(s−r))`), while
/// `derivative`, `multiplier` and `weight` describe its Malliavin derivative
/// as `weight · multiplier ⊙ derivative`.
#[allow(clippy::too_many_arguments)]
pub fn skorohod_integral(
    integrand: &IntegrandTrajectory,
    derivative: &DerivativeSurface,
    multiplier: Option<MultiplierField<'_>>,
    weight: ResolventWeight<'_>,
    fbm: &FbmSample,
    h: HurstParameter,
    i_from: usize,
    i_to: usize,
) -> Result<SpectralField> {
    if derivative.grid != integrand.grid {
        return Err(argument("derivative surface and integrand live on different grids"));
    }
    let mut out = young_riemann_sum(integrand, fbm, i_from, i_to)?;
    let diag = diagonal_pathwise(derivative, multiplier, weight, fbm, i_from, i_to, integrand.n_modes())?;
    let trace = trace_correction(derivative, multiplier, weight, h, i_from, i_to)?;
    out.axpy(1.0, &diag);
    out.axpy(-1.0, &trace);
    Ok(out)
}

/// Variance of each mode of the Wiener-type integral of a deterministic
/// integrand: `‖u_n‖²_𝓗`.
pub fn wiener_variance_oracle(integrand: &IntegrandTrajectory, h: HurstParameter) -> Result<Vec<f64>> {
    (0..integrand.n_modes())
        .map(|n| {
            let m = integrand.mode(n);
            inner_product_h(&m, &m, h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{sample_fbm_cholesky, weight_phi, CholeskySampler};
    use crate::quadrature::GaussLegendre;
    use crate::resolvent::MemoryKernel;
    use crate::seed::derive_seed;

    fn h(v: f64) -> HurstParameter {
        HurstParameter::new(v).unwrap()
    }

    /// `u = B^H` with its derivative surface (ones below and on the diagonal).
    fn fbm_integrand(s: &FbmSample) -> (IntegrandTrajectory, DerivativeSurface) {
        let grid = s.grid;
        let u = IntegrandTrajectory::scalar(grid, &s.values).unwrap();
        let rows = (0..grid.n_points())
            .map(|j| vec![SpectralField { coeffs: vec![1.0] }; j + 1])
            .collect();
        (u, DerivativeSurface::new(grid, rows).unwrap())
    }

    #[test]
    fn constant_integrand_telescopes() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let s = sample_fbm_cholesky(grid, h(0.7), 5).unwrap();
        let c = SpectralField::new(vec![2.0, -1.0]).unwrap();
        let u = IntegrandTrajectory::new(grid, vec![c.clone(); 65]).unwrap();
        let y = young_riemann_sum(&u, &s, 0, 64).unwrap();
        for (a, b) in y.coeffs.iter().zip(&c.coeffs) {
            assert!((a - b * s.values[64]).abs() < 1e-12);
        }
        let z = young_riemann_sum(&IntegrandTrajectory::zeros(grid, 2), &s, 0, 64).unwrap();
        assert_eq!(z, SpectralField::zeros(2));
        assert!(young_riemann_sum(&u, &s, 10, 65).is_err());
    }

    #[test]
    fn left_sum_of_fbm_converges_to_half_square() {
        let fine = TimeGrid::new(1.0, 2048).unwrap();
        let path = sample_fbm_cholesky(fine, h(0.75), 17).unwrap();
        let target = 0.5 * path.values[2048].powi(2);
        let mut errs = Vec::new();
        for factor in [64, 16, 4, 1] {
            let p = path.coarsened(factor).unwrap();
            let u = IntegrandTrajectory::scalar(p.grid, &p.values).unwrap();
            let y = young_riemann_sum(&u, &p, 0, p.grid.n_steps()).unwrap();
            errs.push((y.coeffs[0] - target).abs());
        }
        for w in errs.windows(2) {
            assert!(w[1] < w[0], "{errs:?}");
        }
        // error is ½ΣΔB² ~ ½ T dt^{2H-1}: a 4× refinement gains ≈ 4^{0.5}
        let rate = (errs[0] / errs[3]).log(4.0) / 3.0;
        assert!((rate - 0.5).abs() < 0.15, "rate {rate}");
    }

    #[test]
    fn trace_of_fbm_integrand_is_half_t_2h() {
        for &hv in &[0.6, 0.75, 0.9] {
            let grid = TimeGrid::new(1.3, 200).unwrap();
            let s = sample_fbm_cholesky(grid, h(hv), 1).unwrap();
            let (_, d) = fbm_integrand(&s);
            let tr = trace_correction(&d, None, ResolventWeight::Identity, h(hv), 0, 200).unwrap();
            // independent oracle: ∫_0^T ∫_0^t φ_H(t−s) ds dt by nested graded quadrature
            let gl = GaussLegendre::new(16);
            let oracle = gl.integrate_graded(0.0, 1.3, 40, |t| {
                gl.integrate_graded(0.0, t, 40, |v| if v > 0.0 { weight_phi(v, h(hv)) } else { 0.0 })
            });
            assert!(((tr.coeffs[0] - oracle) / oracle).abs() < 1e-3, "h={hv}: {} vs {oracle}", tr.coeffs[0]);
            let closed = 0.5 * 1.3f64.powf(2.0 * hv);
            assert!(((tr.coeffs[0] - closed) / closed).abs() < 1e-12);
        }
    }

    #[test]
    fn skorohod_of_fbm_is_ito_formula() {
        let grid = TimeGrid::new(1.0, 128).unwrap();
        let hp = h(0.7);
        let s = sample_fbm_cholesky(grid, hp, 9).unwrap();
        let (u, d) = fbm_integrand(&s);
        let v = skorohod_integral(&u, &d, None, ResolventWeight::Identity, &s, hp, 0, 128).unwrap();
        let expected = 0.5 * s.values[128].powi(2) - 0.5;
        assert!((v.coeffs[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn deterministic_and_zero_integrands() {
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let hp = h(0.8);
        let s = sample_fbm_cholesky(grid, hp, 2).unwrap();
        let u = IntegrandTrajectory::new(
            grid,
            (0..33).map(|i| SpectralField { coeffs: vec![(i as f64).sin(), 1.0] }).collect(),
        )
        .unwrap();
        let d = DerivativeSurface::zeros(grid, 2);
        let tr = trace_correction(&d, None, ResolventWeight::Identity, hp, 0, 32).unwrap();
        assert_eq!(tr, SpectralField::zeros(2));
        let sk = skorohod_integral(&u, &d, None, ResolventWeight::Identity, &s, hp, 0, 32).unwrap();
        assert_eq!(sk, young_riemann_sum(&u, &s, 0, 32).unwrap());
        let z = skorohod_integral(&IntegrandTrajectory::zeros(grid, 2), &d, None, ResolventWeight::Identity, &s, hp, 0, 32)
            .unwrap();
        assert_eq!(z, SpectralField::zeros(2));
    }

    #[test]
    fn zero_multiplier_kills_correction() {
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let s = sample_fbm_cholesky(grid, h(0.7), 4).unwrap();
        let basis = SpectralBasis::new(1, crate::spectral::SpaceGrid::new(3).unwrap()).unwrap();
        let (_, d) = fbm_integrand(&s);
        let zeros = vec![PointwiseMultiplier { values: vec![0.0; 3] }; 17];
        let m = MultiplierField { basis: &basis, values: &zeros };
        let tr = trace_correction(&d, Some(m), ResolventWeight::Identity, h(0.7), 0, 16).unwrap();
        assert!(tr.coeffs.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn resolvent_weight_scales_each_cell() {
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let table = ResolventTable::build(grid, vec![2.0], &MemoryKernel::Zero).unwrap();
        let s = sample_fbm_cholesky(grid, h(0.7), 8).unwrap();
        let (_, d) = fbm_integrand(&s);
        let w = ResolventWeight::Kernel { table: &table, t_index: 20 };
        let tr = trace_correction(&d, None, w, h(0.7), 0, 20).unwrap();
        let pairing = cell_pairing(h(0.7), grid.dt(), 21);
        let mut expected = 0.0;
        for j in 0..20 {
            let p: f64 = (0..j).map(|l| pairing[j - l]).sum::<f64>() + 0.5 * pairing[0];
            expected += table.value(0, 20 - j) * p;
        }
        assert!((tr.coeffs[0] - expected).abs() < 1e-14);
        let bad = ResolventWeight::Kernel { table: &table, t_index: 10 };
        assert!(trace_correction(&d, None, bad, h(0.7), 0, 20).is_err());
    }

    #[test]
    fn window_additivity() {
        let grid = TimeGrid::new(1.0, 60).unwrap();
        let hp = h(0.65);
        let s = sample_fbm_cholesky(grid, hp, 21).unwrap();
        let (u, d) = fbm_integrand(&s);
        let id = ResolventWeight::Identity;
        let whole = skorohod_integral(&u, &d, None, id, &s, hp, 5, 55).unwrap();
        let a = skorohod_integral(&u, &d, None, id, &s, hp, 5, 30).unwrap();
        let b = skorohod_integral(&u, &d, None, id, &s, hp, 30, 55).unwrap();
        assert!((whole.coeffs[0] - a.coeffs[0] - b.coeffs[0]).abs() < 1e-13);
    }

    #[test]
    fn monte_carlo_mean_of_fbm_skorohod_is_zero() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let hp = h(0.75);
        let sampler = CholeskySampler::new(grid, hp).unwrap();
        let n = 4000;
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let s = sampler.sample(derive_seed(77, i));
                let (u, d) = fbm_integrand(&s);
                skorohod_integral(&u, &d, None, ResolventWeight::Identity, &s, hp, 0, 64).unwrap().coeffs[0]
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!(mean.abs() < 3.0 * (var / n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn wiener_variance_examples() {
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let hp = h(0.7);
        let ind = ScalarFunctionOnGrid::indicator(grid, 0.6).unwrap();
        let vals: Vec<f64> = ind.values.iter().map(|v| 3.0 * v).collect();
        let u = IntegrandTrajectory::scalar(grid, &vals).unwrap();
        let v = wiener_variance_oracle(&u, hp).unwrap();
        assert!((v[0] - 9.0 * 0.6f64.powf(1.4)).abs() < 1e-12);
        let z = wiener_variance_oracle(&IntegrandTrajectory::zeros(grid, 3), hp).unwrap();
        assert_eq!(z, vec![0.0; 3]);
    }

    #[test]
    fn disjoint_supports_still_correlate() {
        let grid = TimeGrid::new(1.0, 40).unwrap();
        let hp = h(0.8);
        let a = ScalarFunctionOnGrid::from_fn(grid, |t| if t < 0.3 { 1.0 } else { 0.0 });
        let b = ScalarFunctionOnGrid::from_fn(grid, |t| if (0.5..0.9).contains(&t) { 1.0 } else { 0.0 });
        let cross = inner_product_h(&a, &b, hp).unwrap();
        let gl = GaussLegendre::new(20);
        let oracle = gl.integrate(0.0, 0.3, |s| gl.integrate(0.5, 0.9, |t| weight_phi(t - s, hp)));
        assert!(cross > 0.0);
        assert!(((cross - oracle) / oracle).abs() < 1e-8, "{cross} vs {oracle}");
    }
}
