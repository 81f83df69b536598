//! Fractional Brownian motion with Hurst index in (1/2, 1): covariance,
//! Volterra kernel, reproducing-kernel inner products and path samplers.
//!
//! Grid functions ([`ScalarFunctionOnGrid`]) are piecewise constant on the
//! cells `[t_i, t_{i+1})`, taking the value stored at the left endpoint. Under
//! that convention the singular weight `H(2H-1)|t-s|^{2H-2}` integrates in
//! closed form over every pair of cells, which is what [`cell_pairing`]
//! returns.

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};
use crate::grid::TimeGrid;
use crate::quadrature::GaussLegendre;
use crate::rng::standard_normals;

/// Hurst index, strictly inside (1/2, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct HurstParameter(f64);

impl HurstParameter {
    pub fn new(h: f64) -> Result<Self> {
        if h > 0.5 && h < 1.0 {
            Ok(Self(h))
        } else {
            Err(argument(format!("hurst out of (1/2,1): {h}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `H - 1/2`, the exponent shared by the kernel factors.
    pub fn alpha(self) -> f64 {
        self.0 - 0.5
    }
}

impl TryFrom<f64> for HurstParameter {
    type Error = Error;
    fn try_from(h: f64) -> Result<Self> {
        Self::new(h)
    }
}

impl From<HurstParameter> for f64 {
    fn from(h: HurstParameter) -> f64 {
        h.0
    }
}

/// `½(t^{2h} + s^{2h} − |t−s|^{2h})` for any exponent `h` in (0, 1].
///
/// Unlike [`covariance`] this does not restrict `h`, so the Brownian limit
/// `h = 1/2` can be evaluated.
pub fn covariance_formula(s: f64, t: f64, h: f64) -> Result<f64> {
    if s < 0.0 || t < 0.0 {
        return Err(argument(format!("covariance needs nonnegative times, got ({s}, {t})")));
    }
    let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
    let e = 2.0 * h;
    Ok(0.5 * (hi.powf(e) + lo.powf(e) - (hi - lo).powf(e)))
}

pub fn covariance(s: f64, t: f64, h: HurstParameter) -> Result<f64> {
    covariance_formula(s, t, h.value())
}

/// `c_H = sqrt(H(2H−1) / β(2−2H, H−1/2))`.
pub fn normalizing_constant(h: HurstParameter) -> f64 {
    let hv = h.value();
    let beta = statrs::function::beta::beta(2.0 - 2.0 * hv, hv - 0.5);
    (hv * (2.0 * hv - 1.0) / beta).sqrt()
}

/// `φ_H(x) = H(2H−1)|x|^{2H−2}`.
pub fn weight_phi(x: f64, h: HurstParameter) -> f64 {
    let hv = h.value();
    hv * (2.0 * hv - 1.0) * x.abs().powf(2.0 * hv - 2.0)
}

/// `⟨1_{cell j}, 1_{cell j+k}⟩_𝓗` for `k = 0..n`: the fractional Gaussian
/// noise autocovariance `½dt^{2H}(|k+1|^{2H} + |k−1|^{2H} − 2|k|^{2H})`.
pub fn cell_pairing(h: HurstParameter, dt: f64, n: usize) -> Vec<f64> {
    let e = 2.0 * h.value();
    let scale = dt.powf(e);
    (0..n)
        .map(|k| {
            let k = k as f64;
            0.5 * scale * ((k + 1.0).powf(e) + (k - 1.0).abs().powf(e) - 2.0 * k.powf(e))
        })
        .collect()
}

/// Quadrature resolution for the kernel integral in the substituted variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelQuadrature {
    pub panels: usize,
    pub order: usize,
}

impl Default for KernelQuadrature {
    fn default() -> Self {
        Self { panels: 8, order: 16 }
    }
}

impl KernelQuadrature {
    pub fn refined(self) -> Self {
        Self {
            panels: self.panels * 2,
            order: self.order,
        }
    }
}

/// Real-valued function on a [`TimeGrid`], constant on each cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarFunctionOnGrid {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl ScalarFunctionOnGrid {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(argument(format!(
                "grid function needs {} values, got {}",
                grid.n_points(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(argument("grid function has non-finite values"));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n_points()],
        }
    }

    /// Samples `f` at left endpoints.
    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.points().map(f).collect();
        Self { grid, values }
    }

    /// `1_{[0,t]}` for a grid-aligned `t`.
    pub fn indicator(grid: TimeGrid, t: f64) -> Result<Self> {
        let k = grid
            .index_of(t)
            .ok_or_else(|| argument(format!("indicator endpoint {t} is not on the grid")))?;
        let values = (0..grid.n_points()).map(|i| if i < k { 1.0 } else { 0.0 }).collect();
        Ok(Self { grid, values })
    }

    /// Value on cell `i`.
    pub fn cell(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// `∫ f(s)² ds` of the piecewise-constant function.
    pub fn l2_norm_sq(&self) -> f64 {
        let dt = self.grid.dt();
        self.values[..self.grid.n_steps()].iter().map(|v| v * v * dt).sum()
    }
}

/// `⟨ψ, φ⟩_𝓗 = ∫∫ ψ(s)φ(t) φ_H(t−s) ds dt` with the weight integrated exactly
/// over every cell pair.
pub fn inner_product_h(
    psi: &ScalarFunctionOnGrid,
    phi: &ScalarFunctionOnGrid,
    h: HurstParameter,
) -> Result<f64> {
    if psi.grid != phi.grid {
        return Err(argument("inner product of functions on different grids"));
    }
    let n = psi.grid.n_steps();
    let pairing = cell_pairing(h, psi.grid.dt(), n);
    let a = &psi.values[..n];
    let b = &phi.values[..n];
    // summed by lag with symmetric pair terms so that swapping the
    // arguments reproduces the same floating-point operations
    let mut total = pairing[0] * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    for k in 1..n {
        let lag: f64 = (0..n - k).map(|i| a[i] * b[i + k] + a[i + k] * b[i]).sum();
        total += pairing[k] * lag;
    }
    Ok(total)
}

/// Volterra kernel `K_H` together with its quadrature rule.
#[derive(Debug, Clone)]
pub struct FbmKernel {
    h: HurstParameter,
    c_h: f64,
    quad: KernelQuadrature,
    rule: GaussLegendre,
}

impl FbmKernel {
    pub fn new(h: HurstParameter, quad: KernelQuadrature) -> Self {
        Self {
            h,
            c_h: normalizing_constant(h),
            quad,
            rule: GaussLegendre::new(quad.order),
        }
    }

    pub fn hurst(&self) -> HurstParameter {
        self.h
    }

    pub fn quadrature(&self) -> KernelQuadrature {
        self.quad
    }

    /// `∫_a^b (u−s)^{α−1} u^{α} du` for `s ≤ a < b`, α = H − 1/2, computed in
    /// the variable `w = (u−s)^α`, where the integrand `(s + w^{1/α})^α / α`
    /// is bounded.
    fn segment(&self, s: f64, a: f64, b: f64, panels: usize) -> f64 {
        let alpha = self.h.alpha();
        let p = 1.0 / alpha;
        let wa = (a - s).max(0.0).powf(alpha);
        let wb = (b - s).powf(alpha);
        self.rule
            .integrate_composite(wa, wb, panels, |w| (s + w.powf(p)).powf(alpha))
            / alpha
    }

    /// `K_H(t, s) = c_H s^{1/2−H} ∫_s^t (u−s)^{H−3/2} u^{H−1/2} du`, zero for `t ≤ s`.
    pub fn k(&self, t: f64, s: f64) -> Result<f64> {
        if s <= 0.0 {
            return Err(argument(format!("kernel K_H(t, s) needs s > 0, got s = {s}")));
        }
        if t <= s {
            return Ok(0.0);
        }
        Ok(self.c_h * s.powf(-self.h.alpha()) * self.segment(s, s, t, self.quad.panels))
    }

    /// `∂K_H/∂r (r, s) = c_H s^{1/2−H} (r−s)^{H−3/2} r^{H−1/2}` for `r > s > 0`.
    pub fn dk_dr(&self, r: f64, s: f64) -> f64 {
        if r <= s || s <= 0.0 {
            return 0.0;
        }
        let alpha = self.h.alpha();
        self.c_h * s.powf(-alpha) * (r - s).powf(alpha - 1.0) * r.powf(alpha)
    }

    /// `(K_H^* φ)(s) = ∫_s^T φ(r) ∂K/∂r(r, s) dr` at a single `s > 0`.
    pub fn k_star_at(&self, phi: &ScalarFunctionOnGrid, s: f64) -> f64 {
        let grid = phi.grid;
        let dt = grid.dt();
        let n = grid.n_steps();
        let first = ((s / dt).floor() as usize).min(n - 1);
        let mut acc = 0.0;
        for c in first..n {
            let v = phi.cell(c);
            if v == 0.0 {
                continue;
            }
            let hi = grid.t(c + 1);
            if hi <= s {
                continue;
            }
            let lo = grid.t(c).max(s);
            acc += v * self.segment(s, lo, hi, (self.quad.panels / 8).max(1));
        }
        self.c_h * s.powf(-self.h.alpha()) * acc
    }

    /// `K_H^* φ` evaluated at cell midpoints (the value of cell `i` is
    /// `(K_H^*φ)(t_i + dt/2)`).
    pub fn k_star_apply(&self, phi: &ScalarFunctionOnGrid) -> ScalarFunctionOnGrid {
        let grid = phi.grid;
        let dt = grid.dt();
        let mut values: Vec<f64> = (0..grid.n_steps())
            .map(|i| self.k_star_at(phi, (i as f64 + 0.5) * dt))
            .collect();
        values.push(0.0);
        ScalarFunctionOnGrid { grid, values }
    }

    /// `‖K_H^* φ‖²_{L²([0,T])}`, cell by cell on meshes graded towards the
    /// right end, where a jump of φ at the next node makes the image
    /// behave like `(t_{c+1} − s)^{H−1/2}`. On the first cell the
    /// substitution `s = dt·z^{1/(2−2H)}` absorbs the `s^{1−2H}` singularity
    /// of the squared image and the mesh is graded towards both ends.
    pub fn k_star_norm_sq(&self, phi: &ScalarFunctionOnGrid) -> f64 {
        let grid = phi.grid;
        let dt = grid.dt();
        let hv = self.h.value();
        let inner = GaussLegendre::new(8);
        let levels = self.quad.panels;
        let mut total = 0.0;
        let q = 2.0 - 2.0 * hv;
        let first = |z: f64| {
            let s = dt * z.powf(1.0 / q);
            let k = self.k_star_at(phi, s);
            k * k * s.powf(2.0 * hv - 1.0)
        };
        // the image also carries powers of s^{2H−1} near 0: grade both ends
        total += dt.powf(q) / q
            * (inner.integrate_graded(0.0, 0.5, levels, first)
                + inner.integrate_graded(0.0, 0.5, levels, |v| first(1.0 - v)));
        for c in 1..grid.n_steps() {
            let end = grid.t(c + 1);
            total += inner.integrate_graded(0.0, dt, levels, |v| {
                let k = self.k_star_at(phi, end - v);
                k * k
            });
        }
        total
    }
}

pub fn kernel_k(t: f64, s: f64, h: HurstParameter, quad: KernelQuadrature) -> Result<f64> {
    FbmKernel::new(h, quad).k(t, s)
}

pub fn kernel_k_star_apply(
    phi: &ScalarFunctionOnGrid,
    h: HurstParameter,
    quad: KernelQuadrature,
) -> ScalarFunctionOnGrid {
    FbmKernel::new(h, quad).k_star_apply(phi)
}

/// One realization of fBm on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FbmSample {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub seed_label: u64,
}

impl FbmSample {
    /// `B^H(t_{i+1}) − B^H(t_i)` for every cell.
    pub fn increments(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Path on the grid with `factor` times fewer steps (same horizon).
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        let n = self.grid.n_steps();
        if factor == 0 || n % factor != 0 {
            return Err(argument(format!("cannot coarsen {n} steps by {factor}")));
        }
        Ok(Self {
            grid: TimeGrid::new(self.grid.t_max(), n / factor)?,
            values: self.values.iter().step_by(factor).copied().collect(),
            seed_label: self.seed_label,
        })
    }
}

/// Exact sampler: Cholesky factor of the covariance on `t_1..t_n`.
#[derive(Debug, Clone)]
pub struct CholeskySampler {
    grid: TimeGrid,
    factor: DMatrix<f64>,
}

impl CholeskySampler {
    pub fn new(grid: TimeGrid, h: HurstParameter) -> Result<Self> {
        let n = grid.n_steps();
        let cov = DMatrix::from_fn(n, n, |i, j| {
            covariance(grid.t(i + 1), grid.t(j + 1), h).expect("grid times are nonnegative")
        });
        let chol = Cholesky::new(cov).ok_or_else(|| {
            Error::Numerical(format!(
                "Cholesky factorization of the {n}x{n} fBm covariance failed \
                 (duplicated or degenerate grid points?)"
            ))
        })?;
        Ok(Self {
            grid,
            factor: chol.l(),
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    /// Path from a vector of `n_steps` standard normals.
    pub fn path_from_normals(&self, normals: &[f64]) -> Vec<f64> {
        let n = self.grid.n_steps();
        assert_eq!(normals.len(), n, "normal vector length must equal step count");
        let mut values = vec![0.0; n + 1];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += self.factor[(i, j)] * normals[j];
            }
            values[i + 1] = acc;
        }
        values
    }

    pub fn sample(&self, seed: u64) -> FbmSample {
        let normals = standard_normals(seed, self.grid.n_steps());
        FbmSample {
            grid: self.grid,
            values: self.path_from_normals(&normals),
            seed_label: seed,
        }
    }
}

pub fn sample_fbm_cholesky(grid: TimeGrid, h: HurstParameter, seed: u64) -> Result<FbmSample> {
    Ok(CholeskySampler::new(grid, h)?.sample(seed))
}

/// Sampler built on `B^H(t) = ∫_0^t K_H(t, s) dB(s)`, with the kernel
/// evaluated at cell midpoints.
#[derive(Debug, Clone)]
pub struct WienerSampler {
    grid: TimeGrid,
    /// `weights[(i, j)] = K_H(t_{i+1}, (j+½)dt)` for `j ≤ i`.
    weights: DMatrix<f64>,
}

impl WienerSampler {
    pub fn new(grid: TimeGrid, h: HurstParameter, quad: KernelQuadrature) -> Result<Self> {
        let kernel = FbmKernel::new(h, quad);
        let n = grid.n_steps();
        let dt = grid.dt();
        let mut weights = DMatrix::zeros(n, n);
        for i in 0..n {
            let t = grid.t(i + 1);
            for j in 0..=i {
                weights[(i, j)] = kernel.k(t, (j as f64 + 0.5) * dt)?;
            }
        }
        Ok(Self { grid, weights })
    }

    /// Path driven by the given Brownian increments.
    pub fn path_from_increments(&self, db: &[f64]) -> Vec<f64> {
        let n = self.grid.n_steps();
        assert_eq!(db.len(), n, "increment vector length must equal step count");
        let mut values = vec![0.0; n + 1];
        for i in 0..n {
            values[i + 1] = (0..=i).map(|j| self.weights[(i, j)] * db[j]).sum();
        }
        values
    }

    pub fn sample(&self, seed: u64) -> FbmSample {
        let sd = self.grid.dt().sqrt();
        let db: Vec<f64> = standard_normals(seed, self.grid.n_steps())
            .into_iter()
            .map(|z| z * sd)
            .collect();
        FbmSample {
            grid: self.grid,
            values: self.path_from_increments(&db),
            seed_label: seed,
        }
    }

    /// Exact covariance of the sampler output at grid indices `a, b ≥ 1`.
    pub fn model_covariance(&self, a: usize, b: usize) -> f64 {
        if a == 0 || b == 0 {
            return 0.0;
        }
        let dt = self.grid.dt();
        let m = a.min(b);
        (0..m)
            .map(|j| self.weights[(a - 1, j)] * self.weights[(b - 1, j)] * dt)
            .sum()
    }

    /// `|model_covariance(a, b) − R_H(t_a, t_b)|`: deterministic midpoint bias.
    pub fn covariance_bias(&self, a: usize, b: usize, h: HurstParameter) -> f64 {
        let exact = covariance(self.grid.t(a), self.grid.t(b), h).expect("nonnegative grid times");
        (self.model_covariance(a, b) - exact).abs()
    }
}

pub fn sample_fbm_wiener(
    grid: TimeGrid,
    h: HurstParameter,
    seed: u64,
    quad: KernelQuadrature,
) -> Result<FbmSample> {
    Ok(WienerSampler::new(grid, h, quad)?.sample(seed))
}
