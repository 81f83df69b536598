//! Truncated sine basis on `[0, π]` with Dirichlet boundary, collocation
//! transforms and pointwise (Nemytskii) coefficient operators.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};

/// Highest derivative order provided by the coefficient registry.
pub const M_MAX: usize = 4;

/// Coefficients in the orthonormal basis `e_n(y) = √(2/π) sin(n y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralField {
    pub coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(argument("spectral field has non-finite coefficients"));
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(n_modes: usize) -> Self {
        Self {
            coeffs: vec![0.0; n_modes],
        }
    }

    /// `e_k` (1-based mode index).
    pub fn basis_vector(n_modes: usize, k: usize) -> Self {
        let mut f = Self::zeros(n_modes);
        f.coeffs[k - 1] = 1.0;
        f
    }

    pub fn n_modes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum()
    }

    /// `self += a·other`.
    pub fn axpy(&mut self, a: f64, other: &Self) {
        for (x, y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x += a * y;
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| a * c).collect(),
        }
    }

    /// `Σ λ_n² c_n²` with `λ_n = n²`: finite for every truncated field, used
    /// as a tail-decay diagnostic for membership in the operator domain.
    pub fn graph_norm_sq(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let l = ((i + 1) * (i + 1)) as f64;
                l * l * c * c
            })
            .sum()
    }
}

/// Interior collocation points `y_j = jπ/(P+1)`, `j = 1..=P`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceGrid {
    n_points: usize,
}

impl SpaceGrid {
    pub fn new(n_points: usize) -> Result<Self> {
        if n_points == 0 {
            return Err(argument("space grid needs at least one point"));
        }
        Ok(Self { n_points })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> f64 {
        PI / (self.n_points + 1) as f64
    }

    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.spacing()
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (1..=self.n_points).map(|j| self.y(j))
    }
}

/// Precomputed synthesis and analysis matrices for `n_modes` on a grid.
///
/// Both transforms are discrete sine transforms; for `n_modes ≤ n_points`
/// they are exact inverses on the truncated span.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    n_modes: usize,
    grid: SpaceGrid,
    /// `P × N`, entry `√(2/π) sin(n y_j)`.
    synth: DMatrix<f64>,
    /// `N × P`, the transpose scaled by the grid spacing.
    analysis: DMatrix<f64>,
}

impl SpectralBasis {
    pub fn new(n_modes: usize, grid: SpaceGrid) -> Result<Self> {
        if n_modes == 0 {
            return Err(argument("need at least one mode"));
        }
        if grid.n_points() < n_modes {
            return Err(argument(format!(
                "{} collocation points cannot resolve {} modes (aliasing)",
                grid.n_points(),
                n_modes
            )));
        }
        let c = (2.0 / PI).sqrt();
        let synth = DMatrix::from_fn(grid.n_points(), n_modes, |j, n| {
            c * ((n + 1) as f64 * grid.y(j + 1)).sin()
        });
        let analysis = synth.transpose() * grid.spacing();
        Ok(Self {
            n_modes,
            grid,
            synth,
            analysis,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn grid(&self) -> SpaceGrid {
        self.grid
    }

    pub fn synthesis_matrix(&self) -> &DMatrix<f64> {
        &self.synth
    }

    pub fn analysis_matrix(&self) -> &DMatrix<f64> {
        &self.analysis
    }

    pub fn synthesize(&self, field: &SpectralField) -> Result<Vec<f64>> {
        if field.n_modes() != self.n_modes {
            return Err(argument(format!(
                "field has {} modes, basis has {}",
                field.n_modes(),
                self.n_modes
            )));
        }
        Ok(self.synthesize_slice(&field.coeffs))
    }

    pub(crate) fn synthesize_slice(&self, coeffs: &[f64]) -> Vec<f64> {
        let p = self.grid.n_points();
        let mut out = vec![0.0; p];
        for (n, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let col = self.synth.column(n);
            for (o, s) in out.iter_mut().zip(col.iter()) {
                *o += c * s;
            }
        }
        out
    }

    pub fn analyze(&self, values: &[f64]) -> Result<SpectralField> {
        if values.len() != self.grid.n_points() {
            return Err(argument(format!(
                "expected {} collocation values, got {}",
                self.grid.n_points(),
                values.len()
            )));
        }
        Ok(SpectralField {
            coeffs: self.analyze_slice(values),
        })
    }

    pub(crate) fn analyze_slice(&self, values: &[f64]) -> Vec<f64> {
        (0..self.n_modes)
            .map(|n| {
                self.synth
                    .column(n)
                    .iter()
                    .zip(values)
                    .map(|(s, v)| s * v)
                    .sum::<f64>()
                    * self.grid.spacing()
            })
            .collect()
    }

    /// Columns of `coeffs` (N × B) to physical values (P × B).
    pub fn synthesize_batch(&self, coeffs: &DMatrix<f64>) -> DMatrix<f64> {
        &self.synth * coeffs
    }

    /// Columns of `values` (P × B) to coefficients (N × B).
    pub fn analyze_batch(&self, values: &DMatrix<f64>) -> DMatrix<f64> {
        &self.analysis * values
    }

    /// Discrete L² norm `(π/(P+1)) Σ v_j²`.
    pub fn l2_norm_sq(&self, values: &[f64]) -> f64 {
        self.grid.spacing() * values.iter().map(|v| v * v).sum::<f64>()
    }
}

pub fn synthesize(field: &SpectralField, grid: SpaceGrid) -> Result<Vec<f64>> {
    SpectralBasis::new(field.n_modes(), grid)?.synthesize(field)
}

pub fn analyze(values: &[f64], grid: SpaceGrid, n_modes: usize) -> Result<SpectralField> {
    SpectralBasis::new(n_modes, grid)?.analyze(values)
}

/// Scalar coefficient functions with analytic derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum CoefficientFunction {
    Zero,
    Constant { c: f64 },
    /// `a·tanh(x/s) + offset`.
    ScaledTanh { a: f64, s: f64, offset: f64 },
    /// `a·sin(ωx) + offset`.
    BoundedSine { a: f64, omega: f64, offset: f64 },
}

/// `max |d^k/dz^k tanh z|` for k = 0..=4.
fn tanh_derivative_bounds() -> [f64; M_MAX + 1] {
    // d⁴tanh = (1−T²)(16T − 24T³) peaks where T² = (15 − √105)/30.
    let t2 = (15.0 - 105f64.sqrt()) / 30.0;
    let t = t2.sqrt();
    let m4 = (1.0 - t2) * (16.0 * t - 24.0 * t * t2);
    [1.0, 1.0, 4.0 / (3.0 * 3f64.sqrt()), 2.0, m4]
}

impl CoefficientFunction {
    pub fn registry_lookup(name: &str, params: &[f64]) -> Result<Self> {
        let bad_arity = |expected: &str| {
            Error::Config(format!(
                "coefficient '{name}' expects {expected} parameters, got {}",
                params.len()
            ))
        };
        let f = match name {
            "zero" => {
                if !params.is_empty() {
                    return Err(bad_arity("0"));
                }
                Self::Zero
            }
            "constant" => match params {
                [c] => Self::Constant { c: *c },
                _ => return Err(bad_arity("1")),
            },
            "scaled_tanh" => match params {
                [a, s] => Self::ScaledTanh { a: *a, s: *s, offset: 0.0 },
                [a, s, o] => Self::ScaledTanh { a: *a, s: *s, offset: *o },
                _ => return Err(bad_arity("2 or 3")),
            },
            "bounded_sine" => match params {
                [a, w] => Self::BoundedSine { a: *a, omega: *w, offset: 0.0 },
                [a, w, o] => Self::BoundedSine { a: *a, omega: *w, offset: *o },
                _ => return Err(bad_arity("2 or 3")),
            },
            other => return Err(Error::Config(format!("unknown coefficient function '{other}'"))),
        };
        f.validate()?;
        Ok(f)
    }

    fn validate(&self) -> Result<()> {
        let finite = match *self {
            Self::Zero => true,
            Self::Constant { c } => c.is_finite(),
            Self::ScaledTanh { a, s, offset } => {
                if s == 0.0 {
                    return Err(Error::Config("scaled_tanh needs a nonzero scale".into()));
                }
                a.is_finite() && s.is_finite() && offset.is_finite()
            }
            Self::BoundedSine { a, omega, offset } => {
                a.is_finite() && omega.is_finite() && offset.is_finite()
            }
        };
        if finite {
            Ok(())
        } else {
            Err(Error::Config("coefficient parameters must be finite".into()))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::Constant { .. } => "constant",
            Self::ScaledTanh { .. } => "scaled_tanh",
            Self::BoundedSine { .. } => "bounded_sine",
        }
    }

    pub fn m_max(&self) -> usize {
        M_MAX
    }

    pub fn zero_at_zero(&self) -> bool {
        self.derivative(0, 0.0) == 0.0
    }

    /// Fails with a configuration error unless `f(0) = 0`.
    pub fn require_zero_at_zero(&self, role: &str) -> Result<()> {
        if self.zero_at_zero() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{role} must vanish at zero, but {}(0) = {}",
                self.name(),
                self.derivative(0, 0.0)
            )))
        }
    }

    /// True when every derivative of order ≥ 1 vanishes identically.
    pub fn is_constant(&self) -> bool {
        match *self {
            Self::Zero | Self::Constant { .. } => true,
            Self::ScaledTanh { a, .. } | Self::BoundedSine { a, .. } => a == 0.0,
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.derivative(0, x)
    }

    /// `f^{(k)}(x)` for `k ≤ 4`; panics above [`M_MAX`].
    pub fn derivative(&self, k: usize, x: f64) -> f64 {
        assert!(k <= M_MAX, "derivative order {k} exceeds {M_MAX}");
        match *self {
            Self::Zero => 0.0,
            Self::Constant { c } => {
                if k == 0 {
                    c
                } else {
                    0.0
                }
            }
            Self::ScaledTanh { a, s, offset } => {
                let t = (x / s).tanh();
                let q = 1.0 - t * t;
                let d = match k {
                    0 => t,
                    1 => q,
                    2 => -2.0 * t * q,
                    3 => (6.0 * t * t - 2.0) * q,
                    _ => q * (16.0 * t - 24.0 * t * t * t),
                };
                let base = a * d / s.powi(k as i32);
                if k == 0 {
                    base + offset
                } else {
                    base
                }
            }
            Self::BoundedSine { a, omega, offset } => {
                let z = omega * x;
                let d = match k % 4 {
                    0 => z.sin(),
                    1 => z.cos(),
                    2 => -z.sin(),
                    _ => -z.cos(),
                };
                let base = a * omega.powi(k as i32) * d;
                if k == 0 {
                    base + offset
                } else {
                    base
                }
            }
        }
    }

    /// Declared bound on `sup |f^{(k)}|`.
    pub fn bound(&self, k: usize) -> f64 {
        assert!(k <= M_MAX, "derivative order {k} exceeds {M_MAX}");
        match *self {
            Self::Zero => 0.0,
            Self::Constant { c } => {
                if k == 0 {
                    c.abs()
                } else {
                    0.0
                }
            }
            Self::ScaledTanh { a, s, offset } => {
                let b = a.abs() * tanh_derivative_bounds()[k] / s.abs().powi(k as i32);
                if k == 0 {
                    b + offset.abs()
                } else {
                    b
                }
            }
            Self::BoundedSine { a, omega, offset } => {
                let b = a.abs() * omega.abs().powi(k as i32);
                if k == 0 {
                    b + offset.abs()
                } else {
                    b
                }
            }
        }
    }

    /// `inf f` over the real line, if the function is bounded below by a
    /// known constant.
    pub fn lower_bound(&self) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Constant { c } => c,
            Self::ScaledTanh { a, offset, .. } | Self::BoundedSine { a, offset, .. } => {
                offset - a.abs()
            }
        }
    }
}

pub fn registry_lookup(name: &str, params: &[f64]) -> Result<CoefficientFunction> {
    CoefficientFunction::registry_lookup(name, params)
}

/// Physical-space multiplier `f^{(k)}(x(y_j))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseMultiplier {
    pub values: Vec<f64>,
}

impl PointwiseMultiplier {
    /// `analyze(multiplier ⊙ synthesize(direction))`.
    pub fn apply(&self, basis: &SpectralBasis, direction: &SpectralField) -> Result<SpectralField> {
        let v = basis.synthesize(direction)?;
        let prod: Vec<f64> = v.iter().zip(&self.values).map(|(a, b)| a * b).collect();
        basis.analyze(&prod)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NemytskiiOutput {
    Field(SpectralField),
    Multiplier(PointwiseMultiplier),
}

/// Order 0: the coefficient operator applied to `field`. Order `k ≥ 1`: the
/// multiplier representing its k-th Fréchet derivative at `field`.
pub fn nemytskii_apply(
    f: &CoefficientFunction,
    order: usize,
    field: &SpectralField,
    basis: &SpectralBasis,
) -> Result<NemytskiiOutput> {
    if order > f.m_max() {
        return Err(argument(format!(
            "derivative order {order} exceeds the registry maximum {}",
            f.m_max()
        )));
    }
    let x = basis.synthesize(field)?;
    let values: Vec<f64> = x.iter().map(|&v| f.derivative(order, v)).collect();
    if order == 0 {
        Ok(NemytskiiOutput::Field(basis.analyze(&values)?))
    } else {
        Ok(NemytskiiOutput::Multiplier(PointwiseMultiplier { values }))
    }
}

/// `analyze(f(synthesize(field)))`.
pub fn nemytskii_value(
    f: &CoefficientFunction,
    field: &SpectralField,
    basis: &SpectralBasis,
) -> Result<SpectralField> {
    let x = basis.synthesize(field)?;
    let values: Vec<f64> = x.iter().map(|&v| f.value(v)).collect();
    basis.analyze(&values)
}
