//! Model description and its prepared (validated, precomputed) form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::{cell_pairing, CholeskySampler, FbmSample, HurstParameter};
use crate::grid::{aligned_steps, TimeGrid};
use crate::resolvent::{MemoryKernel, ResolventTable};
use crate::spectral::{CoefficientFunction, SpaceGrid, SpectralBasis, SpectralField, M_MAX};

/// Registry reference `{ name, params }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryRef {
    pub name: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

impl RegistryRef {
    pub fn new(name: &str, params: &[f64]) -> Self {
        Self {
            name: name.to_string(),
            params: params.to_vec(),
        }
    }
}

/// Initial history `φ(t) = α(t)·v` on `[−r, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    /// `constant [c]`, `linear [a, b]` (a + b t) or `cosine [a, ω]` (a cos ωt).
    pub alpha: String,
    #[serde(default)]
    pub alpha_params: Vec<f64>,
    /// `modes [c_1, …]` (leading coefficients) or `parabola [a]` (a·y(π − y)).
    pub field: String,
    #[serde(default)]
    pub field_params: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alpha {
    Constant(f64),
    Linear { a: f64, b: f64 },
    Cosine { a: f64, omega: f64 },
}

impl Alpha {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Alpha::Constant(c) => c,
            Alpha::Linear { a, b } => a + b * t,
            Alpha::Cosine { a, omega } => a * (omega * t).cos(),
        }
    }
}

impl InitialSpec {
    pub fn alpha(&self) -> Result<Alpha> {
        match (self.alpha.as_str(), self.alpha_params.as_slice()) {
            ("constant", [c]) => Ok(Alpha::Constant(*c)),
            ("linear", [a, b]) => Ok(Alpha::Linear { a: *a, b: *b }),
            ("cosine", [a, w]) => Ok(Alpha::Cosine { a: *a, omega: *w }),
            ("constant" | "linear" | "cosine", p) => Err(Error::Config(format!(
                "initial alpha '{}' given {} parameters",
                self.alpha,
                p.len()
            ))),
            (other, _) => Err(Error::Config(format!("unknown initial alpha '{other}'"))),
        }
    }

    pub fn field(&self, n_modes: usize) -> Result<SpectralField> {
        match self.field.as_str() {
            "modes" => {
                if self.field_params.len() > n_modes {
                    return Err(Error::Config(format!(
                        "initial field lists {} modes but the model keeps {n_modes}",
                        self.field_params.len()
                    )));
                }
                let mut c = vec![0.0; n_modes];
                c[..self.field_params.len()].copy_from_slice(&self.field_params);
                SpectralField::new(c)
            }
            "parabola" => match self.field_params.as_slice() {
                // ⟨y(π−y), e_n⟩ = √(2/π)·4/n³ for odd n, 0 for even n
                [a] => SpectralField::new(
                    (1..=n_modes)
                        .map(|n| {
                            if n % 2 == 1 {
                                a * (2.0 / std::f64::consts::PI).sqrt() * 4.0 / (n as f64).powi(3)
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                ),
                p => Err(Error::Config(format!("initial field 'parabola' given {} parameters", p.len()))),
            },
            other => Err(Error::Config(format!("unknown initial field '{other}'"))),
        }
    }
}

fn default_n_modes() -> usize {
    32
}
fn default_space_points() -> usize {
    127
}
fn default_depth() -> usize {
    2
}

/// Complete model description, as read from a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub hurst: f64,
    /// Horizon T.
    pub horizon: f64,
    /// Delay r.
    pub delay: f64,
    /// Block count m with T ≤ m·r; `ceil(T/r)` when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<usize>,
    pub dt: f64,
    #[serde(default = "default_n_modes")]
    pub n_modes: usize,
    #[serde(default = "default_space_points")]
    pub space_points: usize,
    /// Highest Malliavin derivative order K kept in memory.
    #[serde(default = "default_depth")]
    pub derivative_depth: usize,
    pub g: RegistryRef,
    pub f: RegistryRef,
    pub sigma: RegistryRef,
    pub kernel: RegistryRef,
    pub initial: InitialSpec,
}

/// Bytes of derivative storage allowed per path.
pub const DERIVATIVE_BUDGET_BYTES: f64 = 1.5e9;

/// Highest derivative order supported.
pub const MAX_DEPTH: usize = 3;

impl ModelSpec {
    /// Every violated constraint, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.hurst > 0.5 && self.hurst < 1.0) {
            out.push(format!("hurst out of (1/2,1): {}", self.hurst));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.horizon) {
            out.push(format!("horizon must be positive: {}", self.horizon));
        }
        if !positive(self.delay) {
            out.push(format!("delay must be positive: {}", self.delay));
        }
        if !positive(self.dt) {
            out.push(format!("dt must be positive: {}", self.dt));
        }
        if positive(self.delay) && positive(self.dt) && aligned_steps(self.delay, self.dt).is_none() {
            out.push(format!("r/dt non-integer: r = {}, dt = {}", self.delay, self.dt));
        }
        if positive(self.horizon) && positive(self.dt) && aligned_steps(self.horizon, self.dt).is_none() {
            out.push(format!("T/dt non-integer: T = {}, dt = {}", self.horizon, self.dt));
        }
        if let Some(m) = self.blocks {
            if m == 0 {
                out.push("blocks must be at least 1".into());
            } else if positive(self.horizon) && positive(self.delay) && self.horizon > m as f64 * self.delay * (1.0 + 1e-12) {
                out.push(format!(
                    "T exceeds m·r: T = {}, m = {m}, r = {}",
                    self.horizon, self.delay
                ));
            }
        }
        if let Some(m) = self.n_blocks() {
            if m > M_MAX {
                out.push(format!(
                    "blocks exceed coefficient smoothness: {m} blocks need derivatives to order {m}, registry provides {M_MAX}"
                ));
            }
        }
        if self.n_modes == 0 {
            out.push("n_modes must be at least 1".into());
        }
        if self.space_points < self.n_modes {
            out.push(format!(
                "space_points < n_modes (aliasing): {} < {}",
                self.space_points, self.n_modes
            ));
        }
        if self.derivative_depth == 0 || self.derivative_depth > MAX_DEPTH {
            out.push(format!(
                "derivative_depth out of 1..={MAX_DEPTH}: {}",
                self.derivative_depth
            ));
        }
        for (role, r, zero) in [("g", &self.g, true), ("f", &self.f, true), ("sigma", &self.sigma, false)] {
            match CoefficientFunction::registry_lookup(&r.name, &r.params) {
                Ok(c) => {
                    if zero && !c.zero_at_zero() {
                        out.push(format!("{role} must vanish at zero"));
                    }
                }
                Err(e) => out.push(format!("{role}: {e}")),
            }
        }
        if let Err(e) = MemoryKernel::registry_lookup(&self.kernel.name, &self.kernel.params) {
            out.push(format!("kernel: {e}"));
        }
        if let Err(e) = self.initial.alpha() {
            out.push(format!("initial: {e}"));
        }
        if self.n_modes > 0 {
            if let Err(e) = self.initial.field(self.n_modes) {
                out.push(format!("initial: {e}"));
            }
        }
        if out.is_empty() {
            let bytes = self.derivative_storage_bytes();
            if bytes > DERIVATIVE_BUDGET_BYTES {
                out.push(format!(
                    "derivative storage estimate {:.2} GB exceeds the {:.1} GB budget; lower derivative_depth or coarsen dt",
                    bytes / 1e9,
                    DERIVATIVE_BUDGET_BYTES / 1e9
                ));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }

    /// Blocks actually solved: `ceil(T/r)` on the grid.
    pub fn n_blocks(&self) -> Option<usize> {
        let n_t = aligned_steps(self.horizon, self.dt)?;
        let n_r = aligned_steps(self.delay, self.dt)?;
        Some(n_t.div_ceil(n_r))
    }

    /// Derivative orders stored on block `n` (1-based): `1..=min(K, m − n)`.
    pub fn tracked_order(&self, block: usize) -> usize {
        let m = self.n_blocks().unwrap_or(0);
        self.derivative_depth.min(m.saturating_sub(block))
    }

    /// Rough per-path storage of derivatives of order ≥ 2 plus their local terms.
    pub fn derivative_storage_bytes(&self) -> f64 {
        let (Some(n_t), Some(n_r), Some(m)) = (
            aligned_steps(self.horizon, self.dt),
            aligned_steps(self.delay, self.dt),
            self.n_blocks(),
        ) else {
            return 0.0;
        };
        let mut bytes = 0.0;
        for block in 1..=m {
            let k_max = self.tracked_order(block);
            for k in 1..=k_max {
                if block == 1 && k >= 2 {
                    continue;
                }
                let first = (block - 1) * n_r + 1;
                let last = (block * n_r).min(n_t);
                for i in first..=last {
                    // x derivative plus local term, both prefix-sized
                    bytes += 2.0 * 8.0 * self.n_modes as f64 * crate::solver::tuples::count(i, k) as f64;
                }
            }
        }
        bytes
    }
}

/// Validated model with precomputed grids, basis, resolvent and sampler.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub hurst: HurstParameter,
    pub g: CoefficientFunction,
    pub f: CoefficientFunction,
    pub sigma: CoefficientFunction,
    pub kernel: MemoryKernel,
    pub grid: TimeGrid,
    pub n_delay: usize,
    pub n_blocks: usize,
    pub basis: SpectralBasis,
    pub table: ResolventTable,
    /// `resolvent_rows[i][n] = r_n(t_i)`.
    pub resolvent_rows: Vec<Vec<f64>>,
    /// `⟨1_j, 1_{j+k}⟩_𝓗` for every lag.
    pub pairing: Vec<f64>,
    /// `φ(t_p)` coefficients for `p = −n_delay..=0`, stored at `p + n_delay`.
    pub history: Vec<Vec<f64>>,
    pub history_phys: Vec<Vec<f64>>,
    /// `φ(0) + g(φ(−r))`.
    pub a0: Vec<f64>,
    sampler: CholeskySampler,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let hurst = HurstParameter::new(spec.hurst)?;
        let g = CoefficientFunction::registry_lookup(&spec.g.name, &spec.g.params)?;
        let f = CoefficientFunction::registry_lookup(&spec.f.name, &spec.f.params)?;
        let sigma = CoefficientFunction::registry_lookup(&spec.sigma.name, &spec.sigma.params)?;
        let kernel = MemoryKernel::registry_lookup(&spec.kernel.name, &spec.kernel.params)?;
        let grid = TimeGrid::with_spacing(spec.horizon, spec.dt)?;
        let n_delay = aligned_steps(spec.delay, spec.dt).expect("validated");
        let n_blocks = spec.n_blocks().expect("validated");
        let basis = SpectralBasis::new(spec.n_modes, SpaceGrid::new(spec.space_points)?)?;
        let table = ResolventTable::for_modes(grid, spec.n_modes, &kernel)?;
        let resolvent_rows = (0..grid.n_points()).map(|i| table.at(i)).collect();
        let pairing = cell_pairing(hurst, grid.dt(), grid.n_points());
        let alpha = spec.initial.alpha()?;
        let field = spec.initial.field(spec.n_modes)?;
        let dt = grid.dt();
        let history: Vec<Vec<f64>> = (0..=n_delay)
            .map(|q| {
                let t = -((n_delay - q) as f64) * dt;
                field.coeffs.iter().map(|c| alpha.value(t) * c).collect()
            })
            .collect();
        let history_phys: Vec<Vec<f64>> = history.iter().map(|c| basis.synthesize_slice(c)).collect();
        let g_hist: Vec<f64> = history_phys[0].iter().map(|&v| g.value(v)).collect();
        let g_coeffs = basis.analyze_slice(&g_hist);
        let a0 = history[n_delay].iter().zip(&g_coeffs).map(|(a, b)| a + b).collect();
        let sampler = CholeskySampler::new(grid, hurst)?;
        Ok(Self {
            spec,
            hurst,
            g,
            f,
            sigma,
            kernel,
            grid,
            n_delay,
            n_blocks,
            basis,
            table,
            resolvent_rows,
            pairing,
            history,
            history_phys,
            a0,
            sampler,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.spec.n_modes
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    /// 1-based block containing grid index `i ≥ 1`; block 0 for `i ≤ 0`.
    pub fn block_of(&self, i: isize) -> usize {
        if i <= 0 {
            0
        } else {
            (i as usize - 1) / self.n_delay + 1
        }
    }

    /// Index range `first..=last` of block `n` (1-based).
    pub fn block_range(&self, n: usize) -> (usize, usize) {
        ((n - 1) * self.n_delay + 1, (n * self.n_delay).min(self.n_steps()))
    }

    pub fn tracked_order(&self, block: usize) -> usize {
        self.spec.tracked_order(block)
    }

    pub fn sample_fbm(&self, seed: u64) -> FbmSample {
        self.sampler.sample(seed)
    }

    pub fn sampler(&self) -> &CholeskySampler {
        &self.sampler
    }
}
