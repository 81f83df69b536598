//! Monte Carlo evaluation of the absolute-continuity criterion
//! `∫_{t−r}^t (F'(x(t))[R(t−u)σ(x(u−r))])² du > 0` for a functional `F`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{argument, Result};
use crate::model::Model;
use crate::seed::derive_seed;
use crate::solver::{DerivativeScope, PathSolver, PathState};

/// Below this norm `F = ‖·‖` has no derivative and the path is reported as
/// degenerate.
pub const NORM_FLOOR: f64 = 1e-12;

/// Default positivity tolerance.
pub const DEFAULT_EPSILON: f64 = 1e-10;

/// The functional `F` through its derivative at `x(t)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Functional {
    /// `F(x) = ⟨v, x⟩`.
    Linear(Vec<f64>),
    /// `F(x) = ‖x‖`, so `F'(x)h = ⟨x, h⟩/‖x‖`.
    Norm,
    /// `h ↦ ⟨x, h⟩`, the form without the `1/‖x‖` factor.
    NormUnnormalized,
}

impl Functional {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Linear(_) => "linear",
            Self::Norm => "norm",
            Self::NormUnnormalized => "norm_unnormalized",
        }
    }

    /// Coefficient vector `w` with `F'(x)h = ⟨w, h⟩`, or `None` when `F` is
    /// not differentiable at `x`.
    fn gradient(&self, x: &[f64]) -> Result<Option<Vec<f64>>> {
        match self {
            Self::Linear(v) => {
                if v.len() != x.len() {
                    return Err(argument(format!(
                        "linear functional has {} modes, state has {}",
                        v.len(),
                        x.len()
                    )));
                }
                Ok(Some(v.clone()))
            }
            Self::Norm => {
                let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                Ok((n >= NORM_FLOOR).then(|| x.iter().map(|v| v / n).collect()))
            }
            Self::NormUnnormalized => Ok(Some(x.to_vec())),
        }
    }
}

/// `D_u x(t)` for `t − r < u < t` from the closed form
/// `R(t − u)σ(x(u − r))`, with `u` in grid cell `c` and `t = t_i`.
pub fn last_interval_derivative_cell(state: &PathState, model: &Model, i: usize, c: usize) -> Result<Vec<f64>> {
    if i > state.last_index() {
        return Err(argument(format!("t index {i} is beyond the solved range")));
    }
    if c >= i || c + model.n_delay < i {
        return Err(argument(format!(
            "cell {c} is outside the last delay interval before t index {i}"
        )));
    }
    Ok(resolvent_sigma(state, model, i, c))
}

/// `R(t_i − t_c)σ(x(t_c − r))` for any node `c ≤ i`.
fn resolvent_sigma(state: &PathState, model: &Model, i: usize, c: usize) -> Vec<f64> {
    let p = c as isize - model.n_delay as isize;
    let phys = if p <= 0 {
        &model.history_phys[(p + model.n_delay as isize) as usize]
    } else {
        state.x_phys(p as usize)
    };
    let sig: Vec<f64> = phys.iter().map(|&v| model.sigma.value(v)).collect();
    let s_hat = model.basis.analyze_slice(&sig);
    s_hat.iter().zip(&model.resolvent_rows[i - c]).map(|(s, r)| s * r).collect()
}

/// Same as [`last_interval_derivative_cell`] with `u` given as a time.
pub fn last_interval_derivative(state: &PathState, model: &Model, u: f64, t: f64) -> Result<Vec<f64>> {
    let r = model.spec.delay;
    if !(u > t - r && u < t) {
        return Err(argument(format!("u = {u} is outside (t − r, t) = ({}, {t})", t - r)));
    }
    let i = model
        .grid
        .index_of(t)
        .ok_or_else(|| argument(format!("t = {t} is not a grid time")))?;
    let c = (u / model.grid.dt()).floor() as usize;
    last_interval_derivative_cell(state, model, i, c.min(i - 1))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trapezoidal value of the criterion over `(max(0, t − r), t)` for
/// `t = t_i`; `None` when `F` is not differentiable at `x(t)`.
pub fn density_criterion(state: &PathState, model: &Model, i: usize, functional: &Functional) -> Result<Option<f64>> {
    if i == 0 {
        return Err(argument("criterion needs t > 0"));
    }
    if i > state.last_index() {
        return Err(argument(format!("t index {i} is beyond the solved range")));
    }
    let Some(w) = functional.gradient(state.x(i))? else {
        return Ok(None);
    };
    let lo = i.saturating_sub(model.n_delay);
    let dt = model.grid.dt();
    let mut total = 0.0;
    for c in lo..=i {
        let weight = if c == lo || c == i { 0.5 } else { 1.0 };
        total += weight * dot(&w, &resolvent_sigma(state, model, i, c)).powi(2);
    }
    Ok(Some(total * dt))
}

/// The criterion over `(0, t)`: the last-interval value plus the stored
/// first derivatives on the earlier cells. Needs `D x(t_i)` in the state.
pub fn full_window_criterion(state: &PathState, model: &Model, i: usize, functional: &Functional) -> Result<Option<f64>> {
    let Some(window) = density_criterion(state, model, i, functional)? else {
        return Ok(None);
    };
    let w = functional.gradient(state.x(i))?.expect("checked above");
    let lo = i.saturating_sub(model.n_delay);
    let mut extra = 0.0;
    for c in 0..lo {
        let d = state
            .d1(i, c)
            .ok_or_else(|| argument(format!("first derivatives at t index {i} are not stored")))?;
        extra += dot(&w, &d).powi(2);
    }
    Ok(Some(window + extra * model.grid.dt()))
}

/// `r · max_u ‖R(t − u)σ(x(u − r))‖²` over the window nodes.
pub fn cauchy_schwarz_bound(state: &PathState, model: &Model, i: usize) -> f64 {
    let lo = i.saturating_sub(model.n_delay);
    let sup = (lo..=i)
        .map(|c| resolvent_sigma(state, model, i, c).iter().map(|v| v * v).sum::<f64>())
        .fold(0.0, f64::max);
    (i - lo) as f64 * model.grid.dt() * sup
}

/// Per-path criterion values at one time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionReport {
    pub functional: String,
    pub t: f64,
    pub t_index: usize,
    pub epsilon: f64,
    /// `(seed, value)` for paths where the criterion is defined.
    pub values: Vec<(u64, f64)>,
    /// Seeds where `F` is not differentiable at `x(t)`.
    pub degenerate: Vec<u64>,
    pub fraction_positive: f64,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl CriterionReport {
    fn new(functional: &Functional, model: &Model, i: usize, epsilon: f64, rows: Vec<(u64, Option<f64>)>) -> Self {
        let n_total = rows.len();
        let mut values = Vec::new();
        let mut degenerate = Vec::new();
        for (seed, v) in rows {
            match v {
                Some(v) => values.push((seed, v)),
                None => degenerate.push(seed),
            }
        }
        let positive = values.iter().filter(|(_, v)| *v > epsilon).count();
        let min = values.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let max = values.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let mean = values.iter().map(|p| p.1).sum::<f64>() / values.len().max(1) as f64;
        Self {
            functional: functional.name().to_string(),
            t: model.grid.t(i),
            t_index: i,
            epsilon,
            values,
            degenerate,
            fraction_positive: if n_total == 0 { 0.0 } else { positive as f64 / n_total as f64 },
            min,
            mean,
            max,
        }
    }
}

/// Solve only as many blocks as needed to reach `t_i`.
pub fn solve_until(solver: &PathSolver, seed: u64, i: usize) -> Result<PathState> {
    let model = solver.model();
    let mut state = solver.initial_state(model.sample_fbm(seed).increments())?;
    let blocks = model.block_of(i as isize).max(1);
    for n in 0..blocks {
        solver.solve_block(n, &mut state)?;
    }
    Ok(state)
}

/// Criterion at `t_i` for each functional over paths `derive_seed(seed, p)`,
/// `p < n_paths`.
pub fn criterion_statistics(
    model: &Model,
    i: usize,
    n_paths: usize,
    seed: u64,
    epsilon: f64,
    functionals: &[Functional],
) -> Result<Vec<CriterionReport>> {
    if i == 0 || i > model.n_steps() {
        return Err(argument(format!("t index {i} is outside (0, T]")));
    }
    let solver = PathSolver::new(model, DerivativeScope::Minimal);
    let rows = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let s = derive_seed(seed, p as u64);
            let state = solve_until(&solver, s, i)?;
            functionals
                .iter()
                .map(|f| density_criterion(&state, model, i, f).map(|v| (s, v)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(functionals
        .iter()
        .enumerate()
        .map(|(k, f)| CriterionReport::new(f, model, i, epsilon, rows.iter().map(|r| r[k]).collect()))
        .collect())
}

/// Positivity threshold implied by `σ ≥ δ > 0` for `F = ⟨e_1, ·⟩`:
/// `½δ²·r·min_u r_1(t − u)²` over the window at `t_i`.
pub fn lower_bound_epsilon(model: &Model, i: usize, delta: f64) -> f64 {
    let lo = i.saturating_sub(model.n_delay);
    let min_r1 = (0..=i - lo).map(|k| model.resolvent_rows[k][0].powi(2)).fold(f64::INFINITY, f64::min);
    0.5 * delta * delta * ((i - lo) as f64 * model.grid.dt()) * min_r1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::base_spec;
    use crate::model::{ModelSpec, RegistryRef};
    use crate::spectral::SpectralField;

    fn model(edit: impl FnOnce(&mut ModelSpec)) -> Model {
        let mut s = base_spec();
        edit(&mut s);
        Model::new(s).unwrap()
    }

    fn e1(n: usize) -> Functional {
        Functional::Linear(SpectralField::basis_vector(n, 1).coeffs)
    }

    #[test]
    fn closed_form_matches_stored_derivative() {
        let m = model(|_| {});
        let st = PathSolver::new(&m, DerivativeScope::AllBlocks).solve_path(7).unwrap();
        let last = m.n_steps();
        for c in last - m.n_delay..last {
            let a = last_interval_derivative_cell(&st, &m, last, c).unwrap();
            let b = st.d1(last, c).unwrap();
            let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs()));
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-14 * scale.max(1.0));
            }
        }
        assert!(last_interval_derivative_cell(&st, &m, last, last).is_err());
        assert!(last_interval_derivative_cell(&st, &m, last, last - m.n_delay - 1).is_err());
        assert!(last_interval_derivative(&st, &m, 0.2, 1.0).is_err());
        assert!(last_interval_derivative(&st, &m, 0.7, 1.0).is_ok());
    }

    #[test]
    fn derivative_near_t_is_sigma_of_delayed_state() {
        let m = model(|_| {});
        let st = PathSolver::new(&m, DerivativeScope::Required).solve_path(1).unwrap();
        let i = m.n_steps();
        let d = last_interval_derivative_cell(&st, &m, i, i - 1).unwrap();
        let sig: Vec<f64> = st.x_phys(i - 1 - m.n_delay).iter().map(|&v| m.sigma.value(v)).collect();
        let s_hat = m.basis.analyze_slice(&sig);
        for (n, (a, b)) in d.iter().zip(&s_hat).enumerate() {
            assert_eq!(*a, b * m.table.value(n, 1));
        }
    }

    #[test]
    fn zero_noise_gives_zero_criterion() {
        let m = model(|s| s.sigma = RegistryRef::new("zero", &[]));
        let reps = criterion_statistics(&m, m.n_steps(), 3, 2, DEFAULT_EPSILON, &[e1(8), Functional::Norm]).unwrap();
        for r in reps {
            assert_eq!(r.fraction_positive, 0.0);
            assert!(r.values.iter().all(|(_, v)| *v == 0.0));
        }
    }

    #[test]
    fn deterministic_noise_matches_quadrature() {
        let m = model(|s| {
            s.g = RegistryRef::new("zero", &[]);
            s.f = RegistryRef::new("zero", &[]);
            s.sigma = RegistryRef::new("constant", &[0.8]);
            s.kernel = RegistryRef::new("zero", &[]);
        });
        let st = PathSolver::new(&m, DerivativeScope::Minimal).solve_path(0).unwrap();
        let c1 = m.basis.analyze_slice(&vec![0.8; m.basis.grid().n_points()])[0];
        let r = m.spec.delay;
        let exact = c1 * c1 * (1.0 - (-2.0 * r).exp()) / 2.0;
        let v = density_criterion(&st, &m, m.n_steps(), &e1(8)).unwrap().unwrap();
        assert!((v - exact).abs() < 1e-4 * exact, "{v} vs {exact}");
    }

    #[test]
    fn window_ordering_and_cauchy_schwarz() {
        let m = model(|_| {});
        let solver = PathSolver::new(&m, DerivativeScope::AllBlocks);
        let i = m.n_steps();
        for seed in 0..4 {
            let st = solver.solve_path(seed).unwrap();
            let f = e1(8);
            let w = density_criterion(&st, &m, i, &f).unwrap().unwrap();
            let full = full_window_criterion(&st, &m, i, &f).unwrap().unwrap();
            assert!(w >= 0.0 && w <= full);
            assert!(w <= cauchy_schwarz_bound(&st, &m, i));
            let n = density_criterion(&st, &m, i, &Functional::Norm).unwrap().unwrap();
            assert!(n <= cauchy_schwarz_bound(&st, &m, i) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn single_path_report_and_lower_bound() {
        let m = model(|s| s.sigma = RegistryRef::new("scaled_tanh", &[0.3, 1.0, 0.5]));
        let delta = m.sigma.lower_bound();
        assert!(delta > 0.0);
        let i = m.n_steps();
        let eps = lower_bound_epsilon(&m, i, delta);
        let reps = criterion_statistics(&m, i, 1, 5, eps, &[e1(8)]).unwrap();
        assert_eq!(reps[0].values.len(), 1);
        assert_eq!(reps[0].fraction_positive, 1.0);
    }

    #[test]
    fn norm_degenerates_at_zero_state() {
        let st_model = model(|s| s.initial.alpha_params = vec![0.0]);
        let st = PathSolver::new(&st_model, DerivativeScope::Required).solve_path(0).unwrap();
        assert_eq!(density_criterion(&st, &st_model, 4, &Functional::Norm).unwrap(), None);
        assert_eq!(density_criterion(&st, &st_model, 4, &Functional::NormUnnormalized).unwrap(), Some(0.0));
        assert!(density_criterion(&st, &st_model, 0, &Functional::Norm).is_err());
    }
}
