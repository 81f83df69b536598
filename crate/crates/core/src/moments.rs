//! Monte Carlo moments of the solution and its Malliavin derivatives.
//!
//! Paths are grouped in fixed-size chunks; each chunk is summed sequentially
//! and the chunk partials are merged pairwise in index order, so the result
//! does not depend on the number of worker threads.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::seed::derive_seed;
use crate::solver::{tuples, DerivativeScope, PathSolver, PathState, TruncationNotice};

const CHUNK: usize = 8;

/// A sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    fn from_running(r: Running, n: usize) -> Self {
        Self {
            mean: r.mean,
            se: (r.variance(n) / n as f64).sqrt(),
        }
    }

    /// `|mean − target| ≤ z·se`, with exact equality accepted when `se = 0`.
    pub fn within(&self, target: f64, z: f64) -> bool {
        (self.mean - target).abs() <= z * self.se
    }
}

/// Largest estimated mean over a family, with its location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupEstimate {
    pub value: Estimate,
    pub t_index: usize,
    /// Tuple rank of the derivative entry (0 for the solution).
    pub entry: usize,
}

/// Running mean and centred sum of squares; the path count is shared and
/// kept by the owner.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Running {
    mean: f64,
    m2: f64,
}

impl Running {
    /// Add the `n`-th observation (1-based).
    fn push(&mut self, x: f64, n: usize) {
        let d = x - self.mean;
        self.mean += d / n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, other: Running, n_a: usize, n_b: usize) {
        if n_b == 0 {
            return;
        }
        let n = (n_a + n_b) as f64;
        let d = other.mean - self.mean;
        self.mean += d * n_b as f64 / n;
        self.m2 += other.m2 + d * d * (n_a as f64) * (n_b as f64) / n;
    }

    fn variance(&self, n: usize) -> f64 {
        if n > 1 {
            self.m2 / (n - 1) as f64
        } else {
            0.0
        }
    }
}

/// Moments over a set of paths.
#[derive(Debug, Clone)]
struct Accumulator {
    n: usize,
    modes: Vec<Vec<Running>>,
    norm2: Vec<Running>,
    step2: Vec<Running>,
    /// `[k−1][i][rank]`: `‖D^k x(t_i)‖²`.
    deriv: Vec<Vec<Vec<Running>>>,
    /// `[block][mode]`: Skorohod block terms.
    block: Vec<Vec<Running>>,
    notices: BTreeSet<TruncationNotice>,
}

fn merge_all(a: &mut [Running], b: &[Running], n_a: usize, n_b: usize) {
    for (x, y) in a.iter_mut().zip(b) {
        x.merge(*y, n_a, n_b);
    }
}

impl Accumulator {
    fn empty(model: &Model) -> Self {
        let pts = model.n_steps() + 1;
        let nm = model.n_modes();
        Self {
            n: 0,
            modes: vec![vec![Running::default(); nm]; pts],
            norm2: vec![Running::default(); pts],
            step2: vec![Running::default(); pts - 1],
            deriv: Vec::new(),
            block: vec![vec![Running::default(); nm]; model.n_blocks],
            notices: BTreeSet::new(),
        }
    }

    fn add_path(&mut self, st: &PathState) {
        self.n += 1;
        let n = self.n;
        let traj = st.trajectory();
        for (i, x) in traj.iter().enumerate() {
            self.norm2[i].push(x.iter().map(|v| v * v).sum(), n);
            for (slot, v) in self.modes[i].iter_mut().zip(x) {
                slot.push(*v, n);
            }
            if i + 1 < traj.len() {
                self.step2[i].push(traj[i + 1].iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum(), n);
            }
        }
        for k in 1.. {
            if (0..traj.len()).all(|i| st.derivative(k, i).is_none()) {
                break;
            }
            if self.deriv.len() < k {
                self.deriv
                    .push((0..traj.len()).map(|i| vec![Running::default(); tuples::count(i, k)]).collect());
            }
            for i in 0..traj.len() {
                if let Some(d) = st.derivative(k, i) {
                    for (c, slot) in d.column_iter().zip(self.deriv[k - 1][i].iter_mut()) {
                        slot.push(c.norm_squared(), n);
                    }
                }
            }
        }
        for b in st.block_terms() {
            for (slot, v) in self.block[b.block - 1].iter_mut().zip(b.skorohod()) {
                slot.push(v, n);
            }
        }
        self.notices.extend(st.notices());
    }

    fn merge(mut self, other: Self) -> Self {
        let (na, nb) = (self.n, other.n);
        self.n += nb;
        for (a, b) in self.modes.iter_mut().zip(&other.modes) {
            merge_all(a, b, na, nb);
        }
        merge_all(&mut self.norm2, &other.norm2, na, nb);
        merge_all(&mut self.step2, &other.step2, na, nb);
        for (k, b) in other.deriv.into_iter().enumerate() {
            match self.deriv.get_mut(k) {
                Some(a) => {
                    for (x, y) in a.iter_mut().zip(&b) {
                        merge_all(x, y, na, nb);
                    }
                }
                None => {
                    // entries absent from `self` are zero on its paths
                    let mut b = b;
                    for row in &mut b {
                        for r in row.iter_mut() {
                            let mut z = Running::default();
                            z.merge(*r, na, nb);
                            *r = z;
                        }
                    }
                    self.deriv.push(b);
                }
            }
        }
        for (a, b) in self.block.iter_mut().zip(&other.block) {
            merge_all(a, b, na, nb);
        }
        self.notices.extend(other.notices);
        self
    }
}

fn pairwise(mut parts: Vec<Accumulator>) -> Option<Accumulator> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => a.merge(b),
                None => a,
            });
        }
        parts = next;
    }
    parts.pop()
}

fn accumulate(solver: &PathSolver, seed: u64, from: usize, to: usize) -> Result<Accumulator> {
    let model = solver.model();
    let starts: Vec<usize> = (from..to).step_by(CHUNK).collect();
    let parts = starts
        .par_iter()
        .map(|&s| {
            let mut acc = Accumulator::empty(model);
            for p in s..(s + CHUNK).min(to) {
                let st = solver.solve_path(derive_seed(seed, p as u64))?;
                acc.add_path(&st);
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pairwise(parts).unwrap_or_else(|| Accumulator::empty(model)))
}

/// Sup summaries that are compared under doubling of the path count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupSummary {
    pub n_paths: usize,
    pub sup_mean_sq_norm: SupEstimate,
    /// `[k−1]`: sup over stored `(u, t)` of `E‖D^k_u x(t)‖²`.
    pub derivative_sups: Vec<SupEstimate>,
}

/// Moment statistics over `n_paths` paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentsReport {
    pub n_paths: usize,
    pub seed: u64,
    pub t: Vec<f64>,
    /// `E‖x(t)‖²` per grid time.
    pub mean_sq_norm: Vec<Estimate>,
    /// `[i][n]`: mean and variance of each mode.
    pub mode_mean: Vec<Vec<Estimate>>,
    pub mode_variance: Vec<Vec<f64>>,
    /// `max_i E‖x(t_{i+1}) − x(t_i)‖²`.
    pub continuity: f64,
    /// `[k−1][block−1]`: sup of `E‖D^k_u x(t)‖²` over entries stored on the block.
    pub derivative_block_sups: Vec<Vec<Option<SupEstimate>>>,
    /// `[block−1][n]`: mean of each Skorohod block term.
    pub block_terms: Vec<Vec<Estimate>>,
    pub full: SupSummary,
    /// Same sups from the first half of the paths.
    pub half: SupSummary,
    pub notices: Vec<TruncationNotice>,
}

impl MomentsReport {
    /// Largest `|mean|/se` over all block-term means (0 for exact zeros).
    pub fn block_term_max_z(&self) -> f64 {
        self.block_terms
            .iter()
            .flatten()
            .map(|e| if e.se > 0.0 { e.mean.abs() / e.se } else if e.mean == 0.0 { 0.0 } else { f64::INFINITY })
            .fold(0.0, f64::max)
    }

    /// Whether every sup of the full run agrees with the half run within
    /// `z` combined standard errors.
    pub fn sups_stable(&self, z: f64) -> bool {
        let close = |a: &SupEstimate, b: &SupEstimate| {
            let se = (a.value.se.powi(2) + b.value.se.powi(2)).sqrt();
            a.value.mean.is_finite() && (a.value.mean - b.value.mean).abs() <= z * se
        };
        close(&self.full.sup_mean_sq_norm, &self.half.sup_mean_sq_norm)
            && self.full.derivative_sups.len() == self.half.derivative_sups.len()
            && self.full.derivative_sups.iter().zip(&self.half.derivative_sups).all(|(a, b)| close(a, b))
    }
}

fn sup_of(values: impl Iterator<Item = (usize, usize, Estimate)>) -> Option<SupEstimate> {
    let mut best: Option<SupEstimate> = None;
    for (t_index, entry, value) in values {
        if best.is_none_or(|b| value.mean > b.value.mean) {
            best = Some(SupEstimate { value, t_index, entry });
        }
    }
    best
}

fn summarize(acc: &Accumulator) -> SupSummary {
    let n = acc.n;
    let sup_mean_sq_norm = sup_of(
        acc.norm2
            .iter()
            .enumerate()
            .map(|(i, r)| (i, 0, Estimate::from_running(*r, n))),
    )
    .expect("grid has points");
    let derivative_sups = acc
        .deriv
        .iter()
        .filter_map(|order| {
            sup_of(order.iter().enumerate().flat_map(|(i, row)| {
                row.iter().enumerate().map(move |(c, s)| (i, c, Estimate::from_running(*s, n)))
            }))
        })
        .collect();
    SupSummary {
        n_paths: n,
        sup_mean_sq_norm,
        derivative_sups,
    }
}

/// Moments of the solution over paths `0..n_paths` with per-path seeds
/// `derive_seed(seed, p)`.
pub fn monte_carlo_moments(model: &Model, n_paths: usize, seed: u64, scope: DerivativeScope) -> Result<MomentsReport> {
    if n_paths < 2 {
        return Err(Error::Argument("monte_carlo_moments needs at least 2 paths".into()));
    }
    let solver = PathSolver::new(model, scope);
    let half_n = n_paths / 2;
    let first = accumulate(&solver, seed, 0, half_n)?;
    let second = accumulate(&solver, seed, half_n, n_paths)?;
    let half = summarize(&first);
    let acc = first.merge(second);
    let full = summarize(&acc);
    let n = acc.n;

    let mean_sq_norm = acc.norm2.iter().map(|r| Estimate::from_running(*r, n)).collect();
    let mode_mean = acc
        .modes
        .iter()
        .map(|row| row.iter().map(|r| Estimate::from_running(*r, n)).collect())
        .collect();
    let mode_variance = acc
        .modes
        .iter()
        .map(|row| row.iter().map(|r| r.variance(n)).collect())
        .collect();
    let continuity = acc.step2.iter().map(|r| r.mean).fold(0.0, f64::max);
    let derivative_block_sups = acc
        .deriv
        .iter()
        .map(|order| {
            (1..=model.n_blocks)
                .map(|b| {
                    let (lo, hi) = model.block_range(b);
                    sup_of((lo..=hi).flat_map(|i| {
                        order[i].iter().enumerate().map(move |(c, s)| (i, c, Estimate::from_running(*s, n)))
                    }))
                })
                .collect()
        })
        .collect();
    let block_terms = acc
        .block
        .iter()
        .map(|b| b.iter().map(|r| Estimate::from_running(*r, n)).collect())
        .collect();
    Ok(MomentsReport {
        n_paths,
        seed,
        t: model.grid.points().collect(),
        mean_sq_norm,
        mode_mean,
        mode_variance,
        continuity,
        derivative_block_sups,
        block_terms,
        full,
        half,
        notices: acc.notices.into_iter().collect(),
    })
}

/// Crude majorant of `sup_t E‖x(t)‖²` from coefficient bounds and the
/// resolvent table: four times the sum of the squared sizes of the initial,
/// neutral, drift and constant-noise terms, with `ρ(s) = max_n |r_n(s)|`.
pub fn crude_second_moment_bound(model: &Model) -> f64 {
    let pi = std::f64::consts::PI;
    let g = model.g.bound(0);
    let f = model.f.bound(0);
    let s = model.sigma.bound(0);
    let dt = model.grid.dt();
    let rho: Vec<f64> = model
        .resolvent_rows
        .iter()
        .map(|r| r.iter().fold(0.0, |m: f64, v| m.max(v.abs())))
        .collect();
    let mut sup: f64 = 0.0;
    for i in 0..=model.n_steps() {
        let init: f64 = model.resolvent_rows[i].iter().zip(&model.a0).map(|(r, a)| (r * a).powi(2)).sum();
        let drift: f64 = (0..=i)
            .map(|j| if j == 0 || j == i { 0.5 } else { 1.0 } * dt * rho[i - j])
            .sum();
        let mut noise = 0.0;
        for j in 0..i {
            for l in 0..i {
                noise += model.pairing[j.abs_diff(l)] * rho[i - j] * rho[i - l];
            }
        }
        let total = init + pi * g * g + pi * (f * drift).powi(2) + pi * s * s * noise;
        sup = sup.max(4.0 * total);
    }
    sup
}

/// RMS distance at the horizon between solutions on successive grids
/// `dt_coarse / 2^k`, `k = 0..=levels`, driven by one fBm sample on the
/// finest grid and its coarsenings.
pub fn self_convergence(model: &Model, levels: usize, n_paths: usize, seed: u64) -> Result<Vec<f64>> {
    let models: Vec<Model> = (0..=levels)
        .map(|k| {
            let mut spec = model.spec.clone();
            spec.dt = model.spec.dt / (1usize << k) as f64;
            Model::new(spec)
        })
        .collect::<Result<_>>()?;
    let finest = models.last().expect("at least one level");
    let per_path = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let path = finest.sample_fbm(derive_seed(seed, p as u64));
            let finals = models
                .iter()
                .enumerate()
                .map(|(k, m)| {
                    let inc = path.coarsened(1 << (levels - k))?.increments();
                    let st = PathSolver::new(m, DerivativeScope::Required).solve_with_increments(inc)?;
                    Ok(st.x(st.last_index()).to_vec())
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(finals
                .windows(2)
                .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..levels)
        .map(|k| (per_path.iter().map(|d| d[k]).sum::<f64>() / n_paths as f64).sqrt())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::base_spec;
    use crate::model::RegistryRef;

    fn small(edit: impl FnOnce(&mut crate::model::ModelSpec)) -> Model {
        let mut s = base_spec();
        s.dt = 1.0 / 32.0;
        edit(&mut s);
        Model::new(s).unwrap()
    }

    #[test]
    fn noiseless_model_has_zero_variance() {
        let m = small(|s| {
            s.g = RegistryRef::new("zero", &[]);
            s.f = RegistryRef::new("zero", &[]);
            s.sigma = RegistryRef::new("zero", &[]);
        });
        let rep = monte_carlo_moments(&m, 6, 1, DerivativeScope::Required).unwrap();
        for (i, row) in rep.mode_mean.iter().enumerate() {
            for (n, e) in row.iter().enumerate() {
                assert!((e.mean - m.table.value(n, i) * m.history[m.n_delay][n]).abs() < 1e-14);
                assert_eq!(rep.mode_variance[i][n], 0.0);
            }
        }
    }

    #[test]
    fn second_block_has_no_second_derivatives_on_first_block() {
        let m = small(|s| {
            s.horizon = 2.0;
            s.blocks = Some(4);
        });
        let rep = monte_carlo_moments(&m, 4, 2, DerivativeScope::Required).unwrap();
        assert_eq!(rep.derivative_block_sups.len(), 2);
        assert_eq!(rep.derivative_block_sups[1][0].unwrap().value.mean, 0.0);
        assert!(rep.derivative_block_sups[1][1].is_some_and(|s| s.value.mean > 0.0));
    }

    #[test]
    fn merging_order_does_not_depend_on_threads() {
        let m = small(|_| {});
        let a = monte_carlo_moments(&m, 20, 3, DerivativeScope::Required).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| monte_carlo_moments(&m, 20, 3, DerivativeScope::Required).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn estimate_from_known_sample() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let mut r = Running::default();
        for (k, x) in xs.iter().enumerate() {
            r.push(*x, k + 1);
        }
        let e = Estimate::from_running(r, 4);
        assert_eq!(e.mean, 2.5);
        assert!((e.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn running_merge_matches_sequential() {
        let xs: Vec<f64> = (0..13).map(|k| ((k * 7) % 5) as f64 - 1.3).collect();
        let seq = |v: &[f64]| {
            let mut r = Running::default();
            for (k, x) in v.iter().enumerate() {
                r.push(*x, k + 1);
            }
            r
        };
        let mut a = seq(&xs[..5]);
        a.merge(seq(&xs[5..]), 5, 8);
        let all = seq(&xs);
        assert!((a.mean - all.mean).abs() < 1e-14 && (a.m2 - all.m2).abs() < 1e-12);
    }

    #[test]
    fn crude_bound_dominates_small_sample() {
        let m = small(|_| {});
        let rep = monte_carlo_moments(&m, 16, 4, DerivativeScope::Required).unwrap();
        assert!(rep.full.sup_mean_sq_norm.value.mean < crude_second_moment_bound(&m));
    }
}
