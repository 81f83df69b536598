//! Method-of-steps solver for the mild solution, block by block over the
//! delay, carrying the Malliavin derivatives needed by the Skorohod
//! correction of later blocks.
//!
//! On the grid the solution is a smooth function of the fBm cell increments
//! `ΔB_c`, and the Malliavin derivative is `D_u = Σ_c 1_{cell c}(u) ∂/∂ΔB_c`.
//! Writing `p = j − n_r` for the delayed index,
//!
//! ```text
//! x_i = R(t_i)[φ(0) + g(φ(−r))] + H_i + Σ_{j<i} R(t_i − t_j) A_j
//! H_i = −g(x_{i−n_r}) + ½dt f(x_{i−n_r})
//! A_j = w_j dt f(x_p) + ΔB_j σ(x_p) − σ'(x_p)·Σ_l ⟨1_j, 1_l⟩_𝓗 D_l x_p
//! ```
//!
//! with nonlinearities evaluated pointwise on the collocation grid. The last
//! term of `A_j` is the trace correction; it needs first derivatives on the
//! previous block, which in turn need second derivatives one block earlier,
//! and so on. Derivatives of order k are stored for sorted tuples of cells
//! (see [`tuples`]) and obtained by differentiating the same recursion, with
//! Faà di Bruno expansions over set partitions.

pub mod tuples;

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Model;

/// Which derivative orders to keep per block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DerivativeScope {
    /// Only what the solution itself needs; nothing when σ is constant.
    Minimal,
    /// Orders `1..=min(K, m − n)` on block `n`.
    Required,
    /// As `Required`, plus first derivatives on every block.
    AllBlocks,
}

/// A correction term that needed a derivative order that is not stored and
/// not structurally zero; it was evaluated as zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct TruncationNotice {
    /// Block whose terms were affected (1-based).
    pub block: usize,
    /// Derivative order being computed (0 for the solution).
    pub order: usize,
    /// Order that was missing on the previous block.
    pub missing_order: usize,
}

/// Stochastic convolution of one block evaluated at the block's last time:
/// `Σ_j R(t_end − t_j)(ΔB_j σ(x_p) − correction_j)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockTerm {
    pub block: usize,
    pub t_index: usize,
    pub pathwise: Vec<f64>,
    pub correction: Vec<f64>,
}

impl BlockTerm {
    /// Skorohod integral: pathwise part minus correction.
    pub fn skorohod(&self) -> Vec<f64> {
        self.pathwise.iter().zip(&self.correction).map(|(a, b)| a - b).collect()
    }
}

/// Derivatives of one order.
#[derive(Debug, Clone, Default)]
struct OrderStore {
    /// `x[i]`: N × count(i, k).
    x: Vec<Option<DMatrix<f64>>>,
    /// Local term for tuples with cells below the delayed index.
    a_main: Vec<Option<DMatrix<f64>>>,
    /// Local term for tuples `U ∪ {j}` (from differentiating `ΔB_j`).
    a_prod: Vec<Option<DMatrix<f64>>>,
}

/// Solution and derivatives on `[−r, t_last]`.
#[derive(Debug, Clone)]
pub struct PathState {
    blocks_done: usize,
    increments: Vec<f64>,
    x: Vec<Vec<f64>>,
    x_phys: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    corr: Vec<Vec<f64>>,
    orders: Vec<OrderStore>,
    block_terms: Vec<BlockTerm>,
    notices: BTreeSet<TruncationNotice>,
    scope: DerivativeScope,
}

enum Lookup<'a> {
    Zero,
    Stored(&'a DMatrix<f64>),
    Missing,
}

impl PathState {
    pub fn blocks_done(&self) -> usize {
        self.blocks_done
    }

    /// Largest solved grid index.
    pub fn last_index(&self) -> usize {
        self.x.len() - 1
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Coefficients of `x(t_i)`.
    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i]
    }

    /// Collocation values of `x(t_i)`.
    pub fn x_phys(&self, i: usize) -> &[f64] {
        &self.x_phys[i]
    }

    pub fn trajectory(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn block_terms(&self) -> &[BlockTerm] {
        &self.block_terms
    }

    pub fn notices(&self) -> Vec<TruncationNotice> {
        self.notices.iter().copied().collect()
    }

    pub fn scope(&self) -> DerivativeScope {
        self.scope
    }

    /// Stored derivatives of order `k` at `t_i`: N × count(i, k), columns
    /// indexed by tuple rank.
    pub fn derivative(&self, k: usize, i: usize) -> Option<&DMatrix<f64>> {
        self.orders.get(k.checked_sub(1)?)?.x.get(i)?.as_ref()
    }

    /// `D_c x(t_i)` when first derivatives are stored at `t_i`.
    pub fn d1(&self, i: usize, c: usize) -> Option<Vec<f64>> {
        let m = self.derivative(1, i)?;
        if c < m.ncols() {
            Some(m.column(c).iter().copied().collect())
        } else if c >= i {
            Some(vec![0.0; m.nrows()])
        } else {
            None
        }
    }

    /// Highest order stored at grid index `i`.
    pub fn stored_order(&self, i: usize) -> usize {
        (1..=self.orders.len())
            .rev()
            .find(|&k| self.derivative(k, i).is_some())
            .unwrap_or(0)
    }

    fn lookup(&self, model: &Model, k: usize, p: isize) -> Lookup<'_> {
        if p <= 0 || (model.block_of(p) == 1 && k >= 2) {
            return Lookup::Zero;
        }
        match self.orders.get(k - 1).and_then(|o| o.x.get(p as usize)).and_then(|m| m.as_ref()) {
            Some(m) => Lookup::Stored(m),
            None => Lookup::Missing,
        }
    }
}

/// Collocation values of derivatives and their contractions at one delayed
/// index.
struct Jets {
    /// `orders[q]`: P × count(p, q) for q ≥ 1 (`None` when zero).
    orders: Vec<Option<DMatrix<f64>>>,
}

impl Jets {
    fn column(&self, q: usize, r: usize) -> Option<&[f64]> {
        let m = self.orders[q].as_ref()?;
        let rows = m.nrows();
        Some(&m.as_slice()[r * rows..(r + 1) * rows])
    }
}

/// `F^{(q)}` of the three coefficients at one delayed state.
struct CoefficientJets {
    f: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
    s: Vec<Vec<f64>>,
}

struct Partitions {
    by_size: Vec<Vec<Vec<Vec<usize>>>>,
}

impl Partitions {
    fn new(max: usize) -> Self {
        Self {
            by_size: (0..=max).map(tuples::set_partitions).collect(),
        }
    }
}

/// `out += Σ_π F^{(|π| + shift)} ⊙ Π_{B∈π} jet[s_B]` over partitions of `positions`.
fn faa_di_bruno(
    fder: &[Vec<f64>],
    shift: usize,
    jets: &Jets,
    s: &[usize],
    positions: &[usize],
    parts: &Partitions,
    out: &mut [f64],
    tmp: &mut [f64],
) {
    if positions.is_empty() {
        for (o, v) in out.iter_mut().zip(&fder[shift]) {
            *o += v;
        }
        return;
    }
    let mut sub = [0usize; 8];
    'partition: for pi in &parts.by_size[positions.len()] {
        tmp.copy_from_slice(&fder[pi.len() + shift]);
        for block in pi {
            for (m, &idx) in block.iter().enumerate() {
                sub[m] = s[positions[idx]];
            }
            let Some(col) = jets.column(block.len(), tuples::rank(&sub[..block.len()])) else {
                continue 'partition;
            };
            for (t, c) in tmp.iter_mut().zip(col) {
                *t *= c;
            }
        }
        for (o, t) in out.iter_mut().zip(tmp.iter()) {
            *o += t;
        }
    }
}

/// Solver bound to a prepared model.
#[derive(Debug, Clone, Copy)]
pub struct PathSolver<'a> {
    model: &'a Model,
    scope: DerivativeScope,
}

impl<'a> PathSolver<'a> {
    pub fn new(model: &'a Model, scope: DerivativeScope) -> Self {
        Self { model, scope }
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    /// Orders stored on block `n` (1-based) under this scope.
    pub fn orders_for_block(&self, n: usize) -> usize {
        let m = self.model;
        match self.scope {
            DerivativeScope::Minimal if m.sigma.is_constant() => 0,
            DerivativeScope::Minimal | DerivativeScope::Required => m.tracked_order(n),
            DerivativeScope::AllBlocks => m.tracked_order(n).max(1),
        }
    }

    /// State holding only the initial history, driven by `increments`
    /// (one per cell of the model grid).
    pub fn initial_state(&self, increments: Vec<f64>) -> Result<PathState> {
        let m = self.model;
        if increments.len() != m.n_steps() {
            return Err(Error::Argument(format!(
                "expected {} increments, got {}",
                m.n_steps(),
                increments.len()
            )));
        }
        let max_order = (1..=m.n_blocks).map(|n| self.orders_for_block(n)).max().unwrap_or(0);
        let n_pts = m.n_steps() + 1;
        let orders = (0..max_order)
            .map(|_| OrderStore {
                x: vec![None; n_pts],
                a_main: vec![None; n_pts],
                a_prod: vec![None; n_pts],
            })
            .collect();
        Ok(PathState {
            blocks_done: 0,
            increments,
            x: vec![m.history[m.n_delay].clone()],
            x_phys: vec![m.history_phys[m.n_delay].clone()],
            a: Vec::new(),
            y: Vec::new(),
            corr: Vec::new(),
            orders,
            block_terms: Vec::new(),
            notices: BTreeSet::new(),
            scope: self.scope,
        })
    }

    /// Solve every block for the given increments.
    pub fn solve_with_increments(&self, increments: Vec<f64>) -> Result<PathState> {
        let mut state = self.initial_state(increments)?;
        for n in 0..self.model.n_blocks {
            self.solve_block(n, &mut state)?;
        }
        Ok(state)
    }

    /// Solve every block for the fBm path labelled `seed`.
    pub fn solve_path(&self, seed: u64) -> Result<PathState> {
        let path = self.model.sample_fbm(seed);
        self.solve_with_increments(path.increments())
    }

    fn phys_at<'s>(&self, state: &'s PathState, p: isize) -> &'s [f64]
    where
        'a: 's,
    {
        if p <= 0 {
            &self.model.history_phys[(p + self.model.n_delay as isize) as usize]
        } else {
            &state.x_phys[p as usize]
        }
    }

    /// Extend the state over block `n` (0-based), i.e. `(n r, (n+1) r]`.
    /// Earlier entries are never modified.
    pub fn solve_block(&self, n: usize, state: &mut PathState) -> Result<()> {
        let m = self.model;
        if n >= m.n_blocks {
            return Err(Error::Horizon {
                block: n,
                blocks: m.n_blocks,
            });
        }
        if state.blocks_done != n {
            return Err(Error::Internal(format!(
                "block {n} requested but {} blocks are solved",
                state.blocks_done
            )));
        }
        if state.scope != self.scope {
            return Err(Error::Internal("state was created under a different derivative scope".into()));
        }
        let block = n + 1;
        let (first, last) = m.block_range(block);
        let kmax = self.orders_for_block(block);
        let nr = m.n_delay as isize;
        let nm = m.n_modes();
        let dt = m.grid.dt();
        let parts = Partitions::new(kmax.max(1));

        // local terms: A_j for j in first-1..last, H_i for i in first..=last
        let mut h_terms: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(last + 1 - first);
        for q in first - 1..=last {
            let p = q as isize - nr;
            let want_a = q < last;
            let want_h = q >= first;
            let j = q;
            let xp = self.phys_at(state, p).to_vec();
            let top = (kmax + 1).min(crate::spectral::M_MAX);
            let cj = CoefficientJets {
                f: (0..=top).map(|d| xp.iter().map(|&v| m.f.derivative(d, v)).collect()).collect(),
                g: (0..=top).map(|d| xp.iter().map(|&v| m.g.derivative(d, v)).collect()).collect(),
                s: (0..=top).map(|d| xp.iter().map(|&v| m.sigma.derivative(d, v)).collect()).collect(),
            };
            let jets = self.jets(state, p, kmax, block)?;
            let qphys = if want_a {
                let (q, notes) = self.contractions(state, p, j, kmax, block);
                state.notices.extend(notes);
                q
            } else {
                Vec::new()
            };
            let db = if want_a { state.increments[j] } else { 0.0 };
            let w_dt = if j == 0 { 0.5 * dt } else { dt };

            // order 0
            if want_a {
                let mut cols = DMatrix::zeros(m.basis.grid().n_points(), 3);
                for r in 0..xp.len() {
                    cols[(r, 0)] = w_dt * cj.f[0][r];
                    cols[(r, 1)] = db * cj.s[0][r];
                    cols[(r, 2)] = qphys[0].as_ref().map_or(0.0, |qm| cj.s[1][r] * qm[(r, 0)]);
                }
                let an = m.basis.analyze_batch(&cols);
                let drift: Vec<f64> = an.column(0).iter().copied().collect();
                let y: Vec<f64> = an.column(1).iter().copied().collect();
                let c: Vec<f64> = an.column(2).iter().copied().collect();
                let a: Vec<f64> = (0..nm).map(|r| drift[r] + y[r] - c[r]).collect();
                debug_assert_eq!(state.a.len(), j);
                state.a.push(a);
                state.y.push(y);
                state.corr.push(c);
            }
            let mut h_here = Vec::new();
            if want_h {
                let vals: Vec<f64> = (0..xp.len()).map(|r| -cj.g[0][r] + 0.5 * dt * cj.f[0][r]).collect();
                h_here.push(DMatrix::from_vec(nm, 1, m.basis.analyze_slice(&vals)));
            }

            // orders ≥ 1
            for k in 1..=kmax {
                let live = p.max(0) as usize;
                let count = tuples::count(live, k);
                let all = tuples::enumerate(live, k);
                let pts = m.basis.grid().n_points();
                let mut tmp = vec![0.0; pts];
                if want_a {
                    let mut main = DMatrix::zeros(pts, count);
                    let mut df = vec![0.0; pts];
                    let mut ds = vec![0.0; pts];
                    let mut cs = vec![0.0; pts];
                    for (r, s) in all.iter().enumerate() {
                        let positions: Vec<usize> = (0..k).collect();
                        df.fill(0.0);
                        ds.fill(0.0);
                        faa_di_bruno(&cj.f, 0, &jets, s, &positions, &parts, &mut df, &mut tmp);
                        faa_di_bruno(&cj.s, 0, &jets, s, &positions, &parts, &mut ds, &mut tmp);
                        cs.fill(0.0);
                        self.correction_column(&cj, &jets, &qphys, s, &parts, &mut cs, &mut tmp);
                        let col = main.column_mut(r);
                        for (((o, a), b), c) in col.into_iter().zip(&df).zip(&ds).zip(&cs) {
                            *o = w_dt * a + db * b - c;
                        }
                    }
                    let main_c = m.basis.analyze_batch(&main);
                    let pc = tuples::count(live, k - 1);
                    let prev = tuples::enumerate(live, k - 1);
                    let mut prod = DMatrix::zeros(pts, pc);
                    for (r, u) in prev.iter().enumerate() {
                        let positions: Vec<usize> = (0..k - 1).collect();
                        let mut col = vec![0.0; pts];
                        faa_di_bruno(&cj.s, 0, &jets, u, &positions, &parts, &mut col, &mut tmp);
                        prod.column_mut(r).copy_from_slice(&col);
                    }
                    let prod_c = m.basis.analyze_batch(&prod);
                    let store = &mut state.orders[k - 1];
                    store.a_main[j] = Some(main_c);
                    store.a_prod[j] = Some(prod_c);
                }
                if want_h {
                    let mut hm = DMatrix::zeros(pts, count);
                    let mut dg = vec![0.0; pts];
                    let mut df = vec![0.0; pts];
                    for (r, s) in all.iter().enumerate() {
                        let positions: Vec<usize> = (0..k).collect();
                        dg.fill(0.0);
                        df.fill(0.0);
                        faa_di_bruno(&cj.g, 0, &jets, s, &positions, &parts, &mut dg, &mut tmp);
                        faa_di_bruno(&cj.f, 0, &jets, s, &positions, &parts, &mut df, &mut tmp);
                        for ((o, a), b) in hm.column_mut(r).iter_mut().zip(&dg).zip(&df) {
                            *o = -a + 0.5 * dt * b;
                        }
                    }
                    h_here.push(m.basis.analyze_batch(&hm));
                }
            }
            if want_h {
                h_terms.push(h_here);
            }
        }

        // solution on the block
        let rows = &m.resolvent_rows;
        for i in first..=last {
            let h = &h_terms[i - first][0];
            let mut xi: Vec<f64> = (0..nm).map(|r| rows[i][r] * m.a0[r] + h[(r, 0)]).collect();
            for j in 0..i {
                let rr = &rows[i - j];
                for ((x, a), w) in xi.iter_mut().zip(&state.a[j]).zip(rr) {
                    *x += w * a;
                }
            }
            let phys = m.basis.synthesize_slice(&xi);
            if xi.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite solution at t = {}", m.grid.t(i))));
            }
            state.x.push(xi);
            state.x_phys.push(phys);
        }

        // derivatives on the block
        for k in 1..=kmax {
            if block == 1 && k >= 2 {
                continue;
            }
            for i in first..=last {
                let count = tuples::count(i, k);
                let mut d = DMatrix::zeros(nm, count);
                let h = &h_terms[i - first][k];
                d.columns_mut(0, h.ncols()).copy_from(h);
                let store = &state.orders[k - 1];
                for j in 0..i {
                    let rr = &rows[i - j];
                    if let Some(a) = &store.a_main[j] {
                        for c in 0..a.ncols() {
                            let src = a.column(c);
                            let mut dst = d.column_mut(c);
                            for r in 0..nm {
                                dst[r] += rr[r] * src[r];
                            }
                        }
                    }
                    if let Some(a) = &store.a_prod[j] {
                        let offset = tuples::binomial(j + k - 1, k);
                        for c in 0..a.ncols() {
                            let src = a.column(c);
                            let mut dst = d.column_mut(offset + c);
                            for r in 0..nm {
                                dst[r] += rr[r] * src[r];
                            }
                        }
                    }
                }
                state.orders[k - 1].x[i] = Some(d);
            }
        }

        // block stochastic term at the block's last time
        let mut pathwise = vec![0.0; nm];
        let mut correction = vec![0.0; nm];
        for j in first - 1..last {
            let rr = &rows[last - j];
            for r in 0..nm {
                pathwise[r] += rr[r] * state.y[j][r];
                correction[r] += rr[r] * state.corr[j][r];
            }
        }
        state.block_terms.push(BlockTerm {
            block,
            t_index: last,
            pathwise,
            correction,
        });
        state.blocks_done += 1;
        Ok(())
    }

    /// Collocation values of stored derivatives of orders `1..=kmax` at `p`.
    fn jets(&self, state: &PathState, p: isize, kmax: usize, block: usize) -> Result<Jets> {
        let mut orders = vec![None];
        for q in 1..=kmax {
            match state.lookup(self.model, q, p) {
                Lookup::Zero => orders.push(None),
                Lookup::Stored(d) => orders.push(Some(self.model.basis.synthesize_batch(d))),
                Lookup::Missing => {
                    return Err(Error::Internal(format!(
                        "order-{q} derivative at grid index {p} is needed for block {block} but was not stored"
                    )))
                }
            }
        }
        Ok(Jets { orders })
    }

    /// `Σ_l ⟨1_j, 1_l⟩_𝓗 D^{U∪l} x_p` for every tuple `U` of order `0..=kmax`,
    /// synthesized. Missing orders produce notices and zeros.
    fn contractions(
        &self,
        state: &PathState,
        p: isize,
        j: usize,
        kmax: usize,
        block: usize,
    ) -> (Vec<Option<DMatrix<f64>>>, Vec<TruncationNotice>) {
        let m = self.model;
        let mut out = Vec::with_capacity(kmax + 1);
        let mut notes = Vec::new();
        let live = p.max(0) as usize;
        for u in 0..=kmax {
            let d = match state.lookup(m, u + 1, p) {
                Lookup::Zero => {
                    out.push(None);
                    continue;
                }
                Lookup::Missing => {
                    notes.push(TruncationNotice {
                        block,
                        order: u,
                        missing_order: u + 1,
                    });
                    out.push(None);
                    continue;
                }
                Lookup::Stored(d) => d,
            };
            let nm = m.n_modes();
            let tuples_u = tuples::enumerate(live, u);
            let mut q = DMatrix::zeros(nm, tuples_u.len());
            let weights: Vec<f64> = (0..live).map(|l| m.pairing[j - l]).collect();
            for (r, tu) in tuples_u.iter().enumerate() {
                let mut col = q.column_mut(r);
                for (l, w) in weights.iter().enumerate() {
                    let src = d.column(tuples::rank_with(tu, l));
                    for a in 0..nm {
                        col[a] += w * src[a];
                    }
                }
            }
            out.push(Some(m.basis.synthesize_batch(&q)));
        }
        (out, notes)
    }

    /// `C_S = Σ_{U ⊆ S} D^{S∖U}[σ'(x_p)] ⊙ Q^U`.
    #[allow(clippy::too_many_arguments)]
    fn correction_column(
        &self,
        cj: &CoefficientJets,
        jets: &Jets,
        qphys: &[Option<DMatrix<f64>>],
        s: &[usize],
        parts: &Partitions,
        out: &mut [f64],
        tmp: &mut [f64],
    ) {
        let k = s.len();
        let pts = out.len();
        let mut dsig = vec![0.0; pts];
        let mut sub = [0usize; 8];
        for mask in 0u32..(1 << k) {
            let u_pos: Vec<usize> = (0..k).filter(|b| mask & (1 << b) != 0).collect();
            let v_pos: Vec<usize> = (0..k).filter(|b| mask & (1 << b) == 0).collect();
            let Some(qm) = qphys.get(u_pos.len()).and_then(|q| q.as_ref()) else {
                continue;
            };
            for (m_, &b) in u_pos.iter().enumerate() {
                sub[m_] = s[b];
            }
            let r = tuples::rank(&sub[..u_pos.len()]);
            let qcol = &qm.as_slice()[r * pts..(r + 1) * pts];
            dsig.fill(0.0);
            faa_di_bruno(&cj.s, 1, jets, s, &v_pos, parts, &mut dsig, tmp);
            for ((o, a), b) in out.iter_mut().zip(&dsig).zip(qcol) {
                *o += a * b;
            }
        }
    }
}
