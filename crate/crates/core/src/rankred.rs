//! Rank reduction of a relaxed solution.
//!
//! With `X_i = Q_i Q_iᴴ`, any Hermitian `Δ_i` solving the homogeneous system
//! `Σ_m Tr(Q_mᴴ A_lm Q_m Δ_m) = 0` for every row `l` gives a family
//! `Q_i (I − t Δ_i) Q_iᴴ` with unchanged row values. Choosing `t = 1/δ*`, with
//! `δ*` the eigenvalue of largest magnitude over all blocks, keeps every block
//! PSD and makes one of them lose rank. A nontrivial `Δ` exists whenever
//! `Σ rank² > M + L`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigh_desc, herm_dot, psd_factor_tail, real_trace, CMat, C64, J};
use crate::sdr::{numerical_ranks, SdpRow, DEFAULT_RANK_THRESHOLD};

/// Singular values below this fraction of the largest count as zero.
pub const NULL_THRESHOLD: f64 = 1e-9;
/// Per-step drift allowed before a step is rejected.
const STEP_DRIFT: f64 = 1e-7;
/// Eigenvalues of `I − Δ/δ*` at or below this are treated as exact zeros.
const DROP_THRESHOLD: f64 = 1e-10;
/// Spectral mass allowed to be discarded by the initial factorization.
pub const FACTOR_TAIL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct RankReductionState {
    pub x: Vec<CMat>,
    /// `x[i] = factors[i] · factors[i]ᴴ`.
    pub factors: Vec<CMat>,
    pub iteration: usize,
}

impl RankReductionState {
    /// Factors each matrix, discarding at most `rel_tail · Tr(X_i)` of its
    /// spectrum.
    pub fn new(x: &[CMat], rel_tail: f64) -> Self {
        let factors: Vec<CMat> = x.iter().map(|x| psd_factor_tail(x, rel_tail)).collect();
        Self::from_factors(factors)
    }

    pub fn from_factors(factors: Vec<CMat>) -> Self {
        let x = factors.iter().map(|q| q * q.adjoint()).collect();
        RankReductionState { x, factors, iteration: 0 }
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.factors.iter().map(|q| q.ncols()).collect()
    }

    pub fn sum_rank_squares(&self) -> usize {
        self.factors.iter().map(|q| q.ncols() * q.ncols()).sum()
    }
}

/// Hermitian `Δ_i` blocks, one per user.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSet {
    pub delta: Vec<CMat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionRecord {
    pub iteration: usize,
    pub ranks_before: Vec<usize>,
    pub ranks_after: Vec<usize>,
    pub delta_star: f64,
    pub objective_drift: f64,
    pub max_row_drift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankReduction {
    pub x: Vec<CMat>,
    pub factors: Vec<CMat>,
    /// Numerical ranks of the input.
    pub initial_ranks: Vec<usize>,
    /// Numerical ranks of the output.
    pub ranks: Vec<usize>,
    pub iterations: usize,
    pub trace: Vec<ReductionRecord>,
}

/// Number of real parameters of a `k × k` Hermitian matrix.
fn params(k: usize) -> usize {
    k * k
}

/// Real coordinates of `Tr(B E_j)` over the orthonormal Hermitian basis
/// (diagonal units, then `√2`-scaled symmetric and antisymmetric pairs).
fn hermitian_coordinates(b: &CMat, out: &mut [f64]) {
    let k = b.nrows();
    let s2 = std::f64::consts::SQRT_2;
    for p in 0..k {
        out[p] = b[(p, p)].re;
    }
    let mut idx = k;
    for p in 0..k {
        for q in p + 1..k {
            out[idx] = s2 * b[(p, q)].re;
            out[idx + 1] = s2 * b[(p, q)].im;
            idx += 2;
        }
    }
}

/// Inverse of [`hermitian_coordinates`]: `Σ_j v_j E_j`.
fn hermitian_from_coordinates(v: &[f64], k: usize) -> CMat {
    let mut d = CMat::zeros(k, k);
    let r2 = std::f64::consts::FRAC_1_SQRT_2;
    for p in 0..k {
        d[(p, p)] = C64::new(v[p], 0.0);
    }
    let mut idx = k;
    for p in 0..k {
        for q in p + 1..k {
            let sym = v[idx] * r2;
            let anti = v[idx + 1] * r2;
            d[(p, q)] = C64::new(sym, 0.0) + J * anti;
            d[(q, p)] = C64::new(sym, 0.0) - J * anti;
            idx += 2;
        }
    }
    d
}

fn column_offsets(ranks: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(ranks.len() + 1);
    let mut acc = 0;
    offsets.push(0);
    for &k in ranks {
        acc += params(k);
        offsets.push(acc);
    }
    offsets
}

/// The `(M+L) × Σ K_i²` real matrix whose row `l` evaluates
/// `Σ_m Tr(Q_mᴴ A_lm Q_m Δ_m)` on the stacked Hermitian coordinates.
pub fn assemble_system(state: &RankReductionState, rows: &[SdpRow]) -> DMatrix<f64> {
    let ranks = state.ranks();
    let offsets = column_offsets(&ranks);
    let mut sys = DMatrix::zeros(rows.len(), offsets[ranks.len()]);
    let mut buf = Vec::new();
    for (l, row) in rows.iter().enumerate() {
        for (m, q) in state.factors.iter().enumerate() {
            if q.ncols() == 0 || row.is_zero_for(m) {
                continue;
            }
            let b = q.adjoint() * &row.matrices[m] * q;
            buf.resize(params(q.ncols()), 0.0);
            hermitian_coordinates(&b, &mut buf);
            for (j, v) in buf.iter().enumerate() {
                sys[(l, offsets[m] + j)] = *v;
            }
        }
    }
    sys
}

/// Objective row: `Σ_m Tr(Q_mᴴ Q_m Δ_m)`.
fn objective_row(state: &RankReductionState) -> DMatrix<f64> {
    let ranks = state.ranks();
    let offsets = column_offsets(&ranks);
    let mut row = DMatrix::zeros(1, offsets[ranks.len()]);
    let mut buf = Vec::new();
    for (m, q) in state.factors.iter().enumerate() {
        let b = q.adjoint() * q;
        buf.resize(params(q.ncols()), 0.0);
        hermitian_coordinates(&b, &mut buf);
        for (j, v) in buf.iter().enumerate() {
            row[(0, offsets[m] + j)] = *v;
        }
    }
    row
}

/// A unit vector in the numerical null space of `sys`, or `None` if the
/// columns are independent.
///
/// Rows are normalized, the row space is taken from a thin SVD, and the unit
/// coordinate vector with the largest component outside the row space is
/// projected onto its complement. The sign is fixed so the first nonzero entry
/// is positive.
fn null_vector(sys: &DMatrix<f64>) -> Option<Vec<f64>> {
    let n = sys.ncols();
    if n == 0 {
        return None;
    }
    let mut normed = sys.clone();
    for mut r in normed.row_iter_mut() {
        let norm = r.norm();
        if norm > 0.0 {
            r /= norm;
        }
    }
    let basis: Vec<nalgebra::DVector<f64>> = if normed.nrows() == 0 || normed.iter().all(|v| *v == 0.0) {
        Vec::new()
    } else {
        let svd = normed.svd(false, true);
        let v_t = svd.v_t.expect("requested right singular vectors");
        let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
        svd.singular_values
            .iter()
            .enumerate()
            .filter(|(_, s)| **s > NULL_THRESHOLD * smax)
            .map(|(i, _)| v_t.row(i).transpose())
            .collect()
    };
    if basis.len() >= n {
        return None;
    }
    let project = |x: &mut nalgebra::DVector<f64>| {
        for b in &basis {
            let c = b.dot(x);
            x.axpy(-c, b, 1.0);
        }
    };
    // Diagonal of the complement projector: 1 − Σ_b b_j².
    let mut best = (0usize, f64::NEG_INFINITY);
    for j in 0..n {
        let w = 1.0 - basis.iter().map(|b| b[j] * b[j]).sum::<f64>();
        if w > best.1 + 1e-12 {
            best = (j, w);
        }
    }
    if best.1 <= 1e-12 {
        return None;
    }
    let mut v = nalgebra::DVector::zeros(n);
    v[best.0] = 1.0;
    project(&mut v);
    project(&mut v);
    let norm = v.norm();
    if !(norm > 0.0) {
        return None;
    }
    v /= norm;
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v = -v;
        }
    }
    Some(v.iter().copied().collect())
}

fn split_delta(v: &[f64], ranks: &[usize]) -> DeltaSet {
    let offsets = column_offsets(ranks);
    DeltaSet {
        delta: ranks
            .iter()
            .enumerate()
            .map(|(m, &k)| hermitian_from_coordinates(&v[offsets[m]..offsets[m + 1]], k))
            .collect(),
    }
}

/// A unit-norm nontrivial solution of the homogeneous system, or `None`.
pub fn find_nontrivial_delta(system: &DMatrix<f64>, ranks: &[usize]) -> Option<DeltaSet> {
    null_vector(system).map(|v| split_delta(&v, ranks))
}

/// Like [`find_nontrivial_delta`], but prefers a direction that also leaves the
/// objective row exactly unchanged when the null space is large enough.
fn find_delta_preserving_objective(state: &RankReductionState, system: &DMatrix<f64>) -> Option<DeltaSet> {
    let ranks = state.ranks();
    let obj = objective_row(state);
    let mut aug = DMatrix::zeros(system.nrows() + 1, system.ncols());
    aug.rows_mut(0, system.nrows()).copy_from(system);
    aug.row_mut(system.nrows()).copy_from(&obj.row(0));
    null_vector(&aug)
        .or_else(|| null_vector(system))
        .map(|v| split_delta(&v, &ranks))
}

/// The signed eigenvalue of largest magnitude over all blocks.
pub fn delta_star(delta: &DeltaSet) -> f64 {
    let mut best = 0.0f64;
    for d in &delta.delta {
        if d.nrows() == 0 {
            continue;
        }
        let (values, _) = eigh_desc(d);
        for v in [values[0], values[values.len() - 1]] {
            if v.abs() > best.abs() {
                best = v;
            }
        }
    }
    best
}

/// One update `X_i ← Q_i (I − Δ_i/δ*) Q_iᴴ`, refactored so that exactly-zero
/// eigenvalues are dropped from the factor.
pub fn reduction_step(state: &RankReductionState, delta: &DeltaSet) -> Result<RankReductionState> {
    let ds = delta_star(delta);
    let scale = delta.delta.iter().map(|d| d.iter().map(|z| z.norm()).fold(0.0, f64::max)).fold(0.0, f64::max);
    if !(ds.abs() > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::NoRankDrop);
    }
    let mut factors = Vec::with_capacity(state.factors.len());
    for (q, d) in state.factors.iter().zip(&delta.delta) {
        let k = q.ncols();
        if k == 0 {
            factors.push(q.clone());
            continue;
        }
        let m = CMat::identity(k, k) - d.unscale(ds);
        let (values, vectors) = eigh_desc(&m);
        let keep = values.iter().take_while(|e| **e > DROP_THRESHOLD).count();
        let mut nq = CMat::zeros(q.nrows(), keep);
        for c in 0..keep {
            let col = q * vectors.column(c) * C64::new(values[c].sqrt(), 0.0);
            nq.set_column(c, &col);
        }
        factors.push(nq);
    }
    let mut next = RankReductionState::from_factors(factors);
    next.iteration = state.iteration + 1;
    if next.factors.iter().map(|q| q.ncols()).sum::<usize>() >= state.factors.iter().map(|q| q.ncols()).sum::<usize>() {
        return Err(Error::NoRankDrop);
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankReductionOptions {
    /// Relative eigenvalue cutoff used to report ranks.
    pub rel_threshold: f64,
    /// Spectral mass the initial factorization may discard.
    pub factor_tail: f64,
    /// Overrides `Σ rank − M`, counted on the factor widths.
    pub max_iterations: Option<usize>,
}

impl Default for RankReductionOptions {
    fn default() -> Self {
        RankReductionOptions { rel_threshold: DEFAULT_RANK_THRESHOLD, factor_tail: FACTOR_TAIL, max_iterations: None }
    }
}

pub fn rank_reduce(x: &[CMat], rows: &[SdpRow]) -> RankReduction {
    rank_reduce_with(x, rows, RankReductionOptions::default())
}

pub fn rank_reduce_with(x: &[CMat], rows: &[SdpRow], opts: RankReductionOptions) -> RankReduction {
    let mut state = RankReductionState::new(x, opts.factor_tail);
    let initial_ranks = numerical_ranks(x, opts.rel_threshold);
    let max_iter = opts
        .max_iterations
        .unwrap_or_else(|| state.ranks().iter().sum::<usize>().saturating_sub(x.len()));
    let mut trace = Vec::new();
    let row_scale: Vec<f64> = rows.iter().map(|r| r.threshold.abs().max(1.0)).collect();

    while state.iteration < max_iter && state.sum_rank_squares() > rows.len() {
        let system = assemble_system(&state, rows);
        let Some(delta) = find_delta_preserving_objective(&state, &system) else {
            break;
        };
        let Ok(next) = reduction_step(&state, &delta) else {
            break;
        };
        let obj_before: f64 = state.x.iter().map(real_trace).sum();
        let obj_after: f64 = next.x.iter().map(real_trace).sum();
        let objective_drift = (obj_after - obj_before).abs();
        let max_row_drift = rows
            .iter()
            .zip(&row_scale)
            .map(|(r, s)| (r.value(&next.x) - r.value(&state.x)).abs() / s)
            .fold(0.0, f64::max);
        if objective_drift > STEP_DRIFT * (1.0 + obj_before.abs()) || max_row_drift > STEP_DRIFT {
            break;
        }
        trace.push(ReductionRecord {
            iteration: next.iteration,
            ranks_before: state.ranks(),
            ranks_after: next.ranks(),
            delta_star: delta_star(&delta),
            objective_drift,
            max_row_drift,
        });
        state = next;
    }
    RankReduction {
        ranks: numerical_ranks(&state.x, opts.rel_threshold),
        iterations: state.iteration,
        x: state.x,
        factors: state.factors,
        initial_ranks,
        trace,
    }
}

/// Maximum deviation of `Σ_m Tr(A_lm X_m)` between two solutions, relative to
/// `max(1, |b_l|)`.
pub fn max_row_drift(rows: &[SdpRow], before: &[CMat], after: &[CMat]) -> f64 {
    rows.iter()
        .map(|r| (r.value(after) - r.value(before)).abs() / r.threshold.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Evaluates the homogeneous system directly on Hermitian blocks.
pub fn apply_direct(state: &RankReductionState, rows: &[SdpRow], delta: &DeltaSet) -> Vec<f64> {
    rows.iter()
        .map(|r| {
            state
                .factors
                .iter()
                .zip(&delta.delta)
                .zip(&r.matrices)
                .map(|((q, d), a)| herm_dot(&(q.adjoint() * a * q), d))
                .sum()
        })
        .collect()
}
