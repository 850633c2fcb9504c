//! Gaussian randomization with per-user power control, for relaxed solutions
//! whose rank cannot be carried by a code of the requested dimension.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{eigh_desc, CMat, C64};
use crate::lp::{self, LinearProgram, LpError, LpRow};
use crate::sdr::SdpRow;

/// Code dimension used by the randomization path.
pub const RANDOMIZATION_K: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct RandomCandidate {
    /// Unscaled draws `W̄_m`.
    pub w_bar: Vec<CMat>,
    /// Per-user power scales `p_m`.
    pub scales: Vec<f64>,
    /// `Σ_m p_m ‖W̄_m‖²_F`.
    pub total_power: f64,
}

impl RandomCandidate {
    /// `W_m = √p_m · W̄_m`.
    pub fn beamformers(&self) -> Vec<CMat> {
        self.w_bar
            .iter()
            .zip(&self.scales)
            .map(|(w, p)| w.scale(p.sqrt()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomizationResult {
    pub best: RandomCandidate,
    /// Index of the winning draw.
    pub best_index: usize,
    pub draws: usize,
    pub feasible_draws: usize,
}

fn complex_gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut m = CMat::zeros(rows, cols);
    // Column-major fill keeps the stream layout independent of nalgebra internals.
    for c in 0..cols {
        for r in 0..rows {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            m[(r, c)] = C64::new(re * s, im * s);
        }
    }
    m
}

/// `U Σ^{1/2}` from the eigendecomposition of a PSD matrix (negative
/// eigenvalues clipped).
fn sqrt_factor(x: &CMat) -> CMat {
    let (values, vectors) = eigh_desc(x);
    let mut f = vectors;
    for (c, v) in values.iter().enumerate() {
        let s = v.max(0.0).sqrt();
        f.column_mut(c).scale_mut(s);
    }
    f
}

/// Draws `W̄_i = U_i Σ_i^{1/2} Λ_i` with `Λ_i` an `N × k` matrix of i.i.d.
/// unit-variance circular complex Gaussians, so `E[W̄_i W̄_iᴴ] = k X_i`.
pub fn draw_candidate<R: Rng + ?Sized>(x: &[CMat], k: usize, rng: &mut R) -> Vec<CMat> {
    x.iter()
        .map(|xi| {
            let f = sqrt_factor(xi);
            let lambda = complex_gaussian_matrix(rng, xi.nrows(), k);
            f * lambda
        })
        .collect()
}

/// Per-user scales minimizing `Σ p_m Tr(W̄_m W̄_mᴴ)` subject to every row.
pub fn power_control(candidates: &[CMat], rows: &[SdpRow]) -> Result<Vec<f64>> {
    let cost: Vec<f64> = candidates.iter().map(|w| w.iter().map(|z| z.norm_sqr()).sum()).collect();
    let lp_rows = rows
        .iter()
        .map(|r| LpRow {
            coefs: candidates
                .iter()
                .enumerate()
                .map(|(m, w)| {
                    if r.is_zero_for(m) {
                        0.0
                    } else {
                        single_block_value(r, m, w)
                    }
                })
                .collect(),
            sense: r.sense,
            rhs: r.threshold,
        })
        .collect();
    match lp::solve(&LinearProgram { cost, rows: lp_rows }) {
        Ok(sol) => Ok(sol.x),
        Err(LpError::Infeasible) | Err(LpError::Unbounded) => Err(Error::PowerControlInfeasible),
    }
}

/// `Tr(W̄ᴴ A_m W̄)`.
fn single_block_value(row: &SdpRow, m: usize, w: &CMat) -> f64 {
    let aw = &row.matrices[m] * w;
    w.iter().zip(aw.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Best of `n_rand` power-controlled draws by total power. Draws are generated
/// sequentially from `rng`; the LPs run in parallel and ties keep the lower index.
pub fn randomization_search<R: Rng + ?Sized>(
    x: &[CMat],
    rows: &[SdpRow],
    n_rand: usize,
    k: usize,
    rng: &mut R,
) -> Result<RandomizationResult> {
    let draws: Vec<Vec<CMat>> = (0..n_rand.max(1)).map(|_| draw_candidate(x, k, rng)).collect();
    let evaluated: Vec<Option<RandomCandidate>> = draws
        .into_par_iter()
        .map(|w_bar| {
            let scales = power_control(&w_bar, rows).ok()?;
            let total_power = w_bar
                .iter()
                .zip(&scales)
                .map(|(w, p)| p * w.iter().map(|z| z.norm_sqr()).sum::<f64>())
                .sum();
            Some(RandomCandidate { w_bar, scales, total_power })
        })
        .collect();
    let feasible_draws = evaluated.iter().filter(|c| c.is_some()).count();
    let (best_index, best) = evaluated
        .into_iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|c| (i, c)))
        .fold(None::<(usize, RandomCandidate)>, |acc, (i, c)| match acc {
            Some((bi, b)) if b.total_power <= c.total_power => Some((bi, b)),
            _ => Some((i, c)),
        })
        .ok_or(Error::RandomizationFailed)?;
    Ok(RandomizationResult { best, best_index, draws: n_rand.max(1), feasible_draws })
}
