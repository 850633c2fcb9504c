//! End-to-end design: relax, reduce rank, pick the code dimension, extract and
//! rotate the beamformers, or fall back to randomization.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigh_desc, real_trace, CMat, CVec, C64};
use crate::ostbc::CODE_DIMENSIONS;
use crate::randomize::{randomization_search, RANDOMIZATION_K};
use crate::rankred::{rank_reduce, RankReduction};
use crate::scenario::Scenario;
use crate::sdr::{self, numerical_ranks, row_norm, KktReport, SdpProblem, Tolerances, DEFAULT_RANK_THRESHOLD};

/// Spectral mass beyond the chosen code dimension that extraction may drop.
const EXTRACT_TAIL: f64 = 1e-7;

/// `(K + 1)² − 2`: the number of shaping rows for which a solution of rank at
/// most `K` is guaranteed to exist.
pub fn max_constraints_for(k: usize) -> Result<usize> {
    if !CODE_DIMENSIONS.contains(&k) {
        return Err(Error::UnsupportedCodeDimension(k));
    }
    Ok((k + 1) * (k + 1) - 2)
}

/// Smallest `K ∈ {1, 2, 4, 8}` with `K ≥ max(ranks)`.
pub fn select_code_dimension(ranks: &[usize]) -> Result<usize> {
    select_code_dimension_capped(ranks, RANDOMIZATION_K)
}

/// As [`select_code_dimension`] with the candidate set limited to `K ≤ cap`.
pub fn select_code_dimension_capped(ranks: &[usize], cap: usize) -> Result<usize> {
    let r = ranks.iter().copied().max().unwrap_or(1).max(1);
    CODE_DIMENSIONS
        .iter()
        .copied()
        .filter(|k| *k <= cap)
        .find(|k| *k >= r)
        .ok_or(Error::RandomizationRequired(r))
}

/// `W_i = [Q_i, 0]` with `X_i = Q_i Q_iᴴ` from the eigendecomposition, padded to
/// `k` columns. Fails if more than `k` eigenpairs carry spectral mass above
/// the extraction tolerance.
pub fn extract_beamformers(x: &[CMat], k: usize) -> Result<Vec<CMat>> {
    x.iter()
        .map(|xi| {
            let (values, vectors) = eigh_desc(xi);
            let trace: f64 = values.iter().filter(|v| **v > 0.0).sum();
            let tail: f64 = values.iter().skip(k).filter(|v| **v > 0.0).sum();
            if tail > EXTRACT_TAIL * trace {
                let rank = values.iter().filter(|v| **v > EXTRACT_TAIL * trace).count();
                return Err(Error::RankExceedsCode { rank, k });
            }
            Ok(leading_factor(&values, &vectors, k))
        })
        .collect()
}

fn leading_factor(values: &[f64], vectors: &CMat, k: usize) -> CMat {
    let trace: f64 = values.iter().filter(|v| **v > 0.0).sum();
    let mut w = CMat::zeros(vectors.nrows(), k);
    for c in 0..k.min(values.len()) {
        if values[c] > 1e-12 * trace {
            w.set_column(c, &(vectors.column(c) * C64::new(values[c].sqrt(), 0.0)));
        }
    }
    w
}

/// Leading `k` eigenpairs of every `X_i`, kept only if their Gram matrices
/// pass the row-normalized acceptance test the relaxed solution itself was
/// held to. Interior-point solutions of rank-deficient problems carry a
/// residual spectral tail that plain extraction would count as rank.
fn truncate_within(x: &[CMat], k: usize, problem: &SdpProblem, tol: f64) -> Option<Vec<CMat>> {
    let w: Vec<CMat> = x
        .iter()
        .map(|xi| {
            let (values, vectors) = eigh_desc(xi);
            leading_factor(&values, &vectors, k)
        })
        .collect();
    let grams: Vec<CMat> = w.iter().map(|wi| wi * wi.adjoint()).collect();
    (row_violations(problem, &grams).1 <= tol).then_some(w)
}

/// Smallest code dimension in `[k_min, cap]` that carries every `X_i`, either
/// exactly up to the extraction tolerance or by an acceptable truncation.
fn fitting_beamformers(x: &[CMat], k_min: usize, cap: usize, problem: &SdpProblem, tol: f64) -> Option<(Vec<CMat>, usize)> {
    CODE_DIMENSIONS.iter().copied().filter(|k| *k >= k_min && *k <= cap).find_map(|k| {
        extract_beamformers(x, k).ok().or_else(|| truncate_within(x, k, problem, tol)).map(|w| (w, k))
    })
}

/// Scales column `k` of `W_i` by `exp(j∠(w_ikᴴ h_i))`, making `W_iᴴ h_i` real
/// and nonnegative without changing `W_i W_iᴴ`.
pub fn phase_rotate(w: &[CMat], channels: &[CVec]) -> Vec<CMat> {
    w.iter()
        .zip(channels)
        .map(|(wi, h)| {
            let mut out = wi.clone();
            for c in 0..wi.ncols() {
                let g = (wi.column(c).adjoint() * h)[(0, 0)];
                if g.norm() > 0.0 {
                    let rot = C64::from_polar(1.0, g.arg());
                    out.column_mut(c).iter_mut().for_each(|z| *z *= rot);
                }
            }
            out
        })
        .collect()
}

/// `W_iᴴ h_i`.
pub fn virtual_channel(w: &CMat, h: &CVec) -> CVec {
    w.adjoint() * h
}

/// Post-detection SINR `‖W_iᴴh_i‖² / (Σ_{m≠i} ‖W_mᴴh_i‖² + σ_i²)` of each user.
pub fn sinr(w: &[CMat], scenario: &Scenario) -> Vec<f64> {
    scenario
        .users
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let powers: Vec<f64> = w.iter().map(|wm| crate::linalg::vec_norm_sqr(&virtual_channel(wm, &u.channel))).collect();
            let interference: f64 = powers.iter().enumerate().filter(|(m, _)| *m != i).map(|(_, p)| p).sum();
            powers[i] / (interference + u.noise_power)
        })
        .collect()
}

pub fn total_power(w: &[CMat]) -> f64 {
    w.iter().map(|wi| wi.iter().map(|z| z.norm_sqr()).sum::<f64>()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tolerances: Tolerances,
    /// Randomization draws when the rank exceeds the code-dimension cap.
    pub n_rand: usize,
    pub seed: u64,
    /// Largest admissible code dimension; baselines use 1 or 2.
    pub max_code_dimension: usize,
    pub rank_threshold: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tolerances: Tolerances::default(),
            n_rand: 300,
            seed: 0,
            max_code_dimension: RANDOMIZATION_K,
            rank_threshold: DEFAULT_RANK_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizationDiagnostics {
    pub draws: usize,
    pub feasible_draws: usize,
    pub best_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub sdr_objective: f64,
    pub sdr_iterations: usize,
    pub kkt: KktReport,
    pub initial_ranks: Vec<usize>,
    pub reduced_ranks: Vec<usize>,
    pub reduction_iterations: usize,
    /// Post-detection SINR per user (linear).
    pub sinr: Vec<f64>,
    /// Largest row violation of the returned beamformers, divided by
    /// `max(1, |b_l|)`.
    pub max_row_violation: f64,
    /// The same after scaling rows to unit norm.
    pub max_normalized_row_violation: f64,
    pub randomization: Option<RandomizationDiagnostics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingSolution {
    /// One `N × K` matrix per user.
    pub w: Vec<CMat>,
    pub k: usize,
    pub total_power: f64,
    /// True on the rank-reduction path, false after randomization.
    pub exact: bool,
    pub diagnostics: Diagnostics,
}

impl BeamformingSolution {
    pub fn grams(&self) -> Vec<CMat> {
        self.w.iter().map(|w| w * w.adjoint()).collect()
    }
}

fn row_violations(problem: &SdpProblem, grams: &[CMat]) -> (f64, f64) {
    problem.rows.iter().fold((0.0f64, 0.0f64), |(raw, norm), r| {
        let v = r.violation(grams);
        (
            raw.max(v / r.threshold.abs().max(1.0)),
            norm.max(v / row_norm(r).max(r.threshold.abs()).max(f64::MIN_POSITIVE)),
        )
    })
}

/// The relaxed solution after rank reduction; shared by every code-dimension
/// cap evaluated on the same scenario.
#[derive(Debug, Clone)]
pub struct Relaxation {
    pub problem: SdpProblem,
    pub output: sdr::SdrOutput,
    pub initial_ranks: Vec<usize>,
    /// Reduced solution (the relaxed one when every rank is already 1).
    pub x: Vec<CMat>,
    pub reduced_ranks: Vec<usize>,
    pub reduction_iterations: usize,
}

/// Solves the relaxation and reduces its rank.
pub fn relax(scenario: &Scenario, opts: &SolveOptions) -> Result<Relaxation> {
    scenario.validate()?;
    let problem = sdr::assemble(scenario);
    let output = sdr::solve(&problem, opts.tolerances)?;
    let initial_ranks = numerical_ranks(&output.primal.x, opts.rank_threshold);
    // A rank-one verdict from the eigenvalue ratio alone is not enough; skip
    // the reduction only when a rank-one truncation is acceptable.
    let rank_one = initial_ranks.iter().all(|r| *r == 1)
        && fitting_beamformers(&output.primal.x, 1, 1, &problem, opts.tolerances.feasibility).is_some();
    let reduction: Option<RankReduction> = if rank_one {
        None
    } else {
        Some(rank_reduce(&output.primal.x, &problem.rows))
    };
    let (x, reduced_ranks, reduction_iterations) = match reduction {
        Some(r) => (r.x, r.ranks, r.iterations),
        None => (output.primal.x.clone(), initial_ranks.clone(), 0),
    };
    Ok(Relaxation { problem, output, initial_ranks, x, reduced_ranks, reduction_iterations })
}

/// Picks the code dimension under `opts.max_code_dimension`, extracts or
/// randomizes the beamformers and rotates them.
pub fn finalize(scenario: &Scenario, relaxation: &Relaxation, opts: &SolveOptions) -> Result<BeamformingSolution> {
    let Relaxation { problem, output: out, x, .. } = relaxation;
    let cap = opts.max_code_dimension;
    let fitted = select_code_dimension_capped(&relaxation.reduced_ranks, cap)
        .ok()
        .and_then(|k_min| fitting_beamformers(x, k_min, cap, problem, opts.tolerances.feasibility));
    let (w, k, exact, randomization) = match fitted {
        Some((w, k)) => (w, k, true, None),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let k = CODE_DIMENSIONS.iter().copied().filter(|k| *k <= cap).max().unwrap_or(1);
            let res = randomization_search(x, &problem.rows, opts.n_rand, k, &mut rng)?;
            let diag = RandomizationDiagnostics {
                draws: res.draws,
                feasible_draws: res.feasible_draws,
                best_index: res.best_index,
            };
            (res.best.beamformers(), k, false, Some(diag))
        }
    };
    let w = phase_rotate(&w, &scenario.channels());
    let grams: Vec<CMat> = w.iter().map(|wi| wi * wi.adjoint()).collect();
    let (max_row_violation, max_normalized_row_violation) = row_violations(problem, &grams);
    let diagnostics = Diagnostics {
        sdr_objective: out.primal.objective,
        sdr_iterations: out.iterations,
        kkt: out.report.clone(),
        initial_ranks: relaxation.initial_ranks.clone(),
        reduced_ranks: relaxation.reduced_ranks.clone(),
        reduction_iterations: relaxation.reduction_iterations,
        sinr: sinr(&w, scenario),
        max_row_violation,
        max_normalized_row_violation,
        randomization,
    };
    Ok(BeamformingSolution { total_power: grams.iter().map(real_trace).sum(), w, k, exact, diagnostics })
}

/// Runs the full design for one scenario.
pub fn solve_downlink(scenario: &Scenario, opts: &SolveOptions) -> Result<BeamformingSolution> {
    finalize(scenario, &relax(scenario, opts)?, opts)
}

/// Row-major `[re, im, re, im, …]` storage of a complex matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&CMat> for MatrixRecord {
    fn from(m: &CMat) -> Self {
        let mut data = Vec::with_capacity(2 * m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)].re);
                data.push(m[(r, c)].im);
            }
        }
        MatrixRecord { rows: m.nrows(), cols: m.ncols(), data }
    }
}

impl MatrixRecord {
    pub fn to_matrix(&self) -> Result<CMat> {
        if self.data.len() != 2 * self.rows * self.cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {}×{} complex matrix",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(CMat::from_fn(self.rows, self.cols, |r, c| {
            let i = 2 * (r * self.cols + c);
            C64::new(self.data[i], self.data[i + 1])
        }))
    }
}

/// The on-disk form of a [`BeamformingSolution`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    #[serde(rename = "K")]
    pub k: usize,
    pub total_power: f64,
    pub exact: bool,
    #[serde(rename = "W")]
    pub w: Vec<MatrixRecord>,
    pub diagnostics: Diagnostics,
}

impl From<&BeamformingSolution> for SolutionFile {
    fn from(s: &BeamformingSolution) -> Self {
        SolutionFile {
            k: s.k,
            total_power: s.total_power,
            exact: s.exact,
            w: s.w.iter().map(MatrixRecord::from).collect(),
            diagnostics: s.diagnostics.clone(),
        }
    }
}

impl SolutionFile {
    pub fn to_solution(&self) -> Result<BeamformingSolution> {
        Ok(BeamformingSolution {
            w: self.w.iter().map(MatrixRecord::to_matrix).collect::<Result<_>>()?,
            k: self.k,
            total_power: self.total_power,
            exact: self.exact,
            diagnostics: self.diagnostics.clone(),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
