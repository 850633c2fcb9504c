//! The relaxed separable SDP
//!
//! ```text
//!   min Σ_i Tr(X_i)   s.t.  Σ_m Tr(A_lm X_m) ⊵_l b_l,  X_i ⪰ 0,
//! ```
//!
//! its dual `max Σ η_l b_l  s.t.  Z_i = I − Σ_l η_l A_li ⪰ 0`, and
//! optimality diagnostics.

mod ipm;

use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{count_above, eigh_desc, herm_dot, hermitize, min_eigenvalue, real_trace, CMat};
use crate::scenario::{Scenario, Sense, ShapingConstraint};

use ipm::{Acceptance, ConeBlock, ConeProgram, IpmSettings, IpmStatus, Verdict};

/// Default relative eigenvalue threshold for [`numerical_rank`].
pub const DEFAULT_RANK_THRESHOLD: f64 = 1e-4;

/// One constraint row; `matrices[m]` multiplies block `m`.
pub type SdpRow = ShapingConstraint;

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub dim: usize,
    pub blocks: usize,
    pub rows: Vec<SdpRow>,
}

impl SdpProblem {
    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// `Σ_m Tr(A_lm X_m)` for every row.
    pub fn row_values(&self, x: &[CMat]) -> Vec<f64> {
        self.rows.iter().map(|r| r.value(x)).collect()
    }

    /// `Z_i = I − Σ_l η_l A_li`.
    pub fn dual_slack(&self, eta: &[f64]) -> Vec<CMat> {
        (0..self.blocks)
            .map(|i| {
                let mut z = CMat::identity(self.dim, self.dim);
                for (row, e) in self.rows.iter().zip(eta) {
                    if *e != 0.0 {
                        z -= row.matrices[i].scale(*e);
                    }
                }
                hermitize(&z)
            })
            .collect()
    }

    /// Scales every right-hand side by `alpha`.
    pub fn scaled_rhs(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        for r in &mut out.rows {
            r.threshold *= alpha;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Per-row primal violation after scaling rows to unit norm, i.e.
    /// `violation ≤ feasibility · max(‖A_l‖, |b_l|)`.
    pub feasibility: f64,
    /// Relative duality gap.
    pub gap: f64,
    /// Allowed negative eigenvalue of returned PSD matrices.
    pub psd: f64,
    pub max_iterations: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { feasibility: 1e-8, gap: 1e-7, psd: 1e-9, max_iterations: 200 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdrSolution {
    pub x: Vec<CMat>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub eta: Vec<f64>,
    pub z: Vec<CMat>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// Largest row violation divided by `max(1, |b_l|)`.
    pub primal_residual: f64,
    /// The same after scaling each row to unit Frobenius norm: violation
    /// divided by `max(‖A_l‖, |b_l|)`, with `‖A_l‖² = Σ_m ‖A_lm‖²_F`.
    pub normalized_primal_residual: f64,
    /// Largest `−λ_min(Z_i)`, clipped at zero.
    pub dual_psd_violation: f64,
    /// Largest `−λ_min(X_i)`, clipped at zero.
    pub primal_psd_violation: f64,
    /// Largest magnitude of an `η_l` with the wrong sign for its row.
    pub dual_sign_violation: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// `primal_objective − dual_objective`.
    pub duality_gap: f64,
    pub relative_gap: f64,
    /// `|η_l · (Σ_m Tr(A_lm X_m) − b_l)|` per row.
    pub complementary_slackness: Vec<f64>,
}

impl fmt::Display for KktReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "primal residual {:.2e} (normalized {:.2e}), dual PSD violation {:.2e}, relative gap {:.2e}",
            self.primal_residual, self.normalized_primal_residual, self.dual_psd_violation, self.relative_gap
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdrOutput {
    pub primal: SdrSolution,
    pub dual: DualSolution,
    pub report: KktReport,
    pub iterations: usize,
}

/// QoS rows first, then the shaping rows in input order.
pub fn assemble(scenario: &Scenario) -> SdpProblem {
    SdpProblem {
        dim: scenario.antennas,
        blocks: scenario.num_users(),
        rows: scenario.all_constraints(),
    }
}

pub fn kkt_report(problem: &SdpProblem, primal: &SdrSolution, dual: &DualSolution) -> KktReport {
    let values = problem.row_values(&primal.x);
    let primal_residual = problem
        .rows
        .iter()
        .zip(&values)
        .map(|(r, v)| r.sense.violation(*v, r.threshold) / r.threshold.abs().max(1.0))
        .fold(0.0, f64::max);
    let normalized_primal_residual = problem
        .rows
        .iter()
        .zip(&values)
        .map(|(r, v)| r.sense.violation(*v, r.threshold) / row_norm(r).max(r.threshold.abs()).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    let z = problem.dual_slack(&dual.eta);
    let dual_psd_violation = z.iter().map(|z| (-min_eigenvalue(z)).max(0.0)).fold(0.0, f64::max);
    let primal_psd_violation = primal.x.iter().map(|x| (-min_eigenvalue(x)).max(0.0)).fold(0.0, f64::max);
    let dual_sign_violation = problem
        .rows
        .iter()
        .zip(&dual.eta)
        .map(|(r, e)| match r.sense {
            Sense::Ge => (-e).max(0.0),
            Sense::Le => e.max(0.0),
            Sense::Eq => 0.0,
        })
        .fold(0.0, f64::max);
    let primal_objective: f64 = primal.x.iter().map(real_trace).sum();
    let dual_objective: f64 = problem.rows.iter().zip(&dual.eta).map(|(r, e)| r.threshold * e).sum();
    let duality_gap = primal_objective - dual_objective;
    let complementary_slackness = problem
        .rows
        .iter()
        .zip(&values)
        .zip(&dual.eta)
        .map(|((r, v), e)| (e * (v - r.threshold)).abs())
        .collect();
    KktReport {
        primal_residual,
        normalized_primal_residual,
        dual_psd_violation,
        primal_psd_violation,
        dual_sign_violation,
        primal_objective,
        dual_objective,
        duality_gap,
        relative_gap: relative_gap(primal_objective, dual_objective),
        complementary_slackness,
    }
}

/// `|p − d| / max(|p|, |d|)`; zero when both objectives vanish.
pub fn relative_gap(primal: f64, dual: f64) -> f64 {
    let scale = primal.abs().max(dual.abs());
    if scale == 0.0 {
        0.0
    } else {
        (primal - dual).abs() / scale
    }
}

/// `(Σ_m ‖A_lm‖²_F)^{1/2}`.
pub fn row_norm(row: &SdpRow) -> f64 {
    row.matrices.iter().map(|a| herm_dot(a, a)).sum::<f64>().sqrt()
}

/// Largest `ξ` such that the `ξ`-th largest eigenvalue is at least
/// `rel_threshold · Tr(X)`.
pub fn numerical_rank(x: &CMat, rel_threshold: f64) -> usize {
    let (values, _) = eigh_desc(x);
    let trace: f64 = values.iter().sum();
    count_above(&values, rel_threshold * trace)
}

pub fn numerical_ranks(x: &[CMat], rel_threshold: f64) -> Vec<usize> {
    x.iter().map(|x| numerical_rank(x, rel_threshold)).collect()
}

/// Rows are rescaled to unit Frobenius norm before entering the cone program;
/// `row_scale[l]` recovers `η_l = row_scale[l] · y_l`.
struct Standardized {
    program: ConeProgram,
    row_scale: Vec<f64>,
}

fn standardize(problem: &SdpProblem) -> Standardized {
    let m = problem.num_rows();
    let row_scale: Vec<f64> = problem
        .rows
        .iter()
        .map(|r| {
            let norm = row_norm(r);
            if norm > 0.0 {
                1.0 / norm
            } else {
                1.0
            }
        })
        .collect();
    let mut blocks: Vec<ConeBlock> = (0..problem.blocks)
        .map(|i| ConeBlock {
            dim: problem.dim,
            cost: 1.0,
            terms: problem
                .rows
                .iter()
                .enumerate()
                .filter(|(_, r)| !r.is_zero_for(i))
                .map(|(l, r)| (l, r.matrices[i].scale(row_scale[l])))
                .collect(),
        })
        .collect();
    for (l, r) in problem.rows.iter().enumerate() {
        let coef = match r.sense {
            Sense::Ge => -1.0,
            Sense::Le => 1.0,
            Sense::Eq => continue,
        };
        blocks.push(ConeBlock {
            dim: 1,
            cost: 0.0,
            terms: vec![(l, CMat::from_element(1, 1, coef.into()))],
        });
    }
    let b = DVector::from_iterator(m, problem.rows.iter().zip(&row_scale).map(|(r, d)| r.threshold * d));
    Standardized { program: ConeProgram { rows: m, b, blocks }, row_scale }
}

struct OriginalUnits<'a> {
    problem: &'a SdpProblem,
    tol: Tolerances,
}

impl Acceptance for OriginalUnits<'_> {
    fn grade(&self, x: &[CMat], scaled_primal: f64, scaled_dual: f64, rel_gap: f64) -> Verdict {
        let tol = self.tol.feasibility;
        if scaled_primal > tol || scaled_dual > tol || rel_gap > self.tol.gap {
            return Verdict::Reject;
        }
        let blocks = &x[..self.problem.blocks];
        let rows = &self.problem.rows;
        if rows.iter().all(|r| r.violation(blocks) <= tol * r.threshold.abs().max(1.0)) {
            Verdict::Converged
        } else if rows.iter().all(|r| r.violation(blocks) <= tol * row_norm(r).max(r.threshold.abs())) {
            Verdict::Acceptable
        } else {
            Verdict::Reject
        }
    }
}

fn validate_problem(problem: &SdpProblem) -> Result<()> {
    if problem.dim == 0 || problem.blocks == 0 {
        return Err(Error::DimensionMismatch("empty SDP".into()));
    }
    for (l, r) in problem.rows.iter().enumerate() {
        if r.matrices.len() != problem.blocks || r.matrices.iter().any(|a| a.shape() != (problem.dim, problem.dim)) {
            return Err(Error::DimensionMismatch(format!("row {l} does not match {} blocks of size {}", problem.blocks, problem.dim)));
        }
    }
    Ok(())
}

/// Solves the relaxed SDP and its dual.
pub fn solve(problem: &SdpProblem, tol: Tolerances) -> Result<SdrOutput> {
    validate_problem(problem)?;
    let std = standardize(problem);
    let settings = IpmSettings { max_iterations: tol.max_iterations, infeasibility: tol.feasibility };
    let res = ipm::solve(&std.program, settings, &OriginalUnits { problem, tol });
    match res.status {
        IpmStatus::PrimalInfeasible => {
            let raw: Vec<f64> = res.y.iter().zip(&std.row_scale).map(|(y, d)| y * d).collect();
            let by: f64 = raw.iter().zip(&problem.rows).map(|(e, r)| e * r.threshold).sum();
            let certificate = raw.iter().map(|e| e / by).collect();
            Err(Error::Infeasible { certificate })
        }
        IpmStatus::DualInfeasible => Err(Error::Unbounded),
        status => {
            let x: Vec<CMat> = res.x[..problem.blocks].iter().map(hermitize).collect();
            let eta: Vec<f64> = res.y.iter().zip(&std.row_scale).map(|(y, d)| y * d).collect();
            let primal = SdrSolution { objective: x.iter().map(real_trace).sum(), x };
            let dual = DualSolution {
                z: problem.dual_slack(&eta),
                objective: problem.rows.iter().zip(&eta).map(|(r, e)| r.threshold * e).sum(),
                eta,
            };
            let report = kkt_report(problem, &primal, &dual);
            let out = SdrOutput { primal, dual, report, iterations: res.iterations };
            if status == IpmStatus::Optimal {
                Ok(out)
            } else {
                Err(Error::MaxIterations(Box::new(out)))
            }
        }
    }
}

/// Assembles and solves the relaxation of `scenario`.
pub fn solve_scenario(scenario: &Scenario, tol: Tolerances) -> Result<(SdpProblem, SdrOutput)> {
    let problem = assemble(scenario);
    let out = solve(&problem, tol)?;
    Ok((problem, out))
}
