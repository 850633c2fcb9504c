//! Small dense linear programs: `min cᵀx  s.t.  a_l·x ⊵_l b_l,  x ≥ 0`,
//! solved by a two-phase tableau simplex with Bland's anti-cycling rule.

use nalgebra::{DMatrix, DVector};

use crate::scenario::Sense;

const PIVOT_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub coefs: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub cost: Vec<f64>,
    pub rows: Vec<LpRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpError {
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

struct Tableau {
    /// `rows × (cols + 1)`; the last column is the right-hand side.
    t: DMatrix<f64>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[(r, c)];
        let width = self.t.ncols();
        for j in 0..width {
            self.t[(r, j)] /= p;
        }
        for i in 0..self.t.nrows() {
            if i == r {
                continue;
            }
            let f = self.t[(i, c)];
            if f != 0.0 {
                for j in 0..width {
                    let v = self.t[(r, j)];
                    self.t[(i, j)] -= f * v;
                }
            }
        }
        self.basis[r] = c;
    }

    /// Minimizes `cost · x` over the columns allowed by `allowed`, starting
    /// from the current basis. Bland's rule: lowest-index entering column and
    /// lowest-index leaving basic variable among ratio ties.
    fn optimize(&mut self, cost: &[f64], allowed: &dyn Fn(usize) -> bool) -> Result<(), LpError> {
        let m = self.basis.len();
        let rhs = self.cols;
        loop {
            let mut entering = None;
            for j in 0..self.cols {
                if !allowed(j) || self.basis.contains(&j) {
                    continue;
                }
                let reduced = cost[j] - (0..m).map(|i| cost[self.basis[i]] * self.t[(i, j)]).sum::<f64>();
                if reduced < -PIVOT_TOL * (1.0 + cost[j].abs()) {
                    entering = Some(j);
                    break;
                }
            }
            let Some(c) = entering else { return Ok(()) };
            let mut leaving: Option<(usize, f64)> = None;
            for i in 0..m {
                let a = self.t[(i, c)];
                if a > PIVOT_TOL {
                    let ratio = self.t[(i, rhs)] / a;
                    leaving = match leaving {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-14 * (1.0 + lr.abs())
                                || (ratio <= lr + 1e-14 * (1.0 + lr.abs()) && self.basis[i] < self.basis[li])
                            {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leaving else { return Err(LpError::Unbounded) };
            self.pivot(r, c);
        }
    }
}

/// Solves the program. Rows are rescaled to unit max-norm internally.
pub fn solve(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    let n = lp.cost.len();
    let m = lp.rows.len();

    // Normalize rows and make every right-hand side nonnegative.
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    let mut senses = Vec::with_capacity(m);
    for (i, row) in lp.rows.iter().enumerate() {
        let scale = row.coefs.iter().fold(row.rhs.abs(), |acc, v| acc.max(v.abs()));
        let scale = if scale > 0.0 { scale } else { 1.0 };
        let flip = row.rhs < 0.0;
        let s = if flip { -1.0 / scale } else { 1.0 / scale };
        for j in 0..n {
            a[(i, j)] = row.coefs[j] * s;
        }
        b[i] = row.rhs * s;
        senses.push(match (row.sense, flip) {
            (Sense::Eq, _) => Sense::Eq,
            (Sense::Ge, false) | (Sense::Le, true) => Sense::Ge,
            (Sense::Le, false) | (Sense::Ge, true) => Sense::Le,
        });
    }

    // Columns: structural | slack/surplus | artificial.
    let n_slack = senses.iter().filter(|s| **s != Sense::Eq).count();
    let n_art = senses.iter().filter(|s| **s != Sense::Le).count();
    let cols = n + n_slack + n_art;
    let mut t = DMatrix::zeros(m, cols + 1);
    let mut basis = vec![0; m];
    let (mut si, mut ai) = (n, n + n_slack);
    for i in 0..m {
        for j in 0..n {
            t[(i, j)] = a[(i, j)];
        }
        t[(i, cols)] = b[i];
        match senses[i] {
            Sense::Le => {
                t[(i, si)] = 1.0;
                basis[i] = si;
                si += 1;
            }
            Sense::Ge => {
                t[(i, si)] = -1.0;
                si += 1;
                t[(i, ai)] = 1.0;
                basis[i] = ai;
                ai += 1;
            }
            Sense::Eq => {
                t[(i, ai)] = 1.0;
                basis[i] = ai;
                ai += 1;
            }
        }
    }
    let first_art = n + n_slack;
    let mut tab = Tableau { t, basis, cols };

    // Phase 1.
    if n_art > 0 {
        let phase1: Vec<f64> = (0..cols).map(|j| if j >= first_art { 1.0 } else { 0.0 }).collect();
        tab.optimize(&phase1, &|_| true).map_err(|_| LpError::Infeasible)?;
        let infeas: f64 = (0..m).filter(|&i| tab.basis[i] >= first_art).map(|i| tab.t[(i, cols)]).sum();
        if infeas > FEAS_TOL {
            return Err(LpError::Infeasible);
        }
        // Drive remaining artificials out of the basis where possible.
        for i in 0..m {
            if tab.basis[i] >= first_art {
                if let Some(c) = (0..first_art).find(|&j| tab.t[(i, j)].abs() > PIVOT_TOL && !tab.basis.contains(&j)) {
                    tab.pivot(i, c);
                }
            }
        }
    }

    // Phase 2.
    let mut phase2 = vec![0.0; cols];
    phase2[..n].copy_from_slice(&lp.cost);
    tab.optimize(&phase2, &|j| j < first_art)?;

    let mut x = vec![0.0; n];
    for (i, &bv) in tab.basis.iter().enumerate() {
        if bv < n {
            x[bv] = tab.t[(i, cols)].max(0.0);
        }
    }
    polish(&a, &b, &senses, &tab.basis, n, &mut x);
    let objective = lp.cost.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution { x, objective })
}

/// Recomputes the structural basic values from the rows that are tight at the
/// optimum, removing round-off accumulated by the tableau updates.
fn polish(a: &DMatrix<f64>, b: &DVector<f64>, senses: &[Sense], basis: &[usize], n: usize, x: &mut [f64]) {
    let basic: Vec<usize> = basis.iter().copied().filter(|&j| j < n).collect();
    if basic.is_empty() {
        return;
    }
    let tight: Vec<usize> = (0..a.nrows())
        .filter(|&i| {
            let v: f64 = (0..n).map(|j| a[(i, j)] * x[j]).sum();
            senses[i] == Sense::Eq || (v - b[i]).abs() <= 1e-9
        })
        .collect();
    if tight.len() < basic.len() {
        return;
    }
    let sub = DMatrix::from_fn(tight.len(), basic.len(), |r, c| a[(tight[r], basic[c])]);
    let rhs = DVector::from_fn(tight.len(), |r, _| {
        b[tight[r]] - (0..n).filter(|j| !basic.contains(j)).map(|j| a[(tight[r], j)] * x[j]).sum::<f64>()
    });
    let Ok(sol) = sub.svd(true, true).solve(&rhs, 1e-12) else { return };
    if sol.iter().all(|v| *v >= -1e-12) {
        let candidate: Vec<f64> = {
            let mut c = x.to_vec();
            for (k, &j) in basic.iter().enumerate() {
                c[j] = sol[k].max(0.0);
            }
            c
        };
        let worst = |xs: &[f64]| {
            (0..a.nrows())
                .map(|i| {
                    let v: f64 = (0..n).map(|j| a[(i, j)] * xs[j]).sum();
                    senses[i].violation(v, b[i])
                })
                .fold(0.0, f64::max)
        };
        if worst(&candidate) <= worst(x) {
            x.copy_from_slice(&candidate);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(coefs: &[f64], sense: Sense, rhs: f64) -> LpRow {
        LpRow { coefs: coefs.to_vec(), sense, rhs }
    }

    #[test]
    fn textbook_minimum() {
        // min x + y  s.t. x + 2y ≥ 4, 3x + y ≥ 6  →  (8/5, 6/5)
        let lp = LinearProgram {
            cost: vec![1.0, 1.0],
            rows: vec![row(&[1.0, 2.0], Sense::Ge, 4.0), row(&[3.0, 1.0], Sense::Ge, 6.0)],
        };
        let s = solve(&lp).unwrap();
        assert!((s.x[0] - 1.6).abs() < 1e-12 && (s.x[1] - 1.2).abs() < 1e-12);
        assert!((s.objective - 2.8).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let lp = LinearProgram {
            cost: vec![1.0],
            rows: vec![row(&[1.0], Sense::Ge, 2.0), row(&[1.0], Sense::Le, 1.0)],
        };
        assert_eq!(solve(&lp), Err(LpError::Infeasible));
        let lp = LinearProgram { cost: vec![-1.0], rows: vec![row(&[1.0], Sense::Ge, 1.0)] };
        assert_eq!(solve(&lp), Err(LpError::Unbounded));
    }

    #[test]
    fn equality_and_negative_rhs() {
        // min 2x + y  s.t. x + y = 3, −x ≤ −1 (x ≥ 1)  →  (1, 2)
        let lp = LinearProgram {
            cost: vec![2.0, 1.0],
            rows: vec![row(&[1.0, 1.0], Sense::Eq, 3.0), row(&[-1.0, 0.0], Sense::Le, -1.0)],
        };
        let s = solve(&lp).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's example, which cycles under the textbook largest-coefficient rule.
        let lp = LinearProgram {
            cost: vec![-0.75, 150.0, -0.02, 6.0],
            rows: vec![
                row(&[0.25, -60.0, -0.04, 9.0], Sense::Le, 0.0),
                row(&[0.5, -90.0, -0.02, 3.0], Sense::Le, 0.0),
                row(&[0.0, 0.0, 1.0, 0.0], Sense::Le, 1.0),
            ],
        };
        let s = solve(&lp).unwrap();
        assert!((s.objective + 0.05).abs() < 1e-12, "{}", s.objective);
    }
}
