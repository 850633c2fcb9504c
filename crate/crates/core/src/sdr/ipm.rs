//! Homogeneous self-dual primal-dual interior-point method over a product of
//! Hermitian PSD cones, with Nesterov–Todd scaling and Mehrotra
//! predictor-corrector steps.
//!
//! Standard form: `min Σ c_b Tr(X_b)  s.t.  Σ_b Tr(A_lb X_b) = b_l,  X_b ⪰ 0`.
//! Slack variables of inequality rows are `1 × 1` blocks with zero cost.
//! The embedding solved is
//!
//! ```text
//!   𝒜x − bτ = 0,   𝒜*y + z − cτ = 0,   c·x − b·y + κ = 0,
//!   x, z ⪰ 0,   τ, κ ≥ 0,
//! ```
//!
//! so optimality, primal infeasibility (`τ → 0`, `b·y > 0`) and dual
//! infeasibility (`τ → 0`, `c·x < 0`) are all read off one iterate sequence.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::linalg::{herm_dot, hermitize, real_trace, CMat, C64};
use super::relative_gap;

const STEP_FRACTION: f64 = 0.99;
const SIGMA_EXPONENT: i32 = 3;
const REFINEMENT_STEPS: usize = 2;

#[derive(Debug, Clone)]
pub(crate) struct ConeBlock {
    pub dim: usize,
    pub cost: f64,
    pub terms: Vec<(usize, CMat)>,
}

#[derive(Debug, Clone)]
pub(crate) struct ConeProgram {
    pub rows: usize,
    pub b: DVector<f64>,
    pub blocks: Vec<ConeBlock>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct IpmSettings {
    pub max_iterations: usize,
    pub infeasibility: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum Verdict {
    Reject,
    /// Good enough to return if the method cannot do better.
    Acceptable,
    Converged,
}

/// Grades a normalized iterate `(x/τ, y/τ)`; the caller owns the feasibility
/// metric in original units.
pub(crate) trait Acceptance {
    fn grade(&self, x: &[CMat], scaled_primal: f64, scaled_dual: f64, rel_gap: f64) -> Verdict;
}

/// Iterations spent chasing the strict criterion once an acceptable iterate is found.
const EXTRA_ITERATIONS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum IpmStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    IterationLimit,
    NumericalTrouble,
}

#[derive(Debug, Clone)]
pub(crate) struct IpmResult {
    pub status: IpmStatus,
    /// Normalized by `τ` unless the status is an infeasibility certificate.
    pub x: Vec<CMat>,
    pub y: DVector<f64>,
    pub iterations: usize,
}

#[derive(Clone)]
struct Iterate {
    x: Vec<CMat>,
    z: Vec<CMat>,
    y: DVector<f64>,
    tau: f64,
    kappa: f64,
}

struct Residuals {
    primal: DVector<f64>,
    dual: Vec<CMat>,
    gap: f64,
    mu: f64,
    primal_obj: f64,
    dual_obj: f64,
}

struct Scaling {
    r: CMat,
    lambda: Vec<f64>,
    w: CMat,
}

struct Direction {
    dx: Vec<CMat>,
    dz: Vec<CMat>,
    dx_scaled: Vec<CMat>,
    dz_scaled: Vec<CMat>,
    dy: DVector<f64>,
    dtau: f64,
    dkappa: f64,
}

enum SchurFactor {
    Cholesky(Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

struct Schur {
    matrix: DMatrix<f64>,
    factor: SchurFactor,
}

impl Schur {
    fn new(matrix: DMatrix<f64>) -> Option<Self> {
        if let Some(ch) = Cholesky::new(matrix.clone()) {
            return Some(Schur { matrix, factor: SchurFactor::Cholesky(ch) });
        }
        let lu = matrix.clone().lu();
        if lu.is_invertible() {
            return Some(Schur { matrix, factor: SchurFactor::Lu(lu) });
        }
        // Rank-deficient rows: a tiny diagonal shift keeps the step defined.
        let shift = 1e-14 * matrix.diagonal().iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let shifted = &matrix + DMatrix::identity(matrix.nrows(), matrix.ncols()) * shift;
        Cholesky::new(shifted).map(|ch| Schur { matrix, factor: SchurFactor::Cholesky(ch) })
    }

    fn raw_solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            SchurFactor::Cholesky(ch) => ch.solve(rhs),
            SchurFactor::Lu(lu) => lu.solve(rhs).unwrap_or_else(|| DVector::zeros(rhs.len())),
        }
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut sol = self.raw_solve(rhs);
        for _ in 0..REFINEMENT_STEPS {
            let resid = rhs - &self.matrix * &sol;
            sol += self.raw_solve(&resid);
        }
        sol
    }
}

impl ConeProgram {
    fn apply(&self, x: &[CMat]) -> DVector<f64> {
        let mut out = DVector::zeros(self.rows);
        for (blk, xb) in self.blocks.iter().zip(x) {
            for (l, a) in &blk.terms {
                out[*l] += herm_dot(a, xb);
            }
        }
        out
    }

    fn apply_adjoint_block(&self, b: usize, y: &DVector<f64>) -> CMat {
        let blk = &self.blocks[b];
        let mut out = CMat::zeros(blk.dim, blk.dim);
        for (l, a) in &blk.terms {
            if y[*l] != 0.0 {
                out += a.scale(y[*l]);
            }
        }
        out
    }

    fn cost_dot(&self, x: &[CMat]) -> f64 {
        self.blocks
            .iter()
            .zip(x)
            .filter(|(b, _)| b.cost != 0.0)
            .map(|(b, xb)| b.cost * real_trace(xb))
            .sum()
    }

    fn degree(&self) -> usize {
        self.blocks.iter().map(|b| b.dim).sum()
    }

    fn residuals(&self, it: &Iterate) -> Residuals {
        let ax = self.apply(&it.x);
        let primal = &self.b * it.tau - ax;
        let dual = (0..self.blocks.len())
            .map(|b| {
                let blk = &self.blocks[b];
                let mut r = CMat::identity(blk.dim, blk.dim).scale(blk.cost * it.tau);
                r -= self.apply_adjoint_block(b, &it.y);
                r -= &it.z[b];
                r
            })
            .collect();
        let primal_obj = self.cost_dot(&it.x);
        let dual_obj = self.b.dot(&it.y);
        let complementarity: f64 = it.x.iter().zip(&it.z).map(|(x, z)| herm_dot(x, z)).sum();
        let mu = (complementarity + it.tau * it.kappa) / (self.degree() as f64 + 1.0);
        Residuals {
            primal,
            dual,
            gap: primal_obj - dual_obj + it.kappa,
            mu,
            primal_obj,
            dual_obj,
        }
    }
}

fn nt_scaling(x: &CMat, z: &CMat) -> Option<Scaling> {
    let lx = Cholesky::new(x.clone())?.unpack();
    let lz = Cholesky::new(z.clone())?.unpack();
    let svd = (lz.adjoint() * &lx).svd(false, true);
    let v = svd.v_t?.adjoint();
    let lambda: Vec<f64> = svd.singular_values.iter().copied().collect();
    if lambda.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return None;
    }
    let mut r = lx * v;
    for (c, s) in lambda.iter().enumerate() {
        let f = 1.0 / s.sqrt();
        r.column_mut(c).scale_mut(f);
    }
    let w = &r * r.adjoint();
    Some(Scaling { r, lambda, w })
}

/// Solves `Λ ∘ U = rhs` for `U` where `∘` is the symmetrized product.
fn lyap_diag(lambda: &[f64], rhs: &CMat) -> CMat {
    CMat::from_fn(rhs.nrows(), rhs.ncols(), |i, j| rhs[(i, j)] * (2.0 / (lambda[i] + lambda[j])))
}

fn jordan(a: &CMat, b: &CMat) -> CMat {
    (a * b + b * a).scale(0.5)
}

/// Largest `α` with `Λ + α D ⪰ 0`, or infinity.
fn max_step_scaled(lambda: &[f64], d: &CMat) -> f64 {
    let n = lambda.len();
    let m = CMat::from_fn(n, n, |i, j| d[(i, j)] / (lambda[i] * lambda[j]).sqrt());
    let min_eig = crate::linalg::min_eigenvalue(&m);
    if min_eig >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / min_eig
    }
}

struct NewtonSystem<'a> {
    prog: &'a ConeProgram,
    scal: Vec<Scaling>,
    schur: Schur,
    /// `𝒜(W c W)`.
    p: DVector<f64>,
    /// `⟨c, W c W⟩`.
    cwc: f64,
    /// `S⁻¹(p + b)`.
    v: DVector<f64>,
}

impl<'a> NewtonSystem<'a> {
    fn new(prog: &'a ConeProgram, it: &Iterate) -> Option<Self> {
        let scal = it
            .x
            .iter()
            .zip(&it.z)
            .map(|(x, z)| nt_scaling(x, z))
            .collect::<Option<Vec<_>>>()?;
        let m = prog.rows;
        let mut s = DMatrix::zeros(m, m);
        let mut p = DVector::zeros(m);
        let mut cwc = 0.0;
        for (blk, sc) in prog.blocks.iter().zip(&scal) {
            let waw: Vec<CMat> = blk.terms.iter().map(|(_, a)| &sc.w * a * &sc.w).collect();
            for (i, (li, _)) in blk.terms.iter().enumerate() {
                for (j, (lj, aj)) in blk.terms.iter().enumerate().skip(i) {
                    let v = herm_dot(aj, &waw[i]);
                    s[(*li, *lj)] += v;
                    if i != j {
                        s[(*lj, *li)] += v;
                    }
                }
            }
            if blk.cost != 0.0 {
                let w2 = &sc.w * &sc.w;
                for (l, a) in &blk.terms {
                    p[*l] += blk.cost * herm_dot(a, &w2);
                }
                cwc += blk.cost * blk.cost * sc.w.iter().map(|z| z.norm_sqr()).sum::<f64>();
            }
        }
        let schur = Schur::new(s)?;
        let v = schur.solve(&(&p + &prog.b));
        Some(NewtonSystem { prog, scal, schur, p, cwc, v })
    }

    fn solve(&self, it: &Iterate, res: &Residuals, eta: f64, rhs: &[CMat], rhs_tk: f64) -> Direction {
        let prog = self.prog;
        let nb = prog.blocks.len();
        let mut g = Vec::with_capacity(nb);
        let mut rc = Vec::with_capacity(nb);
        let mut wrw = Vec::with_capacity(nb);
        for b in 0..nb {
            let sc = &self.scal[b];
            let gb = lyap_diag(&sc.lambda, &rhs[b]);
            rc.push(&sc.r * &gb * sc.r.adjoint());
            g.push(gb);
            wrw.push(if eta != 0.0 { &sc.w * &res.dual[b] * &sc.w } else { CMat::zeros(sc.w.nrows(), sc.w.ncols()) });
        }
        let rhs1 = res.primal.scale(eta) - prog.apply(&rc) + prog.apply(&wrw).scale(eta);
        let u = self.schur.solve(&rhs1);
        let c_rc = prog.cost_dot(&rc);
        let c_wrw = prog.cost_dot(&wrw);
        let rhs_g = -eta * res.gap - c_rc + eta * c_wrw - rhs_tk / it.tau;
        let pb = &self.p - &prog.b;
        let denom = pb.dot(&self.v) - self.cwc - it.kappa / it.tau;
        let dtau = (rhs_g - pb.dot(&u)) / denom;
        let dy = &u + &self.v * dtau;
        let mut dx = Vec::with_capacity(nb);
        let mut dz = Vec::with_capacity(nb);
        let mut dx_scaled = Vec::with_capacity(nb);
        let mut dz_scaled = Vec::with_capacity(nb);
        for b in 0..nb {
            let blk = &prog.blocks[b];
            let sc = &self.scal[b];
            let mut dzb = res.dual[b].scale(eta) - prog.apply_adjoint_block(b, &dy);
            if blk.cost != 0.0 {
                for k in 0..blk.dim {
                    dzb[(k, k)] += C64::new(blk.cost * dtau, 0.0);
                }
            }
            let dzb = hermitize(&dzb);
            let dxb = hermitize(&(&rc[b] - &sc.w * &dzb * &sc.w));
            let dzs = hermitize(&(sc.r.adjoint() * &dzb * &sc.r));
            let dxs = &g[b] - &dzs;
            dx.push(dxb);
            dz.push(dzb);
            dx_scaled.push(hermitize(&dxs));
            dz_scaled.push(dzs);
        }
        let dkappa = (rhs_tk - it.kappa * dtau) / it.tau;
        Direction { dx, dz, dx_scaled, dz_scaled, dy, dtau, dkappa }
    }

    fn max_step(&self, it: &Iterate, d: &Direction) -> f64 {
        let mut alpha = f64::INFINITY;
        for (b, sc) in self.scal.iter().enumerate() {
            alpha = alpha.min(max_step_scaled(&sc.lambda, &d.dx_scaled[b]));
            alpha = alpha.min(max_step_scaled(&sc.lambda, &d.dz_scaled[b]));
        }
        if d.dtau < 0.0 {
            alpha = alpha.min(-it.tau / d.dtau);
        }
        if d.dkappa < 0.0 {
            alpha = alpha.min(-it.kappa / d.dkappa);
        }
        alpha
    }
}

fn normalized(it: &Iterate) -> (Vec<CMat>, DVector<f64>) {
    let x = it.x.iter().map(|x| x.unscale(it.tau)).collect();
    (x, it.y.unscale(it.tau))
}

fn max_entry(mats: &[CMat]) -> f64 {
    mats.iter().flat_map(|m| m.iter()).map(|z| z.norm()).fold(0.0, f64::max)
}

pub(crate) fn solve(prog: &ConeProgram, settings: IpmSettings, accept: &dyn Acceptance) -> IpmResult {
    let mut it = Iterate {
        x: prog.blocks.iter().map(|b| CMat::identity(b.dim, b.dim)).collect(),
        z: prog.blocks.iter().map(|b| CMat::identity(b.dim, b.dim)).collect(),
        y: DVector::zeros(prog.rows),
        tau: 1.0,
        kappa: 1.0,
    };
    let b_scale: Vec<f64> = prog.b.iter().map(|v| v.abs().max(1.0)).collect();
    let c_scale = 1.0 + prog.blocks.iter().map(|b| b.cost.abs()).fold(0.0, f64::max);

    // Best iterate by the worst of the three scaled residuals, returned when
    // the method stops short of the tolerances.
    let mut best: Option<(f64, Iterate, usize)> = None;
    let mut acceptable: Option<Iterate> = None;
    let mut acceptable_since = 0;
    let finish = |status: IpmStatus, it: &Iterate, iterations: usize| {
        let (x, y) = match status {
            IpmStatus::PrimalInfeasible | IpmStatus::DualInfeasible => (it.x.clone(), it.y.clone()),
            _ => normalized(it),
        };
        IpmResult { status, x, y, iterations }
    };

    for iter in 0..=settings.max_iterations {
        let res = prog.residuals(&it);

        let primal_res = res
            .primal
            .iter()
            .zip(&b_scale)
            .map(|(r, s)| r.abs() / s)
            .fold(0.0, f64::max)
            / it.tau;
        let dual_res = max_entry(&res.dual) / it.tau / c_scale;
        let pobj = res.primal_obj / it.tau;
        let dobj = res.dual_obj / it.tau;
        let rel_gap = relative_gap(pobj, dobj);
        let (xn, _) = normalized(&it);
        match accept.grade(&xn, primal_res, dual_res, rel_gap) {
            Verdict::Converged => return finish(IpmStatus::Optimal, &it, iter),
            Verdict::Acceptable => {
                if acceptable.is_none() {
                    acceptable_since = iter;
                }
                acceptable = Some(it.clone());
            }
            Verdict::Reject => {}
        }
        let merit = primal_res.max(dual_res).max(rel_gap);
        if merit.is_finite() && best.as_ref().is_none_or(|(m, _, _)| merit < *m) {
            best = Some((merit, it.clone(), iter));
        }
        let stop = |status: IpmStatus, best: &Option<(f64, Iterate, usize)>, it: &Iterate, iter: usize| {
            if let Some(a) = &acceptable {
                return finish(IpmStatus::Optimal, a, iter);
            }
            match best {
                Some((_, b, _)) => finish(status, b, iter),
                None => finish(status, it, iter),
            }
        };
        if acceptable.is_some() && iter >= acceptable_since + EXTRA_ITERATIONS {
            return stop(IpmStatus::Optimal, &best, &it, iter);
        }

        // Certificates of infeasibility.
        if res.dual_obj > 0.0 {
            let ray: Vec<CMat> = (0..prog.blocks.len())
                .map(|b| prog.apply_adjoint_block(b, &it.y) + &it.z[b])
                .collect();
            if max_entry(&ray) <= settings.infeasibility * res.dual_obj {
                return finish(IpmStatus::PrimalInfeasible, &it, iter);
            }
        }
        if res.primal_obj < 0.0 {
            let ax = prog.apply(&it.x);
            if ax.amax() <= settings.infeasibility * (-res.primal_obj) {
                return finish(IpmStatus::DualInfeasible, &it, iter);
            }
        }
        if iter == settings.max_iterations {
            return stop(IpmStatus::IterationLimit, &best, &it, iter);
        }
        if !(res.mu > 0.0) {
            return stop(IpmStatus::NumericalTrouble, &best, &it, iter);
        }

        let Some(newton) = NewtonSystem::new(prog, &it) else {
            return stop(IpmStatus::NumericalTrouble, &best, &it, iter);
        };

        // Predictor (affine scaling) direction.
        let rhs_aff: Vec<CMat> = newton
            .scal
            .iter()
            .map(|sc| CMat::from_diagonal(&nalgebra::DVector::from_iterator(
                sc.lambda.len(),
                sc.lambda.iter().map(|l| C64::new(-l * l, 0.0)),
            )))
            .collect();
        let aff = newton.solve(&it, &res, 1.0, &rhs_aff, -it.tau * it.kappa);
        let alpha_aff = newton.max_step(&it, &aff).min(1.0);
        let sigma = (1.0 - alpha_aff).max(0.0).powi(SIGMA_EXPONENT);

        // Combined corrector direction.
        let sigma_mu = sigma * res.mu;
        let rhs_cc: Vec<CMat> = newton
            .scal
            .iter()
            .enumerate()
            .map(|(b, sc)| {
                let mut r = -jordan(&aff.dx_scaled[b], &aff.dz_scaled[b]);
                for (k, l) in sc.lambda.iter().enumerate() {
                    r[(k, k)] += C64::new(sigma_mu - l * l, 0.0);
                }
                r
            })
            .collect();
        let rhs_tk = sigma_mu - it.tau * it.kappa - aff.dtau * aff.dkappa;
        let dir = newton.solve(&it, &res, 1.0 - sigma, &rhs_cc, rhs_tk);
        let alpha = (STEP_FRACTION * newton.max_step(&it, &dir)).min(1.0);
        if !(alpha > 1e-8) || !alpha.is_finite() {
            return stop(IpmStatus::NumericalTrouble, &best, &it, iter);
        }

        for b in 0..prog.blocks.len() {
            it.x[b] = hermitize(&(&it.x[b] + dir.dx[b].scale(alpha)));
            it.z[b] = hermitize(&(&it.z[b] + dir.dz[b].scale(alpha)));
        }
        it.y += &dir.dy * alpha;
        it.tau += alpha * dir.dtau;
        it.kappa += alpha * dir.dkappa;
        if !(it.tau > 0.0 && it.kappa > 0.0) {
            return stop(IpmStatus::NumericalTrouble, &best, &it, iter + 1);
        }
    }
    unreachable!("the loop returns at the iteration limit")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nt_scaling_identity() {
        let x = CMat::from_row_slice(2, 2, &[C64::new(2.0, 0.0), C64::new(0.5, 0.3), C64::new(0.5, -0.3), C64::new(1.0, 0.0)]);
        let z = CMat::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(-0.2, 0.1), C64::new(-0.2, -0.1), C64::new(3.0, 0.0)]);
        let sc = nt_scaling(&x, &z).unwrap();
        // W Z W = X
        let wzw = &sc.w * &z * &sc.w;
        assert!((wzw - &x).iter().all(|e| e.norm() < 1e-12));
        // R⁻¹ X R⁻ᴴ = Rᴴ Z R = Λ
        let rzr = sc.r.adjoint() * &z * &sc.r;
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { sc.lambda[i] } else { 0.0 };
                assert!((rzr[(i, j)] - C64::new(expect, 0.0)).norm() < 1e-12);
            }
        }
    }
}
