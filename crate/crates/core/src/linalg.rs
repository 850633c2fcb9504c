//! Small dense complex linear-algebra helpers shared by the solver modules.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const J: C64 = Complex { re: 0.0, im: 1.0 };

/// Real inner product `Re Tr(Aᴴ B)`; equals `Tr(A B)` when `A` is Hermitian.
pub fn herm_dot(a: &CMat, b: &CMat) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

pub fn real_trace(a: &CMat) -> f64 {
    a.diagonal().iter().map(|z| z.re).sum()
}

/// Symmetrize to `(A + Aᴴ) / 2`.
pub fn hermitize(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

pub fn hermitian_defect(a: &CMat) -> f64 {
    (a - a.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn max_abs(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order. Columns of the returned matrix are the eigenvectors.
pub fn eigh_desc(a: &CMat) -> (Vec<f64>, CMat) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), CMat::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(hermitize(a));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn min_eigenvalue(a: &CMat) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(hermitize(a))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Factor `X ≈ Q Qᴴ` keeping only the eigenpairs with eigenvalue at least
/// `rel_threshold · Tr(X)`. Returns an `N × r` matrix.
pub fn psd_factor(x: &CMat, rel_threshold: f64) -> CMat {
    let (values, vectors) = eigh_desc(x);
    let trace: f64 = values.iter().sum();
    let keep = count_above(&values, rel_threshold * trace);
    let mut q = CMat::zeros(x.nrows(), keep);
    for c in 0..keep {
        let s = values[c].sqrt();
        for r in 0..x.nrows() {
            q[(r, c)] = vectors[(r, c)] * s;
        }
    }
    q
}

/// Factor `X ≈ Q Qᴴ` dropping the smallest eigenpairs (and every nonpositive
/// one) as long as their total stays within `rel_tail · Tr(X)`, so that
/// `‖X − Q Qᴴ‖ ≤ rel_tail · Tr(X)` up to the negative part of the spectrum.
pub fn psd_factor_tail(x: &CMat, rel_tail: f64) -> CMat {
    let (values, vectors) = eigh_desc(x);
    let trace: f64 = values.iter().filter(|v| **v > 0.0).sum();
    let mut keep = values.iter().take_while(|v| **v > 0.0).count();
    let mut dropped = 0.0;
    while keep > 0 && dropped + values[keep - 1] <= rel_tail * trace {
        dropped += values[keep - 1];
        keep -= 1;
    }
    let mut q = CMat::zeros(x.nrows(), keep);
    for c in 0..keep {
        let s = values[c].sqrt();
        for r in 0..x.nrows() {
            q[(r, c)] = vectors[(r, c)] * s;
        }
    }
    q
}

pub(crate) fn count_above(desc_values: &[f64], cutoff: f64) -> usize {
    if cutoff <= 0.0 && desc_values.iter().all(|v| *v <= 0.0) {
        return 0;
    }
    desc_values.iter().take_while(|&&v| v > 0.0 && v >= cutoff).count()
}

/// Frobenius norm of a complex vector.
pub fn vec_norm_sqr(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

pub fn outer(a: &CVec, b: &CVec) -> CMat {
    a * b.adjoint()
}
