//! Full-rate real-valued orthogonal space-time block codes.
//!
//! A code of dimension `K` is a set of `K` real `K × K` coefficient matrices
//! `C_k`; a symbol vector `u` is mapped to the block `𝒳(u) = Σ u_k C_k`. For
//! real `u` the block satisfies `𝒳ᵀ(u)𝒳(u) = ‖u‖² I`. Only `K ∈ {1, 2, 4, 8}`
//! admit full-rate real codes.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, C64};

pub const CODE_DIMENSIONS: [usize; 4] = [1, 2, 4, 8];

// Signed 1-based symbol index of every block entry, row by row.
const TABLE_1: [[i8; 1]; 1] = [[1]];

const TABLE_2: [[i8; 2]; 2] = [[1, 2], [-2, 1]];

const TABLE_4: [[i8; 4]; 4] = [
    [1, 2, 3, 4],
    [-2, 1, -4, 3],
    [-3, 4, 1, -2],
    [-4, -3, 2, 1],
];

const TABLE_8: [[i8; 8]; 8] = [
    [1, 2, 3, 4, 5, 6, 7, 8],
    [-2, 1, 4, -3, 6, -5, -8, 7],
    [-3, -4, 1, 2, 7, 8, -5, -6],
    [-4, 3, -2, 1, 8, -7, 6, -5],
    [-5, -6, -7, -8, 1, 2, 3, 4],
    [-6, 5, -8, 7, -2, 1, -4, 3],
    [-7, 8, 5, -6, -3, 4, 1, -2],
    [-8, -7, 6, 5, -4, -3, 2, 1],
];

/// A real-valued OSTBC of dimension `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct OstbcCode {
    k: usize,
    /// `layout[r][c] = (sign, symbol)` such that `𝒳(u)[r][c] = sign · u[symbol]`.
    layout: Vec<Vec<(f64, usize)>>,
}

/// One encoded block `𝒳(u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeBlock {
    pub entries: CMat,
}

/// Builds the code of dimension `k`.
pub fn build_code(k: usize) -> Result<OstbcCode> {
    let rows: Vec<Vec<i8>> = match k {
        1 => TABLE_1.iter().map(|r| r.to_vec()).collect(),
        2 => TABLE_2.iter().map(|r| r.to_vec()).collect(),
        4 => TABLE_4.iter().map(|r| r.to_vec()).collect(),
        8 => TABLE_8.iter().map(|r| r.to_vec()).collect(),
        other => return Err(Error::UnsupportedCodeDimension(other)),
    };
    let layout = rows
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|s| (f64::from(s.signum()), s.unsigned_abs() as usize - 1))
                .collect()
        })
        .collect();
    Ok(OstbcCode { k, layout })
}

impl OstbcCode {
    pub fn dimension(&self) -> usize {
        self.k
    }

    /// The coefficient matrix `C_k` (0-based `k`).
    pub fn coefficient(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.k, self.k, |r, c| {
            let (sign, sym) = self.layout[r][c];
            if sym == k {
                sign
            } else {
                0.0
            }
        })
    }

    pub fn coefficients(&self) -> Vec<DMatrix<f64>> {
        (0..self.k).map(|k| self.coefficient(k)).collect()
    }

    /// `(sign, symbol)` of block entry `(r, c)`.
    pub fn entry(&self, r: usize, c: usize) -> (f64, usize) {
        self.layout[r][c]
    }

    /// `𝒳(u) = Σ u_k C_k`.
    pub fn encode(&self, u: &CVec) -> Result<CodeBlock> {
        self.check_len(u.len())?;
        Ok(CodeBlock {
            entries: self.block(u.as_slice()),
        })
    }

    /// `𝒳(u)` for a real vector.
    pub fn encode_real(&self, u: &[f64]) -> Result<DMatrix<f64>> {
        self.check_len(u.len())?;
        Ok(DMatrix::from_fn(self.k, self.k, |r, c| {
            let (sign, sym) = self.layout[r][c];
            sign * u[sym]
        }))
    }

    pub(crate) fn block(&self, u: &[C64]) -> CMat {
        CMat::from_fn(self.k, self.k, |r, c| {
            let (sign, sym) = self.layout[r][c];
            u[sym] * sign
        })
    }

    /// Equalizes a sign-adjusted receive vector:
    /// `ŝ = 𝒳ᴴ(g) ỹ / ‖g‖²` for a real virtual channel `g = Wᴴh`.
    pub fn equalize(&self, g: &[f64], y_tilde: &CVec) -> Result<CVec> {
        self.check_len(g.len())?;
        self.check_len(y_tilde.len())?;
        let energy: f64 = g.iter().map(|v| v * v).sum();
        if energy == 0.0 {
            return Err(Error::ZeroVirtualChannel);
        }
        // 𝒳ᴴ(g) = 𝒳ᵀ(g) for real g.
        let mut out = CVec::zeros(self.k);
        for r in 0..self.k {
            for c in 0..self.k {
                let (sign, sym) = self.layout[r][c];
                out[c] += y_tilde[r] * (sign * g[sym]);
            }
        }
        Ok(out.unscale(energy))
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.k {
            return Err(Error::DimensionMismatch(format!(
                "symbol vector of length {len} for code dimension {}",
                self.k
            )));
        }
        Ok(())
    }
}

/// The sign pattern `[1, −1, …, −1]` mapping `y` to `ỹ`.
pub fn sign_adjust(y: &CVec) -> CVec {
    CVec::from_fn(y.len(), |i, _| if i == 0 { y[i] } else { -y[i] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Complex;

    fn c(re: f64, im: f64) -> C64 {
        Complex::new(re, im)
    }

    #[test]
    fn alamouti_real_layout() {
        let code = build_code(2).unwrap();
        let x = code.encode_real(&[1.5, -2.0]).unwrap();
        assert_eq!(x, DMatrix::from_row_slice(2, 2, &[1.5, -2.0, 2.0, 1.5]));
    }

    #[test]
    fn scalar_code() {
        let code = build_code(1).unwrap();
        let x = code.encode_real(&[3.0]).unwrap();
        assert_eq!(x[(0, 0)], 3.0);
        assert_eq!(code.coefficient(0), DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn eight_dim_row_five() {
        let code = build_code(8).unwrap();
        let u: Vec<f64> = (1..=8).map(f64::from).collect();
        let x = code.encode_real(&u).unwrap();
        let row: Vec<f64> = x.row(4).iter().copied().collect();
        assert_eq!(row, vec![-5.0, -6.0, -7.0, -8.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn rejects_unsupported_dimension() {
        for k in [0, 3, 5, 6, 7, 9, 16] {
            assert!(matches!(build_code(k), Err(Error::UnsupportedCodeDimension(_))));
        }
    }

    #[test]
    fn coefficients_are_signed_permutations() {
        for k in CODE_DIMENSIONS {
            let code = build_code(k).unwrap();
            for ck in code.coefficients() {
                for r in 0..k {
                    let nz: Vec<f64> = ck.row(r).iter().copied().filter(|v| *v != 0.0).collect();
                    assert_eq!(nz.len(), 1);
                    assert!(nz[0].abs() == 1.0);
                }
                for col in 0..k {
                    assert_eq!(ck.column(col).iter().filter(|v| **v != 0.0).count(), 1);
                }
            }
            // each symbol exactly once per row
            for r in 0..k {
                let mut seen = vec![false; k];
                for col in 0..k {
                    let (_, s) = code.entry(r, col);
                    assert!(!seen[s]);
                    seen[s] = true;
                }
            }
        }
    }

    #[test]
    fn basis_vector_selects_first_coefficient() {
        let code = build_code(4).unwrap();
        let mut u = CVec::zeros(4);
        u[0] = c(1.0, 0.0);
        let blk = code.encode(&u).unwrap();
        assert_eq!(blk.entries, CMat::identity(4, 4));
    }

    #[test]
    fn complex_alamouti() {
        let code = build_code(2).unwrap();
        let u = CVec::from_vec(vec![c(1.0, 0.0), c(0.0, 1.0)]);
        let blk = code.encode(&u).unwrap().entries;
        let expect = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(1.0, 0.0)]);
        assert_eq!(blk, expect);
    }

    #[test]
    fn encode_dimension_mismatch() {
        let code = build_code(4).unwrap();
        assert!(matches!(code.encode(&CVec::zeros(3)), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn equalize_scaled_basis_channel() {
        // g = c·e₁ ⇒ 𝒳ᴴ(g) = c·C₁ᵀ = c·I, so ŝ = ỹ / c.
        let code = build_code(4).unwrap();
        let g = [2.0, 0.0, 0.0, 0.0];
        let y = CVec::from_vec(vec![c(1.0, 1.0), c(-2.0, 0.5), c(0.0, 3.0), c(4.0, -1.0)]);
        let s = code.equalize(&g, &y).unwrap();
        for i in 0..4 {
            assert!((s[i] - y[i] / 2.0).norm() < 1e-15);
        }
    }

    #[test]
    fn equalize_zero_channel() {
        let code = build_code(2).unwrap();
        let y = CVec::zeros(2);
        assert!(matches!(code.equalize(&[0.0, 0.0], &y), Err(Error::ZeroVirtualChannel)));
    }
}
