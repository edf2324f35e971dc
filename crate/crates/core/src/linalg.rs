//! Dense symmetric solvers used by the kernel ridge and logistic fits.
//!
//! The positive-definite path is a blocked right-looking Cholesky whose
//! trailing update goes through `ndarray`'s GEMM, so large solves stay fast.
//! A partially pivoted LU is kept as the fallback for matrices that fail the
//! leading-minor test through roundoff.

use ndarray::{s, Array1, Array2};

use crate::error::{Error, Result};

const BLOCK: usize = 64;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Array2<f64>,
}

impl Cholesky {
    /// Factor `a` (symmetric, only the lower triangle is read) as L·Lᵀ.
    /// Returns `None` when a pivot is non-positive or non-finite.
    pub fn new(a: &Array2<f64>) -> Option<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "Cholesky needs a square matrix");
        let mut l = a.clone();

        let mut k = 0;
        while k < n {
            let kb = BLOCK.min(n - k);

            // Unblocked factorization of the diagonal block.
            for j in k..k + kb {
                let mut d = l[[j, j]];
                for t in k..j {
                    d -= l[[j, t]] * l[[j, t]];
                }
                if !(d > 0.0) || !d.is_finite() {
                    return None;
                }
                let dj = d.sqrt();
                l[[j, j]] = dj;
                for i in j + 1..k + kb {
                    let mut v = l[[i, j]];
                    for t in k..j {
                        v -= l[[i, t]] * l[[j, t]];
                    }
                    l[[i, j]] = v / dj;
                }
            }

            let rest = k + kb;
            if rest < n {
                // Panel solve: L[rest.., k..rest] ← L[rest.., k..rest] · L_kkᵀ⁻¹.
                for i in rest..n {
                    for j in k..rest {
                        let mut v = l[[i, j]];
                        for t in k..j {
                            v -= l[[i, t]] * l[[j, t]];
                        }
                        l[[i, j]] = v / l[[j, j]];
                    }
                }
                // Trailing update: A₂₂ ← A₂₂ − P·Pᵀ.
                let panel = l.slice(s![rest.., k..rest]).to_owned();
                let update = panel.dot(&panel.t());
                let mut trailing = l.slice_mut(s![rest.., rest..]);
                trailing -= &update;
            }
            k += kb;
        }
        for i in 0..n {
            for j in i + 1..n {
                l[[i, j]] = 0.0;
            }
        }
        Some(Self { l })
    }

    pub fn solve(&self, b: &Array1<f64>) -> Array1<f64> {
        let n = self.l.nrows();
        assert_eq!(b.len(), n);
        let mut x = b.clone();
        // L z = b
        for i in 0..n {
            let mut v = x[i];
            for j in 0..i {
                v -= self.l[[i, j]] * x[j];
            }
            x[i] = v / self.l[[i, i]];
        }
        // Lᵀ x = z
        for i in (0..n).rev() {
            let mut v = x[i];
            for j in i + 1..n {
                v -= self.l[[j, i]] * x[j];
            }
            x[i] = v / self.l[[i, i]];
        }
        x
    }
}

/// LU decomposition with partial pivoting; the fallback solve path.
pub fn solve_lu(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    if n != a.ncols() || b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "lu solve: matrix {}x{}, rhs {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    let mut perm: Vec<usize> = (0..n).collect();

    for k in 0..n {
        let mut piv = k;
        let mut best = lu[[k, k]].abs();
        for i in k + 1..n {
            let v = lu[[i, k]].abs();
            if v > best {
                best = v;
                piv = i;
            }
        }
        if best == 0.0 || !best.is_finite() {
            return Err(Error::Numerical(format!(
                "singular matrix in pivoted solve: pivot {} has magnitude {}",
                k, best
            )));
        }
        if piv != k {
            perm.swap(k, piv);
            for j in 0..n {
                let tmp = lu[[k, j]];
                lu[[k, j]] = lu[[piv, j]];
                lu[[piv, j]] = tmp;
            }
            let tmp = x[k];
            x[k] = x[piv];
            x[piv] = tmp;
        }
        let d = lu[[k, k]];
        for i in k + 1..n {
            let m = lu[[i, k]] / d;
            lu[[i, k]] = m;
            if m != 0.0 {
                for j in k + 1..n {
                    lu[[i, j]] -= m * lu[[k, j]];
                }
                x[i] -= m * x[k];
            }
        }
    }
    for i in (0..n).rev() {
        let mut v = x[i];
        for j in i + 1..n {
            v -= lu[[i, j]] * x[j];
        }
        x[i] = v / lu[[i, i]];
    }
    Ok(x)
}
