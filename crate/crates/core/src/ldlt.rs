//! Symmetric-indefinite LDLᵀ factorization with Bunch-Kaufman partial
//! pivoting (1×1 and 2×2 pivot blocks).
//!
//! KKT matrices are symmetric but indefinite, and valid ones can have zeros
//! on the diagonal (e.g. the trailing constraint block), so an unpivoted
//! LDLᵀ is not enough: 2×2 pivots are what make systems like
//! [[0, 1], [1, 0]] factorizable.
//!
//! The factorization computes P M Pᵀ = L D Lᵀ with L unit lower triangular
//! and D block diagonal. Only the lower triangle of the input is referenced.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

const ALPHA: f64 = 0.6403882032022076; // (1 + sqrt(17)) / 8

#[derive(Debug, Clone, Copy, PartialEq)]
enum Block {
    /// 1×1 pivot at this index.
    Single(usize),
    /// 2×2 pivot at (index, index+1).
    Double(usize),
}

#[derive(Debug, Clone)]
pub struct LdltFactor {
    /// Strictly-lower part holds L; diagonal (and the subdiagonal inside 2×2
    /// blocks) holds D.
    w: Vec<f64>,
    n: usize,
    perm: Vec<usize>,
    blocks: Vec<Block>,
    /// double_start[j] marks column j as the first column of a 2×2 D block,
    /// whose subdiagonal entry w[j+1][j] is part of D, not L.
    double_start: Vec<bool>,
}

/// Factorizes a symmetric matrix given as a full DenseMatrix (the strictly
/// upper triangle is ignored).
pub fn factorize(m: &DenseMatrix) -> Result<LdltFactor> {
    let n = m.rows();
    assert_eq!(n, m.cols(), "LDLᵀ needs a square matrix");
    let mut w = m.data().to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut blocks = Vec::new();
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    let tiny = 1e-14 * scale;

    // Symmetric value at (i, j) within the active trailing block, reading
    // only the lower triangle.
    let at = |w: &[f64], i: usize, j: usize| -> f64 {
        if i >= j {
            w[i * n + j]
        } else {
            w[j * n + i]
        }
    };

    let mut k = 0;
    while k < n {
        let absakk = w[k * n + k].abs();
        // largest subdiagonal entry of column k
        let mut colmax = 0.0;
        let mut imax = k;
        for i in (k + 1)..n {
            let v = w[i * n + k].abs();
            if v > colmax {
                colmax = v;
                imax = i;
            }
        }

        if absakk.max(colmax) <= tiny {
            return Err(Error::SingularKkt { pivot_index: k });
        }

        let block = if absakk >= ALPHA * colmax {
            Block::Single(k)
        } else {
            // largest off-diagonal entry in row/column imax of the trailing block
            let mut rowmax = 0.0_f64;
            for j in k..n {
                if j != imax {
                    rowmax = rowmax.max(at(&w, imax, j).abs());
                }
            }
            if absakk * rowmax >= ALPHA * colmax * colmax {
                Block::Single(k)
            } else if w[imax * n + imax].abs() >= ALPHA * rowmax {
                swap_sym(&mut w, n, k, imax, k);
                perm.swap(k, imax);
                Block::Single(k)
            } else {
                if imax != k + 1 {
                    swap_sym(&mut w, n, k + 1, imax, k);
                    perm.swap(k + 1, imax);
                }
                Block::Double(k)
            }
        };

        match block {
            Block::Single(_) => {
                let d = w[k * n + k];
                if d.abs() <= tiny {
                    return Err(Error::SingularKkt { pivot_index: k });
                }
                // Update the trailing block first: column k must keep its
                // original values until every row has consumed them.
                for i in (k + 1)..n {
                    let l = w[i * n + k] / d;
                    for j in (k + 1)..=i {
                        w[i * n + j] -= l * w[j * n + k];
                    }
                }
                for i in (k + 1)..n {
                    w[i * n + k] /= d;
                }
                k += 1;
            }
            Block::Double(_) => {
                let d11 = w[k * n + k];
                let d21 = w[(k + 1) * n + k];
                let d22 = w[(k + 1) * n + k + 1];
                let det = d11 * d22 - d21 * d21;
                if det.abs() <= tiny * tiny {
                    return Err(Error::SingularKkt { pivot_index: k });
                }
                // (l1, l2) = (wk, wk1) · D⁻¹ per row; computed up front so the
                // trailing update below reads the original two columns.
                let ls: Vec<(f64, f64)> = ((k + 2)..n)
                    .map(|i| {
                        let wk = w[i * n + k];
                        let wk1 = w[i * n + k + 1];
                        (
                            (wk * d22 - wk1 * d21) / det,
                            (wk1 * d11 - wk * d21) / det,
                        )
                    })
                    .collect();
                for i in (k + 2)..n {
                    let (l1, l2) = ls[i - k - 2];
                    for j in (k + 2)..=i {
                        w[i * n + j] -= l1 * w[j * n + k] + l2 * w[j * n + k + 1];
                    }
                }
                for i in (k + 2)..n {
                    let (l1, l2) = ls[i - k - 2];
                    w[i * n + k] = l1;
                    w[i * n + k + 1] = l2;
                }
                k += 2;
            }
        }
        blocks.push(block);
    }

    let mut double_start = vec![false; n];
    for b in &blocks {
        if let Block::Double(i) = b {
            double_start[*i] = true;
        }
    }
    Ok(LdltFactor { w, n, perm, blocks, double_start })
}

/// Symmetric row/column swap a ↔ b (a < b) confined to the lower triangle,
/// also swapping the already-computed L rows in columns [0, k).
fn swap_sym(w: &mut [f64], n: usize, a: usize, b: usize, k: usize) {
    debug_assert!(a < b);
    for j in 0..k.min(a) {
        w.swap(a * n + j, b * n + j);
    }
    for j in k..a {
        w.swap(a * n + j, b * n + j);
    }
    w.swap(a * n + a, b * n + b);
    for i in (a + 1)..b {
        w.swap(i * n + a, b * n + i);
    }
    for i in (b + 1)..n {
        w.swap(i * n + a, i * n + b);
    }
}

impl LdltFactor {
    /// Solves M X = rhs for all columns of rhs.
    pub fn solve(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if rhs.rows() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "LDLᵀ solve: rhs has {} rows, matrix is {}x{}",
                rhs.rows(),
                self.n,
                self.n
            )));
        }
        let n = self.n;
        let m = rhs.cols();
        let w = &self.w;
        // y = P rhs
        let mut x = DenseMatrix::zeros(n, m);
        for i in 0..n {
            x.row_mut(i).copy_from_slice(rhs.row(self.perm[i]));
        }
        let xd = x.data_mut();
        // L z = y  (unit lower)
        for i in 0..n {
            for j in 0..i {
                let l = w[i * n + j];
                if l != 0.0 && !self.is_d_offdiag(i, j) {
                    for t in 0..m {
                        xd[i * m + t] -= l * xd[j * m + t];
                    }
                }
            }
        }
        // D w = z  (block diagonal)
        for block in &self.blocks {
            match *block {
                Block::Single(i) => {
                    let d = w[i * n + i];
                    for t in 0..m {
                        xd[i * m + t] /= d;
                    }
                }
                Block::Double(i) => {
                    let d11 = w[i * n + i];
                    let d21 = w[(i + 1) * n + i];
                    let d22 = w[(i + 1) * n + i + 1];
                    let det = d11 * d22 - d21 * d21;
                    for t in 0..m {
                        let z1 = xd[i * m + t];
                        let z2 = xd[(i + 1) * m + t];
                        xd[i * m + t] = (d22 * z1 - d21 * z2) / det;
                        xd[(i + 1) * m + t] = (d11 * z2 - d21 * z1) / det;
                    }
                }
            }
        }
        // Lᵀ v = w
        for i in (0..n).rev() {
            for j in (i + 1)..n {
                let l = w[j * n + i];
                if l != 0.0 && !self.is_d_offdiag(j, i) {
                    for t in 0..m {
                        xd[i * m + t] -= l * xd[j * m + t];
                    }
                }
            }
        }
        // out = Pᵀ v
        let mut out = DenseMatrix::zeros(n, m);
        for i in 0..n {
            out.row_mut(self.perm[i]).copy_from_slice(&x.row(i)[..]);
        }
        Ok(out)
    }

    /// True when (i, j), i > j, is the subdiagonal entry inside a 2×2 D
    /// block rather than an L entry.
    #[inline]
    fn is_d_offdiag(&self, i: usize, j: usize) -> bool {
        i == j + 1 && self.double_start[j]
    }
}
