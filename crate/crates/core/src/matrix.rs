//! Row-major dense matrices and the handful of BLAS-level kernels everything
//! else is built on.
//!
//! The multiply kernels delegate to `matrixmultiply::dgemm`; transposition is
//! expressed through strides, so no operand is ever materialized transposed.

use crate::error::{Error, Result};

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major data, validating length and finiteness.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "matrix data length {} != {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData(format!(
                "entry ({}, {}) is {}",
                pos / cols.max(1),
                pos % cols.max(1),
                data[pos]
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |v| v.len());
        if rows.iter().any(|v| v.len() != c) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        DenseMatrix::new(r, c, rows.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn set_col(&mut self, j: usize, v: &[f64]) {
        assert_eq!(v.len(), self.rows, "set_col length");
        for i in 0..self.rows {
            self.set(i, j, v[i]);
        }
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// Copies rows [r0, r1) into a new matrix.
    pub fn row_block(&self, r0: usize, r1: usize) -> DenseMatrix {
        assert!(r0 <= r1 && r1 <= self.rows, "row_block range");
        DenseMatrix {
            rows: r1 - r0,
            cols: self.cols,
            data: self.data[r0 * self.cols..r1 * self.cols].to_vec(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// self += s * other (shapes must agree).
    pub fn add_scaled(&mut self, other: &DenseMatrix, s: f64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "add_scaled shape");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn sub(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "sub shape");
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        DenseMatrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Frobenius inner product <self, other>.
    pub fn frob_dot(&self, other: &DenseMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "frob_dot shape");
        dot(&self.data, &other.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// C = alpha * op(A) * op(B) + beta * C, with op = transpose when requested.
///
/// Shapes are checked against C; panics on mismatch (callers establish shape
/// contracts at API boundaries).
pub fn gemm_into(
    alpha: f64,
    a: &DenseMatrix,
    trans_a: bool,
    b: &DenseMatrix,
    trans_b: bool,
    beta: f64,
    c: &mut DenseMatrix,
) {
    let (am, ak) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (bk, bn) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(ak, bk, "gemm inner dimensions");
    assert_eq!((c.rows, c.cols), (am, bn), "gemm output shape");
    if am == 0 || bn == 0 {
        return;
    }
    if ak == 0 {
        if beta == 0.0 {
            c.data.fill(0.0);
        } else if beta != 1.0 {
            c.scale(beta);
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if trans_b { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: dimensions and strides describe exactly the allocations held by
    // a, b, c, as checked above.
    unsafe {
        matrixmultiply::dgemm(
            am,
            ak,
            bn,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

/// A * B.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let mut c = DenseMatrix::zeros(a.rows, b.cols);
    gemm_into(1.0, a, false, b, false, 0.0, &mut c);
    c
}

/// Aᵀ * B.
pub fn matmul_at_b(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let mut c = DenseMatrix::zeros(a.cols, b.cols);
    gemm_into(1.0, a, true, b, false, 0.0, &mut c);
    c
}

/// A * Bᵀ.
pub fn matmul_a_bt(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let mut c = DenseMatrix::zeros(a.rows, b.rows);
    gemm_into(1.0, a, false, b, true, 0.0, &mut c);
    c
}

/// AᵀA computed block-wise on the upper triangle only, then mirrored, so the
/// result is exactly symmetric and costs roughly half of a general multiply.
pub fn syrk_ata(a: &DenseMatrix) -> DenseMatrix {
    const BLOCK: usize = 96;
    let n = a.cols;
    let k = a.rows;
    let mut g = DenseMatrix::zeros(n, n);
    if n == 0 {
        return g;
    }
    if k == 0 {
        return g;
    }
    let nb = n.div_ceil(BLOCK);
    for bi in 0..nb {
        let i0 = bi * BLOCK;
        let i1 = (i0 + BLOCK).min(n);
        for bj in bi..nb {
            let j0 = bj * BLOCK;
            let j1 = (j0 + BLOCK).min(n);
            // G[i0..i1, j0..j1] = A[:, i0..i1]ᵀ A[:, j0..j1]
            // SAFETY: strides address submatrices of a and g within bounds.
            unsafe {
                matrixmultiply::dgemm(
                    i1 - i0,
                    k,
                    j1 - j0,
                    1.0,
                    a.data.as_ptr().add(i0),
                    1,
                    a.cols as isize,
                    a.data.as_ptr().add(j0),
                    a.cols as isize,
                    1,
                    0.0,
                    g.data.as_mut_ptr().add(i0 * n + j0),
                    n as isize,
                    1,
                );
            }
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let v = g.data[i * n + j];
            g.data[j * n + i] = v;
        }
    }
    g
}

/// y = A x  (hand loop; used by the iterative solver on skinny shapes).
pub fn matvec(a: &DenseMatrix, x: &[f64], y: &mut [f64]) {
    assert_eq!(x.len(), a.cols, "matvec input length");
    assert_eq!(y.len(), a.rows, "matvec output length");
    for i in 0..a.rows {
        y[i] = dot(a.row(i), x);
    }
}

/// y = Aᵀ x.
pub fn matvec_t(a: &DenseMatrix, x: &[f64], y: &mut [f64]) {
    assert_eq!(x.len(), a.rows, "matvec_t input length");
    assert_eq!(y.len(), a.cols, "matvec_t output length");
    y.fill(0.0);
    for i in 0..a.rows {
        let xi = x[i];
        if xi == 0.0 {
            continue;
        }
        for (yj, aij) in y.iter_mut().zip(a.row(i)) {
            *yj += xi * aij;
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += s * x.
#[inline]
pub fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_length_and_nonfinite() {
        assert!(matches!(
            DenseMatrix::new(2, 2, vec![1.0; 3]),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            DenseMatrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFiniteData(_))
        ));
        assert!(DenseMatrix::new(2, 2, vec![1.0; 4]).is_ok());
    }

    #[test]
    fn matmul_small_known() {
        let a = DenseMatrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = DenseMatrix::new(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = matmul(&a, &b);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let mut rng: u64 = 0x9e3779b97f4a7c15;
        let mut next = move || {
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            (rng >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let a = DenseMatrix::from_fn(7, 4, |_, _| next());
        let b = DenseMatrix::from_fn(7, 3, |_, _| next());
        let atb = matmul_at_b(&a, &b);
        let atb_ref = matmul(&a.transpose(), &b);
        assert!(atb.sub(&atb_ref).max_abs() < 1e-14);

        let c = DenseMatrix::from_fn(5, 4, |_, _| next());
        let abt = matmul_a_bt(&c, &a);
        let abt_ref = matmul(&c, &a.transpose());
        assert!(abt.sub(&abt_ref).max_abs() < 1e-14);
    }

    #[test]
    fn syrk_matches_gemm_and_is_exactly_symmetric() {
        let mut state: u64 = 42;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for (k, n) in [(5, 3), (40, 17), (30, 200), (3, 97)] {
            let a = DenseMatrix::from_fn(k, n, |_, _| next());
            let g = syrk_ata(&a);
            let g_ref = matmul_at_b(&a, &a);
            assert!(g.sub(&g_ref).max_abs() < 1e-12 * (k as f64));
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(g.get(i, j).to_bits(), g.get(j, i).to_bits());
                }
            }
        }
    }

    #[test]
    fn matvec_agrees_with_gemm() {
        let a = DenseMatrix::from_fn(6, 4, |i, j| (i * 4 + j) as f64 * 0.3 - 2.0);
        let x = vec![0.5, -1.0, 2.0, 0.25];
        let mut y = vec![0.0; 6];
        matvec(&a, &x, &mut y);
        let xm = DenseMatrix::new(4, 1, x.clone()).unwrap();
        let y_ref = matmul(&a, &xm);
        for i in 0..6 {
            assert!((y[i] - y_ref.get(i, 0)).abs() < 1e-14);
        }
        let z = vec![1.0, -0.5, 0.0, 2.0, 1.5, -1.0];
        let mut w = vec![0.0; 4];
        matvec_t(&a, &z, &mut w);
        let zm = DenseMatrix::new(6, 1, z).unwrap();
        let w_ref = matmul_at_b(&a, &zm);
        for j in 0..4 {
            assert!((w[j] - w_ref.get(j, 0)).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_dimension_edges() {
        let a = DenseMatrix::zeros(0, 3);
        let b = DenseMatrix::zeros(3, 0);
        assert_eq!(matmul_at_b(&a, &a).rows(), 3);
        assert_eq!(matmul(&b, &a).cols(), 3);
        let g = syrk_ata(&DenseMatrix::zeros(4, 0));
        assert_eq!((g.rows(), g.cols()), (0, 0));
    }
}
