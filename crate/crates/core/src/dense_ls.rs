//! Dense least squares via the Gram matrix and a cached Cholesky
//! factorization, plus the analytic gradients of any scalar function of the
//! solution with respect to the problem data.
//!
//! `solve` minimizes ‖Aθ − B‖_F² by forming G = AᵀA, factorizing G = UᵀU, and
//! back-solving for θ = G⁻¹AᵀB. The factorization object keeps U, A, B and θ
//! so that `backward` can turn a cotangent ∇_θψ into (∇_Aψ, ∇_Bψ) with two
//! triangular solves and a handful of rectangular multiplies:
//!
//! ```text
//! C  = (AᵀA)⁻¹ ∇_θψ
//! ∇_Aψ = (B − Aθ)Cᵀ − (AC)θᵀ
//! ∇_Bψ = AC
//! ```
//!
//! Grouping the second term of ∇_Aψ as (AC)θᵀ keeps the backward pass at
//! O(knm) like the forward multiplies, never O(kn²).

use crate::error::{Error, Result};
use crate::matrix::{self, DenseMatrix};

/// Relative pivot threshold: Cholesky fails when a pivot drops to or below
/// this fraction of the largest Gram diagonal.
const PIVOT_RTOL: f64 = 1e-12;

/// Cached Cholesky factorization of a solved least squares problem.
#[derive(Debug, Clone)]
pub struct LsFactorization {
    gram_chol: DenseMatrix,
    a: DenseMatrix,
    b: DenseMatrix,
    theta: DenseMatrix,
}

/// Forms the Gram matrix G = AᵀA. The result is exactly symmetric: only one
/// triangle is computed and it is mirrored to the other.
pub fn gram(a: &DenseMatrix) -> DenseMatrix {
    matrix::syrk_ata(a)
}

/// Solves minimize ‖Aθ − B‖_F² for θ via Gram/Cholesky, caching everything
/// the backward pass needs.
pub fn solve(a: DenseMatrix, b: DenseMatrix) -> Result<LsFactorization> {
    if a.rows() != b.rows() {
        return Err(Error::DimensionMismatch(format!(
            "A has {} rows, B has {}",
            a.rows(),
            b.rows()
        )));
    }
    let g = gram(&a);
    let atb = matrix::matmul_at_b(&a, &b);
    solve_with_gram(a, b, g, atb)
}

/// Same as [`solve`] but with caller-supplied G = AᵀA and AᵀB, for callers
/// that can assemble the Gram matrix more cheaply than a fresh multiply
/// (e.g. constant regularization blocks).
pub fn solve_with_gram(
    a: DenseMatrix,
    b: DenseMatrix,
    g: DenseMatrix,
    atb: DenseMatrix,
) -> Result<LsFactorization> {
    let n = a.cols();
    if g.rows() != n || g.cols() != n {
        return Err(Error::DimensionMismatch(format!(
            "Gram matrix is {}x{}, expected {}x{}",
            g.rows(),
            g.cols(),
            n,
            n
        )));
    }
    if atb.rows() != n || atb.cols() != b.cols() {
        return Err(Error::DimensionMismatch(format!(
            "AᵀB is {}x{}, expected {}x{}",
            atb.rows(),
            atb.cols(),
            n,
            b.cols()
        )));
    }
    let u = cholesky_upper(&g)?;
    let mut theta = atb;
    chol_solve_in_place(&u, &mut theta);
    Ok(LsFactorization { gram_chol: u, a, b, theta })
}

impl LsFactorization {
    pub fn theta(&self) -> &DenseMatrix {
        &self.theta
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn b(&self) -> &DenseMatrix {
        &self.b
    }

    /// The upper-triangular factor U with AᵀA = UᵀU.
    pub fn gram_chol(&self) -> &DenseMatrix {
        &self.gram_chol
    }

    /// Solves (AᵀA) X = rhs with the cached factor.
    pub fn solve_gram(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if rhs.rows() != self.gram_chol.rows() {
            return Err(Error::DimensionMismatch(format!(
                "right-hand side has {} rows, Gram factor has {}",
                rhs.rows(),
                self.gram_chol.rows()
            )));
        }
        let mut x = rhs.clone();
        chol_solve_in_place(&self.gram_chol, &mut x);
        Ok(x)
    }

    /// Pulls a cotangent on θ back to gradients on A and B.
    pub fn backward(&self, d_theta: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
        if d_theta.rows() != self.theta.rows() || d_theta.cols() != self.theta.cols() {
            return Err(Error::DimensionMismatch(format!(
                "cotangent is {}x{}, θ is {}x{}",
                d_theta.rows(),
                d_theta.cols(),
                self.theta.rows(),
                self.theta.cols()
            )));
        }
        let c = self.solve_gram(d_theta)?;
        // dB = AC, reused as the second factor of dA.
        let db = matrix::matmul(&self.a, &c);
        // residual B − Aθ
        let mut resid = self.b.clone();
        gemm_residual(&self.a, &self.theta, &mut resid);
        // dA = (B − Aθ)Cᵀ − (AC)θᵀ
        let mut da = matrix::matmul_a_bt(&resid, &c);
        matrix::gemm_into(-1.0, &db, false, &self.theta, true, 1.0, &mut da);
        Ok((da, db))
    }
}

/// resid ← resid − A·theta.
fn gemm_residual(a: &DenseMatrix, theta: &DenseMatrix, resid: &mut DenseMatrix) {
    matrix::gemm_into(-1.0, a, false, theta, false, 1.0, resid);
}

/// Upper-triangular Cholesky: returns U with G = UᵀU, failing on pivots at or
/// below `PIVOT_RTOL` times the largest diagonal of G.
pub(crate) fn cholesky_upper(g: &DenseMatrix) -> Result<DenseMatrix> {
    let n = g.rows();
    assert_eq!(n, g.cols(), "Cholesky needs a square matrix");
    let mut max_diag: f64 = 0.0;
    for i in 0..n {
        max_diag = max_diag.max(g.get(i, i));
    }
    let tol = PIVOT_RTOL * max_diag.max(f64::MIN_POSITIVE);
    let mut u = g.clone();
    let ud = u.data_mut();
    for i in 0..n {
        // pivot = G_ii − Σ_{k<i} U_ki²
        let mut pivot = ud[i * n + i];
        for k in 0..i {
            let uki = ud[k * n + i];
            pivot -= uki * uki;
        }
        if !(pivot > tol) {
            return Err(Error::RankDeficient { pivot_index: i, pivot });
        }
        let uii = pivot.sqrt();
        ud[i * n + i] = uii;
        // row i of U right of the diagonal
        for j in (i + 1)..n {
            let mut s = ud[i * n + j];
            for k in 0..i {
                s -= ud[k * n + i] * ud[k * n + j];
            }
            ud[i * n + j] = s / uii;
        }
        // zero the strictly-lower part as we go
        for k in 0..i {
            ud[i * n + k] = 0.0;
        }
    }
    Ok(u)
}

/// Solves (UᵀU) X = rhs in place: forward substitution with Uᵀ, then backward
/// substitution with U. Each right-hand-side column sees exactly the same
/// operation sequence it would see solved alone.
pub(crate) fn chol_solve_in_place(u: &DenseMatrix, rhs: &mut DenseMatrix) {
    let n = u.rows();
    let m = rhs.cols();
    debug_assert_eq!(rhs.rows(), n);
    let ud = u.data();
    let x = rhs.data_mut();
    // Uᵀ y = rhs  (Uᵀ is lower triangular with (i,j) entry U_ji)
    for i in 0..n {
        for j in 0..i {
            let uji = ud[j * n + i];
            if uji != 0.0 {
                for t in 0..m {
                    x[i * m + t] -= uji * x[j * m + t];
                }
            }
        }
        let d = ud[i * n + i];
        for t in 0..m {
            x[i * m + t] /= d;
        }
    }
    // U x = y
    for i in (0..n).rev() {
        for j in (i + 1)..n {
            let uij = ud[i * n + j];
            if uij != 0.0 {
                for t in 0..m {
                    x[i * m + t] -= uij * x[j * m + t];
                }
            }
        }
        let d = ud[i * n + i];
        for t in 0..m {
            x[i * m + t] /= d;
        }
    }
}
