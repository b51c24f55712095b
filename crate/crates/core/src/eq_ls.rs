//! Equality-constrained least squares:
//!
//! ```text
//! minimize ‖Aθ − B‖_F²  subject to  Cθ = D
//! ```
//!
//! solved through the KKT system
//!
//! ```text
//! M [θ; ν] = [AᵀB; D],    M = [[AᵀA, Cᵀ], [C, 0]]
//! ```
//!
//! with a cached symmetric-indefinite LDLᵀ factorization of M. The backward
//! pass differentiates the KKT system in adjoint form: with
//! H = [H₁; H₂] = M⁻¹ [∇_θψ; ∇_νψ],
//!
//! ```text
//! ∇_Aψ = (B − Aθ)H₁ᵀ − (AH₁)θᵀ
//! ∇_Bψ = AH₁
//! ∇_Cψ = −νH₁ᵀ − H₂θᵀ
//! ∇_Dψ = H₂
//! ```
//!
//! With d = 0 constraints these collapse to the unconstrained formulas of
//! [`crate::dense_ls`].

use crate::error::{Error, Result};
use crate::ldlt::{self, LdltFactor};
use crate::matrix::{self, DenseMatrix};

/// Solved KKT system with its cached factorization.
#[derive(Debug, Clone)]
pub struct KktSolution {
    theta: DenseMatrix,
    nu: DenseMatrix,
    kkt_factor: LdltFactor,
    a: DenseMatrix,
    b: DenseMatrix,
}

/// Solves the equality-constrained problem. C may have zero rows, in which
/// case the result matches the unconstrained solver.
pub fn solve_kkt(
    a: DenseMatrix,
    b: DenseMatrix,
    c: DenseMatrix,
    d: DenseMatrix,
) -> Result<KktSolution> {
    let (k, n) = (a.rows(), a.cols());
    let m = b.cols();
    let dcount = c.rows();
    if b.rows() != k {
        return Err(Error::DimensionMismatch(format!(
            "A has {k} rows, B has {}",
            b.rows()
        )));
    }
    if c.cols() != n {
        return Err(Error::DimensionMismatch(format!(
            "C has {} columns, A has {n}",
            c.cols()
        )));
    }
    if d.rows() != dcount || d.cols() != m {
        return Err(Error::DimensionMismatch(format!(
            "D is {}x{}, expected {}x{}",
            d.rows(),
            d.cols(),
            dcount,
            m
        )));
    }

    let g = matrix::syrk_ata(&a);
    let size = n + dcount;
    let mut kkt = DenseMatrix::zeros(size, size);
    for i in 0..n {
        for j in 0..=i {
            kkt.set(i, j, g.get(i, j));
        }
    }
    // lower triangle: constraint block C in rows n..n+d
    for i in 0..dcount {
        for j in 0..n {
            kkt.set(n + i, j, c.get(i, j));
        }
    }
    let factor = ldlt::factorize(&kkt)?;

    let atb = matrix::matmul_at_b(&a, &b);
    let mut rhs = DenseMatrix::zeros(size, m);
    for i in 0..n {
        rhs.row_mut(i).copy_from_slice(atb.row(i));
    }
    for i in 0..dcount {
        rhs.row_mut(n + i).copy_from_slice(d.row(i));
    }
    let sol = factor.solve(&rhs)?;
    let theta = sol.row_block(0, n);
    let nu = sol.row_block(n, size);
    Ok(KktSolution { theta, nu, kkt_factor: factor, a, b })
}

impl KktSolution {
    pub fn theta(&self) -> &DenseMatrix {
        &self.theta
    }

    /// Dual variable of the equality constraints (d×m).
    pub fn nu(&self) -> &DenseMatrix {
        &self.nu
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn b(&self) -> &DenseMatrix {
        &self.b
    }

    /// Pulls cotangents on (θ, ν) back to gradients on (A, B, C, D).
    pub fn backward(
        &self,
        d_theta: &DenseMatrix,
        d_nu: &DenseMatrix,
    ) -> Result<(DenseMatrix, DenseMatrix, DenseMatrix, DenseMatrix)> {
        let n = self.theta.rows();
        let m = self.theta.cols();
        let dcount = self.nu.rows();
        if d_theta.rows() != n || d_theta.cols() != m {
            return Err(Error::DimensionMismatch(format!(
                "θ cotangent is {}x{}, expected {}x{}",
                d_theta.rows(),
                d_theta.cols(),
                n,
                m
            )));
        }
        if d_nu.rows() != dcount || d_nu.cols() != m {
            return Err(Error::DimensionMismatch(format!(
                "ν cotangent is {}x{}, expected {}x{}",
                d_nu.rows(),
                d_nu.cols(),
                dcount,
                m
            )));
        }
        let mut rhs = DenseMatrix::zeros(n + dcount, m);
        for i in 0..n {
            rhs.row_mut(i).copy_from_slice(d_theta.row(i));
        }
        for i in 0..dcount {
            rhs.row_mut(n + i).copy_from_slice(d_nu.row(i));
        }
        let h = self.kkt_factor.solve(&rhs)?;
        let h1 = h.row_block(0, n);
        let h2 = h.row_block(n, n + dcount);

        // dB = AH₁, reused in dA.
        let ah1 = matrix::matmul(&self.a, &h1);
        // dA = (B − Aθ)H₁ᵀ − (AH₁)θᵀ
        let mut resid = self.b.clone();
        matrix::gemm_into(-1.0, &self.a, false, &self.theta, false, 1.0, &mut resid);
        let mut da = matrix::matmul_a_bt(&resid, &h1);
        matrix::gemm_into(-1.0, &ah1, false, &self.theta, true, 1.0, &mut da);
        // dC = −νH₁ᵀ − H₂θᵀ
        let mut dc = matrix::matmul_a_bt(&self.nu, &h1);
        dc.scale(-1.0);
        matrix::gemm_into(-1.0, &h2, false, &self.theta, true, 1.0, &mut dc);
        Ok((da, ah1, dc, h2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense_ls;
    use crate::gradcheck::{self, TestRng};

    fn kkt_residual(
        a: &DenseMatrix,
        b: &DenseMatrix,
        c: &DenseMatrix,
        d: &DenseMatrix,
        s: &KktSolution,
    ) -> f64 {
        let atb = matrix::matmul_at_b(a, b);
        let g = matrix::matmul_at_b(a, a);
        let mut stat = matrix::matmul(&g, s.theta());
        matrix::gemm_into(1.0, c, true, s.nu(), false, 1.0, &mut stat);
        let stat_res = stat.sub(&atb).frob_norm();
        let feas_res = matrix::matmul(c, s.theta()).sub(d).frob_norm();
        (stat_res + feas_res) / (1.0 + atb.frob_norm() + d.frob_norm())
    }

    #[test]
    fn pinned_two_variable_problem() {
        // minimize (θ₁−1)² + (θ₂−1)² s.t. θ₁ = 0
        let a = DenseMatrix::identity(2);
        let b = DenseMatrix::new(2, 1, vec![1.0, 1.0]).unwrap();
        let c = DenseMatrix::new(1, 2, vec![1.0, 0.0]).unwrap();
        let d = DenseMatrix::new(1, 1, vec![0.0]).unwrap();
        let s = solve_kkt(a, b, c, d).unwrap();
        assert!((s.theta().get(0, 0) - 0.0).abs() < 1e-12);
        assert!((s.theta().get(1, 0) - 1.0).abs() < 1e-12);
        assert!((s.nu().get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inactive_constraint_matches_unconstrained() {
        let mut rng = TestRng::new(31);
        let a = rng.matrix(10, 4);
        let b = rng.matrix(10, 2);
        let unc = dense_ls::solve(a.clone(), b.clone()).unwrap();
        let c = rng.matrix(2, 4);
        let d = matrix::matmul(&c, unc.theta());
        let s = solve_kkt(a, b, c, d).unwrap();
        assert!(s.theta().sub(unc.theta()).max_abs() < 1e-9);
        assert!(s.nu().max_abs() < 1e-9);
    }

    #[test]
    fn kkt_residual_invariant_holds() {
        let mut rng = TestRng::new(8);
        for _ in 0..10 {
            let a = rng.matrix(15, 6);
            let b = rng.matrix(15, 2);
            let c = rng.matrix(2, 6);
            let d = rng.matrix(2, 2);
            let s = solve_kkt(a.clone(), b.clone(), c.clone(), d.clone()).unwrap();
            assert!(kkt_residual(&a, &b, &c, &d, &s) <= 1e-9);
        }
    }

    #[test]
    fn zero_cotangents_give_zero_gradients() {
        let mut rng = TestRng::new(12);
        let s = solve_kkt(rng.matrix(8, 3), rng.matrix(8, 2), rng.matrix(1, 3), rng.matrix(1, 2))
            .unwrap();
        let (da, db, dc, dd) =
            s.backward(&DenseMatrix::zeros(3, 2), &DenseMatrix::zeros(1, 2)).unwrap();
        assert_eq!(da.max_abs(), 0.0);
        assert_eq!(db.max_abs(), 0.0);
        assert_eq!(dc.max_abs(), 0.0);
        assert_eq!(dd.max_abs(), 0.0);
    }

    #[test]
    fn no_constraints_reduces_to_dense_backward() {
        let mut rng = TestRng::new(77);
        let a = rng.matrix(12, 5);
        let b = rng.matrix(12, 3);
        let d_theta = rng.matrix(5, 3);
        let s = solve_kkt(a.clone(), b.clone(), DenseMatrix::zeros(0, 5), DenseMatrix::zeros(0, 3))
            .unwrap();
        let f = dense_ls::solve(a, b).unwrap();
        assert!(s.theta().sub(f.theta()).max_abs() < 1e-11);
        let (da_k, db_k, dc_k, dd_k) = s.backward(&d_theta, &DenseMatrix::zeros(0, 3)).unwrap();
        let (da_d, db_d) = f.backward(&d_theta).unwrap();
        assert!(da_k.sub(&da_d).max_abs() <= 1e-11);
        assert!(db_k.sub(&db_d).max_abs() <= 1e-11);
        assert_eq!(dc_k.rows(), 0);
        assert_eq!(dd_k.rows(), 0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = TestRng::new(42);
        let a = rng.matrix(12, 5);
        let b = rng.matrix(12, 2);
        let c = rng.matrix(2, 5);
        let d = rng.matrix(2, 2);
        let d_theta = rng.matrix(5, 2);
        let d_nu = rng.matrix(2, 2);
        let max_rel = gradcheck::eq_backward_max_rel_err(&a, &b, &c, &d, &d_theta, &d_nu);
        assert!(max_rel <= 1e-6, "max relative error {max_rel}");
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let a = DenseMatrix::zeros(4, 2);
        let b = DenseMatrix::zeros(4, 1);
        assert!(matches!(
            solve_kkt(a.clone(), b.clone(), DenseMatrix::zeros(1, 3), DenseMatrix::zeros(1, 1)),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            solve_kkt(a, b, DenseMatrix::zeros(1, 2), DenseMatrix::zeros(2, 1)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn rank_violations_surface_as_singular_kkt() {
        // duplicated constraint rows → C not full row rank
        let a = DenseMatrix::identity(3);
        let b = DenseMatrix::zeros(3, 1);
        let c = DenseMatrix::new(2, 3, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let d = DenseMatrix::zeros(2, 1);
        assert!(matches!(solve_kkt(a, b, c, d), Err(Error::SingularKkt { .. })));
    }
}
