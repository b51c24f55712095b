//! Finite-difference verification utilities.
//!
//! Analytic gradients in this crate are validated against central finite
//! differences of scalar probe functionals. The helpers here are public so
//! the CLI can expose the same checks as a self-test command.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::datafit::{Dataset, FitProblem, Penalty, RegularizerTerm};
use crate::featurize::AffineScale;
use crate::matrix::DenseMatrix;
use crate::sparse_ls::{self, CooMatrix};
use crate::tuner::HyperVector;
use crate::{dense_ls, eq_ls};

/// Default step for central differences.
pub const FD_STEP: f64 = 1e-6;

/// Relative error with a unit floor: |a − b| / max(1, |a|, |b|).
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
}

/// Seeded generator for reproducible random test problems.
pub struct TestRng(ChaCha8Rng);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.0)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        Uniform::new(lo, hi).sample(&mut self.0)
    }

    pub fn below(&mut self, n: usize) -> usize {
        Uniform::new(0, n).sample(&mut self.0)
    }

    /// Matrix with i.i.d. standard normal entries.
    pub fn matrix(&mut self, rows: usize, cols: usize) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| self.normal())
    }

    pub fn vector(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }
}

/// Central finite-difference gradient of a scalar function of a matrix.
pub fn fd_grad_matrix(
    mut eval: impl FnMut(&DenseMatrix) -> f64,
    at: &DenseMatrix,
    h: f64,
) -> DenseMatrix {
    let mut grad = DenseMatrix::zeros(at.rows(), at.cols());
    let mut probe = at.clone();
    for i in 0..at.rows() {
        for j in 0..at.cols() {
            let orig = probe.get(i, j);
            probe.set(i, j, orig + h);
            let up = eval(&probe);
            probe.set(i, j, orig - h);
            let down = eval(&probe);
            probe.set(i, j, orig);
            grad.set(i, j, (up - down) / (2.0 * h));
        }
    }
    grad
}

/// Central finite-difference gradient of a scalar function of a vector.
pub fn fd_grad_vec(mut eval: impl FnMut(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; at.len()];
    let mut probe = at.to_vec();
    for i in 0..at.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = eval(&probe);
        probe[i] = orig - h;
        let down = eval(&probe);
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Largest elementwise relative error between two same-shaped matrices.
pub fn max_rel_err_matrix(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()), "shape mismatch");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| rel_err(*x, *y))
        .fold(0.0, f64::max)
}

/// Largest elementwise relative error between two vectors.
pub fn max_rel_err_vec(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| rel_err(*x, *y)).fold(0.0, f64::max)
}

/// Checks the dense backward pass for the probe ψ(θ) = ⟨dθ, θ⟩ against
/// central finite differences over every entry of A and B. Returns the
/// largest relative error seen.
pub fn dense_backward_max_rel_err(
    a: &DenseMatrix,
    b: &DenseMatrix,
    d_theta: &DenseMatrix,
) -> f64 {
    let f = dense_ls::solve(a.clone(), b.clone()).expect("probe problem must solve");
    let (da, db) = f.backward(d_theta).expect("shapes fixed by construction");
    let psi_of = |am: &DenseMatrix, bm: &DenseMatrix| {
        let s = dense_ls::solve(am.clone(), bm.clone()).expect("perturbed solve");
        d_theta.frob_dot(s.theta())
    };
    let fd_da = fd_grad_matrix(|am| psi_of(am, b), a, FD_STEP);
    let fd_db = fd_grad_matrix(|bm| psi_of(a, bm), b, FD_STEP);
    max_rel_err_matrix(&da, &fd_da).max(max_rel_err_matrix(&db, &fd_db))
}

/// Checks the KKT backward pass for ψ = ⟨dθ, θ⟩ + ⟨dν, ν⟩ against central
/// finite differences over every entry of A, B, C and D.
pub fn eq_backward_max_rel_err(
    a: &DenseMatrix,
    b: &DenseMatrix,
    c: &DenseMatrix,
    d: &DenseMatrix,
    d_theta: &DenseMatrix,
    d_nu: &DenseMatrix,
) -> f64 {
    let s = eq_ls::solve_kkt(a.clone(), b.clone(), c.clone(), d.clone())
        .expect("probe problem must solve");
    let grads = s.backward(d_theta, d_nu).expect("shapes fixed by construction");
    let psi_of = |am: &DenseMatrix, bm: &DenseMatrix, cm: &DenseMatrix, dm: &DenseMatrix| {
        let sol = eq_ls::solve_kkt(am.clone(), bm.clone(), cm.clone(), dm.clone())
            .expect("perturbed solve");
        d_theta.frob_dot(sol.theta()) + d_nu.frob_dot(sol.nu())
    };
    let fd_da = fd_grad_matrix(|x| psi_of(x, b, c, d), a, FD_STEP);
    let fd_db = fd_grad_matrix(|x| psi_of(a, x, c, d), b, FD_STEP);
    let fd_dc = fd_grad_matrix(|x| psi_of(a, b, x, d), c, FD_STEP);
    let fd_dd = fd_grad_matrix(|x| psi_of(a, b, c, x), d, FD_STEP);
    max_rel_err_matrix(&grads.0, &fd_da)
        .max(max_rel_err_matrix(&grads.1, &fd_db))
        .max(max_rel_err_matrix(&grads.2, &fd_dc))
        .max(max_rel_err_matrix(&grads.3, &fd_dd))
}

/// Outcome of one named verification suite.
#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub label: &'static str,
    pub problems: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// 50 random dense problems (k ≤ 30, n ≤ 8, m ≤ 5): backward vs central
/// finite differences over every entry of A and B.
pub fn dense_suite(seed: u64) -> SuiteResult {
    let mut rng = TestRng::new(seed);
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let n = 2 + rng.below(7); // 2..=8
        let k = (2 * n) + rng.below(31 - 2 * n); // 2n..=30
        let m = 1 + rng.below(5);
        let a = rng.matrix(k, n);
        let b = rng.matrix(k, m);
        let d_theta = rng.matrix(n, m);
        worst = worst.max(dense_backward_max_rel_err(&a, &b, &d_theta));
    }
    SuiteResult { label: "dense", problems: 50, max_rel_err: worst, tolerance: 1e-6 }
}

/// 20 random sparse problems: the pattern-restricted backward agrees with
/// the dense backward sampled at the pattern.
pub fn sparse_suite(seed: u64) -> SuiteResult {
    let mut rng = TestRng::new(seed);
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let n = 3 + rng.below(6); // 3..=8
        let k = 2 * n + rng.below(n + 1);
        let m = 1 + rng.below(3);
        // Random sparse A: a guaranteed diagonal band plus ~40% fill.
        let mut entries = Vec::new();
        for i in 0..k {
            for j in 0..n {
                if i % n == j || rng.uniform(0.0, 1.0) < 0.4 {
                    entries.push((i, j, rng.normal()));
                }
            }
        }
        let a_sparse = CooMatrix::new(k, n, entries).expect("valid pattern");
        let a_dense = a_sparse.to_dense();
        let b = rng.matrix(k, m);
        let d_theta = rng.matrix(n, m);

        let f = dense_ls::solve(a_dense.clone(), b.clone()).expect("full rank");
        let (da_dense, db_dense) = f.backward(&d_theta).expect("shapes agree");
        let pattern = a_sparse.pattern();
        let (da_vals, db) = sparse_ls::backward_restricted(
            &a_sparse,
            &pattern,
            &b,
            f.theta(),
            &d_theta,
            1e-12,
            20 * n.max(k),
        )
        .expect("CG converges on these sizes");
        for (t, &(i, j)) in pattern.entries().iter().enumerate() {
            worst = worst.max(rel_err(da_vals[t], da_dense.get(i, j)));
        }
        worst = worst.max(max_rel_err_matrix(&db, &db_dense));
    }
    SuiteResult { label: "sparse", problems: 20, max_rel_err: worst, tolerance: 1e-7 }
}

/// 20 random equality-constrained problems: KKT backward vs central finite
/// differences, plus the d = 0 reduction to the unconstrained backward.
pub fn eq_suite(seed: u64) -> SuiteResult {
    let mut rng = TestRng::new(seed);
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let n = 3 + rng.below(5); // 3..=7
        let k = 2 * n + rng.below(6);
        // keep the constraint count at or below n/2: near-square C leaves an
        // almost-degenerate free subspace where the finite-difference probe
        // itself loses accuracy
        let d = 1 + rng.below(n / 2);
        let m = 1 + rng.below(3);
        let a = rng.matrix(k, n);
        let b = rng.matrix(k, m);
        let c = rng.matrix(d, n);
        let dd = rng.matrix(d, m);
        let d_theta = rng.matrix(n, m);
        let d_nu = rng.matrix(d, m);
        worst = worst.max(eq_backward_max_rel_err(&a, &b, &c, &dd, &d_theta, &d_nu));

        // d = 0 reduces to the unconstrained backward
        let c0 = DenseMatrix::zeros(0, n);
        let d0 = DenseMatrix::zeros(0, m);
        let s = eq_ls::solve_kkt(a.clone(), b.clone(), c0, d0).expect("unconstrained KKT");
        let (da, db, _, _) =
            s.backward(&d_theta, &DenseMatrix::zeros(0, m)).expect("shapes agree");
        let f = dense_ls::solve(a, b).expect("full rank");
        let (da_ref, db_ref) = f.backward(&d_theta).expect("shapes agree");
        worst = worst.max(max_rel_err_matrix(&da, &da_ref));
        worst = worst.max(max_rel_err_matrix(&db, &db_ref));
    }
    SuiteResult { label: "equality-constrained", problems: 20, max_rel_err: worst, tolerance: 1e-6 }
}

/// Small end-to-end fit problems: ∇_ω of (assemble → solve → validation
/// loss) vs central finite differences over all hyper-parameter segments at
/// once.
pub fn pipeline_suite(seed: u64) -> SuiteResult {
    let mut rng = TestRng::new(seed);
    let mut worst = 0.0_f64;
    let mut problems = 0;
    for penalty in [Penalty::Square, Penalty::CrossEntropy] {
        for weighting in [false, true] {
            let n_train = 20;
            let n_val = 12;
            let dim = 5;
            let m = 3;
            let targets = |rng: &mut TestRng, rows: usize| match penalty {
                Penalty::CrossEntropy => DenseMatrix::from_fn(rows, m, {
                    let hots: Vec<usize> = (0..rows).map(|_| rng.below(m)).collect();
                    move |i, j| if j == hots[i] { 1.0 } else { 0.0 }
                }),
                _ => rng.matrix(rows, m),
            };
            let train_t = targets(&mut rng, n_train);
            let val_t = targets(&mut rng, n_val);
            let train = Dataset::new(rng.matrix(n_train, dim), train_t).expect("shapes agree");
            let val = Dataset::new(rng.matrix(n_val, dim), val_t).expect("shapes agree");
            let out_dim = dim;
            let problem = FitProblem::new(
                train,
                val,
                Box::new(AffineScale { dim }),
                vec![
                    RegularizerTerm::new(DenseMatrix::identity(out_dim), "ridge"),
                    RegularizerTerm::new(rng.matrix(3, out_dim), "random"),
                ],
                penalty,
                weighting,
            )
            .expect("valid problem");
            let layout = problem.hyper_layout();
            // Start near the identity featurizer (scale ≈ 1, shift ≈ 0).
            let mut vals = vec![0.0; layout.total()];
            for (t, v) in vals.iter_mut().enumerate() {
                *v = 0.1 * rng.normal() + if t < dim { 1.0 } else { 0.0 };
            }
            let omega = HyperVector::new(layout, vals).expect("layout matches");
            let (_, g, _) = problem.objective_and_gradient(&omega).expect("solvable");
            let fd = fd_grad_vec(
                |v| {
                    let om = HyperVector::new(layout, v.to_vec()).expect("layout matches");
                    problem.objective_and_gradient(&om).expect("solvable").0
                },
                omega.values(),
                FD_STEP,
            );
            worst = worst.max(max_rel_err_vec(&g, &fd));
            problems += 1;
        }
    }
    SuiteResult { label: "pipeline", problems, max_rel_err: worst, tolerance: 1e-5 }
}
