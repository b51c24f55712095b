//! The hyper-parametrized data-fitting problem.
//!
//! Given training data (u_i, y_i), a featurizer φ(·, ω_feat), per-example
//! log-weights ω_data (optional), and per-term log-weights ω_reg over
//! regularization matrices R_j, the fitted parameters are the least squares
//! solution of the stacked system
//!
//! ```text
//! A(ω) = [ e^{ω_data_i} φ(u_i, ω_feat)ᵀ ]        B(ω) = [ e^{ω_data_i} y_iᵀ ]
//!        [ e^{ω_reg_j}  R_j             ]               [ 0                 ]
//! ```
//!
//! The tuning objective ψ(ω) is the average penalty of the predictions on a
//! held-out validation set, evaluated with the validation features at the
//! current ω_feat. `objective_and_gradient` computes ψ and its exact
//! gradient over all three hyper-parameter segments by pulling the
//! solution-map gradient (∇_Aψ, ∇_Bψ) back through the assembly.
//!
//! For speed, the Gram matrix of the assembly is built from cached
//! R_jᵀR_j blocks plus one rank-update over the weighted data rows, and the
//! data-block gradients are reduced without materializing the regularization
//! rows; `assemble` produces the literal stacked matrices and the test suite
//! pins both paths together.

use crate::dense_ls;
use crate::error::{Error, Result};
use crate::featurize::{softmax, Featurizer};
use crate::matrix::{self, DenseMatrix};
use crate::tuner::{HyperVector, SegmentLayout};

/// Inputs and targets, one row per example. Targets are one-hot rows for
/// classification or arbitrary real rows for regression.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: DenseMatrix,
    pub targets: DenseMatrix,
}

impl Dataset {
    pub fn new(inputs: DenseMatrix, targets: DenseMatrix) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} input rows but {} target rows",
                inputs.rows(),
                targets.rows()
            )));
        }
        Ok(Dataset { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The hot index of each (one-hot) target row; ties break low.
    pub fn label(&self, i: usize) -> usize {
        argmax(self.targets.row(i))
    }
}

/// One weighted regularization term e^{ω_reg_j}·R_j.
#[derive(Debug, Clone)]
pub struct RegularizerTerm {
    pub matrix: DenseMatrix,
    pub label: String,
}

impl RegularizerTerm {
    pub fn new(matrix: DenseMatrix, label: impl Into<String>) -> Self {
        RegularizerTerm { matrix, label: label.into() }
    }
}

/// Per-example penalty l(ŷ, y) with gradient in the first argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    /// ‖ŷ − y‖₂²
    Square,
    /// ‖r‖₂² inside the knee at M, M(2‖r‖₂ − M) outside.
    Huber(f64),
    /// (M²/6)(1 − (1 − ‖r‖₂²/M²)³) inside, constant M²/6 outside.
    Bisquare(f64),
    /// log Σ_j e^{ŷ_j} − ŷ_hot for a one-hot y.
    CrossEntropy,
}

impl Penalty {
    pub fn value(&self, yhat: &[f64], y: &[f64]) -> f64 {
        match *self {
            Penalty::Square => {
                yhat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
            }
            Penalty::Huber(m) => {
                let r = resid_norm(yhat, y);
                if r <= m {
                    r * r
                } else {
                    m * (2.0 * r - m)
                }
            }
            Penalty::Bisquare(m) => {
                let r = resid_norm(yhat, y);
                if r <= m {
                    let u = 1.0 - (r * r) / (m * m);
                    (m * m / 6.0) * (1.0 - u * u * u)
                } else {
                    m * m / 6.0
                }
            }
            Penalty::CrossEntropy => {
                let hot = argmax(y);
                log_sum_exp(yhat) - yhat[hot]
            }
        }
    }

    /// Gradient with respect to ŷ; boundary points use the inner branch.
    pub fn grad(&self, yhat: &[f64], y: &[f64]) -> Vec<f64> {
        match *self {
            Penalty::Square => yhat.iter().zip(y).map(|(a, b)| 2.0 * (a - b)).collect(),
            Penalty::Huber(m) => {
                let r = resid_norm(yhat, y);
                if r <= m {
                    yhat.iter().zip(y).map(|(a, b)| 2.0 * (a - b)).collect()
                } else {
                    let scale = 2.0 * m / r;
                    yhat.iter().zip(y).map(|(a, b)| scale * (a - b)).collect()
                }
            }
            Penalty::Bisquare(m) => {
                let r = resid_norm(yhat, y);
                if r <= m {
                    let u = 1.0 - (r * r) / (m * m);
                    yhat.iter().zip(y).map(|(a, b)| (a - b) * u * u).collect()
                } else {
                    vec![0.0; yhat.len()]
                }
            }
            Penalty::CrossEntropy => {
                let s = softmax(yhat);
                s.iter().zip(y).map(|(si, yi)| si - yi).collect()
            }
        }
    }
}

fn resid_norm(yhat: &[f64], y: &[f64]) -> f64 {
    yhat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Max-stabilized log Σ e^{x_i}.
fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    if !max.is_finite() {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate().skip(1) {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

/// The full tuning problem: data, featurizer, regularization stack, penalty,
/// and the hyper-parameter layout.
pub struct FitProblem {
    pub train: Dataset,
    pub val: Dataset,
    pub featurizer: Box<dyn Featurizer>,
    pub reg_terms: Vec<RegularizerTerm>,
    pub penalty: Penalty,
    pub data_weighting: bool,
    /// R_jᵀR_j, cached at construction.
    reg_grams: Vec<DenseMatrix>,
    /// Feature matrices and data-block Gram pieces, cached when the
    /// featurizer has no parameters (features cannot change).
    cached_phi_train: Option<DenseMatrix>,
    cached_phi_val: Option<DenseMatrix>,
    cached_data_gram: Option<DenseMatrix>,
    cached_data_atb: Option<DenseMatrix>,
}

impl FitProblem {
    pub fn new(
        train: Dataset,
        val: Dataset,
        featurizer: Box<dyn Featurizer>,
        reg_terms: Vec<RegularizerTerm>,
        penalty: Penalty,
        data_weighting: bool,
    ) -> Result<Self> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::InvalidConfig("training and validation sets must be non-empty".into()));
        }
        let in_dim = featurizer.input_dim();
        if train.inputs.cols() != in_dim || val.inputs.cols() != in_dim {
            return Err(Error::DimensionMismatch(format!(
                "featurizer expects {in_dim}-dim inputs; train has {}, val has {}",
                train.inputs.cols(),
                val.inputs.cols()
            )));
        }
        if train.targets.cols() != val.targets.cols() {
            return Err(Error::DimensionMismatch(format!(
                "train targets have {} columns, val targets have {}",
                train.targets.cols(),
                val.targets.cols()
            )));
        }
        let n = featurizer.output_dim();
        for term in &reg_terms {
            if term.matrix.cols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "regularizer '{}' has {} columns, features have {}",
                    term.label,
                    term.matrix.cols(),
                    n
                )));
            }
        }
        let reg_grams = reg_terms.iter().map(|t| matrix::syrk_ata(&t.matrix)).collect();
        let (cached_phi_train, cached_phi_val, cached_data_gram, cached_data_atb) =
            if featurizer.param_count() == 0 {
                let phi = featurizer.features_batch(&train.inputs, &[]);
                let phi_val = featurizer.features_batch(&val.inputs, &[]);
                let (gram, atb) = if data_weighting {
                    (None, None)
                } else {
                    let gram = matrix::syrk_ata(&phi);
                    let atb = matrix::matmul_at_b(&phi, &train.targets);
                    (Some(gram), Some(atb))
                };
                (Some(phi), Some(phi_val), gram, atb)
            } else {
                (None, None, None, None)
            };
        Ok(FitProblem {
            train,
            val,
            featurizer,
            reg_terms,
            penalty,
            data_weighting,
            reg_grams,
            cached_phi_train,
            cached_phi_val,
            cached_data_gram,
            cached_data_atb,
        })
    }

    /// Segment layout of ω: (featurizer params | per-example weights | one
    /// weight per regularization term).
    pub fn hyper_layout(&self) -> SegmentLayout {
        SegmentLayout::new(
            self.featurizer.param_count(),
            if self.data_weighting { self.train.len() } else { 0 },
            self.reg_terms.len(),
        )
    }

    fn check_layout(&self, omega: &HyperVector) -> Result<()> {
        if omega.layout() != self.hyper_layout() {
            return Err(Error::DimensionMismatch(format!(
                "hyper-vector layout {:?} does not match the problem's {:?}",
                omega.layout(),
                self.hyper_layout()
            )));
        }
        Ok(())
    }

    fn data_weights(&self, omega: &HyperVector) -> Vec<f64> {
        if self.data_weighting {
            omega.data().iter().map(|w| w.exp()).collect()
        } else {
            vec![1.0; self.train.len()]
        }
    }

    fn phi_train(&self, omega_feat: &[f64]) -> DenseMatrix {
        match &self.cached_phi_train {
            Some(phi) => phi.clone(),
            None => self.featurizer.features_batch(&self.train.inputs, omega_feat),
        }
    }

    fn phi_val(&self, omega_feat: &[f64]) -> DenseMatrix {
        match &self.cached_phi_val {
            Some(phi) => phi.clone(),
            None => self.featurizer.features_batch(&self.val.inputs, omega_feat),
        }
    }

    /// Materializes the stacked (A(ω), B(ω)).
    pub fn assemble(&self, omega: &HyperVector) -> Result<(DenseMatrix, DenseMatrix)> {
        self.check_layout(omega)?;
        let n = self.featurizer.output_dim();
        let m = self.train.targets.cols();
        let big_n = self.train.len();
        let reg_rows: usize = self.reg_terms.iter().map(|t| t.matrix.rows()).sum();
        let phi = self.phi_train(omega.feat());
        let weights = self.data_weights(omega);

        let mut a = DenseMatrix::zeros(big_n + reg_rows, n);
        let mut b = DenseMatrix::zeros(big_n + reg_rows, m);
        for i in 0..big_n {
            let w = weights[i];
            for (dst, src) in a.row_mut(i).iter_mut().zip(phi.row(i)) {
                *dst = w * src;
            }
            for (dst, src) in b.row_mut(i).iter_mut().zip(self.train.targets.row(i)) {
                *dst = w * src;
            }
        }
        let mut offset = big_n;
        for (j, term) in self.reg_terms.iter().enumerate() {
            let scale = omega.reg()[j].exp();
            for r in 0..term.matrix.rows() {
                for (dst, src) in a.row_mut(offset + r).iter_mut().zip(term.matrix.row(r)) {
                    *dst = scale * src;
                }
            }
            offset += term.matrix.rows();
        }
        Ok((a, b))
    }

    /// ψ(ω), ∇_ωψ, and the fitted θ.
    pub fn objective_and_gradient(
        &self,
        omega: &HyperVector,
    ) -> Result<(f64, Vec<f64>, DenseMatrix)> {
        self.check_layout(omega)?;
        let layout = self.hyper_layout();
        let n = self.featurizer.output_dim();
        let m = self.train.targets.cols();
        let big_n = self.train.len();
        let n_val = self.val.len();

        let phi = self.phi_train(omega.feat());
        if phi.cols() != n {
            return Err(Error::DimensionMismatch(format!(
                "featurizer produced {} columns, expected {n}",
                phi.cols()
            )));
        }
        let weights = self.data_weights(omega);

        // Weighted data block.
        let mut wphi = phi.clone();
        let mut wy = self.train.targets.clone();
        for i in 0..big_n {
            let w = weights[i];
            for v in wphi.row_mut(i) {
                *v *= w;
            }
            for v in wy.row_mut(i) {
                *v *= w;
            }
        }

        // Gram and right-hand side of the full assembly, reusing cached
        // pieces where the hyper-parameters cannot change them.
        let mut gram = match (&self.cached_data_gram, self.data_weighting) {
            (Some(g), false) => g.clone(),
            _ => matrix::syrk_ata(&wphi),
        };
        for (j, kj) in self.reg_grams.iter().enumerate() {
            let scale = (2.0 * omega.reg()[j]).exp();
            gram.add_scaled(kj, scale);
        }
        let atb = match (&self.cached_data_atb, self.data_weighting) {
            (Some(atb), false) => atb.clone(),
            _ => matrix::matmul_at_b(&wphi, &wy),
        };

        let chol = dense_ls::cholesky_upper(&gram)?;
        let mut theta = atb;
        dense_ls::chol_solve_in_place(&chol, &mut theta);

        // Validation loss and its gradient in θ.
        let phi_val = self.phi_val(omega.feat());
        let yhat = matrix::matmul(&phi_val, &theta);
        let mut psi = 0.0;
        let mut dyhat = DenseMatrix::zeros(n_val, m);
        for i in 0..n_val {
            let y = self.val.targets.row(i);
            psi += self.penalty.value(yhat.row(i), y);
            let g = self.penalty.grad(yhat.row(i), y);
            for (dst, gv) in dyhat.row_mut(i).iter_mut().zip(&g) {
                *dst = gv / n_val as f64;
            }
        }
        psi /= n_val as f64;
        if !psi.is_finite() {
            return Err(Error::NonFiniteObjective(format!("validation loss is {psi}")));
        }

        let d_theta = matrix::matmul_at_b(&phi_val, &dyhat);
        // C = (AᵀA)⁻¹ ∇_θψ on the cached factor.
        let mut c = d_theta;
        dense_ls::chol_solve_in_place(&chol, &mut c);

        let mut g = vec![0.0; layout.total()];

        // Data-weight gradients: g_data[i] = 2 w_i² ⟨(ΦC)_i, y_i − (Φθ)_i⟩.
        let phic = matrix::matmul(&phi, &c);
        let phitheta = matrix::matmul(&phi, &theta);
        if self.data_weighting {
            let gd = &mut g[layout.data_range()];
            for i in 0..big_n {
                let mut acc = 0.0;
                for t in 0..m {
                    acc += phic.get(i, t) * (self.train.targets.get(i, t) - phitheta.get(i, t));
                }
                gd[i] = 2.0 * weights[i] * weights[i] * acc;
            }
        }

        // Regularization-weight gradients: g_reg[j] = −2 e^{2ω_j} ⟨R_jθ, R_jC⟩.
        {
            let gr = &mut g[layout.reg_range()];
            for (j, term) in self.reg_terms.iter().enumerate() {
                let rtheta = matrix::matmul(&term.matrix, &theta);
                let rc = matrix::matmul(&term.matrix, &c);
                gr[j] = -2.0 * (2.0 * omega.reg()[j]).exp() * rtheta.frob_dot(&rc);
            }
        }

        // Featurizer gradients: training rows contribute the cotangent
        // W²[(Y − Φθ)Cᵀ − (ΦC)θᵀ] on Φ; the validation features contribute
        // (∂ψ/∂Ŷ)θᵀ directly.
        if layout.feat > 0 {
            let mut resid2 = self.train.targets.clone();
            resid2.add_scaled(&phitheta, -1.0);
            let mut phic2 = phic.clone();
            for i in 0..big_n {
                let w2 = weights[i] * weights[i];
                for v in resid2.row_mut(i) {
                    *v *= w2;
                }
                for v in phic2.row_mut(i) {
                    *v *= w2;
                }
            }
            let mut train_cot = matrix::matmul_a_bt(&resid2, &c);
            matrix::gemm_into(-1.0, &phic2, false, &theta, true, 1.0, &mut train_cot);
            let g_train =
                self.featurizer.pullback_params_batch(&self.train.inputs, omega.feat(), &train_cot);
            let val_cot = matrix::matmul_a_bt(&dyhat, &theta);
            let g_val =
                self.featurizer.pullback_params_batch(&self.val.inputs, omega.feat(), &val_cot);
            let gf = &mut g[layout.feat_range()];
            for (dst, (a, b)) in gf.iter_mut().zip(g_train.iter().zip(&g_val)) {
                *dst = a + b;
            }
        }

        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteObjective("gradient has non-finite entries".into()));
        }
        Ok((psi, g, theta))
    }
}

/// Fraction of test rows whose argmax prediction differs from the target's
/// hot index; argmax ties break toward the lowest index.
pub fn test_error(
    theta: &DenseMatrix,
    featurizer: &dyn Featurizer,
    omega_feat: &[f64],
    test: &Dataset,
) -> f64 {
    let phi = featurizer.features_batch(&test.inputs, omega_feat);
    let yhat = matrix::matmul(&phi, theta);
    let mut wrong = 0;
    for i in 0..test.len() {
        if argmax(yhat.row(i)) != test.label(i) {
            wrong += 1;
        }
    }
    wrong as f64 / test.len() as f64
}
