//! Differentiable feature engineering with parameter pullbacks, plus the
//! supporting pieces for archetype features: k-means clustering, softmax
//! distance features, and grid incidence matrices.
//!
//! A [`Featurizer`] maps a raw input u and feature parameters ω to a feature
//! vector φ(u, ω), and can pull a cotangent on φ back to gradients on ω
//! (`pullback_params`) and on u (`pullback_input`, which is what makes
//! composition work). All pullbacks are validated against finite differences
//! in the test suites.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::{self, DenseMatrix};

/// Differentiable feature map with adjoints.
pub trait Featurizer {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Number of feature parameters this map consumes.
    fn param_count(&self) -> usize;

    /// out = φ(u, ω).
    fn features(&self, u: &[f64], omega: &[f64], out: &mut [f64]);

    /// grad += ∂⟨cot, φ(u, ω)⟩ / ∂ω.
    fn pullback_params(&self, u: &[f64], omega: &[f64], cot: &[f64], grad: &mut [f64]);

    /// grad_u = ∂⟨cot, φ(u, ω)⟩ / ∂u.
    fn pullback_input(&self, u: &[f64], omega: &[f64], cot: &[f64], grad_u: &mut [f64]);

    /// Feature matrix for a batch of inputs (one row per input).
    fn features_batch(&self, inputs: &DenseMatrix, omega: &[f64]) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(inputs.rows(), self.output_dim());
        for i in 0..inputs.rows() {
            let (row_in, row_out) = (inputs.row(i), i);
            let mut buf = vec![0.0; self.output_dim()];
            self.features(row_in, omega, &mut buf);
            out.row_mut(row_out).copy_from_slice(&buf);
        }
        out
    }

    /// Sum of per-row parameter pullbacks for a batch of inputs and matching
    /// cotangent rows.
    fn pullback_params_batch(
        &self,
        inputs: &DenseMatrix,
        omega: &[f64],
        cots: &DenseMatrix,
    ) -> Vec<f64> {
        assert_eq!(inputs.rows(), cots.rows(), "pullback batch row counts");
        let mut grad = vec![0.0; self.param_count()];
        for i in 0..inputs.rows() {
            self.pullback_params(inputs.row(i), omega, cots.row(i), &mut grad);
        }
        grad
    }
}

/// φ(x) = x.
#[derive(Debug, Clone)]
pub struct Identity {
    pub dim: usize,
}

impl Featurizer for Identity {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn param_count(&self) -> usize {
        0
    }

    fn features(&self, u: &[f64], _omega: &[f64], out: &mut [f64]) {
        out.copy_from_slice(u);
    }

    fn pullback_params(&self, _u: &[f64], _omega: &[f64], _cot: &[f64], _grad: &mut [f64]) {}

    fn pullback_input(&self, _u: &[f64], _omega: &[f64], cot: &[f64], grad_u: &mut [f64]) {
        grad_u.copy_from_slice(cot);
    }
}

/// φ(x, (a, b)) = a ⊙ x + b, with ω = (a | b).
#[derive(Debug, Clone)]
pub struct AffineScale {
    pub dim: usize,
}

impl Featurizer for AffineScale {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn param_count(&self) -> usize {
        2 * self.dim
    }

    fn features(&self, u: &[f64], omega: &[f64], out: &mut [f64]) {
        let (a, b) = omega.split_at(self.dim);
        for i in 0..self.dim {
            out[i] = a[i] * u[i] + b[i];
        }
    }

    fn pullback_params(&self, u: &[f64], _omega: &[f64], cot: &[f64], grad: &mut [f64]) {
        let (ga, gb) = grad.split_at_mut(self.dim);
        for i in 0..self.dim {
            ga[i] += cot[i] * u[i];
            gb[i] += cot[i];
        }
    }

    fn pullback_input(&self, _u: &[f64], omega: &[f64], cot: &[f64], grad_u: &mut [f64]) {
        let a = &omega[..self.dim];
        for i in 0..self.dim {
            grad_u[i] = a[i] * cot[i];
        }
    }
}

/// Below this distance from the center the power transform's partials are
/// clamped to zero (the map is not differentiable there).
const POWER_CLAMP: f64 = 1e-12;

/// sgn(x − c)·|x − c|^γ.
pub fn power_transform(x: f64, c: f64, gamma: f64) -> f64 {
    let d = x - c;
    if d == 0.0 {
        return 0.0;
    }
    d.signum() * d.abs().powf(gamma)
}

/// Partials (∂/∂c, ∂/∂γ, ∂/∂x) of [`power_transform`], clamped to zero
/// within `POWER_CLAMP` of the center.
pub fn power_transform_grads(x: f64, c: f64, gamma: f64) -> (f64, f64, f64) {
    let d = x - c;
    let ad = d.abs();
    if ad < POWER_CLAMP {
        return (0.0, 0.0, 0.0);
    }
    let dx = gamma * ad.powf(gamma - 1.0);
    let dgamma = d.signum() * ad.powf(gamma) * ad.ln();
    (-dx, dgamma, dx)
}

/// Elementwise power transform with shared ω = (c, γ).
#[derive(Debug, Clone)]
pub struct PowerTransform {
    pub dim: usize,
}

impl Featurizer for PowerTransform {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn param_count(&self) -> usize {
        2
    }

    fn features(&self, u: &[f64], omega: &[f64], out: &mut [f64]) {
        let (c, gamma) = (omega[0], omega[1]);
        for i in 0..self.dim {
            out[i] = power_transform(u[i], c, gamma);
        }
    }

    fn pullback_params(&self, u: &[f64], omega: &[f64], cot: &[f64], grad: &mut [f64]) {
        let (c, gamma) = (omega[0], omega[1]);
        for i in 0..self.dim {
            let (dc, dg, _) = power_transform_grads(u[i], c, gamma);
            grad[0] += cot[i] * dc;
            grad[1] += cot[i] * dg;
        }
    }

    fn pullback_input(&self, u: &[f64], omega: &[f64], cot: &[f64], grad_u: &mut [f64]) {
        let (c, gamma) = (omega[0], omega[1]);
        for i in 0..self.dim {
            let (_, _, dx) = power_transform_grads(u[i], c, gamma);
            grad_u[i] = cot[i] * dx;
        }
    }
}

/// φ(x, T) = Tx with ω = vec(T) in row-major order, r < n.
#[derive(Debug, Clone)]
pub struct LowRank {
    pub out_dim: usize,
    pub in_dim: usize,
}

impl Featurizer for LowRank {
    fn input_dim(&self) -> usize {
        self.in_dim
    }

    fn output_dim(&self) -> usize {
        self.out_dim
    }

    fn param_count(&self) -> usize {
        self.out_dim * self.in_dim
    }

    fn features(&self, u: &[f64], omega: &[f64], out: &mut [f64]) {
        for r in 0..self.out_dim {
            out[r] = matrix::dot(&omega[r * self.in_dim..(r + 1) * self.in_dim], u);
        }
    }

    fn pullback_params(&self, u: &[f64], _omega: &[f64], cot: &[f64], grad: &mut [f64]) {
        // ∂T = cot uᵀ
        for r in 0..self.out_dim {
            let row = &mut grad[r * self.in_dim..(r + 1) * self.in_dim];
            for (g, ui) in row.iter_mut().zip(u) {
                *g += cot[r] * ui;
            }
        }
    }

    fn pullback_input(&self, _u: &[f64], omega: &[f64], cot: &[f64], grad_u: &mut [f64]) {
        // Tᵀ cot
        grad_u.fill(0.0);
        for r in 0..self.out_dim {
            let row = &omega[r * self.in_dim..(r + 1) * self.in_dim];
            matrix::axpy(cot[r], row, grad_u);
        }
    }
}

/// Max-stabilized softmax; output sums to 1 and every entry is in (0, 1).
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let mut out: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Vector-Jacobian product of softmax: given s = softmax(z) and a cotangent
/// on s, returns the cotangent on z, s ⊙ (cot − ⟨s, cot⟩).
pub fn softmax_vjp(s: &[f64], cot: &[f64]) -> Vec<f64> {
    let inner = matrix::dot(s, cot);
    s.iter().zip(cot).map(|(si, ci)| si * (ci - inner)).collect()
}

/// k-means cluster centers used for softmax distance features.
#[derive(Debug, Clone)]
pub struct ArchetypeSet {
    pub centers: DenseMatrix,
    pub k_per_class: usize,
}

impl ArchetypeSet {
    pub fn count(&self) -> usize {
        self.centers.rows()
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }
}

/// Distances d(x)_i = ‖x − a_i‖₂ to every archetype.
pub fn archetype_distances(x: &[f64], arch: &ArchetypeSet) -> Vec<f64> {
    (0..arch.count())
        .map(|i| {
            let c = arch.centers.row(i);
            x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        })
        .collect()
}

/// Softmax distance features s(−d(x)/e^σ) of length km.
pub fn archetype_features(x: &[f64], arch: &ArchetypeSet, sigma: f64) -> Vec<f64> {
    let d = archetype_distances(x, arch);
    let inv_temp = (-sigma).exp();
    let z: Vec<f64> = d.iter().map(|di| -di * inv_temp).collect();
    softmax(&z)
}

/// ∂⟨cot, s(−d(x)/e^σ)⟩ / ∂σ.
pub fn archetype_features_sigma_grad(x: &[f64], arch: &ArchetypeSet, sigma: f64, cot: &[f64]) -> f64 {
    let d = archetype_distances(x, arch);
    let inv_temp = (-sigma).exp();
    let z: Vec<f64> = d.iter().map(|di| -di * inv_temp).collect();
    let s = softmax(&z);
    let dz = softmax_vjp(&s, cot);
    // ∂z_i/∂σ = d_i e^{−σ} = −z_i
    -matrix::dot(&dz, &z)
}

/// The archetype feature pipeline φ(x, σ) = (x, s(−d(x)/e^σ), 1), with the
/// temperature σ as its single parameter.
#[derive(Debug, Clone)]
pub struct ArchetypeSoftmax {
    arch: ArchetypeSet,
    /// Squared norms of the archetype rows, precomputed for the batched
    /// distance computation.
    center_sqnorms: Vec<f64>,
}

impl ArchetypeSoftmax {
    pub fn new(arch: ArchetypeSet) -> Self {
        let center_sqnorms =
            (0..arch.count()).map(|i| matrix::dot(arch.centers.row(i), arch.centers.row(i))).collect();
        ArchetypeSoftmax { arch, center_sqnorms }
    }

    pub fn archetypes(&self) -> &ArchetypeSet {
        &self.arch
    }

    /// Batched distances via ‖x‖² − 2xᵀa + ‖a‖², clamped at zero before the
    /// square root.
    fn distances_batch(&self, inputs: &DenseMatrix) -> DenseMatrix {
        let mut cross = matrix::matmul_a_bt(inputs, &self.arch.centers);
        for i in 0..inputs.rows() {
            let xn = matrix::dot(inputs.row(i), inputs.row(i));
            let row = cross.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v = (xn - 2.0 * *v + self.center_sqnorms[j]).max(0.0).sqrt();
            }
        }
        cross
    }
}

impl Featurizer for ArchetypeSoftmax {
    fn input_dim(&self) -> usize {
        self.arch.dim()
    }

    fn output_dim(&self) -> usize {
        self.arch.dim() + self.arch.count() + 1
    }

    fn param_count(&self) -> usize {
        1
    }

    fn features(&self, u: &[f64], omega: &[f64], out: &mut [f64]) {
        let n = self.arch.dim();
        let km = self.arch.count();
        out[..n].copy_from_slice(u);
        let s = archetype_features(u, &self.arch, omega[0]);
        out[n..n + km].copy_from_slice(&s);
        out[n + km] = 1.0;
    }

    fn pullback_params(&self, u: &[f64], omega: &[f64], cot: &[f64], grad: &mut [f64]) {
        let n = self.arch.dim();
        let km = self.arch.count();
        grad[0] += archetype_features_sigma_grad(u, &self.arch, omega[0], &cot[n..n + km]);
    }

    fn pullback_input(&self, u: &[f64], omega: &[f64], cot: &[f64], grad_u: &mut [f64]) {
        let n = self.arch.dim();
        let km = self.arch.count();
        grad_u.copy_from_slice(&cot[..n]);
        let d = archetype_distances(u, &self.arch);
        let inv_temp = (-omega[0]).exp();
        let z: Vec<f64> = d.iter().map(|di| -di * inv_temp).collect();
        let s = softmax(&z);
        let dz = softmax_vjp(&s, &cot[n..n + km]);
        for i in 0..km {
            if d[i] < 1e-12 {
                continue;
            }
            // ∂z_i/∂x = −e^{−σ} (x − a_i)/d_i
            let coef = -inv_temp * dz[i] / d[i];
            let center = self.arch.centers.row(i);
            for ((g, xj), aj) in grad_u.iter_mut().zip(u).zip(center) {
                *g += coef * (xj - aj);
            }
        }
    }

    fn features_batch(&self, inputs: &DenseMatrix, omega: &[f64]) -> DenseMatrix {
        let n = self.arch.dim();
        let km = self.arch.count();
        let d = self.distances_batch(inputs);
        let inv_temp = (-omega[0]).exp();
        let mut out = DenseMatrix::zeros(inputs.rows(), self.output_dim());
        for i in 0..inputs.rows() {
            let z: Vec<f64> = d.row(i).iter().map(|di| -di * inv_temp).collect();
            let s = softmax(&z);
            let row = out.row_mut(i);
            row[..n].copy_from_slice(inputs.row(i));
            row[n..n + km].copy_from_slice(&s);
            row[n + km] = 1.0;
        }
        out
    }

    fn pullback_params_batch(
        &self,
        inputs: &DenseMatrix,
        omega: &[f64],
        cots: &DenseMatrix,
    ) -> Vec<f64> {
        assert_eq!(inputs.rows(), cots.rows(), "pullback batch row counts");
        let n = self.arch.dim();
        let km = self.arch.count();
        let d = self.distances_batch(inputs);
        let inv_temp = (-omega[0]).exp();
        let mut acc = 0.0;
        for i in 0..inputs.rows() {
            let z: Vec<f64> = d.row(i).iter().map(|di| -di * inv_temp).collect();
            let s = softmax(&z);
            let dz = softmax_vjp(&s, &cots.row(i)[n..n + km]);
            acc -= matrix::dot(&dz, &z);
        }
        vec![acc]
    }
}

/// g(f(u, ω_f), ω_g) with ω = (ω_f | ω_g).
pub struct Compose {
    pub first: Box<dyn Featurizer>,
    pub second: Box<dyn Featurizer>,
}

impl Compose {
    pub fn new(first: Box<dyn Featurizer>, second: Box<dyn Featurizer>) -> Result<Self> {
        if first.output_dim() != second.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "composition: first stage outputs {}, second expects {}",
                first.output_dim(),
                second.input_dim()
            )));
        }
        Ok(Compose { first, second })
    }

    fn split<'a>(&self, omega: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        omega.split_at(self.first.param_count())
    }
}

impl Featurizer for Compose {
    fn input_dim(&self) -> usize {
        self.first.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.second.output_dim()
    }

    fn param_count(&self) -> usize {
        self.first.param_count() + self.second.param_count()
    }

    fn features(&self, u: &[f64], omega: &[f64], out: &mut [f64]) {
        let (of, og) = self.split(omega);
        let mut mid = vec![0.0; self.first.output_dim()];
        self.first.features(u, of, &mut mid);
        self.second.features(&mid, og, out);
    }

    fn pullback_params(&self, u: &[f64], omega: &[f64], cot: &[f64], grad: &mut [f64]) {
        let (of, og) = self.split(omega);
        let mut mid = vec![0.0; self.first.output_dim()];
        self.first.features(u, of, &mut mid);
        let (gf, gg) = grad.split_at_mut(self.first.param_count());
        self.second.pullback_params(&mid, og, cot, gg);
        let mut mid_cot = vec![0.0; self.first.output_dim()];
        self.second.pullback_input(&mid, og, cot, &mut mid_cot);
        self.first.pullback_params(u, of, &mid_cot, gf);
    }

    fn pullback_input(&self, u: &[f64], omega: &[f64], cot: &[f64], grad_u: &mut [f64]) {
        let (of, og) = self.split(omega);
        let mut mid = vec![0.0; self.first.output_dim()];
        self.first.features(u, of, &mut mid);
        let mut mid_cot = vec![0.0; self.first.output_dim()];
        self.second.pullback_input(&mid, og, cot, &mut mid_cot);
        self.first.pullback_input(u, of, &mid_cot, grad_u);
    }
}

/// Lloyd's algorithm with k-means++ initialization. Deterministic for a
/// fixed seed; empty clusters are re-seeded to the point farthest from its
/// assigned center.
pub fn kmeans(points: &DenseMatrix, k: usize, seed: u64, max_iter: usize) -> Result<DenseMatrix> {
    let n = points.rows();
    let dim = points.cols();
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("kmeans needs 1 ≤ k ≤ {n}, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centers = DenseMatrix::zeros(k, dim);
    let first = rng.gen_range(0..n);
    centers.row_mut(0).copy_from_slice(points.row(first));
    let mut best_d2: Vec<f64> = (0..n).map(|i| sqdist(points.row(i), centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = best_d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, d2) in best_d2.iter().enumerate() {
                if target < *d2 {
                    chosen = i;
                    break;
                }
                target -= d2;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(points.row(idx));
        for i in 0..n {
            best_d2[i] = best_d2[i].min(sqdist(points.row(i), centers.row(c)));
        }
    }

    // Lloyd iterations
    let mut assignment = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let new_assignment = assign_nearest(points, &centers);
        if new_assignment == assignment {
            break;
        }
        assignment = new_assignment;
        let mut counts = vec![0usize; k];
        let mut sums = DenseMatrix::zeros(k, dim);
        for (i, &a) in assignment.iter().enumerate() {
            counts[a] += 1;
            let row = sums.row_mut(a);
            for (s, v) in row.iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed to the point farthest from its assigned center
                let far = (0..n)
                    .max_by(|&i, &j| {
                        let di = sqdist(points.row(i), centers.row(assignment[i]));
                        let dj = sqdist(points.row(j), centers.row(assignment[j]));
                        di.partial_cmp(&dj).unwrap()
                    })
                    .unwrap();
                centers.row_mut(c).copy_from_slice(points.row(far));
            } else {
                let inv = 1.0 / counts[c] as f64;
                let (sum_row, center_row) = (sums.row(c).to_vec(), centers.row_mut(c));
                for (cv, sv) in center_row.iter_mut().zip(&sum_row) {
                    *cv = sv * inv;
                }
            }
        }
    }
    Ok(centers)
}

fn sqdist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn assign_nearest(points: &DenseMatrix, centers: &DenseMatrix) -> Vec<usize> {
    // argmin_c ‖x‖² − 2xᵀc + ‖c‖² via one GEMM
    let k = centers.rows();
    let cross = matrix::matmul_a_bt(points, centers);
    let cn: Vec<f64> = (0..k).map(|c| matrix::dot(centers.row(c), centers.row(c))).collect();
    (0..points.rows())
        .map(|i| {
            let row = cross.row(i);
            let mut best = 0;
            let mut best_val = cn[0] - 2.0 * row[0];
            for c in 1..k {
                let val = cn[c] - 2.0 * row[c];
                if val < best_val {
                    best = c;
                    best_val = val;
                }
            }
            best
        })
        .collect()
}

/// Mean squared distance of each point to its nearest center.
pub fn kmeans_objective(points: &DenseMatrix, centers: &DenseMatrix) -> f64 {
    let assignment = assign_nearest(points, centers);
    assignment
        .iter()
        .enumerate()
        .map(|(i, &a)| sqdist(points.row(i), centers.row(a)))
        .sum::<f64>()
}

/// Incidence matrix of the height×width 4-neighbor grid graph: one row per
/// edge with +1 at the lower (row-major) pixel index and −1 at the higher.
/// All horizontal edges come first in row-major order, then all vertical
/// edges. A h×w grid has h(w−1) + w(h−1) edges.
pub fn grid_incidence(height: usize, width: usize) -> DenseMatrix {
    assert!(height >= 1 && width >= 1, "grid needs positive dimensions");
    let nodes = height * width;
    let edges = height * (width - 1) + width * (height - 1);
    let mut m = DenseMatrix::zeros(edges, nodes);
    let mut e = 0;
    for r in 0..height {
        for c in 0..width - 1 {
            let u = r * width + c;
            m.set(e, u, 1.0);
            m.set(e, u + 1, -1.0);
            e += 1;
        }
    }
    for r in 0..height - 1 {
        for c in 0..width {
            let u = r * width + c;
            m.set(e, u, 1.0);
            m.set(e, u + width, -1.0);
            e += 1;
        }
    }
    debug_assert_eq!(e, edges);
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{fd_grad_vec, max_rel_err_vec, TestRng};

    /// Finite-difference check of pullback_params at a random cotangent.
    fn check_param_pullback(f: &dyn Featurizer, u: &[f64], omega: &[f64], rng: &mut TestRng) -> f64 {
        let cot = rng.vector(f.output_dim());
        let mut grad = vec![0.0; f.param_count()];
        f.pullback_params(u, omega, &cot, &mut grad);
        let fd = fd_grad_vec(
            |om| {
                let mut out = vec![0.0; f.output_dim()];
                f.features(u, om, &mut out);
                matrix::dot(&cot, &out)
            },
            omega,
            1e-6,
        );
        max_rel_err_vec(&grad, &fd)
    }

    fn check_input_pullback(f: &dyn Featurizer, u: &[f64], omega: &[f64], rng: &mut TestRng) -> f64 {
        let cot = rng.vector(f.output_dim());
        let mut grad = vec![0.0; f.input_dim()];
        f.pullback_input(u, omega, &cot, &mut grad);
        let fd = fd_grad_vec(
            |uu| {
                let mut out = vec![0.0; f.output_dim()];
                f.features(uu, omega, &mut out);
                matrix::dot(&cot, &out)
            },
            u,
            1e-6,
        );
        max_rel_err_vec(&grad, &fd)
    }

    #[test]
    fn affine_scale_examples_and_pullbacks() {
        let f = AffineScale { dim: 2 };
        let mut out = vec![0.0; 2];
        f.features(&[2.0, 3.0], &[2.0, 0.0, 0.0, 1.0], &mut out);
        assert_eq!(out, vec![4.0, 1.0]);
        f.features(&[5.0, -1.0], &[1.0, 1.0, 0.0, 0.0], &mut out);
        assert_eq!(out, vec![5.0, -1.0]);

        let mut rng = TestRng::new(1);
        for _ in 0..20 {
            let u = rng.vector(2);
            let omega = rng.vector(4);
            assert!(check_param_pullback(&f, &u, &omega, &mut rng) <= 1e-8);
            assert!(check_input_pullback(&f, &u, &omega, &mut rng) <= 1e-8);
        }
    }

    #[test]
    fn power_transform_pinned_values() {
        assert_eq!(power_transform(-3.0, 0.0, 1.0), -3.0);
        assert!((power_transform(-4.0, 0.0, 0.5) + 2.0).abs() < 1e-15);
        assert_eq!(power_transform(3.0, 1.0, 0.0), 1.0);
        assert_eq!(power_transform(0.0, 1.0, 0.0), -1.0);
        assert_eq!(power_transform(1.0, 1.0, 2.0), 0.0);
    }

    #[test]
    fn power_transform_grads_clamp_at_center() {
        let (dc, dg, dx) = power_transform_grads(1.0 + 1e-13, 1.0, 0.5);
        assert_eq!((dc, dg, dx), (0.0, 0.0, 0.0));
    }

    #[test]
    fn power_transform_pullbacks_match_fd() {
        let f = PowerTransform { dim: 3 };
        let mut rng = TestRng::new(2);
        for _ in 0..20 {
            // keep inputs away from the center so FD is valid
            let u: Vec<f64> = (0..3).map(|_| rng.uniform(0.5, 3.0)).collect();
            let omega = vec![rng.uniform(-0.3, 0.3), rng.uniform(0.5, 2.0)];
            assert!(check_param_pullback(&f, &u, &omega, &mut rng) <= 1e-6);
            assert!(check_input_pullback(&f, &u, &omega, &mut rng) <= 1e-6);
        }
    }

    #[test]
    fn low_rank_examples_and_pullbacks() {
        let f = LowRank { out_dim: 2, in_dim: 4 };
        // T = [I 0]
        let t = vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let mut out = vec![0.0; 2];
        f.features(&[3.0, -1.0, 9.0, 9.0], &t, &mut out);
        assert_eq!(out, vec![3.0, -1.0]);
        let zero_t = vec![0.0; 8];
        f.features(&[3.0, -1.0, 9.0, 9.0], &zero_t, &mut out);
        assert_eq!(out, vec![0.0, 0.0]);

        let mut rng = TestRng::new(3);
        for _ in 0..20 {
            let u = rng.vector(4);
            let omega = rng.vector(8);
            assert!(check_param_pullback(&f, &u, &omega, &mut rng) <= 1e-8);
            assert!(check_input_pullback(&f, &u, &omega, &mut rng) <= 1e-8);
        }
    }

    #[test]
    fn softmax_basics() {
        let s = softmax(&[0.0; 4]);
        for v in &s {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let a = softmax(&[1.0, 2.0, 3.0]);
        let b = softmax(&[101.0, 102.0, 103.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        // entries this far apart underflow to exactly 0/1, but stay finite
        let huge = softmax(&[700.0, -700.0, 0.0]);
        assert!(huge.iter().all(|v| v.is_finite() && *v >= 0.0 && *v <= 1.0));
        assert!((huge.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn softmax_vjp_matches_fd() {
        let mut rng = TestRng::new(4);
        for _ in 0..20 {
            let z = rng.vector(5);
            let cot = rng.vector(5);
            let s = softmax(&z);
            let vjp = softmax_vjp(&s, &cot);
            let fd = fd_grad_vec(|zz| matrix::dot(&softmax(zz), &cot), &z, 1e-6);
            assert!(max_rel_err_vec(&vjp, &fd) <= 1e-8);
        }
    }

    fn toy_archetypes() -> ArchetypeSet {
        ArchetypeSet {
            centers: DenseMatrix::from_rows(&[
                vec![0.0, 0.0],
                vec![10.0, 0.0],
                vec![0.0, 10.0],
            ])
            .unwrap(),
            k_per_class: 3,
        }
    }

    #[test]
    fn archetype_features_limits() {
        let arch = toy_archetypes();
        // at an archetype, with a very cold temperature, that feature → 1
        let f = archetype_features(&[0.0, 0.0], &arch, -8.0);
        assert!(f[0] > 0.999999);
        // very hot temperature → uniform
        let f = archetype_features(&[3.0, 4.0], &arch, 12.0);
        for v in &f {
            assert!((v - 1.0 / 3.0).abs() < 1e-4);
        }
        // probability vector in all regimes
        let f = archetype_features(&[1.0, 2.0], &arch, 0.7);
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(f.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn archetype_sigma_grad_matches_fd() {
        let arch = toy_archetypes();
        let mut rng = TestRng::new(5);
        for _ in 0..20 {
            let x = rng.vector(2);
            let sigma = rng.uniform(-1.0, 2.0);
            let cot = rng.vector(3);
            let grad = archetype_features_sigma_grad(&x, &arch, sigma, &cot);
            let fd = fd_grad_vec(
                |s| matrix::dot(&archetype_features(&x, &arch, s[0]), &cot),
                &[sigma],
                1e-6,
            );
            assert!(max_rel_err_vec(&[grad], &fd) <= 1e-6);
        }
    }

    #[test]
    fn archetype_pipeline_shapes_and_pullbacks() {
        let f = ArchetypeSoftmax::new(toy_archetypes());
        assert_eq!(f.output_dim(), 2 + 3 + 1);
        assert_eq!(f.param_count(), 1);
        let mut out = vec![0.0; 6];
        f.features(&[1.0, -1.0], &[0.3], &mut out);
        assert_eq!(&out[..2], &[1.0, -1.0]);
        assert_eq!(out[5], 1.0);
        let mut rng = TestRng::new(6);
        for _ in 0..20 {
            let u = rng.vector(2);
            let omega = vec![rng.uniform(-1.0, 2.0)];
            assert!(check_param_pullback(&f, &u, &omega, &mut rng) <= 1e-6);
            assert!(check_input_pullback(&f, &u, &omega, &mut rng) <= 1e-6);
        }
    }

    #[test]
    fn archetype_batch_paths_match_single_row_paths() {
        let f = ArchetypeSoftmax::new(toy_archetypes());
        let mut rng = TestRng::new(7);
        let inputs = rng.matrix(9, 2);
        let omega = [0.4];
        let batch = f.features_batch(&inputs, &omega);
        for i in 0..9 {
            let mut row = vec![0.0; f.output_dim()];
            f.features(inputs.row(i), &omega, &mut row);
            for (a, b) in row.iter().zip(batch.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let cots = rng.matrix(9, f.output_dim());
        let g_batch = f.pullback_params_batch(&inputs, &omega, &cots);
        let mut g_loop = vec![0.0; 1];
        for i in 0..9 {
            f.pullback_params(inputs.row(i), &omega, cots.row(i), &mut g_loop);
        }
        assert!((g_batch[0] - g_loop[0]).abs() <= 1e-10 * (1.0 + g_loop[0].abs()));
    }

    #[test]
    fn composition_pullback_matches_fd() {
        let mut rng = TestRng::new(8);
        let compose = Compose::new(
            Box::new(AffineScale { dim: 3 }),
            Box::new(LowRank { out_dim: 2, in_dim: 3 }),
        )
        .unwrap();
        assert_eq!(compose.param_count(), 6 + 6);
        for _ in 0..20 {
            let u = rng.vector(3);
            let omega = rng.vector(12);
            assert!(check_param_pullback(&compose, &u, &omega, &mut rng) <= 1e-6);
            assert!(check_input_pullback(&compose, &u, &omega, &mut rng) <= 1e-6);
        }
    }

    #[test]
    fn composition_rejects_incompatible_dims() {
        assert!(Compose::new(
            Box::new(Identity { dim: 3 }),
            Box::new(LowRank { out_dim: 2, in_dim: 4 }),
        )
        .is_err());
    }

    #[test]
    fn kmeans_with_k_equal_to_point_count_returns_the_points() {
        let pts = DenseMatrix::from_rows(&[
            vec![0.0, 0.0],
            vec![5.0, 5.0],
            vec![-3.0, 4.0],
        ])
        .unwrap();
        let centers = kmeans(&pts, 3, 11, 100).unwrap();
        // every point appears as some center
        for i in 0..3 {
            let found = (0..3).any(|c| sqdist(pts.row(i), centers.row(c)) < 1e-20);
            assert!(found, "point {i} missing from centers");
        }
    }

    #[test]
    fn kmeans_finds_separated_blobs() {
        let mut rng = TestRng::new(12);
        let mut rows = Vec::new();
        for _ in 0..40 {
            rows.push(vec![rng.normal() * 0.2 + 10.0, rng.normal() * 0.2]);
        }
        for _ in 0..40 {
            rows.push(vec![rng.normal() * 0.2 - 10.0, rng.normal() * 0.2]);
        }
        let pts = DenseMatrix::from_rows(&rows).unwrap();
        let centers = kmeans(&pts, 2, 999, 100).unwrap();
        let mut xs: Vec<f64> = (0..2).map(|c| centers.get(c, 0)).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((xs[0] + 10.0).abs() < 0.1);
        assert!((xs[1] - 10.0).abs() < 0.1);
    }

    #[test]
    fn kmeans_objective_non_increasing_in_iterations() {
        let mut rng = TestRng::new(13);
        let pts = rng.matrix(60, 3);
        let mut prev = f64::INFINITY;
        for iters in 1..8 {
            let centers = kmeans(&pts, 4, 77, iters).unwrap();
            let obj = kmeans_objective(&pts, &centers);
            assert!(obj <= prev + 1e-9, "objective rose from {prev} to {obj}");
            prev = obj;
        }
    }

    #[test]
    fn kmeans_is_deterministic_per_seed() {
        let mut rng = TestRng::new(14);
        let pts = rng.matrix(50, 2);
        let a = kmeans(&pts, 3, 5, 100).unwrap();
        let b = kmeans(&pts, 3, 5, 100).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn grid_incidence_counts_and_structure() {
        let m = grid_incidence(28, 28);
        assert_eq!(m.rows(), 1512);
        assert_eq!(m.cols(), 784);

        let tiny = grid_incidence(1, 2);
        assert_eq!(tiny.rows(), 1);
        assert_eq!(tiny.row(0), &[1.0, -1.0]);

        for (h, w) in [(1, 1), (2, 2), (3, 5), (4, 4)] {
            let m = grid_incidence(h, w);
            assert_eq!(m.rows(), h * (w - 1) + w * (h - 1));
            for e in 0..m.rows() {
                let row = m.row(e);
                assert_eq!(row.iter().filter(|v| **v != 0.0).count(), 2);
                assert_eq!(row.iter().sum::<f64>(), 0.0);
                let plus = row.iter().position(|v| *v == 1.0).unwrap();
                let minus = row.iter().position(|v| *v == -1.0).unwrap();
                assert!(plus < minus, "+1 must sit at the lower index");
            }
        }
    }

    #[test]
    fn grid_incidence_edge_ordering() {
        // 2×2 grid: horizontal edges (0,1), (2,3) then vertical (0,2), (1,3)
        let m = grid_incidence(2, 2);
        assert_eq!(m.row(0), &[1.0, -1.0, 0.0, 0.0]);
        assert_eq!(m.row(1), &[0.0, 0.0, 1.0, -1.0]);
        assert_eq!(m.row(2), &[1.0, 0.0, -1.0, 0.0]);
        assert_eq!(m.row(3), &[0.0, 1.0, 0.0, -1.0]);
    }
}
