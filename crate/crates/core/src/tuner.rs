//! Adaptive proximal-gradient hyper-parameter tuning.
//!
//! Minimizes F(ω) = ψ(ω) + r(ω), where ψ (with its gradient g = ∇ψ) comes
//! from an objective callback and r is a [`ProxRegularizer`] that may encode
//! constraints as indicator functions. Each iteration takes a gradient step,
//! applies the proximal operator, and accepts the tentative point when F did
//! not increase — growing the step size by `increase_factor` on accept and
//! shrinking it by `decrease_factor` on reject (the iterate is then left
//! unchanged). Convergence is declared, only on accepted steps, when
//!
//! ```text
//! ‖(ωᵏ − ωᵏ⁺¹)/tᵏ + (gᵏ⁺¹ − gᵏ)‖₂ ≤ ε
//! ```
//!
//! which with r = 0 reduces to the plain gradient-norm test ‖gᵏ⁺¹‖₂ ≤ ε.

use crate::error::{Error, Result};
use crate::matrix;

/// Lengths of the three named hyper-parameter segments, laid out in the
/// order feat | data | reg.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentLayout {
    pub feat: usize,
    pub data: usize,
    pub reg: usize,
}

impl SegmentLayout {
    pub fn new(feat: usize, data: usize, reg: usize) -> Self {
        SegmentLayout { feat, data, reg }
    }

    pub fn total(&self) -> usize {
        self.feat + self.data + self.reg
    }

    pub fn feat_range(&self) -> std::ops::Range<usize> {
        0..self.feat
    }

    pub fn data_range(&self) -> std::ops::Range<usize> {
        self.feat..self.feat + self.data
    }

    pub fn reg_range(&self) -> std::ops::Range<usize> {
        self.feat + self.data..self.total()
    }
}

/// Partitioned hyper-parameter vector ω = (ω_feat | ω_data | ω_reg).
#[derive(Debug, Clone, PartialEq)]
pub struct HyperVector {
    values: Vec<f64>,
    layout: SegmentLayout,
}

impl HyperVector {
    pub fn new(layout: SegmentLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::DimensionMismatch(format!(
                "hyper-vector has {} values, layout wants {}",
                values.len(),
                layout.total()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData("hyper-vector entries must be finite".into()));
        }
        Ok(HyperVector { values, layout })
    }

    pub fn zeros(layout: SegmentLayout) -> Self {
        HyperVector { values: vec![0.0; layout.total()], layout }
    }

    pub fn layout(&self) -> SegmentLayout {
        self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn feat(&self) -> &[f64] {
        &self.values[self.layout.feat_range()]
    }

    pub fn data(&self) -> &[f64] {
        &self.values[self.layout.data_range()]
    }

    pub fn reg(&self) -> &[f64] {
        &self.values[self.layout.reg_range()]
    }
}

/// Contract for the hyper-parameter regularizer r: its value (∞ allowed, for
/// indicator functions) and its proximal operator.
pub trait ProxRegularizer {
    /// r(ω), possibly +∞ outside the feasible set.
    fn value(&self, omega: &HyperVector) -> f64;
    /// argmin over ω of t·r(ω) + ½‖ω − ν‖₂².
    fn prox(&self, nu: &HyperVector, t: f64) -> HyperVector;
}

/// Per-segment regularizer building block operating on a plain slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentProx {
    /// r = 0.
    Zero,
    /// r(x) = λ‖x‖₂².
    SumL2(f64),
    /// r(x) = λ‖x‖₁.
    L1(f64),
    /// r(x) = λ‖x‖₂² + indicator{1ᵀx = 0}.
    ZeroSumL2(f64),
}

impl SegmentProx {
    pub fn value(&self, x: &[f64]) -> f64 {
        match *self {
            SegmentProx::Zero => 0.0,
            SegmentProx::SumL2(lambda) => lambda * matrix::dot(x, x),
            SegmentProx::L1(lambda) => lambda * x.iter().map(|v| v.abs()).sum::<f64>(),
            SegmentProx::ZeroSumL2(lambda) => {
                let sum: f64 = x.iter().sum();
                let scale = x.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
                if sum.abs() > 1e-9 * scale * (x.len() as f64).max(1.0) {
                    f64::INFINITY
                } else {
                    lambda * matrix::dot(x, x)
                }
            }
        }
    }

    pub fn prox_in_place(&self, x: &mut [f64], t: f64) {
        match *self {
            SegmentProx::Zero => {}
            SegmentProx::SumL2(lambda) => {
                let shrink = 1.0 / (1.0 + 2.0 * t * lambda);
                for v in x.iter_mut() {
                    *v *= shrink;
                }
            }
            SegmentProx::L1(lambda) => {
                let thresh = t * lambda;
                for v in x.iter_mut() {
                    *v = v.signum() * (v.abs() - thresh).max(0.0);
                }
            }
            SegmentProx::ZeroSumL2(lambda) => {
                if x.is_empty() {
                    return;
                }
                let mean: f64 = x.iter().sum::<f64>() / x.len() as f64;
                let shrink = 1.0 / (1.0 + 2.0 * t * lambda);
                for v in x.iter_mut() {
                    *v = (*v - mean) * shrink;
                }
            }
        }
    }
}

/// One [`SegmentProx`] applied to the entire hyper-vector.
#[derive(Debug, Clone, Copy)]
pub struct UniformReg(pub SegmentProx);

impl ProxRegularizer for UniformReg {
    fn value(&self, omega: &HyperVector) -> f64 {
        self.0.value(omega.values())
    }

    fn prox(&self, nu: &HyperVector, t: f64) -> HyperVector {
        let mut out = nu.clone();
        self.0.prox_in_place(out.values_mut(), t);
        out
    }
}

/// Independent regularizers on the feat / data / reg segments; the overall
/// prox is separable across segments.
#[derive(Debug, Clone, Copy)]
pub struct SegmentedReg {
    pub feat: SegmentProx,
    pub data: SegmentProx,
    pub reg: SegmentProx,
}

impl ProxRegularizer for SegmentedReg {
    fn value(&self, omega: &HyperVector) -> f64 {
        self.feat.value(omega.feat())
            + self.data.value(omega.data())
            + self.reg.value(omega.reg())
    }

    fn prox(&self, nu: &HyperVector, t: f64) -> HyperVector {
        let mut out = nu.clone();
        let layout = out.layout();
        self.feat.prox_in_place(&mut out.values_mut()[layout.feat_range()], t);
        self.data.prox_in_place(&mut out.values_mut()[layout.data_range()], t);
        self.reg.prox_in_place(&mut out.values_mut()[layout.reg_range()], t);
        out
    }
}

/// prox of t·λ‖ω‖₂²: ν / (1 + 2tλ).
pub fn prox_sum_l2(nu: &HyperVector, t: f64, lambda: f64) -> HyperVector {
    let mut out = nu.clone();
    SegmentProx::SumL2(lambda).prox_in_place(out.values_mut(), t);
    out
}

/// prox of t·λ‖ω‖₁: elementwise soft threshold at tλ.
pub fn prox_l1(nu: &HyperVector, t: f64, lambda: f64) -> HyperVector {
    let mut out = nu.clone();
    SegmentProx::L1(lambda).prox_in_place(out.values_mut(), t);
    out
}

/// prox of t·λ‖ω‖₂² restricted to {1ᵀω = 0}: center, then shrink by
/// 1/(1 + 2tλ). The output sums to zero exactly up to rounding.
pub fn prox_zero_sum_l2(nu: &HyperVector, t: f64, lambda: f64) -> HyperVector {
    let mut out = nu.clone();
    SegmentProx::ZeroSumL2(lambda).prox_in_place(out.values_mut(), t);
    out
}

/// Step-size and termination settings for [`run`].
#[derive(Debug, Clone, Copy)]
pub struct TunerConfig {
    pub t_init: f64,
    pub max_iter: usize,
    pub epsilon: f64,
    pub increase_factor: f64,
    pub decrease_factor: f64,
}

impl Default for TunerConfig {
    fn default() -> Self {
        TunerConfig {
            t_init: 1.0,
            max_iter: 500,
            epsilon: 1e-6,
            increase_factor: 1.2,
            decrease_factor: 0.5,
        }
    }
}

impl TunerConfig {
    fn validate(&self) -> Result<()> {
        if !(self.t_init > 0.0) || !self.t_init.is_finite() {
            return Err(Error::InvalidConfig(format!("t_init must be positive: {}", self.t_init)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive: {}",
                self.epsilon
            )));
        }
        if !(self.increase_factor > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "increase_factor must exceed 1: {}",
                self.increase_factor
            )));
        }
        if !(self.decrease_factor > 0.0 && self.decrease_factor < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "decrease_factor must lie in (0, 1): {}",
                self.decrease_factor
            )));
        }
        Ok(())
    }
}

/// Why the run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// The stopping criterion fired on an accepted step.
    Converged,
    /// The iteration budget ran out.
    MaxIter,
    /// An accept-callback asked to stop (e.g. early stopping on a monitor
    /// split).
    CallbackStop,
}

/// One iteration of the trace. `f_value` is F at the tentative point (NaN
/// when the objective failed there); `step_size` is the step that produced
/// the tentative point.
#[derive(Debug, Clone)]
pub struct TunerIteration {
    pub k: usize,
    pub f_value: f64,
    pub step_size: f64,
    pub accepted: bool,
    pub stopping_metric: Option<f64>,
}

/// Full run trace plus the final state.
#[derive(Debug, Clone)]
pub struct TunerReport {
    pub iterations: Vec<TunerIteration>,
    pub final_omega: HyperVector,
    pub termination: Termination,
    /// F = ψ + r at the final iterate.
    pub final_f: f64,
    /// ψ alone at the final iterate.
    pub final_psi: f64,
    /// Number of objective evaluations performed.
    pub evaluations: usize,
}

/// The stopping quantity ‖(ω_prev − ω_next)/t + (g_next − g_prev)‖₂.
pub fn stopping_metric(
    omega_prev: &[f64],
    omega_next: &[f64],
    t: f64,
    g_prev: &[f64],
    g_next: &[f64],
) -> f64 {
    assert_eq!(omega_prev.len(), omega_next.len(), "stopping_metric lengths");
    assert_eq!(g_prev.len(), g_next.len(), "stopping_metric lengths");
    assert_eq!(omega_prev.len(), g_prev.len(), "stopping_metric lengths");
    assert!(t > 0.0, "stopping_metric needs t > 0");
    let mut acc = 0.0;
    for i in 0..omega_prev.len() {
        let v = (omega_prev[i] - omega_next[i]) / t + (g_next[i] - g_prev[i]);
        acc += v * v;
    }
    acc.sqrt()
}

/// Step-size floor; halving past this point means the objective cannot be
/// decreased (or evaluated) anywhere reachable and the run aborts.
const STEP_UNDERFLOW: f64 = 1e-18;

/// Runs the tuner. The objective returns (ψ, ∇ψ) and may fail at tentative
/// points; failures count as rejections.
pub fn run<O, R>(
    objective: O,
    regularizer: &R,
    omega0: &HyperVector,
    config: &TunerConfig,
) -> Result<TunerReport>
where
    O: FnMut(&HyperVector) -> Result<(f64, Vec<f64>)>,
    R: ProxRegularizer + ?Sized,
{
    run_with_callback(objective, regularizer, omega0, config, |_, _| false)
}

/// [`run`] with a hook invoked after every accepted iteration; returning
/// `true` stops the run with [`Termination::CallbackStop`].
pub fn run_with_callback<O, R, C>(
    mut objective: O,
    regularizer: &R,
    omega0: &HyperVector,
    config: &TunerConfig,
    mut on_accept: C,
) -> Result<TunerReport>
where
    O: FnMut(&HyperVector) -> Result<(f64, Vec<f64>)>,
    R: ProxRegularizer + ?Sized,
    C: FnMut(&TunerIteration, &HyperVector) -> bool,
{
    config.validate()?;
    let p = omega0.len();

    let mut evaluations = 0;
    let mut eval = |omega: &HyperVector, evaluations: &mut usize| -> Result<(f64, Vec<f64>)> {
        *evaluations += 1;
        let (psi, g) = objective(omega)?;
        if g.len() != omega.len() {
            return Err(Error::DimensionMismatch(format!(
                "objective returned gradient of length {}, expected {}",
                g.len(),
                omega.len()
            )));
        }
        Ok((psi, g))
    };

    let (psi0, g0) = eval(omega0, &mut evaluations)?;
    let r0 = regularizer.value(omega0);
    let f0 = psi0 + r0;
    if !f0.is_finite() || g0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteObjective(format!(
            "objective at the initial point: F = {f0}"
        )));
    }

    let mut omega = omega0.clone();
    let mut g = g0;
    let mut f = f0;
    let mut psi = psi0;
    let mut t = config.t_init;
    let mut iterations = Vec::new();
    let mut termination = Termination::MaxIter;

    for k in 1..=config.max_iter {
        // gradient step then prox
        let mut tentative = omega.clone();
        for (w, gi) in tentative.values_mut().iter_mut().zip(&g) {
            *w -= t * gi;
        }
        let tentative = regularizer.prox(&tentative, t);

        let evaluated = eval(&tentative, &mut evaluations).ok().and_then(|(psi_t, g_t)| {
            let f_t = psi_t + regularizer.value(&tentative);
            if f_t.is_finite() && g_t.iter().all(|v| v.is_finite()) {
                Some((psi_t, f_t, g_t))
            } else {
                None
            }
        });

        match evaluated {
            Some((psi_t, f_t, g_t)) if f_t <= f => {
                let metric = if p == 0 {
                    0.0
                } else {
                    stopping_metric(omega.values(), tentative.values(), t, &g, &g_t)
                };
                let record = TunerIteration {
                    k,
                    f_value: f_t,
                    step_size: t,
                    accepted: true,
                    stopping_metric: Some(metric),
                };
                omega = tentative;
                g = g_t;
                f = f_t;
                psi = psi_t;
                t *= config.increase_factor;
                let stop_requested = on_accept(&record, &omega);
                iterations.push(record);
                if metric <= config.epsilon {
                    termination = Termination::Converged;
                    break;
                }
                if stop_requested {
                    termination = Termination::CallbackStop;
                    break;
                }
            }
            other => {
                let f_value = other.map(|(_, f_t, _)| f_t).unwrap_or(f64::NAN);
                iterations.push(TunerIteration {
                    k,
                    f_value,
                    step_size: t,
                    accepted: false,
                    stopping_metric: None,
                });
                t *= config.decrease_factor;
                if t < STEP_UNDERFLOW {
                    return Err(Error::NonFiniteObjective(format!(
                        "step size underflowed ({t:.3e}) after repeated rejections at iteration {k}"
                    )));
                }
            }
        }
    }

    Ok(TunerReport {
        iterations,
        final_omega: omega,
        termination,
        final_f: f,
        final_psi: psi,
        evaluations,
    })
}
