//! Adversarial perturbation search.
//!
//! The objective for an operator `Φ` and image `f` is
//!
//! ```text
//! D(e) = ½‖Φ(A f + A e) − l(f)‖² − (γ/2)‖e‖²,   l(f) = Φ(A f)
//! ```
//!
//! and the search is momentum ascent `v ← τ v + ϑ ∇D`, `e ← e + v`. Against
//! the whole ACID pipeline `Φ` is replaced by the full iteration and the
//! gradient is accumulated backwards through every stored stage.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::engine::{acid_run_taped, AcidConfig, NormalizedCall};
use crate::error::{invalid, Error, Result};
use crate::forward::ForwardModel;
use crate::grid::{Image, Measurement};
use crate::recon::ReconOperator;
use crate::sparsity::ThresholdParams;

pub use crate::sparsity::sparsify_vjp;

/// Norm of the starting perturbation relative to `‖f‖`.
pub const INIT_RELATIVE_NORM: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct AttackConfig {
    pub gamma: f64,
    pub step: f64,
    pub momentum: f64,
    pub max_iters: usize,
    /// Stop once `‖e‖` exceeds this; the returned `e` is scaled back onto it.
    pub norm_budget: Option<f64>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self { gamma: 0.0, step: 1.0, momentum: 0.9, max_iters: 30, norm_budget: None }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return invalid(format!("gamma must be non-negative, got {}", self.gamma));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return invalid(format!("step must be positive, got {}", self.step));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return invalid(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if let Some(b) = self.norm_budget {
            if !(b > 0.0) {
                return invalid(format!("norm budget must be positive, got {b}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackResult {
    pub perturbation: Image,
    /// `D(e)` evaluated at the iterate each update starts from.
    pub objective_trace: Vec<f64>,
    /// `‖e‖` after each update.
    pub norm_trace: Vec<f64>,
    pub perturbation_norm: f64,
    /// `‖output(f + e) − output(f)‖`.
    pub output_distortion: f64,
}

impl AttackResult {
    /// CSV with columns `iter,objective,norm`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,objective,norm\n");
        for (i, (d, n)) in self.objective_trace.iter().zip(&self.norm_trace).enumerate() {
            writeln!(out, "{},{},{}", i + 1, d, n).expect("write to string");
        }
        out
    }
}

fn check_shapes(model: &ForwardModel, f: &Image, e: &Image) -> Result<()> {
    model.check_image(f)?;
    model.check_image(e)
}

fn half_sq(x: &Image) -> f64 {
    0.5 * x.dot(x)
}

/// `A f + A e`, the measurement the perturbed image produces.
fn perturbed_data(model: &ForwardModel, f: &Image, e: &Image) -> Result<Measurement> {
    let pf = model.apply(f)?;
    let pe = model.apply(e)?;
    Ok(pf.axpy(1.0, &pe))
}

pub fn attack_objective(op: &dyn ReconOperator, model: &ForwardModel, f: &Image, e: &Image, gamma: f64) -> Result<f64> {
    check_shapes(model, f, e)?;
    let target = op.forward(&model.apply(f)?)?;
    let out = op.forward(&perturbed_data(model, f, e)?)?;
    Ok(half_sq(&out.sub(&target)) - 0.5 * gamma * e.dot(e))
}

pub fn attack_gradient(op: &dyn ReconOperator, model: &ForwardModel, f: &Image, e: &Image, gamma: f64) -> Result<Image> {
    check_shapes(model, f, e)?;
    let target = op.forward(&model.apply(f)?)?;
    let u = perturbed_data(model, f, e)?;
    let out = op.forward(&u)?;
    let g = op.vjp(&u, &out.sub(&target))?;
    Ok(model.adjoint(&g)?.axpy(-gamma, e))
}

/// ACID output for the data `A f + A e`.
fn acid_output(
    op: &dyn ReconOperator,
    model: &ForwardModel,
    f: &Image,
    e: &Image,
    cfg: &AcidConfig,
    sparsify: bool,
) -> Result<Image> {
    Ok(acid_run_taped(&perturbed_data(model, f, e)?, model, op, cfg, sparsify)?.0)
}

pub fn attack_acid_objective(
    op: &dyn ReconOperator,
    model: &ForwardModel,
    f: &Image,
    e: &Image,
    acid_cfg: &AcidConfig,
    gamma: f64,
) -> Result<f64> {
    acid_objective_impl(op, model, f, e, acid_cfg, gamma, true)
}

pub(crate) fn acid_objective_impl(
    op: &dyn ReconOperator,
    model: &ForwardModel,
    f: &Image,
    e: &Image,
    cfg: &AcidConfig,
    gamma: f64,
    sparsify: bool,
) -> Result<f64> {
    check_shapes(model, f, e)?;
    let target = acid_output(op, model, f, &model.zero_image(), cfg, sparsify)?;
    let out = acid_output(op, model, f, e, cfg, sparsify)?;
    Ok(half_sq(&out.sub(&target)) - 0.5 * gamma * e.dot(e))
}

/// Gradient of the ACID attack objective, by reverse accumulation through
/// every iteration.
pub fn attack_acid_gradient(
    op: &dyn ReconOperator,
    model: &ForwardModel,
    f: &Image,
    e: &Image,
    acid_cfg: &AcidConfig,
    gamma: f64,
) -> Result<Image> {
    let target = acid_output(op, model, f, &model.zero_image(), acid_cfg, true)?;
    Ok(acid_gradient_impl(op, model, f, e, &target, acid_cfg, gamma, true)?.0)
}

/// Returns the gradient and the ACID output at `f + e`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn acid_gradient_impl(
    op: &dyn ReconOperator,
    model: &ForwardModel,
    f: &Image,
    e: &Image,
    target: &Image,
    cfg: &AcidConfig,
    gamma: f64,
    sparsify: bool,
) -> Result<(Image, Image)> {
    check_shapes(model, f, e)?;
    let p0 = perturbed_data(model, f, e)?;
    let (out, tape) = acid_run_taped(&p0, model, op, cfg, sparsify)?;
    let params = ThresholdParams::new(cfg.epsilon)?;
    let m1 = cfg.residual_weight();
    let m2 = cfg.increment_weight();
    let shrink_back = |half: &Image, g: &Image| -> Result<Image> {
        if sparsify {
            sparsify_vjp(half, g, params)
        } else {
            Ok(g.clone())
        }
    };
    let call = |k: usize| NormalizedCall { op, record: tape.records[k] };

    // Cotangent on the current iterate f(k), walking k = K … 1.
    let mut g = out.sub(target);
    let mut g_p0 = model.zero_measurement();
    for k in (1..tape.halves.len()).rev() {
        let g_half = shrink_back(&tape.halves[k], &g)?;
        // f½(k) = f(k−1) + M₂ Φ(p(k)),  p(k) = M₁ (p0 − A f(k−1))
        let g_p = call(k).vjp(&tape.inputs[k], &g_half.scale(m2))?;
        g_p0 = g_p0.axpy(m1, &g_p);
        g = g_half.axpy(-m1, &model.adjoint(&g_p)?);
    }
    // f(0) = S(Φ(p0))
    let g_half = shrink_back(&tape.halves[0], &g)?;
    g_p0 = g_p0.axpy(1.0, &call(0).vjp(&tape.inputs[0], &g_half)?);
    let grad = model.adjoint(&g_p0)?.axpy(-gamma, e);
    Ok((grad, out))
}

fn initial_perturbation(f: &Image, seed: u64) -> Result<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Image::from_fn(f.width(), f.height(), |_, _| StandardNormal.sample(&mut rng))?;
    let n = noise.l2_norm();
    let target = INIT_RELATIVE_NORM * f.l2_norm();
    Ok(if n > 0.0 { noise.scale(target / n) } else { noise })
}

/// Momentum ascent shared by both attacks. `eval` returns `(D(e), ∇D(e))`.
fn ascend(
    f: &Image,
    cfg: &AttackConfig,
    seed: u64,
    mut eval: impl FnMut(&Image) -> Result<(f64, Image)>,
) -> Result<(Image, Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    let mut e = initial_perturbation(f, seed)?;
    let mut v = Image::zeros(f.width(), f.height())?;
    let mut trace = Vec::with_capacity(cfg.max_iters);
    let mut norms = Vec::with_capacity(cfg.max_iters);
    for i in 0..cfg.max_iters {
        let (d, grad) = eval(&e)?;
        if !d.is_finite() || !grad.is_finite() {
            return Err(Error::AttackAborted { iteration: i, trace });
        }
        trace.push(d);
        v = v.scale(cfg.momentum).axpy(cfg.step, &grad);
        e = e.add(&v);
        let n = e.l2_norm();
        if !n.is_finite() {
            return Err(Error::AttackAborted { iteration: i, trace });
        }
        if let Some(b) = cfg.norm_budget.filter(|&b| n > b) {
            e = e.scale(b / n);
            norms.push(b);
            break;
        }
        norms.push(n);
    }
    Ok((e, trace, norms))
}

pub fn attack_network(
    op: &dyn ReconOperator,
    model: &ForwardModel,
    f: &Image,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackResult> {
    model.check_image(f)?;
    let clean = op.forward(&model.apply(f)?)?;
    let (e, trace, norms) = ascend(f, cfg, seed, |e| {
        let u = perturbed_data(model, f, e)?;
        let diff = op.forward(&u)?.sub(&clean);
        let d = half_sq(&diff) - 0.5 * cfg.gamma * e.dot(e);
        let grad = model.adjoint(&op.vjp(&u, &diff)?)?.axpy(-cfg.gamma, e);
        Ok((d, grad))
    })?;
    let out = op.forward(&perturbed_data(model, f, &e)?)?;
    Ok(AttackResult {
        perturbation_norm: e.l2_norm(),
        output_distortion: out.sub(&clean).l2_norm(),
        perturbation: e,
        objective_trace: trace,
        norm_trace: norms,
    })
}

pub fn attack_acid(
    op: &dyn ReconOperator,
    model: &ForwardModel,
    f: &Image,
    acid_cfg: &AcidConfig,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackResult> {
    model.check_image(f)?;
    acid_cfg.validate()?;
    let clean = acid_output(op, model, f, &model.zero_image(), acid_cfg, true)?;
    let (e, trace, norms) = ascend(f, cfg, seed, |e| {
        let (grad, out) = acid_gradient_impl(op, model, f, e, &clean, acid_cfg, cfg.gamma, true)?;
        Ok((half_sq(&out.sub(&clean)) - 0.5 * cfg.gamma * e.dot(e), grad))
    })?;
    let out = acid_output(op, model, f, &e, acid_cfg, true)?;
    Ok(AttackResult {
        perturbation_norm: e.l2_norm(),
        output_distortion: out.sub(&clean).l2_norm(),
        perturbation: e,
        objective_trace: trace,
        norm_trace: norms,
    })
}
