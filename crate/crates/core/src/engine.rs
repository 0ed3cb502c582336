//! The ACID iteration.
//!
//! ```text
//! f(0)   = S(Φ(p0))
//! p(k+1) = λ (p0 − A f(k)) / (1 + λ + μ)
//! f(k+1) = S(f(k) + (1 + μ)/λ · Φ(p(k+1)))
//! ```
//!
//! where `S` is the TV sparsifier with threshold `ε`. With `μ = 0` the weights
//! are `λ/(1+λ)` and `1/λ`.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::forward::ForwardModel;
use crate::grid::{psnr, ssim, Image, Measurement, SSIM_WINDOW};
use crate::recon::{build_adjoint_recon, ContractionRecon, ReconOperator};
use crate::sparsity::{gradient_transform, sparsify, ThresholdParams};

#[derive(Clone, Debug, PartialEq)]
pub struct AcidConfig {
    pub lambda: f64,
    pub epsilon: f64,
    pub iterations: usize,
    /// Map each `Φ` input onto the operator's training range.
    pub normalize: bool,
    pub mu: f64,
    /// Stop early once the residual norm falls below this value.
    pub tolerance: Option<f64>,
    /// Keep an image every this many iterations (0 keeps none). The final
    /// iterate is always kept when snapshots are on.
    pub snapshot_every: usize,
    /// Peak used for the PSNR/SSIM columns of the history.
    pub peak: f64,
}

impl Default for AcidConfig {
    fn default() -> Self {
        Self {
            lambda: 1.5,
            epsilon: 0.07,
            iterations: 50,
            normalize: false,
            mu: 0.0,
            tolerance: None,
            snapshot_every: 0,
            peak: 1.0,
        }
    }
}

impl AcidConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return invalid(format!("lambda must be positive, got {}", self.lambda));
        }
        ThresholdParams::new(self.epsilon)?;
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return invalid(format!("mu must be non-negative, got {}", self.mu));
        }
        if !(self.peak > 0.0 && self.peak.is_finite()) {
            return invalid(format!("peak must be positive, got {}", self.peak));
        }
        if let Some(t) = self.tolerance {
            if !(t >= 0.0) {
                return invalid(format!("tolerance must be non-negative, got {t}"));
            }
        }
        Ok(())
    }

    /// Weight on the data residual, `λ / (1 + λ + μ)`.
    pub fn residual_weight(&self) -> f64 {
        self.lambda / (1.0 + self.lambda + self.mu)
    }

    /// Weight on the network increment, `(1 + μ) / λ`.
    pub fn increment_weight(&self) -> f64 {
        (1.0 + self.mu) / self.lambda
    }

    /// Contraction factor `(1 + μ) / (1 + λ + μ)`.
    pub fn contraction_weight(&self) -> f64 {
        (1.0 + self.mu) / (1.0 + self.lambda + self.mu)
    }
}

/// Affine map `x ↦ scale·x + offset` taking `[input_min, input_max]` onto
/// `[target_min, target_max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationRecord {
    pub input_min: f64,
    pub input_max: f64,
    pub target_min: f64,
    pub target_max: f64,
    pub scale: f64,
    pub offset: f64,
}

impl NormalizationRecord {
    pub fn identity() -> Self {
        Self { input_min: 0.0, input_max: 1.0, target_min: 0.0, target_max: 1.0, scale: 1.0, offset: 0.0 }
    }

    /// Degenerate inputs (constant, including all-zero) get the identity map.
    pub fn capture(input_min: f64, input_max: f64, target: (f64, f64)) -> Self {
        let (tmin, tmax) = target;
        if !(input_max > input_min) || !(tmax > tmin) {
            return Self { input_min, input_max, target_min: tmin, target_max: tmax, scale: 1.0, offset: 0.0 };
        }
        let scale = (tmax - tmin) / (input_max - input_min);
        let offset = tmin - scale * input_min;
        Self { input_min, input_max, target_min: tmin, target_max: tmax, scale, offset }
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.offset == 0.0
    }

    pub fn normalize(&self, x: f64) -> f64 {
        self.scale * x + self.offset
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        (y - self.offset) / self.scale
    }
}

/// `Φ` wrapped with the per-call normalization.
///
/// The output is `(Φ(s p + o) − Φ(o 𝟙)) / s`, which equals `Φ(p)` whenever `Φ`
/// is linear. The record is treated as a constant under differentiation.
#[derive(Clone, Copy, Debug)]
pub(crate) struct NormalizedCall<'a> {
    pub op: &'a dyn ReconOperator,
    pub record: NormalizationRecord,
}

impl<'a> NormalizedCall<'a> {
    pub fn new(op: &'a dyn ReconOperator, p: &Measurement, normalize: bool) -> Self {
        let record = match (normalize, op.input_range()) {
            (true, Some(range)) => {
                let (lo, hi) = p.min_max();
                NormalizationRecord::capture(lo, hi, range)
            }
            _ => NormalizationRecord::identity(),
        };
        Self { op, record }
    }

    fn mapped(&self, p: &Measurement) -> Measurement {
        let r = self.record;
        Measurement::from_raw(p.kind(), p.values().iter().map(|&v| r.normalize(v)).collect())
    }

    pub fn forward(&self, p: &Measurement) -> Result<Image> {
        if self.record.is_identity() {
            return self.op.forward(p);
        }
        let out = self.op.forward(&self.mapped(p))?;
        let bias = Measurement::from_raw(p.kind(), vec![self.record.offset; p.values().len()]);
        let base = self.op.forward(&bias)?;
        Ok(out.sub(&base).scale(1.0 / self.record.scale))
    }

    pub fn vjp(&self, p: &Measurement, cotangent: &Image) -> Result<Measurement> {
        if self.record.is_identity() {
            return self.op.vjp(p, cotangent);
        }
        // d/dp of Φ(s p + o) / s is J(s p + o)
        self.op.vjp(&self.mapped(p), cotangent)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    /// `‖p0 − A f(k)‖` for the iterate produced at this step.
    pub residual_norm: f64,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    /// Norm of the observable-space error, filled by the contraction probe.
    pub observable_error: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AcidHistory {
    /// Residual of the initial image `f(0)`.
    pub initial_residual: f64,
    pub records: Vec<IterRecord>,
    pub snapshots: Vec<(usize, Image)>,
    pub normalizations: Vec<NormalizationRecord>,
}

impl AcidHistory {
    pub fn residuals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.residual_norm).collect()
    }

    pub fn final_psnr(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.psnr)
    }

    /// CSV with columns `iter,residual_norm,psnr,ssim`; missing metrics are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,residual_norm,psnr,ssim\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        writeln!(out, "0,{},,", self.initial_residual).expect("write to string");
        for r in &self.records {
            writeln!(out, "{},{},{},{}", r.iter, r.residual_norm, opt(r.psnr), opt(r.ssim)).expect("write to string");
        }
        out
    }
}

/// Which parts of the iteration to keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AcidVariant {
    Full,
    /// One iteration only.
    NoIteration,
    /// Adjoint reconstruction in place of the learned operator.
    NoDeepLearning,
    /// Identity in place of the sparsifier.
    NoSparsity,
}

impl AcidVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            AcidVariant::Full => "full",
            AcidVariant::NoIteration => "NI",
            AcidVariant::NoDeepLearning => "NDL",
            AcidVariant::NoSparsity => "NCS",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" | "FULL" => Ok(AcidVariant::Full),
            "NI" | "ni" => Ok(AcidVariant::NoIteration),
            "NDL" | "ndl" => Ok(AcidVariant::NoDeepLearning),
            "NCS" | "ncs" => Ok(AcidVariant::NoSparsity),
            other => invalid(format!("unknown ablation `{other}`")),
        }
    }
}

/// Everything the reverse pass needs from a forward run.
#[derive(Clone, Debug)]
pub(crate) struct AcidTape {
    /// `Φ` inputs: `p0`, then `p(1) … p(K)`.
    pub inputs: Vec<Measurement>,
    pub records: Vec<NormalizationRecord>,
    /// Sparsifier inputs `f½(0) … f½(K)`.
    pub halves: Vec<Image>,
}

struct Engine<'a> {
    model: &'a ForwardModel,
    op: &'a dyn ReconOperator,
    cfg: &'a AcidConfig,
    sparsify: bool,
}

impl Engine<'_> {
    fn shrink(&self, f: Image) -> Image {
        if self.sparsify {
            sparsify(&f, ThresholdParams::new(self.cfg.epsilon).expect("validated"))
        } else {
            f
        }
    }

    fn metrics(&self, f: &Image, truth: Option<&Image>) -> Result<(Option<f64>, Option<f64>)> {
        let Some(t) = truth else { return Ok((None, None)) };
        let p = psnr(t, f, self.cfg.peak)?;
        let s = if t.width() >= SSIM_WINDOW && t.height() >= SSIM_WINDOW {
            Some(ssim(t, f, self.cfg.peak)?)
        } else {
            None
        };
        Ok((Some(p), s))
    }

    fn run(
        &self,
        p0: &Measurement,
        truth: Option<&Image>,
        mut tape: Option<&mut AcidTape>,
        mut observe: impl FnMut(usize, &Image) -> Result<Option<f64>>,
    ) -> Result<(Image, AcidHistory)> {
        self.cfg.validate()?;
        self.model.check_measurement(p0)?;
        if let Some(t) = truth {
            self.model.check_image(t)?;
        }
        let diverged = |iteration: usize, what: &str| Error::Diverged {
            iteration,
            reason: format!("non-finite values in {what}"),
        };
        let m1 = self.cfg.residual_weight();
        let m2 = self.cfg.increment_weight();
        let mut history = AcidHistory::default();

        let call = NormalizedCall::new(self.op, p0, self.cfg.normalize);
        let half = call.forward(p0)?;
        if !half.is_finite() {
            return Err(diverged(0, "the initial reconstruction"));
        }
        history.normalizations.push(call.record);
        if let Some(t) = tape.as_deref_mut() {
            t.inputs.push(p0.clone());
            t.records.push(call.record);
            t.halves.push(half.clone());
        }
        let mut f = self.shrink(half);
        let mut residual = p0.sub(&self.model.apply(&f)?);
        history.initial_residual = residual.l2_norm();
        observe(0, &f)?;

        for k in 1..=self.cfg.iterations {
            let p = residual.scale(m1);
            let call = NormalizedCall::new(self.op, &p, self.cfg.normalize);
            let inc = call.forward(&p)?;
            let half = f.axpy(m2, &inc);
            if !half.is_finite() {
                return Err(diverged(k, "the network increment"));
            }
            history.normalizations.push(call.record);
            if let Some(t) = tape.as_deref_mut() {
                t.inputs.push(p);
                t.records.push(call.record);
                t.halves.push(half.clone());
            }
            f = self.shrink(half);
            residual = p0.sub(&self.model.apply(&f)?);
            let residual_norm = residual.l2_norm();
            if !residual_norm.is_finite() {
                return Err(diverged(k, "the data residual"));
            }
            let (ps, ss) = self.metrics(&f, truth)?;
            let observable_error = observe(k, &f)?;
            history.records.push(IterRecord { iter: k, residual_norm, psnr: ps, ssim: ss, observable_error });
            let every = self.cfg.snapshot_every;
            if every > 0 && k % every == 0 {
                history.snapshots.push((k, f.clone()));
            }
            if self.cfg.tolerance.is_some_and(|t| residual_norm < t) {
                break;
            }
        }
        let last = history.records.last().map(|r| r.iter).unwrap_or(0);
        if self.cfg.snapshot_every > 0 && history.snapshots.last().map(|s| s.0) != Some(last) {
            history.snapshots.push((last, f.clone()));
        }
        Ok((f, history))
    }
}

pub fn acid_run(
    p0: &Measurement,
    model: &ForwardModel,
    op: &dyn ReconOperator,
    cfg: &AcidConfig,
    ground_truth: Option<&Image>,
) -> Result<(Image, AcidHistory)> {
    Engine { model, op, cfg, sparsify: true }.run(p0, ground_truth, None, |_, _| Ok(None))
}

/// Forward pass that also records the intermediates for differentiation.
pub(crate) fn acid_run_taped(
    p0: &Measurement,
    model: &ForwardModel,
    op: &dyn ReconOperator,
    cfg: &AcidConfig,
    sparsify: bool,
) -> Result<(Image, AcidTape)> {
    let mut tape = AcidTape { inputs: Vec::new(), records: Vec::new(), halves: Vec::new() };
    let (f, _) = Engine { model, op, cfg, sparsify }.run(p0, None, Some(&mut tape), |_, _| Ok(None))?;
    Ok((f, tape))
}

pub fn acid_ablate(
    variant: AcidVariant,
    p0: &Measurement,
    model: &ForwardModel,
    op: &dyn ReconOperator,
    cfg: &AcidConfig,
    ground_truth: Option<&Image>,
) -> Result<(Image, AcidHistory)> {
    match variant {
        AcidVariant::Full => acid_run(p0, model, op, cfg, ground_truth),
        AcidVariant::NoIteration => {
            let cfg = AcidConfig { iterations: 1, ..cfg.clone() };
            acid_run(p0, model, op, &cfg, ground_truth)
        }
        AcidVariant::NoDeepLearning => acid_run(p0, model, &build_adjoint_recon(model), cfg, ground_truth),
        AcidVariant::NoSparsity => Engine { model, op, cfg, sparsify: false }.run(p0, ground_truth, None, |_, _| Ok(None)),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContractionReport {
    pub sigma: f64,
    pub history: AcidHistory,
    /// `‖P (f(k) − f*)‖` for `k = 0 … K`.
    pub observable_errors: Vec<f64>,
    /// `1 − M σ`.
    pub predicted_rate: f64,
    /// Least-squares geometric rate over the iterations above the floor.
    pub fitted_rate: f64,
    /// Iterations used by the fit.
    pub fit_window: (usize, usize),
    /// Gradient entries of `f*` with magnitude at least `ε`.
    pub support: usize,
    /// `(1 − σ) √s ε / (M₂ σ)`.
    pub terminal_bound: f64,
}

impl ContractionReport {
    pub fn terminal_error(&self) -> f64 {
        *self.observable_errors.last().expect("at least the initial error")
    }
}

/// Runs ACID with a synthetic operator whose observable relative error is
/// exactly `1 − σ` and tracks the observable error per iteration.
pub fn contraction_probe(
    sigma: f64,
    model: &ForwardModel,
    f_star: &Image,
    cfg: &AcidConfig,
) -> Result<ContractionReport> {
    if f_star.l2_norm() == 0.0 {
        return invalid("ground truth has zero norm");
    }
    let op = ContractionRecon::new(model.clone(), sigma)?;
    let p0 = model.apply(f_star)?;
    let mut errors = Vec::with_capacity(cfg.iterations + 1);
    let engine = Engine { model, op: &op, cfg, sparsify: true };
    let (_, history) = engine.run(&p0, Some(f_star), None, |_, f| {
        let e = model.project_observable(&f.sub(f_star))?.l2_norm();
        errors.push(e);
        Ok(Some(e))
    })?;
    let predicted_rate = 1.0 - cfg.contraction_weight() * sigma;
    let (fitted_rate, fit_window) = fit_rate(&errors);
    let support = gradient_transform(f_star).support_size(cfg.epsilon);
    let terminal_bound =
        (1.0 - sigma) * (support as f64).sqrt() * cfg.epsilon / (cfg.increment_weight() * sigma);
    Ok(ContractionReport {
        sigma,
        history,
        observable_errors: errors,
        predicted_rate,
        fitted_rate,
        fit_window,
        support,
        terminal_bound,
    })
}

/// Geometric rate fitted to `log e_k` by least squares.
///
/// The window starts at `k = 1` and ends before the sequence reaches ten
/// times its final value (the floor set by the threshold), keeping at least
/// three points. Exact zeros end the window as well.
pub fn fit_rate(errors: &[f64]) -> (f64, (usize, usize)) {
    if errors.len() < 3 {
        return (0.0, (0, errors.len()));
    }
    let floor = 10.0 * errors.last().copied().unwrap_or(0.0);
    let start = 1;
    let mut end = start;
    while end < errors.len() && errors[end] > floor && errors[end] > 0.0 {
        end += 1;
    }
    end = end.max((start + 3).min(errors.len()));
    let pts: Vec<(f64, f64)> = (start..end)
        .filter(|&k| errors[k] > 0.0)
        .map(|k| (k as f64, errors[k].ln()))
        .collect();
    if pts.len() < 2 {
        return (0.0, (start, end));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    ((sxy / sxx).exp(), (start, end))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    /// Sampling rate (Fourier) or view count (Radon).
    pub rate: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Builds a model and an operator for one point of a sweep.
pub type SweepFactory<'a> = dyn FnMut(f64) -> Result<(ForwardModel, Arc<dyn ReconOperator>)> + 'a;

/// Runs ACID once per rate. `measure` turns `(model, f*)` into the data `p0`
/// so callers decide on noise.
pub fn data_sweep(
    rates: &[f64],
    f_star: &Image,
    cfg: &AcidConfig,
    factory: &mut SweepFactory<'_>,
    measure: &mut dyn FnMut(&ForwardModel, &Image) -> Result<Measurement>,
) -> Result<Vec<SweepRow>> {
    if rates.is_empty() {
        return invalid("sweep needs at least one rate");
    }
    if rates.windows(2).any(|w| !(w[0] < w[1])) {
        return invalid("sweep rates must be strictly ascending");
    }
    let mut rows = Vec::with_capacity(rates.len());
    for &rate in rates {
        let (model, op) = factory(rate)?;
        let p0 = measure(&model, f_star)?;
        let (f, _) = acid_run(&p0, &model, op.as_ref(), cfg, None)?;
        let ssim_v = if f.width() >= SSIM_WINDOW && f.height() >= SSIM_WINDOW {
            ssim(f_star, &f, cfg.peak)?
        } else {
            f64::NAN
        };
        rows.push(SweepRow { rate, psnr: psnr(f_star, &f, cfg.peak)?, ssim: ssim_v });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("rate,psnr,ssim\n");
    for r in rows {
        writeln!(out, "{},{},{}", r.rate, r.psnr, r.ssim).expect("write to string");
    }
    out
}
