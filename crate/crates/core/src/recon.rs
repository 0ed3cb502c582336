//! Reconstruction operators `Φ`: measurement in, image out.
//!
//! Besides the two built-in operators ([`AdjointRecon`] and [`AutomapMini`])
//! this module carries a handful of small synthetic operators used to probe
//! the iteration: exact inverses, zero maps, scaled maps and maps with a
//! controlled artefact.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, shape_err, Error, Result};
use crate::forward::ForwardModel;
use crate::grid::{min_max, Image, Measurement, MeasurementKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Capabilities {
    pub differentiable: bool,
    pub trainable: bool,
}

pub trait ReconOperator: fmt::Debug + Send + Sync {
    /// Output image dimensions `(width, height)`.
    fn dims(&self) -> (usize, usize);

    fn measurement_kind(&self) -> MeasurementKind;

    /// Expected number of measurement samples.
    fn input_samples(&self) -> usize;

    fn capabilities(&self) -> Capabilities;

    fn forward(&self, p: &Measurement) -> Result<Image>;

    /// `Jᵀ · cotangent` where `J` is the Jacobian of [`ReconOperator::forward`] at `p`.
    fn vjp(&self, _p: &Measurement, _cotangent: &Image) -> Result<Measurement> {
        Err(Error::Capability(format!("{} has no vector-Jacobian product", self.descriptor())))
    }

    /// Range of the measurement scalars seen in training, if any.
    fn input_range(&self) -> Option<(f64, f64)> {
        None
    }

    fn descriptor(&self) -> String;
}

fn check_input(op: &dyn ReconOperator, p: &Measurement) -> Result<()> {
    if p.kind() != op.measurement_kind() || p.len() != op.input_samples() {
        return shape_err(format!(
            "{} expects {} {} samples, got {} {}",
            op.descriptor(),
            op.input_samples(),
            op.measurement_kind().as_str(),
            p.len(),
            p.kind().as_str()
        ));
    }
    Ok(())
}

fn check_cotangent(op: &dyn ReconOperator, c: &Image) -> Result<()> {
    if c.dims() != op.dims() {
        let (w, h) = op.dims();
        return shape_err(format!("cotangent must be {w}x{h}, got {}x{}", c.width(), c.height()));
    }
    Ok(())
}

/// Zero-filled inverse DFT on the Fourier path, filtered backprojection on the
/// Radon path.
#[derive(Clone, Debug)]
pub struct AdjointRecon {
    model: ForwardModel,
}

impl AdjointRecon {
    pub fn new(model: ForwardModel) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &ForwardModel {
        &self.model
    }
}

pub fn build_adjoint_recon(model: &ForwardModel) -> AdjointRecon {
    AdjointRecon::new(model.clone())
}

impl ReconOperator for AdjointRecon {
    fn dims(&self) -> (usize, usize) {
        self.model.dims()
    }

    fn measurement_kind(&self) -> MeasurementKind {
        self.model.kind()
    }

    fn input_samples(&self) -> usize {
        self.model.row_count()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { differentiable: true, trainable: false }
    }

    fn forward(&self, p: &Measurement) -> Result<Image> {
        match &self.model {
            ForwardModel::Fourier(m) => m.adjoint(p),
            ForwardModel::Radon(m) => m.filtered_backprojection(p),
        }
    }

    fn vjp(&self, p: &Measurement, cotangent: &Image) -> Result<Measurement> {
        check_input(self, p)?;
        check_cotangent(self, cotangent)?;
        match &self.model {
            ForwardModel::Fourier(m) => m.apply(cotangent),
            ForwardModel::Radon(m) => {
                // the ramp kernel is symmetric, so the transpose of R then Aᵀ is A then R
                let k = m.geometry().num_angles() as f64;
                Ok(m.ramp_filter(&m.apply(cotangent)?)?.scale(std::f64::consts::PI / k))
            }
        }
    }

    fn descriptor(&self) -> String {
        match &self.model {
            ForwardModel::Fourier(_) => "adjoint(zero-filled)".into(),
            ForwardModel::Radon(_) => "adjoint(fbp)".into(),
        }
    }
}

/// Minimum-norm least-squares inverse `A⁺`, computed iteratively.
#[derive(Clone, Debug)]
pub struct PseudoInverseRecon {
    model: ForwardModel,
}

impl PseudoInverseRecon {
    pub fn new(model: ForwardModel) -> Self {
        Self { model }
    }
}

impl ReconOperator for PseudoInverseRecon {
    fn dims(&self) -> (usize, usize) {
        self.model.dims()
    }

    fn measurement_kind(&self) -> MeasurementKind {
        self.model.kind()
    }

    fn input_samples(&self) -> usize {
        self.model.row_count()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { differentiable: true, trainable: false }
    }

    fn forward(&self, p: &Measurement) -> Result<Image> {
        self.model.pseudo_inverse(p)
    }

    fn vjp(&self, p: &Measurement, cotangent: &Image) -> Result<Measurement> {
        check_input(self, p)?;
        check_cotangent(self, cotangent)?;
        self.model.apply(&self.model.normal_inverse(cotangent)?)
    }

    fn descriptor(&self) -> String {
        "pseudo-inverse".into()
    }
}

/// `Φ(p) = 0` for every input.
#[derive(Clone, Debug)]
pub struct ZeroRecon {
    dims: (usize, usize),
    kind: MeasurementKind,
    samples: usize,
}

impl ZeroRecon {
    pub fn new(model: &ForwardModel) -> Self {
        Self { dims: model.dims(), kind: model.kind(), samples: model.row_count() }
    }
}

impl ReconOperator for ZeroRecon {
    fn dims(&self) -> (usize, usize) {
        self.dims
    }

    fn measurement_kind(&self) -> MeasurementKind {
        self.kind
    }

    fn input_samples(&self) -> usize {
        self.samples
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { differentiable: true, trainable: false }
    }

    fn forward(&self, p: &Measurement) -> Result<Image> {
        check_input(self, p)?;
        let (w, h) = self.dims;
        Image::zeros(w, h)
    }

    fn vjp(&self, p: &Measurement, cotangent: &Image) -> Result<Measurement> {
        check_input(self, p)?;
        check_cotangent(self, cotangent)?;
        Ok(Measurement::zeros(self.kind, self.samples))
    }

    fn descriptor(&self) -> String {
        "zero".into()
    }
}

/// `Φ(p) = factor · inner(p)`.
#[derive(Clone, Debug)]
pub struct ScaledRecon {
    inner: Arc<dyn ReconOperator>,
    factor: f64,
}

impl ScaledRecon {
    pub fn new(inner: Arc<dyn ReconOperator>, factor: f64) -> Self {
        Self { inner, factor }
    }
}

impl ReconOperator for ScaledRecon {
    fn dims(&self) -> (usize, usize) {
        self.inner.dims()
    }

    fn measurement_kind(&self) -> MeasurementKind {
        self.inner.measurement_kind()
    }

    fn input_samples(&self) -> usize {
        self.inner.input_samples()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { trainable: false, ..self.inner.capabilities() }
    }

    fn forward(&self, p: &Measurement) -> Result<Image> {
        Ok(self.inner.forward(p)?.scale(self.factor))
    }

    fn vjp(&self, p: &Measurement, cotangent: &Image) -> Result<Measurement> {
        Ok(self.inner.vjp(p, cotangent)?.scale(self.factor))
    }

    fn input_range(&self) -> Option<(f64, f64)> {
        self.inner.input_range()
    }

    fn descriptor(&self) -> String {
        format!("{}*{}", self.factor, self.inner.descriptor())
    }
}

/// `Φ(p) = inner(p) + artifact`, a fixed additive error image.
#[derive(Clone, Debug)]
pub struct ArtifactRecon {
    inner: Arc<dyn ReconOperator>,
    artifact: Image,
}

impl ArtifactRecon {
    pub fn new(inner: Arc<dyn ReconOperator>, artifact: Image) -> Result<Self> {
        if artifact.dims() != inner.dims() {
            return shape_err("artifact must match the operator's image dimensions");
        }
        Ok(Self { inner, artifact })
    }
}

impl ReconOperator for ArtifactRecon {
    fn dims(&self) -> (usize, usize) {
        self.inner.dims()
    }

    fn measurement_kind(&self) -> MeasurementKind {
        self.inner.measurement_kind()
    }

    fn input_samples(&self) -> usize {
        self.inner.input_samples()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { trainable: false, ..self.inner.capabilities() }
    }

    fn forward(&self, p: &Measurement) -> Result<Image> {
        Ok(self.inner.forward(p)?.add(&self.artifact))
    }

    fn vjp(&self, p: &Measurement, cotangent: &Image) -> Result<Measurement> {
        self.inner.vjp(p, cotangent)
    }

    fn descriptor(&self) -> String {
        format!("{}+artifact", self.inner.descriptor())
    }
}

/// Linear operator with a prescribed relative error on the observable part.
///
/// With `q = A⁺p` and `P` the projection onto `range(Aᵀ)`,
/// `Φ(p) = σ q + (1 - σ) (I - P) G q` where `G` is a circular image shift.
/// Hence `P Φ(A f) = σ P f`: the observable error is exactly `(1 - σ) P f`,
/// and the null-space part carries a shifted copy of the object.
#[derive(Clone, Debug)]
pub struct ContractionRecon {
    model: ForwardModel,
    sigma: f64,
    shift: (usize, usize),
}

impl ContractionRecon {
    pub fn new(model: ForwardModel, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma <= 1.0) {
            return invalid(format!("sigma must lie in (0, 1], got {sigma}"));
        }
        let (w, h) = model.dims();
        Ok(Self { model, sigma, shift: (h / 7 + 1, w / 5 + 1) })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Circular shift by `(rows, cols)`; `back` applies the inverse shift.
    fn roll(&self, f: &Image, back: bool) -> Image {
        let (w, h) = f.dims();
        let (dr, dc) = self.shift;
        Image::from_fn(w, h, |r, c| {
            if back {
                f.get((r + dr) % h, (c + dc) % w)
            } else {
                f.get((r + h - dr) % h, (c + w - dc) % w)
            }
        })
        .expect("shift preserves dimensions")
    }
}

impl ReconOperator for ContractionRecon {
    fn dims(&self) -> (usize, usize) {
        self.model.dims()
    }

    fn measurement_kind(&self) -> MeasurementKind {
        self.model.kind()
    }

    fn input_samples(&self) -> usize {
        self.model.row_count()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { differentiable: true, trainable: false }
    }

    fn forward(&self, p: &Measurement) -> Result<Image> {
        let q = self.model.pseudo_inverse(p)?;
        if self.sigma == 1.0 {
            return Ok(q);
        }
        let g = self.roll(&q, false);
        let null = g.sub(&self.model.project_observable(&g)?);
        Ok(q.scale(self.sigma).axpy(1.0 - self.sigma, &null))
    }

    fn vjp(&self, p: &Measurement, cotangent: &Image) -> Result<Measurement> {
        check_input(self, p)?;
        check_cotangent(self, cotangent)?;
        let c = cotangent;
        let null = c.sub(&self.model.project_observable(c)?);
        let back = c.scale(self.sigma).axpy(1.0 - self.sigma, &self.roll(&null, true));
        self.model.apply(&self.model.normal_inverse(&back)?)
    }

    fn descriptor(&self) -> String {
        format!("contraction(sigma={})", self.sigma)
    }
}

/// Largest image the dense operator accepts, per side.
pub const AUTOMAP_MAX_SIDE: usize = 64;

const BLOB_MAGIC: &str = "RECOP1";
const BLOB_KIND: &str = "automap_mini";

/// One-hidden-layer dense network `Φ(p) = W2 tanh(W1 p + b1) + b2`.
///
/// Weights are held in a rescaled form with gain `β`: `W1 = β V1`,
/// `b1 = β c1`, `W2 = V2 / β`. Initialization makes `V1` a seeded signed
/// permutation and puts the matching columns of the adjoint reconstruction
/// into `V2`, so for small `β` the untrained network is close to the
/// zero-filled (or filtered) adjoint. Plain gradient steps on `(V1, c1, V2,
/// b2)` then train both layers at comparable rates.
#[derive(Clone)]
pub struct AutomapMini {
    width: usize,
    height: usize,
    kind: MeasurementKind,
    samples: usize,
    beta: f64,
    range: Option<(f64, f64)>,
    v1: Array2<f64>,
    c1: Array1<f64>,
    v2: Array2<f64>,
    b2: Array1<f64>,
}

impl fmt::Debug for AutomapMini {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AutomapMini")
            .field("dims", &(self.width, self.height))
            .field("inputs", &self.inputs())
            .field("hidden", &self.hidden())
            .field("beta", &self.beta)
            .field("range", &self.range)
            .finish()
    }
}

/// Default gain of the hidden layer.
pub const AUTOMAP_BETA: f64 = 0.005;

/// Default hidden width: one unit per real measurement scalar.
pub fn default_hidden(model: &ForwardModel) -> usize {
    model.scalar_count()
}

pub fn build_automap_mini(model: &ForwardModel, hidden: usize, seed: u64) -> Result<AutomapMini> {
    let (w, h) = model.dims();
    if w > AUTOMAP_MAX_SIDE || h > AUTOMAP_MAX_SIDE {
        return Err(Error::Capability(format!(
            "dense operator supports at most {AUTOMAP_MAX_SIDE}x{AUTOMAP_MAX_SIDE}, got {w}x{h}"
        )));
    }
    if hidden == 0 {
        return invalid("hidden width must be positive");
    }
    let n_in = model.scalar_count();
    let n_out = w * h;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n_in).collect();
    perm.shuffle(&mut rng);
    let signs: Vec<f64> = (0..n_in).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();

    let adjoint = AdjointRecon::new(model.clone());
    let mut v1 = Array2::<f64>::zeros((hidden, n_in));
    let mut v2 = Array2::<f64>::zeros((n_out, hidden));
    let mut unit = vec![0.0; n_in];
    for j in 0..hidden {
        if j < n_in {
            let i = perm[j];
            v1[[j, i]] = signs[j];
            unit[i] = 1.0;
            let column = adjoint.forward(&Measurement::from_raw(model.kind(), unit.clone()))?;
            unit[i] = 0.0;
            for (k, v) in column.values().iter().enumerate() {
                v2[[k, j]] = signs[j] * v;
            }
        } else {
            // surplus units start as small random features that the output ignores
            let s = 1.0 / (n_in as f64).sqrt();
            for i in 0..n_in {
                v1[[j, i]] = s * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    Ok(AutomapMini {
        width: w,
        height: h,
        kind: model.kind(),
        samples: model.row_count(),
        beta: AUTOMAP_BETA,
        range: None,
        v1,
        c1: Array1::zeros(hidden),
        v2,
        b2: Array1::zeros(n_out),
    })
}

impl AutomapMini {
    pub fn hidden(&self) -> usize {
        self.c1.len()
    }

    pub fn inputs(&self) -> usize {
        self.v1.ncols()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// All parameters in blob order, for equality checks.
    pub fn parameters(&self) -> Vec<f64> {
        self.v1
            .iter()
            .chain(self.c1.iter())
            .chain(self.v2.iter())
            .chain(self.b2.iter())
            .copied()
            .collect()
    }

    fn check_model(&self, model: &ForwardModel) -> Result<()> {
        if model.kind() != self.kind
            || model.row_count() != self.samples
            || model.dims() != (self.width, self.height)
        {
            return shape_err(format!(
                "operator was built for {} {}x{} with {} samples, model is {}",
                self.kind.as_str(),
                self.width,
                self.height,
                self.samples,
                model.descriptor()
            ));
        }
        Ok(())
    }

    /// Pre-activation `β (V1 x + c1)` for a batch of column inputs.
    fn pre_activation(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut z = self.v1.dot(x);
        z += &self.c1.view().insert_axis(Axis(1));
        z *= self.beta;
        z
    }

    fn hidden_from(&self, z: &Array2<f64>) -> Array2<f64> {
        let inv = 1.0 / self.beta;
        z.mapv(|v| v.tanh() * inv)
    }

    fn column(p: &Measurement) -> Array2<f64> {
        Array2::from_shape_vec((p.values().len(), 1), p.values().to_vec()).expect("column shape")
    }

    pub fn to_blob(&self) -> Vec<u8> {
        let header = format!(
            "{BLOB_MAGIC} {BLOB_KIND} {} {} {}\n",
            self.inputs(),
            self.width * self.height,
            self.hidden()
        );
        let (lo, hi) = self.range.unwrap_or((f64::NAN, f64::NAN));
        let mut out = header.into_bytes();
        for v in [self.beta, lo, hi].into_iter().chain(self.parameters()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Restores an operator for `model`; the header must agree with the model.
    pub fn from_blob(bytes: &[u8], model: &ForwardModel) -> Result<Self> {
        let bad = |reason: String| Error::Format { format: BLOB_MAGIC, reason };
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header".into()))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not ASCII".into()))?;
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.len() != 5 || fields[0] != BLOB_MAGIC || fields[1] != BLOB_KIND {
            return Err(bad(format!("unrecognised header `{header}`")));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad count `{s}`")));
        let (n_in, n_out, hidden) = (num(fields[2])?, num(fields[3])?, num(fields[4])?);
        if n_in != model.scalar_count() || n_out != model.col_count() {
            return shape_err(format!(
                "blob expects {n_in} inputs and {n_out} pixels, model has {} and {}",
                model.scalar_count(),
                model.col_count()
            ));
        }
        let body = &bytes[nl + 1..];
        let count = 3 + hidden * n_in + hidden + n_out * hidden + n_out;
        if body.len() != 8 * count {
            return Err(bad(format!("expected {} payload bytes, found {}", 8 * count, body.len())));
        }
        let vals: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect();
        let (w, h) = model.dims();
        let mut at = 3;
        let mut take = |n: usize| {
            let s = vals[at..at + n].to_vec();
            at += n;
            s
        };
        let v1 = Array2::from_shape_vec((hidden, n_in), take(hidden * n_in)).expect("v1 shape");
        let c1 = Array1::from_vec(take(hidden));
        let v2 = Array2::from_shape_vec((n_out, hidden), take(n_out * hidden)).expect("v2 shape");
        let b2 = Array1::from_vec(take(n_out));
        let range = if vals[1].is_nan() { None } else { Some((vals[1], vals[2])) };
        Ok(Self { width: w, height: h, kind: model.kind(), samples: model.row_count(), beta: vals[0], range, v1, c1, v2, b2 })
    }
}

impl ReconOperator for AutomapMini {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn measurement_kind(&self) -> MeasurementKind {
        self.kind
    }

    fn input_samples(&self) -> usize {
        self.samples
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { differentiable: true, trainable: true }
    }

    fn forward(&self, p: &Measurement) -> Result<Image> {
        check_input(self, p)?;
        let hid = self.hidden_from(&self.pre_activation(&Self::column(p)));
        let out = self.v2.dot(&hid).column(0).to_owned() + &self.b2;
        Ok(Image::from_raw(self.width, self.height, out.to_vec()))
    }

    fn vjp(&self, p: &Measurement, cotangent: &Image) -> Result<Measurement> {
        check_input(self, p)?;
        check_cotangent(self, cotangent)?;
        let z = self.pre_activation(&Self::column(p));
        let c = Array1::from_vec(cotangent.values().to_vec());
        let gh = self.v2.t().dot(&c);
        let gz = gh * z.column(0).mapv(|v| 1.0 - v.tanh().powi(2));
        let gp = self.v1.t().dot(&gz);
        Ok(Measurement::from_raw(self.kind, gp.to_vec()))
    }

    fn input_range(&self) -> Option<(f64, f64)> {
        self.range
    }

    fn descriptor(&self) -> String {
        format!("automap_mini(hidden={})", self.hidden())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean squared pixel error before each epoch's update, then once after
    /// the last update; length `epochs + 1`.
    pub losses: Vec<f64>,
    /// Mean over the training pairs of `‖A Φ(p) − p‖ / ‖p‖` after training.
    pub consistency: f64,
}

/// Full-batch gradient descent on the mean squared pixel error.
pub fn train_automap_mini(
    mut op: AutomapMini,
    model: &ForwardModel,
    pairs: &[(Measurement, Image)],
    epochs: usize,
    step: f64,
) -> Result<(AutomapMini, TrainReport)> {
    train_automap_mini_with(&mut op, model, pairs, epochs, step, |_, _| {})?;
    let report = last_report(&op, model, pairs)?;
    Ok((op, report))
}

fn last_report(op: &AutomapMini, model: &ForwardModel, pairs: &[(Measurement, Image)]) -> Result<TrainReport> {
    let mut consistency = 0.0;
    let mut loss = 0.0;
    for (p, f) in pairs {
        let out = op.forward(p)?;
        loss += out.sub(f).values().iter().map(|v| v * v).sum::<f64>();
        let pn = p.l2_norm();
        if pn > 0.0 {
            consistency += model.apply(&out)?.sub(p).l2_norm() / pn;
        }
    }
    let n = pairs.len() as f64;
    Ok(TrainReport { losses: vec![loss / (n * op.width as f64 * op.height as f64)], consistency: consistency / n })
}

/// Same as [`train_automap_mini`] but trains in place and reports
/// `(epoch, loss)` before every update. Returns the per-epoch losses followed
/// by the final loss.
pub fn train_automap_mini_with(
    op: &mut AutomapMini,
    model: &ForwardModel,
    pairs: &[(Measurement, Image)],
    epochs: usize,
    step: f64,
    mut progress: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return invalid("training needs at least one (measurement, image) pair");
    }
    if !(step > 0.0 && step.is_finite()) {
        return invalid(format!("step must be positive, got {step}"));
    }
    op.check_model(model)?;
    let n_in = op.inputs();
    let n_out = op.width * op.height;
    let batch = pairs.len();
    let mut x = Array2::<f64>::zeros((n_in, batch));
    let mut y = Array2::<f64>::zeros((n_out, batch));
    for (b, (p, f)) in pairs.iter().enumerate() {
        check_input(op, p)?;
        if f.dims() != (op.width, op.height) {
            return shape_err("training image does not match the operator");
        }
        x.column_mut(b).assign(&Array1::from_vec(p.values().to_vec()));
        y.column_mut(b).assign(&Array1::from_vec(f.values().to_vec()));
    }
    let (lo, hi) = min_max(x.as_slice().expect("contiguous"));
    op.range = Some((lo, hi));

    let scale = 2.0 / (batch * n_out) as f64;
    let mut losses = Vec::with_capacity(epochs + 1);
    let loss_of = |op: &AutomapMini| -> (Array2<f64>, Array2<f64>, Array2<f64>, f64) {
        let z = op.pre_activation(&x);
        let hid = op.hidden_from(&z);
        let mut r = op.v2.dot(&hid);
        r += &op.b2.view().insert_axis(Axis(1));
        r -= &y;
        let loss = r.iter().map(|v| v * v).sum::<f64>() / (batch * n_out) as f64;
        (z, hid, r, loss)
    };
    for epoch in 0..epochs {
        let (z, hid, r, loss) = loss_of(op);
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration: epoch, reason: "training loss is not finite".into() });
        }
        losses.push(loss);
        progress(epoch, loss);
        let g = r * scale;
        let g_v2 = g.dot(&hid.t());
        let g_b2 = g.sum_axis(Axis(1));
        let mut g_z = op.v2.t().dot(&g);
        g_z.zip_mut_with(&z, |gz, &zv| *gz *= 1.0 - zv.tanh().powi(2));
        let g_v1 = g_z.dot(&x.t());
        let g_c1 = g_z.sum_axis(Axis(1));
        op.v2.scaled_add(-step, &g_v2);
        op.b2.scaled_add(-step, &g_b2);
        op.v1.scaled_add(-step, &g_v1);
        op.c1.scaled_add(-step, &g_c1);
    }
    let (_, _, _, loss) = loss_of(op);
    if !loss.is_finite() {
        return Err(Error::Diverged { iteration: epochs, reason: "training loss is not finite".into() });
    }
    losses.push(loss);
    Ok(losses)
}

/// Convenience wrapper returning the full loss trace in the report.
pub fn train_automap_mini_traced(
    mut op: AutomapMini,
    model: &ForwardModel,
    pairs: &[(Measurement, Image)],
    epochs: usize,
    step: f64,
    progress: impl FnMut(usize, f64),
) -> Result<(AutomapMini, TrainReport)> {
    let losses = train_automap_mini_with(&mut op, model, pairs, epochs, step, progress)?;
    let mut report = last_report(&op, model, pairs)?;
    report.losses = losses;
    Ok((op, report))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BrenReport {
    pub ratio: f64,
    pub numerator: f64,
    pub denominator: f64,
}

/// `‖Φ(A f*) − f*‖ / ‖f*‖`.
pub fn bren_ratio(op: &dyn ReconOperator, model: &ForwardModel, f_star: &Image) -> Result<BrenReport> {
    let denominator = f_star.l2_norm();
    if denominator == 0.0 {
        return invalid("ground truth has zero norm");
    }
    let numerator = op.forward(&model.apply(f_star)?)?.sub(f_star).l2_norm();
    Ok(BrenReport { ratio: numerator / denominator, numerator, denominator })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzEstimate {
    /// Largest ratio observed so far.
    pub lower: f64,
    pub samples: usize,
    pub perturbation_scale: f64,
    /// Every sampled ratio, in draw order.
    pub ratios: Vec<f64>,
}

/// Empirical lower bound on the Lipschitz constant of `f ↦ Φ(A f)`.
///
/// Each perturbation is i.i.d. Gaussian with standard deviation `scale`.
pub fn lipschitz_estimate(
    op: &dyn ReconOperator,
    model: &ForwardModel,
    probes: &[Image],
    perturbations_per_probe: usize,
    scale: f64,
    seed: u64,
) -> Result<LipschitzEstimate> {
    if probes.is_empty() {
        return invalid("at least one probe image is required");
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return invalid(format!("perturbation scale must be positive, got {scale}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratios = Vec::with_capacity(probes.len() * perturbations_per_probe);
    let mut lower = 0.0f64;
    for f in probes {
        let base = op.forward(&model.apply(f)?)?;
        for _ in 0..perturbations_per_probe {
            let (w, h) = f.dims();
            let delta = Image::from_fn(w, h, |_, _| scale * rng.sample::<f64, _>(StandardNormal))?;
            let dn = delta.l2_norm();
            if dn == 0.0 {
                continue;
            }
            let moved = op.forward(&model.apply(&f.add(&delta))?)?;
            let ratio = moved.sub(&base).l2_norm() / dn;
            lower = lower.max(ratio);
            ratios.push(ratio);
        }
    }
    Ok(LipschitzEstimate { lower, samples: ratios.len(), perturbation_scale: scale, ratios })
}
