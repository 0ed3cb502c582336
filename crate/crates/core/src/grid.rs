//! Image and measurement containers, norms, and image-quality metrics.

use crate::error::{invalid, shape_err, Result};

/// PSNR reported for identical images, so that tabular output stays numeric.
pub const PSNR_CAP_DB: f64 = 300.0;

/// Side length of the Gaussian SSIM window.
pub const SSIM_WINDOW: usize = 11;
/// Standard deviation of the Gaussian SSIM window, in pixels.
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Flat view over the real scalars backing an image or measurement.
pub trait Samples {
    fn samples(&self) -> &[f64];
}

/// Real-valued 2D grid stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        if values.len() != width * height {
            return shape_err(format!(
                "{} values for a {width}x{height} image",
                values.len()
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite pixel at index {i}"));
        }
        Ok(Self { width, height, values })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds an image from `f(row, col)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self::new(width, height, values)
    }

    /// Skips the finiteness scan; callers that may produce non-finite values
    /// check [`Image::is_finite`] themselves.
    pub(crate) fn from_raw(width: usize, height: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        Self { width, height, values }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
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

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.width + col] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return shape_err(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            ));
        }
        Ok(())
    }

    pub fn l2_norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn dot(&self, other: &Image) -> f64 {
        dot(&self.values, &other.values)
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &Image) -> Image {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + alpha * b)
            .collect();
        Image::from_raw(self.width, self.height, values)
    }

    pub fn sub(&self, other: &Image) -> Image {
        self.axpy(-1.0, other)
    }

    pub fn add(&self, other: &Image) -> Image {
        self.axpy(1.0, other)
    }

    pub fn scale(&self, alpha: f64) -> Image {
        self.map(|v| v * alpha)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image::from_raw(self.width, self.height, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn min_max(&self) -> (f64, f64) {
        min_max(&self.values)
    }
}

impl Samples for Image {
    fn samples(&self) -> &[f64] {
        &self.values
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width < 2 || height < 2 {
        return shape_err(format!("image must be at least 2x2, got {width}x{height}"));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MeasurementKind {
    /// Real line integrals, one value per (angle, detector) bin.
    Radon,
    /// Complex Fourier samples stored as interleaved `(re, im)` pairs.
    Fourier,
}

impl MeasurementKind {
    /// Real scalars per sample.
    pub fn stride(self) -> usize {
        match self {
            MeasurementKind::Radon => 1,
            MeasurementKind::Fourier => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MeasurementKind::Radon => "radon",
            MeasurementKind::Fourier => "fourier",
        }
    }
}

/// Forward-model samples. The inner product on this space is the real part of
/// the complex inner product with conjugation on the second argument, which for
/// interleaved storage is the plain dot product of the raw scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    kind: MeasurementKind,
    values: Vec<f64>,
}

impl Measurement {
    pub fn new(kind: MeasurementKind, values: Vec<f64>) -> Result<Self> {
        if values.len() % kind.stride() != 0 {
            return shape_err(format!(
                "{} scalars cannot hold complex pairs",
                values.len()
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite measurement entry at index {i}"));
        }
        Ok(Self { kind, values })
    }

    pub fn zeros(kind: MeasurementKind, samples: usize) -> Self {
        Self { kind, values: vec![0.0; samples * kind.stride()] }
    }

    pub(crate) fn from_raw(kind: MeasurementKind, values: Vec<f64>) -> Self {
        Self { kind, values }
    }

    pub fn kind(&self) -> MeasurementKind {
        self.kind
    }

    /// Number of samples (complex pairs count once).
    pub fn len(&self) -> usize {
        self.values.len() / self.kind.stride()
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

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn dot(&self, other: &Measurement) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn axpy(&self, alpha: f64, other: &Measurement) -> Measurement {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + alpha * b)
            .collect();
        Measurement::from_raw(self.kind, values)
    }

    pub fn sub(&self, other: &Measurement) -> Measurement {
        self.axpy(-1.0, other)
    }

    pub fn scale(&self, alpha: f64) -> Measurement {
        Measurement::from_raw(self.kind, self.values.iter().map(|v| v * alpha).collect())
    }

    pub fn min_max(&self) -> (f64, f64) {
        min_max(&self.values)
    }
}

impl Samples for Measurement {
    fn samples(&self) -> &[f64] {
        &self.values
    }
}

/// Euclidean norm; complex samples contribute their squared modulus.
pub fn l2_norm<S: Samples + ?Sized>(x: &S) -> f64 {
    norm(x.samples())
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub psnr: f64,
    pub ssim: f64,
    pub l2_error: f64,
}

impl MetricsReport {
    pub fn compute(reference: &Image, candidate: &Image, peak: f64) -> Result<Self> {
        Ok(Self {
            psnr: psnr(reference, candidate, peak)?,
            ssim: ssim(reference, candidate, peak)?,
            l2_error: reference.sub(candidate).l2_norm(),
        })
    }
}

fn check_pair(reference: &Image, candidate: &Image, peak: f64) -> Result<()> {
    reference.same_dims(candidate)?;
    if !(peak > 0.0 && peak.is_finite()) {
        return invalid(format!("peak must be positive, got {peak}"));
    }
    if !reference.is_finite() || !candidate.is_finite() {
        return invalid("non-finite pixel in metric input");
    }
    Ok(())
}

/// Peak signal-to-noise ratio in decibels, capped at [`PSNR_CAP_DB`].
pub fn psnr(reference: &Image, candidate: &Image, peak: f64) -> Result<f64> {
    check_pair(reference, candidate, peak)?;
    let mse = reference
        .values()
        .iter()
        .zip(candidate.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Valid-region separable Gaussian filter.
fn filter_valid(src: &[f64], width: usize, height: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let ow = width + 1 - k;
    let oh = height + 1 - k;
    let mut rows = vec![0.0; height * ow];
    for r in 0..height {
        let line = &src[r * width..(r + 1) * width];
        for c in 0..ow {
            rows[r * ow + c] = taps.iter().zip(&line[c..c + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..k).map(|i| taps[i] * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean structural similarity over all fully-contained 11x11 Gaussian windows.
pub fn ssim(reference: &Image, candidate: &Image, peak: f64) -> Result<f64> {
    check_pair(reference, candidate, peak)?;
    let (w, h) = reference.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return shape_err(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        ));
    }
    let x = reference.values();
    let y = candidate.values();
    let taps = gaussian_taps();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();

    let mu_x = filter_valid(x, w, h, &taps);
    let mu_y = filter_valid(y, w, h, &taps);
    let e_xx = filter_valid(&xx, w, h, &taps);
    let e_yy = filter_valid(&yy, w, h, &taps);
    let e_xy = filter_valid(&xy, w, h, &taps);

    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = e_xx[i] - mx * mx;
        let vy = e_yy[i] - my * my;
        let cxy = e_xy[i] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
            / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    let mean = total / mu_x.len() as f64;
    if reference == candidate {
        // Rounding in the filtered moments can leave a last-ulp residue.
        return Ok(1.0);
    }
    Ok(mean.clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    fn img(w: usize, h: usize, v: &[f64]) -> Image {
        Image::new(w, h, v.to_vec()).unwrap()
    }

    #[test]
    fn rejects_degenerate_and_non_finite_images() {
        assert!(matches!(Image::zeros(1, 5), Err(Error::Shape(_))));
        assert!(matches!(
            Image::new(2, 2, vec![0.0, f64::NAN, 0.0, 0.0]),
            Err(Error::Validation(_))
        ));
        assert!(Image::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn psnr_identical_is_cap() {
        let a = Image::from_fn(5, 4, |r, c| (r * 3 + c) as f64 * 0.1).unwrap();
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_hand_values() {
        let zero = Image::zeros(4, 4).unwrap();
        let tenth = Image::filled(4, 4, 0.1).unwrap();
        assert!((psnr(&zero, &tenth, 1.0).unwrap() - 20.0).abs() < 1e-9);

        let z2 = Image::zeros(2, 2).unwrap();
        let one = img(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        // 10 log10(1 / 0.25)
        assert!((psnr(&z2, &one, 1.0).unwrap() - 6.020599913279624).abs() < 1e-9);
    }

    #[test]
    fn psnr_errors() {
        let a = Image::zeros(4, 4).unwrap();
        let b = Image::zeros(4, 5).unwrap();
        assert!(matches!(psnr(&a, &b, 1.0), Err(Error::Shape(_))));
        assert!(matches!(psnr(&a, &a, 0.0), Err(Error::Validation(_))));
    }

    /// Straight-from-definition SSIM: explicit weighted moments for every window.
    fn ssim_oracle(a: &Image, b: &Image, peak: f64) -> f64 {
        let k = SSIM_WINDOW;
        let half = (k / 2) as f64;
        let mut wts = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                let (di, dj) = (i as f64 - half, j as f64 - half);
                wts[i * k + j] = (-(di * di + dj * dj) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            }
        }
        let s: f64 = wts.iter().sum();
        wts.iter_mut().for_each(|w| *w /= s);
        let c1 = (SSIM_K1 * peak).powi(2);
        let c2 = (SSIM_K2 * peak).powi(2);
        let (w, h) = a.dims();
        let mut acc = 0.0;
        let mut count = 0;
        for r0 in 0..=h - k {
            for c0 in 0..=w - k {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        mx += wts[i * k + j] * a.get(r0 + i, c0 + j);
                        my += wts[i * k + j] * b.get(r0 + i, c0 + j);
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let dx = a.get(r0 + i, c0 + j) - mx;
                        let dy = b.get(r0 + i, c0 + j) - my;
                        vx += wts[i * k + j] * dx * dx;
                        vy += wts[i * k + j] * dy * dy;
                        cxy += wts[i * k + j] * dx * dy;
                    }
                }
                acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        acc / count as f64
    }

    #[test]
    fn ssim_identity_and_bounds() {
        let a = Image::from_fn(16, 16, |r, c| ((r * 7 + c * 3) % 5) as f64 / 5.0).unwrap();
        assert_eq!(ssim(&a, &a, 1.0).unwrap(), 1.0);

        let half = Image::filled(16, 16, 0.5).unwrap();
        let shifted = Image::filled(16, 16, 1.5).unwrap();
        let s = ssim(&half, &shifted, 1.0).unwrap();
        assert!(s < 1.0 && s > -1.0);
    }

    #[test]
    fn ssim_single_flipped_pixel_matches_oracle() {
        let base = Image::zeros(16, 16).unwrap();
        let mut flipped = base.clone();
        flipped.set(7, 9, 1.0);
        let got = ssim(&base, &flipped, 1.0).unwrap();
        let want = ssim_oracle(&base, &flipped, 1.0);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        assert!(got < 1.0);
    }

    #[test]
    fn ssim_matches_oracle_on_textured_pair() {
        let a = Image::from_fn(20, 17, |r, c| ((r * r + 3 * c) % 11) as f64 / 11.0).unwrap();
        let b = Image::from_fn(20, 17, |r, c| ((r + c * c) % 7) as f64 / 7.0).unwrap();
        assert!((ssim(&a, &b, 1.0).unwrap() - ssim_oracle(&a, &b, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Image::zeros(10, 16).unwrap();
        assert!(matches!(ssim(&a, &a, 1.0), Err(Error::Shape(_))));
    }

    #[test]
    fn l2_norm_examples() {
        assert_eq!(Image::zeros(3, 3).unwrap().l2_norm(), 0.0);
        let mut one = Image::zeros(3, 3).unwrap();
        one.set(1, 2, 3.0);
        assert_eq!(l2_norm(&one), 3.0);
        assert_eq!(l2_norm(&Image::filled(2, 2, 1.0).unwrap()), 2.0);
        let m = Measurement::new(MeasurementKind::Fourier, vec![3.0, 4.0]).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(l2_norm(&m), 5.0);
    }

    fn image_strategy(w: usize, h: usize) -> impl Strategy<Value = Image> {
        prop::collection::vec(-1.0f64..1.0, w * h).prop_map(move |v| Image::new(w, h, v).unwrap())
    }

    proptest! {
        #[test]
        fn psnr_decreases_with_mse(base in image_strategy(6, 5), dir in image_strategy(6, 5), t in 0.01f64..1.0) {
            prop_assume!(dir.l2_norm() > 1e-6);
            let near = base.axpy(t, &dir);
            let far = base.axpy(t * 1.5, &dir);
            prop_assert!(psnr(&base, &near, 1.0).unwrap() > psnr(&base, &far, 1.0).unwrap());
        }

        #[test]
        fn ssim_self_and_symmetric(a in image_strategy(12, 13), b in image_strategy(12, 13)) {
            prop_assert_eq!(ssim(&a, &a, 2.0).unwrap(), 1.0);
            let ab = ssim(&a, &b, 2.0).unwrap();
            let ba = ssim(&b, &a, 2.0).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
        }

        #[test]
        fn l2_triangle(a in image_strategy(4, 3), b in image_strategy(4, 3)) {
            let lhs = a.add(&b).l2_norm();
            let rhs = a.l2_norm() + b.l2_norm();
            prop_assert!(lhs <= rhs * (1.0 + 1e-12));
        }
    }
}
