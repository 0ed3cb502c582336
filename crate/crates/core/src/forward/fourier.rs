//! Masked unitary 2D DFT.
//!
//! Samples are the mask-true frequency locations in row-major order over the
//! unshifted FFT grid (DC at index 0), stored as interleaved `(re, im)` pairs.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{shape_err, Result};
use crate::forward::mask::FourierMask;
use crate::grid::{Image, Measurement, MeasurementKind};

#[derive(Clone)]
pub struct FourierModel {
    mask: FourierMask,
    sampled: Vec<usize>,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FourierModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FourierModel")
            .field("mask", &self.mask)
            .field("samples", &self.sampled.len())
            .finish()
    }
}

impl FourierModel {
    pub fn new(mask: FourierMask) -> Self {
        let (w, h) = mask.dims();
        let mut planner = FftPlanner::new();
        let sampled = mask
            .grid()
            .iter()
            .enumerate()
            .filter_map(|(i, &on)| on.then_some(i))
            .collect();
        Self {
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
            mask,
            sampled,
        }
    }

    pub fn mask(&self) -> &FourierMask {
        &self.mask
    }

    /// Flat grid indices of the sampled frequencies, in measurement order.
    pub fn sampled_indices(&self) -> &[usize] {
        &self.sampled
    }

    pub fn row_count(&self) -> usize {
        self.sampled.len()
    }

    pub fn col_count(&self) -> usize {
        let (w, h) = self.mask.dims();
        w * h
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let (w, h) = self.mask.dims();
        let (rows, cols) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        for line in buf.chunks_mut(w) {
            rows.process(line);
        }
        let mut column = vec![Complex64::default(); h];
        for c in 0..w {
            for r in 0..h {
                column[r] = buf[r * w + c];
            }
            cols.process(&mut column);
            for r in 0..h {
                buf[r * w + c] = column[r];
            }
        }
        let norm = 1.0 / ((w * h) as f64).sqrt();
        buf.iter_mut().for_each(|z| *z *= norm);
    }

    /// Full unitary spectrum of a real image, row-major.
    pub fn spectrum(&self, f: &Image) -> Result<Vec<Complex64>> {
        if f.dims() != self.mask.dims() {
            let (w, h) = self.mask.dims();
            return shape_err(format!(
                "mask is {w}x{h}, image is {}x{}",
                f.width(),
                f.height()
            ));
        }
        let mut buf: Vec<Complex64> = f.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, false);
        Ok(buf)
    }

    pub fn apply(&self, f: &Image) -> Result<Measurement> {
        let spec = self.spectrum(f)?;
        let mut out = Vec::with_capacity(2 * self.sampled.len());
        for &i in &self.sampled {
            out.push(spec[i].re);
            out.push(spec[i].im);
        }
        Ok(Measurement::from_raw(MeasurementKind::Fourier, out))
    }

    /// Zero-fill, unitary inverse DFT, real part.
    pub fn adjoint(&self, p: &Measurement) -> Result<Image> {
        if p.kind() != MeasurementKind::Fourier || p.len() != self.sampled.len() {
            return shape_err(format!(
                "expected {} fourier samples, got {} {}",
                self.sampled.len(),
                p.len(),
                p.kind().as_str()
            ));
        }
        let (w, h) = self.mask.dims();
        let mut buf = vec![Complex64::default(); w * h];
        for (k, &i) in self.sampled.iter().enumerate() {
            buf[i] = Complex64::new(p.values()[2 * k], p.values()[2 * k + 1]);
        }
        self.transform(&mut buf, true);
        Ok(Image::from_raw(w, h, buf.into_iter().map(|z| z.re).collect()))
    }
}
