//! Parallel-beam discrete Radon transform.
//!
//! Each pixel is a unit square of constant value. Its exact projection onto
//! the detector axis (a trapezoid) is sampled by linear interpolation onto
//! unit-spaced detector bins, so the weights of one pixel at one angle sum
//! to 1 and their centroid is the projected pixel centre. The forward and
//! adjoint passes walk the same precomputed weight table.

use std::f64::consts::PI;

use crate::error::{invalid, shape_err, Result};
use crate::grid::{Image, Measurement, MeasurementKind};

#[derive(Clone, Debug, PartialEq)]
pub struct RadonGeometry {
    angles: Vec<f64>,
    num_detectors: usize,
    side: usize,
}

/// Detector bins needed to cover the image diagonal at unit spacing.
pub fn detector_count(side: usize) -> usize {
    (std::f64::consts::SQRT_2 * side as f64).ceil() as usize
}

impl RadonGeometry {
    /// `num_angles` views uniformly spaced over `[0, pi)`.
    pub fn uniform(num_angles: usize, side: usize) -> Result<Self> {
        if num_angles == 0 {
            return invalid("at least one projection angle is required");
        }
        let angles = (0..num_angles).map(|k| PI * k as f64 / num_angles as f64).collect();
        Self::with_angles(angles, side)
    }

    pub fn with_angles(angles: Vec<f64>, side: usize) -> Result<Self> {
        if side < 2 {
            return shape_err(format!("image side must be at least 2, got {side}"));
        }
        if angles.is_empty() {
            return invalid("at least one projection angle is required");
        }
        if angles.iter().any(|a| !(0.0..PI).contains(a)) {
            return invalid("angles must lie in [0, pi)");
        }
        if angles.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("angles must be strictly increasing");
        }
        Ok(Self { angles, num_detectors: detector_count(side), side })
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn num_angles(&self) -> usize {
        self.angles.len()
    }

    pub fn num_detectors(&self) -> usize {
        self.num_detectors
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Signed detector coordinate of bin `d`, with zero at the rotation centre.
    pub fn detector_offset(&self, d: usize) -> f64 {
        d as f64 - (self.num_detectors as f64 - 1.0) / 2.0
    }

    /// Centre of pixel `(row, col)` in the detector frame; `y` points up.
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        let half = (self.side as f64 - 1.0) / 2.0;
        (col as f64 - half, half - row as f64)
    }
}

/// Keeps `kept` of `full_angles` uniformly spaced views; view `i` is taken
/// from index `floor(i * full / kept)` of the full scan.
pub fn select_views(full_angles: usize, kept: usize, side: usize) -> Result<RadonGeometry> {
    if kept == 0 {
        return invalid("cannot keep zero views");
    }
    if kept > full_angles {
        return invalid(format!("cannot keep {kept} of {full_angles} views"));
    }
    let angles = (0..kept)
        .map(|i| {
            let idx = i * full_angles / kept;
            PI * idx as f64 / full_angles as f64
        })
        .collect();
    RadonGeometry::with_angles(angles, side)
}

/// Weights of one pixel at one angle on up to four consecutive bins.
#[derive(Clone, Copy, Debug)]
struct Splat {
    first: u32,
    weights: [f64; 4],
}

/// Integral of the pixel footprint against the unit hat centred on each bin.
///
/// The footprint of a unit square projected at an angle with direction
/// cosines `(a, b)` is a trapezoid of area 1 centred at `u`, with outer half
/// width `(a + b) / 2` and plateau half width `|a - b| / 2`. Because the hat
/// kernels form a partition of unity that reproduces linear functions, the
/// weights sum to 1 and their first moment is exactly `u`.
fn footprint_weights(u: f64, a: f64, b: f64) -> (i64, [f64; 4]) {
    let outer = 0.5 * (a + b);
    let height = 1.0 / a.max(b);
    // near the axes the ramps vanish and the footprint is a box
    let inner = if a.min(b) < 1e-12 { outer } else { 0.5 * (a - b).abs() };
    let ramp = outer - inner;
    // The piece is chosen from `mid` so that segment endpoints sitting on a
    // jump take the one-sided value from inside the segment.
    let trap = |t: f64, mid: f64| {
        let rm = (mid - u).abs();
        if rm <= inner {
            height
        } else if rm >= outer {
            0.0
        } else {
            height * (outer - (t - u).abs()) / ramp
        }
    };
    let first = (u - outer - 1.0).floor() as i64 + 1;
    let mut weights = [0.0; 4];
    for (k, w) in weights.iter_mut().enumerate() {
        let d = (first + k as i64) as f64;
        let lo = (u - outer).max(d - 1.0);
        let hi = (u + outer).min(d + 1.0);
        if hi <= lo {
            continue;
        }
        let mut knots = [lo, hi, u - inner, u + inner, d, u - outer, u + outer];
        knots.sort_by(f64::total_cmp);
        let mut acc = 0.0;
        for pair in knots.windows(2) {
            let (x0, x1) = (pair[0].max(lo), pair[1].min(hi));
            if x1 <= x0 {
                continue;
            }
            // both factors are linear on each piece, so Simpson's rule is exact
            let mid = 0.5 * (x0 + x1);
            let f = |t: f64| trap(t, mid) * (1.0 - (t - d).abs());
            acc += (x1 - x0) / 6.0 * (f(x0) + 4.0 * f(mid) + f(x1));
        }
        *w = acc;
    }
    (first, weights)
}

#[derive(Clone, Debug)]
pub struct RadonModel {
    geometry: RadonGeometry,
    // angle-major, then pixel row-major
    splats: Vec<Splat>,
}

impl RadonModel {
    pub fn new(geometry: RadonGeometry) -> Self {
        let n = geometry.side;
        let d = geometry.num_detectors as i64;
        let origin = (d as f64 - 1.0) / 2.0;
        let mut splats = Vec::with_capacity(geometry.num_angles() * n * n);
        for &theta in &geometry.angles {
            let (s, c) = theta.sin_cos();
            for row in 0..n {
                for col in 0..n {
                    let (x, y) = geometry.pixel_center(row, col);
                    let (mut first, mut weights) = footprint_weights(x * c + y * s + origin, c.abs(), s.abs());
                    // bins beyond the detector are dropped; only far corners are affected
                    while first < 0 {
                        weights.rotate_left(1);
                        weights[3] = 0.0;
                        first += 1;
                    }
                    for (k, w) in weights.iter_mut().enumerate() {
                        if first + k as i64 >= d {
                            *w = 0.0;
                        }
                    }
                    let first = first.min(d - 1) as u32;
                    splats.push(Splat { first, weights });
                }
            }
        }
        Self { geometry, splats }
    }

    pub fn geometry(&self) -> &RadonGeometry {
        &self.geometry
    }

    pub fn row_count(&self) -> usize {
        self.geometry.num_angles() * self.geometry.num_detectors
    }

    pub fn col_count(&self) -> usize {
        self.geometry.side * self.geometry.side
    }

    pub fn apply(&self, f: &Image) -> Result<Measurement> {
        let n = self.geometry.side;
        if f.dims() != (n, n) {
            return shape_err(format!(
                "geometry expects {n}x{n}, image is {}x{}",
                f.width(),
                f.height()
            ));
        }
        let d = self.geometry.num_detectors;
        let npix = n * n;
        let mut out = vec![0.0; self.row_count()];
        for (a, sino) in out.chunks_mut(d).enumerate() {
            let table = &self.splats[a * npix..(a + 1) * npix];
            for (sp, &v) in table.iter().zip(f.values()) {
                let b = sp.first as usize;
                for (k, w) in sp.weights.iter().enumerate() {
                    if *w != 0.0 {
                        sino[b + k] += w * v;
                    }
                }
            }
        }
        Ok(Measurement::from_raw(MeasurementKind::Radon, out))
    }

    pub fn adjoint(&self, p: &Measurement) -> Result<Image> {
        if p.kind() != MeasurementKind::Radon || p.len() != self.row_count() {
            return shape_err(format!(
                "expected {} radon samples, got {} {}",
                self.row_count(),
                p.len(),
                p.kind().as_str()
            ));
        }
        let n = self.geometry.side;
        let d = self.geometry.num_detectors;
        let npix = n * n;
        let mut out = vec![0.0; npix];
        for (a, sino) in p.values().chunks(d).enumerate() {
            let table = &self.splats[a * npix..(a + 1) * npix];
            for (sp, o) in table.iter().zip(out.iter_mut()) {
                let b = sp.first as usize;
                for (k, w) in sp.weights.iter().enumerate() {
                    if *w != 0.0 {
                        *o += w * sino[b + k];
                    }
                }
            }
        }
        Ok(Image::from_raw(n, n, out))
    }

    /// Ram-Lak filter followed by backprojection, scaled by `pi / num_angles`.
    pub fn filtered_backprojection(&self, p: &Measurement) -> Result<Image> {
        let filtered = self.ramp_filter(p)?;
        Ok(self.adjoint(&filtered)?.scale(PI / self.geometry.num_angles() as f64))
    }

    /// Spatial-domain Ram-Lak convolution of each projection, truncated to the
    /// detector range. The kernel is even, so the operator is symmetric.
    pub fn ramp_filter(&self, p: &Measurement) -> Result<Measurement> {
        if p.kind() != MeasurementKind::Radon || p.len() != self.row_count() {
            return shape_err("measurement does not match radon geometry");
        }
        let d = self.geometry.num_detectors;
        let kernel: Vec<f64> = (0..d)
            .map(|k| match k {
                0 => 0.25,
                k if k % 2 == 1 => -1.0 / (PI * PI * (k * k) as f64),
                _ => 0.0,
            })
            .collect();
        let mut out = vec![0.0; p.values().len()];
        for (src, dst) in p.values().chunks(d).zip(out.chunks_mut(d)) {
            for (i, o) in dst.iter_mut().enumerate() {
                *o = src
                    .iter()
                    .enumerate()
                    .map(|(j, v)| kernel[i.abs_diff(j)] * v)
                    .sum();
            }
        }
        Ok(Measurement::from_raw(MeasurementKind::Radon, out))
    }
}
