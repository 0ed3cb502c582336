//! Linear measurement operators and their exact adjoints.

pub mod fourier;
pub mod mask;
pub mod radon;

use crate::error::{invalid, shape_err, Result};
use crate::grid::{dot, Image, Measurement, MeasurementKind};

pub use fourier::FourierModel;
pub use mask::{make_mask, FourierMask, MaskPattern};
pub use radon::{detector_count, select_views, RadonGeometry, RadonModel};

/// Ridge added to `AᵀA` when projecting onto the row space.
pub const PROJECTION_RIDGE: f64 = 1e-10;

#[derive(Clone, Debug)]
pub enum ForwardModel {
    Radon(RadonModel),
    Fourier(FourierModel),
}

impl From<RadonModel> for ForwardModel {
    fn from(m: RadonModel) -> Self {
        ForwardModel::Radon(m)
    }
}

impl From<FourierModel> for ForwardModel {
    fn from(m: FourierModel) -> Self {
        ForwardModel::Fourier(m)
    }
}

impl ForwardModel {
    pub fn radon(geometry: RadonGeometry) -> Self {
        ForwardModel::Radon(RadonModel::new(geometry))
    }

    pub fn fourier(mask: FourierMask) -> Self {
        ForwardModel::Fourier(FourierModel::new(mask))
    }

    pub fn kind(&self) -> MeasurementKind {
        match self {
            ForwardModel::Radon(_) => MeasurementKind::Radon,
            ForwardModel::Fourier(_) => MeasurementKind::Fourier,
        }
    }

    /// Number of samples `m` (complex samples count once).
    pub fn row_count(&self) -> usize {
        match self {
            ForwardModel::Radon(m) => m.row_count(),
            ForwardModel::Fourier(m) => m.row_count(),
        }
    }

    /// Number of real scalars in a measurement.
    pub fn scalar_count(&self) -> usize {
        self.row_count() * self.kind().stride()
    }

    pub fn col_count(&self) -> usize {
        let (w, h) = self.dims();
        w * h
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            ForwardModel::Radon(m) => {
                let s = m.geometry().side();
                (s, s)
            }
            ForwardModel::Fourier(m) => m.mask().dims(),
        }
    }

    pub fn apply(&self, f: &Image) -> Result<Measurement> {
        match self {
            ForwardModel::Radon(m) => m.apply(f),
            ForwardModel::Fourier(m) => m.apply(f),
        }
    }

    pub fn adjoint(&self, p: &Measurement) -> Result<Image> {
        match self {
            ForwardModel::Radon(m) => m.adjoint(p),
            ForwardModel::Fourier(m) => m.adjoint(p),
        }
    }

    pub fn zero_measurement(&self) -> Measurement {
        Measurement::zeros(self.kind(), self.row_count())
    }

    pub fn zero_image(&self) -> Image {
        let (w, h) = self.dims();
        Image::from_raw(w, h, vec![0.0; w * h])
    }

    pub fn check_measurement(&self, p: &Measurement) -> Result<()> {
        if p.kind() != self.kind() || p.len() != self.row_count() {
            return shape_err(format!(
                "model expects {} {} samples, got {} {}",
                self.row_count(),
                self.kind().as_str(),
                p.len(),
                p.kind().as_str()
            ));
        }
        Ok(())
    }

    pub fn check_image(&self, f: &Image) -> Result<()> {
        if f.dims() != self.dims() {
            let (w, h) = self.dims();
            return shape_err(format!("model expects {w}x{h}, got {}x{}", f.width(), f.height()));
        }
        Ok(())
    }

    /// One-line human readable summary, stable across runs.
    pub fn descriptor(&self) -> String {
        match self {
            ForwardModel::Radon(m) => {
                let g = m.geometry();
                format!(
                    "radon side={} views={} detectors={}",
                    g.side(),
                    g.num_angles(),
                    g.num_detectors()
                )
            }
            ForwardModel::Fourier(m) => {
                let mask = m.mask();
                let (w, h) = mask.dims();
                format!(
                    "fourier {w}x{h} pattern={} rate={} seed={} samples={}",
                    mask.pattern(),
                    mask.sampling_rate(),
                    mask.seed(),
                    mask.popcount()
                )
            }
        }
    }

    /// Solves `(AᵀA + ridge·I) x = b` by conjugate gradients from `x = 0`.
    ///
    /// The iterates stay in the Krylov space of `b`, so for `b = Aᵀ p` the
    /// result approaches the minimum-norm least-squares solution of `A x = p`
    /// even where `AᵀA` is singular.
    pub fn solve_normal(&self, b: &Image, ridge: f64, tol: f64, max_iter: usize) -> Result<Image> {
        self.check_image(b)?;
        if !(ridge >= 0.0) {
            return invalid(format!("ridge must be non-negative, got {ridge}"));
        }
        let (w, h) = self.dims();
        let normal = |v: &[f64]| -> Result<Vec<f64>> {
            let img = Image::from_raw(w, h, v.to_vec());
            let mut out = self.adjoint(&self.apply(&img)?)?.into_values();
            for (o, x) in out.iter_mut().zip(v) {
                *o += ridge * x;
            }
            Ok(out)
        };
        let rhs = b.values();
        let bnorm = rhs.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut x = vec![0.0; rhs.len()];
        if bnorm == 0.0 {
            return Ok(Image::from_raw(w, h, x));
        }
        let mut r = rhs.to_vec();
        let mut d = r.clone();
        let mut rr = dot(&r, &r);
        for _ in 0..max_iter {
            if rr.sqrt() <= tol * bnorm {
                break;
            }
            let q = normal(&d)?;
            let dq = dot(&d, &q);
            if dq <= 0.0 {
                break;
            }
            let alpha = rr / dq;
            for i in 0..x.len() {
                x[i] += alpha * d[i];
                r[i] -= alpha * q[i];
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..d.len() {
                d[i] = r[i] + beta * d[i];
            }
        }
        Ok(Image::from_raw(w, h, x))
    }

    /// `(AᵀA + ridge)⁻¹ b` with the default ridge and tolerances.
    pub fn normal_inverse(&self, b: &Image) -> Result<Image> {
        self.solve_normal(b, PROJECTION_RIDGE, 1e-14, 1000)
    }

    /// Minimum-norm least-squares reconstruction `A⁺ p`.
    pub fn pseudo_inverse(&self, p: &Measurement) -> Result<Image> {
        self.normal_inverse(&self.adjoint(p)?)
    }

    /// Orthogonal projection of `f` onto `range(Aᵀ)`.
    pub fn project_observable(&self, f: &Image) -> Result<Image> {
        self.pseudo_inverse(&self.apply(f)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |_, _| rng.gen_range(-1.0..1.0)).unwrap()
    }

    fn random_measurement(rng: &mut ChaCha8Rng, model: &ForwardModel) -> Measurement {
        let v = (0..model.scalar_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Measurement::new(model.kind(), v).unwrap()
    }

    fn models() -> Vec<ForwardModel> {
        vec![
            ForwardModel::fourier(make_mask(MaskPattern::Gaussian2d, 0.3, (16, 12), 7).unwrap()),
            ForwardModel::fourier(make_mask(MaskPattern::Radial, 0.25, (16, 16), 2).unwrap()),
            ForwardModel::radon(RadonGeometry::uniform(9, 15).unwrap()),
        ]
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for model in models() {
            let (w, h) = model.dims();
            for _ in 0..100 {
                let f = random_image(&mut rng, w, h);
                let p = random_measurement(&mut rng, &model);
                let af = model.apply(&f).unwrap();
                let lhs = af.dot(&p);
                let rhs = f.dot(&model.adjoint(&p).unwrap());
                let rel = (lhs - rhs).abs() / (af.l2_norm() * p.l2_norm());
                assert!(rel <= 1e-10, "{}: {rel}", model.descriptor());
            }
        }
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for model in models() {
            let (w, h) = model.dims();
            let f = random_image(&mut rng, w, h);
            let g = random_image(&mut rng, w, h);
            let (a, b) = (1.7, -0.4);
            let combo = f.scale(a).add(&g.scale(b));
            let lhs = model.apply(&combo).unwrap();
            let rhs = model.apply(&f).unwrap().scale(a).axpy(b, &model.apply(&g).unwrap());
            let err = lhs.sub(&rhs).l2_norm();
            assert!(err <= 1e-10 * (1.0 + lhs.l2_norm()));
        }
    }

    #[test]
    fn projection_is_idempotent_and_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for model in models().into_iter().take(2) {
            let (w, h) = model.dims();
            let f = random_image(&mut rng, w, h);
            let pf = model.project_observable(&f).unwrap();
            let ppf = model.project_observable(&pf).unwrap();
            assert!(pf.sub(&ppf).l2_norm() < 1e-8 * f.l2_norm());
            // the discarded part lies in the null space
            let resid = model.apply(&f.sub(&pf)).unwrap();
            assert!(resid.l2_norm() < 1e-8 * f.l2_norm());
            assert!(pf.l2_norm() <= f.l2_norm() + 1e-12);
        }
    }

    #[test]
    fn full_mask_projection_is_identity() {
        let model = ForwardModel::fourier(make_mask(MaskPattern::Full, 1.0, (8, 8), 0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_image(&mut rng, 8, 8);
        let pf = model.project_observable(&f).unwrap();
        assert!(pf.sub(&f).l2_norm() < 1e-9);
    }

    #[test]
    fn undersampling_loses_information() {
        let n = 32;
        let f = Image::from_fn(n, n, |r, c| {
            let (x, y) = (c as f64 - 15.5, r as f64 - 15.5);
            (-(x * x + y * y) / 60.0).exp()
        })
        .unwrap();
        let full = ForwardModel::fourier(make_mask(MaskPattern::Full, 1.0, (n, n), 0).unwrap());
        let sub = ForwardModel::fourier(make_mask(MaskPattern::Gaussian2d, 0.3, (n, n), 7).unwrap());
        let rt = |m: &ForwardModel| m.adjoint(&m.apply(&f).unwrap()).unwrap();
        let p_full = crate::grid::psnr(&f, &rt(&full), 1.0).unwrap();
        let p_sub = crate::grid::psnr(&f, &rt(&sub), 1.0).unwrap();
        assert!(p_sub < p_full);
    }

    fn centroid(p: &[f64], geometry: &RadonGeometry, angle: usize) -> f64 {
        let d = geometry.num_detectors();
        let row = &p[angle * d..(angle + 1) * d];
        let mass: f64 = row.iter().sum();
        row.iter().enumerate().map(|(i, v)| v * geometry.detector_offset(i)).sum::<f64>() / mass
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn translated_impulse_shifts_bins(
            r0 in 4usize..12, c0 in 4usize..12, dr in -3i64..=3, dc in -3i64..=3
        ) {
            let side = 16;
            let geometry = RadonGeometry::uniform(7, side).unwrap();
            let model = RadonModel::new(geometry.clone());
            let impulse = |r: usize, c: usize| {
                let mut f = Image::zeros(side, side).unwrap();
                f.set(r, c, 1.0);
                model.apply(&f).unwrap().into_values()
            };
            let r1 = (r0 as i64 + dr) as usize;
            let c1 = (c0 as i64 + dc) as usize;
            let a = impulse(r0, c0);
            let b = impulse(r1, c1);
            for (k, &theta) in geometry.angles().iter().enumerate() {
                // +dc moves x right, +dr moves y down
                let expected = dc as f64 * theta.cos() - dr as f64 * theta.sin();
                let shift = centroid(&b, &geometry, k) - centroid(&a, &geometry, k);
                prop_assert!((shift - expected).abs() < 1e-9, "angle {k}: {shift} vs {expected}");
            }
        }
    }
}
