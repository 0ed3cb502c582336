//! Total-variation sparsification.
//!
//! Each pixel is replaced by the average, over its four neighbours, of the
//! pairwise pseudo-inverse of the soft-threshold kernel. Pairs closer than
//! `ε` collapse to their mean; larger steps survive shrunk by `ε/2` per side.
//! A neighbour outside the grid contributes the centre value.

use crate::error::{invalid, Result};
use crate::grid::Image;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdParams {
    epsilon: f64,
}

impl ThresholdParams {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return invalid(format!("epsilon must be finite and positive, got {epsilon}"));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// Forward differences; the first column of `dx` and first row of `dy` are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    pub dx: Image,
    pub dy: Image,
}

impl GradientField {
    /// Anisotropic total variation `Σ |dx| + |dy|`.
    pub fn total_variation(&self) -> f64 {
        self.dx.values().iter().chain(self.dy.values()).map(|v| v.abs()).sum()
    }

    /// Entries with magnitude at least `threshold`.
    pub fn support_size(&self, threshold: f64) -> usize {
        self.dx
            .values()
            .iter()
            .chain(self.dy.values())
            .filter(|v| v.abs() >= threshold && **v != 0.0)
            .count()
    }
}

pub fn gradient_transform(f: &Image) -> GradientField {
    let (w, h) = f.dims();
    let v = f.values();
    let mut dx = vec![0.0; w * h];
    let mut dy = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c > 0 {
                dx[i] = v[i] - v[i - 1];
            }
            if r > 0 {
                dy[i] = v[i] - v[i - w];
            }
        }
    }
    GradientField { dx: Image::from_raw(w, h, dx), dy: Image::from_raw(w, h, dy) }
}

pub fn total_variation(f: &Image) -> f64 {
    gradient_transform(f).total_variation()
}

pub fn soft_threshold(x: f64, epsilon: f64) -> f64 {
    if x.abs() < epsilon {
        0.0
    } else if x > 0.0 {
        x - epsilon
    } else {
        x + epsilon
    }
}

pub fn soft_threshold_pinv(va: f64, vb: f64, epsilon: f64) -> f64 {
    let d = va - vb;
    if d > epsilon {
        va - epsilon / 2.0
    } else if d < -epsilon {
        va + epsilon / 2.0
    } else {
        (va + vb) / 2.0
    }
}

/// Partial derivatives of [`soft_threshold_pinv`] with respect to `(va, vb)`.
/// The boundary `|va - vb| = ε` belongs to the mean branch.
pub fn soft_threshold_pinv_partials(va: f64, vb: f64, epsilon: f64) -> (f64, f64) {
    if (va - vb).abs() <= epsilon {
        (0.5, 0.5)
    } else {
        (1.0, 0.0)
    }
}

/// In-grid neighbours (right, down, left, up) of `(r, c)`; `None` off the grid.
#[inline]
fn neighbours(r: usize, c: usize, w: usize, h: usize) -> [Option<usize>; 4] {
    let i = r * w + c;
    [
        (c + 1 < w).then_some(i + 1),
        (r + 1 < h).then_some(i + w),
        (c > 0).then(|| i - 1),
        (r > 0).then(|| i - w),
    ]
}

pub fn sparsify(f_half: &Image, params: ThresholdParams) -> Image {
    let eps = params.epsilon();
    let (w, h) = f_half.dims();
    let v = f_half.values();
    let mut out = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let centre = v[i];
            let mut acc = 0.0;
            for n in neighbours(r, c, w, h) {
                acc += match n {
                    Some(j) => soft_threshold_pinv(centre, v[j], eps),
                    None => centre,
                };
            }
            out[i] = 0.25 * acc;
        }
    }
    Image::from_raw(w, h, out)
}

/// Vector-Jacobian product of [`sparsify`] at `f_half`.
pub fn sparsify_vjp(f_half: &Image, cotangent: &Image, params: ThresholdParams) -> Result<Image> {
    f_half.same_dims(cotangent)?;
    let eps = params.epsilon();
    let (w, h) = f_half.dims();
    let v = f_half.values();
    let g = cotangent.values();
    let mut out = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let gi = 0.25 * g[i];
            if gi == 0.0 {
                continue;
            }
            for n in neighbours(r, c, w, h) {
                match n {
                    Some(j) => {
                        let (da, db) = soft_threshold_pinv_partials(v[i], v[j], eps);
                        out[i] += da * gi;
                        out[j] += db * gi;
                    }
                    None => out[i] += gi,
                }
            }
        }
    }
    Ok(Image::from_raw(w, h, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn eps(e: f64) -> ThresholdParams {
        ThresholdParams::new(e).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(ThresholdParams::new(0.0).is_err());
        assert!(ThresholdParams::new(-1.0).is_err());
        assert!(ThresholdParams::new(f64::INFINITY).is_err());
    }

    #[test]
    fn gradient_examples() {
        let g = gradient_transform(&Image::filled(4, 3, 2.5).unwrap());
        assert!(g.dx.values().iter().chain(g.dy.values()).all(|&v| v == 0.0));

        let ramp = Image::from_fn(4, 4, |_, c| c as f64).unwrap();
        let g = gradient_transform(&ramp);
        for r in 0..4 {
            assert_eq!(g.dx.get(r, 0), 0.0);
            for c in 1..4 {
                assert_eq!(g.dx.get(r, c), 1.0);
            }
        }
        assert!(g.dy.values().iter().all(|&v| v == 0.0));

        let mut imp = Image::zeros(3, 3).unwrap();
        imp.set(1, 1, 1.0);
        let g = gradient_transform(&imp);
        let nz = g.dx.values().iter().chain(g.dy.values()).filter(|&&v| v != 0.0).count();
        assert_eq!(nz, 4);
        assert_eq!(g.total_variation(), 4.0);
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(soft_threshold(0.3, 0.5), 0.0);
        assert_eq!(soft_threshold(1.0, 0.5), 0.5);
        assert!((soft_threshold(-1.2, 0.5) + 0.7).abs() < 1e-15);
        assert_eq!(soft_threshold(0.5, 0.5), 0.0);
        assert_eq!(soft_threshold_pinv(1.0, 1.0, 0.5), 1.0);
        assert_eq!(soft_threshold_pinv(2.0, 1.0, 0.5), 1.75);
        assert_eq!(soft_threshold_pinv(1.0, 2.0, 0.5), 1.25);
    }

    #[test]
    fn constant_image_is_fixed() {
        let f = Image::filled(5, 4, -0.3).unwrap();
        assert_eq!(sparsify(&f, eps(0.7)), f);
    }

    #[test]
    fn two_pixel_step() {
        // a 2x2 image whose columns are the pair (2, 1): vertical pairs are equal
        let f = Image::new(2, 2, vec![2.0, 1.0, 2.0, 1.0]).unwrap();
        let out = sparsify(&f, eps(0.5));
        // left pixel: right nbr 1.75, down nbr 2, two missing 2 -> mean of (1.75, 2, 2, 2)
        assert!((out.get(0, 0) - (1.75 + 6.0) / 4.0).abs() < 1e-15);
        assert!((out.get(0, 1) - (1.25 + 3.0) / 4.0).abs() < 1e-15);
        assert_eq!(soft_threshold_pinv(2.0, 1.0, 0.5) - soft_threshold_pinv(1.0, 2.0, 0.5), 0.5);
    }

    #[test]
    fn small_noise_reduces_tv() {
        let e = 0.2;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = Image::from_fn(8, 8, |_, _| 1.0 + rng.gen_range(-e / 4.0..e / 4.0)).unwrap();
        assert!(total_variation(&sparsify(&f, eps(e))) < total_variation(&f));
    }

    #[test]
    fn tiny_epsilon_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = Image::from_fn(9, 7, |_, _| rng.gen_range(-1.0..1.0)).unwrap();
        let out = sparsify(&f, eps(1e-12));
        assert!(f.values().iter().zip(out.values()).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn tv_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let w = rng.gen_range(2..9);
            let h = rng.gen_range(2..9);
            let scale = rng.gen_range(0.01..3.0);
            let f = Image::from_fn(w, h, |_, _| scale * rng.gen_range(-1.0..1.0)).unwrap();
            let e = rng.gen_range(1e-3..2.0);
            let before = total_variation(&f);
            let after = total_variation(&sparsify(&f, eps(e)));
            assert!(after <= before + 1e-12 * before.max(1.0), "{after} > {before}");
        }
    }

    #[test]
    fn vjp_constant_ones() {
        let f = Image::filled(3, 3, 0.4).unwrap();
        let ones = Image::filled(3, 3, 1.0).unwrap();
        let g = sparsify_vjp(&f, &ones, eps(0.1)).unwrap();
        assert!(g.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let zero = sparsify_vjp(&f, &Image::zeros(3, 3).unwrap(), eps(0.1)).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let e = 0.3;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut checked = 0;
        while checked < 20 {
            let f = Image::from_fn(6, 5, |_, _| rng.gen_range(-1.0..1.0)).unwrap();
            // skip draws with a pair difference within 1e-3 of a branch boundary
            let near_kink = (0..5).any(|r| {
                (0..6).any(|c| {
                    neighbours(r, c, 6, 5).iter().flatten().any(|&j| {
                        ((f.values()[r * 6 + c] - f.values()[j]).abs() - e).abs() < 1e-3
                    })
                })
            });
            if near_kink {
                continue;
            }
            checked += 1;
            let cot = Image::from_fn(6, 5, |_, _| rng.gen_range(-1.0..1.0)).unwrap();
            let dir = Image::from_fn(6, 5, |_, _| rng.gen_range(-1.0..1.0)).unwrap();
            let h = 1e-6;
            let plus = sparsify(&f.axpy(h, &dir), eps(e));
            let minus = sparsify(&f.axpy(-h, &dir), eps(e));
            let fd = plus.sub(&minus).dot(&cot) / (2.0 * h);
            let an = sparsify_vjp(&f, &cot, eps(e)).unwrap().dot(&dir);
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "{fd} vs {an}");
        }
    }

    proptest! {
        #[test]
        fn commutes_with_constant_shift(
            vals in prop::collection::vec(-2.0f64..2.0, 20), shift in -5.0f64..5.0, e in 0.01f64..1.0
        ) {
            // dyadic values keep the shift exact in floating point
            let q = |x: f64| (x * 64.0).round() / 64.0;
            let f = Image::new(5, 4, vals.iter().map(|&v| q(v)).collect()).unwrap();
            let s = q(shift);
            let e = q(e).max(1.0 / 64.0);
            let a = sparsify(&f.map(|v| v + s), eps(e));
            let b = sparsify(&f, eps(e)).map(|v| v + s);
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn soft_threshold_is_shrinkage(x in -10.0f64..10.0, e in 1e-6f64..5.0) {
            let y = soft_threshold(x, e);
            prop_assert!(y.abs() <= x.abs());
            prop_assert!(y == 0.0 || y.signum() == x.signum());
        }
    }
}
