//! Synthetic test objects: ellipse phantoms, glyph inserts and seeded noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};
use crate::grid::{Image, Measurement};

/// One ellipse. Positions and semi-axes are fractions of the side length;
/// `x` runs along columns and `y` along rows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub center: (f64, f64),
    pub axes: (f64, f64),
    pub rotation: f64,
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EllipsePhantomSpec {
    pub ellipses: Vec<Ellipse>,
    /// Seed the ellipses were drawn from, kept for manifests.
    pub seed: u64,
    /// Sub-samples per pixel side used for anti-aliasing.
    pub supersample: usize,
}

pub const DEFAULT_SUPERSAMPLE: usize = 4;

impl EllipsePhantomSpec {
    pub fn new(ellipses: Vec<Ellipse>, seed: u64) -> Self {
        Self { ellipses, seed, supersample: DEFAULT_SUPERSAMPLE }
    }

    /// `count` random ellipses. The first is a large central body with
    /// intensity in [0.5, 0.6]; the rest have centres in [0.25, 0.75], semi-axes
    /// in [0.05, 0.3] and intensities in [-0.2, 0.3].
    pub fn random(count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ellipses = (0..count)
            .map(|k| {
                if k == 0 {
                    Ellipse {
                        center: (0.5, 0.5),
                        axes: (rng.gen_range(0.35..0.45), rng.gen_range(0.3..0.45)),
                        rotation: rng.gen_range(0.0..std::f64::consts::PI),
                        intensity: rng.gen_range(0.5..0.6),
                    }
                } else {
                    Ellipse {
                        center: (rng.gen_range(0.25..0.75), rng.gen_range(0.25..0.75)),
                        axes: (rng.gen_range(0.05..0.3), rng.gen_range(0.05..0.3)),
                        rotation: rng.gen_range(0.0..std::f64::consts::PI),
                        intensity: rng.gen_range(-0.2..0.3),
                    }
                }
            })
            .collect();
        Self::new(ellipses, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.supersample == 0 {
            return invalid("supersample must be at least 1");
        }
        for (i, e) in self.ellipses.iter().enumerate() {
            let finite = [e.center.0, e.center.1, e.rotation, e.intensity].iter().all(|v| v.is_finite());
            if !(e.axes.0 > 0.0 && e.axes.1 > 0.0 && e.axes.0.is_finite() && e.axes.1.is_finite()) || !finite {
                return invalid(format!("ellipse {i}: axes must be positive and all fields finite"));
            }
        }
        Ok(())
    }
}

/// Sum of the ellipse indicators, each averaged over a `supersample²` grid of
/// sub-pixel points. Parts outside the grid are dropped.
pub fn make_phantom(spec: &EllipsePhantomSpec, dims: (usize, usize)) -> Result<Image> {
    spec.validate()?;
    let (w, h) = dims;
    let mut img = Image::zeros(w, h)?;
    let ss = spec.supersample;
    let inv = 1.0 / (ss * ss) as f64;
    for e in &spec.ellipses {
        let (sin, cos) = e.rotation.sin_cos();
        let vals = img.values_mut();
        for r in 0..h {
            for c in 0..w {
                let mut hits = 0usize;
                for i in 0..ss {
                    let y = (r as f64 + (i as f64 + 0.5) / ss as f64) / h as f64 - e.center.1;
                    for j in 0..ss {
                        let x = (c as f64 + (j as f64 + 0.5) / ss as f64) / w as f64 - e.center.0;
                        let u = (x * cos + y * sin) / e.axes.0;
                        let v = (-x * sin + y * cos) / e.axes.1;
                        if u * u + v * v <= 1.0 {
                            hits += 1;
                        }
                    }
                }
                if hits > 0 {
                    vals[r * w + c] += e.intensity * hits as f64 * inv;
                }
            }
        }
    }
    Ok(img)
}

/// Boolean bitmap, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Glyph {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

const FONT_W: usize = 5;
const FONT_H: usize = 7;

// 5×7 glyphs, one byte per row, low five bits, MSB on the left.
fn font_rows(ch: char) -> Option<[u8; FONT_H]> {
    Some(match ch.to_ascii_uppercase() {
        ' ' => [0, 0, 0, 0, 0, 0, 0],
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '.' => [0, 0, 0, 0, 0, 0x0C, 0x0C],
        '!' => [0x04, 0x04, 0x04, 0x04, 0x04, 0, 0x04],
        '?' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0, 0x04],
        '-' => [0, 0, 0, 0x1F, 0, 0, 0],
        _ => return None,
    })
}

impl Glyph {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return invalid(format!("glyph of {width}x{height} needs {} bits, got {}", width * height, bits.len()));
        }
        Ok(Self { width, height, bits })
    }

    pub fn filled(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![true; width * height] }
    }

    /// Renders `text` in the built-in 5×7 font with one blank column between
    /// characters.
    pub fn text(text: &str) -> Result<Self> {
        let chars: Vec<char> = text.chars().collect();
        if chars.is_empty() {
            return Ok(Self { width: 0, height: FONT_H, bits: Vec::new() });
        }
        let width = chars.len() * (FONT_W + 1) - 1;
        let mut bits = vec![false; width * FONT_H];
        for (i, &ch) in chars.iter().enumerate() {
            let Some(rows) = font_rows(ch) else {
                return invalid(format!("no glyph for character {ch:?}"));
            };
            for (r, row) in rows.iter().enumerate() {
                for c in 0..FONT_W {
                    if row >> (FONT_W - 1 - c) & 1 == 1 {
                        bits[r * width + i * (FONT_W + 1) + c] = true;
                    }
                }
            }
        }
        Ok(Self { width, height: FONT_H, bits })
    }

    /// Pixels strictly above `threshold` are set.
    pub fn from_image(img: &Image, threshold: f64) -> Self {
        Self { width: img.width(), height: img.height(), bits: img.values().iter().map(|&v| v > threshold).collect() }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructuralInsert {
    pub glyph: Glyph,
    /// Top-left corner as (row, column).
    pub position: (usize, usize),
    pub intensity: f64,
}

impl StructuralInsert {
    pub fn fits(&self, dims: (usize, usize)) -> bool {
        let (gw, gh) = self.glyph.dims();
        self.position.1 + gw <= dims.0 && self.position.0 + gh <= dims.1
    }

    /// Boolean mask of the glyph pixels in image coordinates.
    pub fn support(&self, dims: (usize, usize)) -> Result<Vec<bool>> {
        if !self.fits(dims) {
            return invalid("insert does not fit inside the image");
        }
        let (gw, gh) = self.glyph.dims();
        let mut out = vec![false; dims.0 * dims.1];
        for r in 0..gh {
            for c in 0..gw {
                if self.glyph.get(r, c) {
                    out[(self.position.0 + r) * dims.0 + self.position.1 + c] = true;
                }
            }
        }
        Ok(out)
    }
}

/// Overwrites the glyph pixels with the insert intensity.
pub fn insert_structure(f: &Image, insert: &StructuralInsert) -> Result<Image> {
    if !insert.intensity.is_finite() {
        return invalid("insert intensity must be finite");
    }
    let support = insert.support(f.dims())?;
    let mut out = f.clone();
    for (v, &s) in out.values_mut().iter_mut().zip(&support) {
        if s {
            *v = insert.intensity;
        }
    }
    Ok(out)
}

/// Containers that accept additive noise on every stored scalar.
pub trait Noisy: Clone {
    fn scalars_mut(&mut self) -> &mut [f64];
}

impl Noisy for Image {
    fn scalars_mut(&mut self) -> &mut [f64] {
        self.values_mut()
    }
}

/// For Fourier data each real and imaginary component gets its own draw.
impl Noisy for Measurement {
    fn scalars_mut(&mut self) -> &mut [f64] {
        self.values_mut()
    }
}

/// Adds i.i.d. `N(0, sigma²)` noise from a ChaCha8 stream seeded with `seed`.
pub fn add_noise<T: Noisy>(x: &T, sigma: f64, seed: u64) -> Result<T> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return invalid(format!("noise sigma must be non-negative, got {sigma}"));
    }
    let mut out = x.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).expect("sigma checked");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in out.scalars_mut() {
        *v += normal.sample(&mut rng);
    }
    Ok(out)
}
