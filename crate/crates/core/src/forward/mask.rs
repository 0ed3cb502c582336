//! Fourier sampling masks.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, shape_err, Error, Result};
use crate::grid::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskPattern {
    /// Variable density, heavier near DC.
    Gaussian2d,
    /// Equiangular spokes through DC.
    Radial,
    Full,
    /// Loaded from a file; no generator.
    Custom,
}

impl MaskPattern {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskPattern::Gaussian2d => "gaussian2d",
            MaskPattern::Radial => "radial",
            MaskPattern::Full => "full",
            MaskPattern::Custom => "custom",
        }
    }
}

impl fmt::Display for MaskPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MaskPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian2d" | "gaussian" => Ok(MaskPattern::Gaussian2d),
            "radial" => Ok(MaskPattern::Radial),
            "full" => Ok(MaskPattern::Full),
            "custom" => Ok(MaskPattern::Custom),
            other => invalid(format!("unknown mask pattern `{other}`")),
        }
    }
}

/// Boolean sampling grid over the unshifted DFT layout (DC at `[0, 0]`).
#[derive(Clone, Debug, PartialEq)]
pub struct FourierMask {
    width: usize,
    height: usize,
    grid: Vec<bool>,
    pattern: MaskPattern,
    sampling_rate: f64,
    seed: u64,
}

impl FourierMask {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn grid(&self) -> &[bool] {
        &self.grid
    }

    pub fn pattern(&self) -> MaskPattern {
        self.pattern
    }

    /// Requested rate; see [`FourierMask::achieved_rate`] for the realised one.
    pub fn sampling_rate(&self) -> f64 {
        self.sampling_rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn popcount(&self) -> usize {
        self.grid.iter().filter(|&&b| b).count()
    }

    pub fn achieved_rate(&self) -> f64 {
        self.popcount() as f64 / self.grid.len() as f64
    }

    pub fn to_image(&self) -> Image {
        Image::new(
            self.width,
            self.height,
            self.grid.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .expect("mask dimensions were validated at construction")
    }

    /// Accepts any 0/1 image whose DC entry is set.
    pub fn from_image(img: &Image) -> Result<Self> {
        let mut grid = Vec::with_capacity(img.len());
        for &v in img.values() {
            match v {
                v if v == 0.0 => grid.push(false),
                v if v == 1.0 => grid.push(true),
                other => return invalid(format!("mask entries must be 0 or 1, found {other}")),
            }
        }
        if !grid[0] {
            return invalid("mask must sample the DC location");
        }
        let (width, height) = img.dims();
        let rate = grid.iter().filter(|&&b| b).count() as f64 / grid.len() as f64;
        Ok(Self { width, height, grid, pattern: MaskPattern::Custom, sampling_rate: rate, seed: 0 })
    }
}

/// Signed frequency index of FFT bin `i` on an axis of length `n`.
fn centered(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

pub fn make_mask(pattern: MaskPattern, rate: f64, dims: (usize, usize), seed: u64) -> Result<FourierMask> {
    let (width, height) = dims;
    if width < 2 || height < 2 {
        return shape_err(format!("mask must be at least 2x2, got {width}x{height}"));
    }
    if !(rate > 0.0 && rate <= 1.0) {
        return invalid(format!("sampling rate must lie in (0, 1], got {rate}"));
    }
    let total = width * height;
    if rate * (total as f64) < 1.0 {
        return invalid(format!("rate {rate} selects no location of a {width}x{height} grid"));
    }
    let grid = match pattern {
        MaskPattern::Full => vec![true; total],
        MaskPattern::Gaussian2d => gaussian_grid(rate, width, height, seed),
        MaskPattern::Radial => radial_grid(rate, width, height, seed),
        MaskPattern::Custom => return invalid("custom masks are loaded, not generated"),
    };
    Ok(FourierMask { width, height, grid, pattern, sampling_rate: rate, seed })
}

/// Weighted sampling without replacement: each cell draws the key
/// `ln(u) / w`, and the `round(rate * N)` largest keys are kept. The
/// weight is a centred Gaussian with standard deviation `dim / 6` per axis.
fn gaussian_grid(rate: f64, width: usize, height: usize, seed: u64) -> Vec<bool> {
    let total = width * height;
    let keep = ((rate * total as f64).round() as usize).clamp(1, total);
    let (sx, sy) = (width as f64 / 6.0, height as f64 / 6.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys: Vec<(f64, usize)> = (0..total)
        .map(|i| {
            let kx = centered(i % width, width);
            let ky = centered(i / width, height);
            let w = (-(kx * kx) / (2.0 * sx * sx) - (ky * ky) / (2.0 * sy * sy)).exp();
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            (u.ln() / w, i)
        })
        .collect();
    keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut grid = vec![false; total];
    for &(_, i) in &keys[..keep] {
        grid[i] = true;
    }
    if !grid[0] {
        grid[keys[keep - 1].1] = false;
        grid[0] = true;
    }
    grid
}

fn rasterize_spokes(spokes: usize, offset: f64, width: usize, height: usize) -> Vec<bool> {
    let mut grid = vec![false; width * height];
    grid[0] = true;
    let reach = width.max(height) as f64;
    let steps = (4.0 * reach) as i64;
    for s in 0..spokes {
        let phi = offset + PI * s as f64 / spokes as f64;
        let (dy, dx) = phi.sin_cos();
        for t in -steps..=steps {
            let r = t as f64 * 0.25;
            let kx = (r * dx).round();
            let ky = (r * dy).round();
            if kx.abs() > (width / 2) as f64 || ky.abs() > (height / 2) as f64 {
                continue;
            }
            let col = kx.rem_euclid(width as f64) as usize;
            let row = ky.rem_euclid(height as f64) as usize;
            grid[row * width + col] = true;
        }
    }
    grid
}

/// Adds spokes until the count reaches the target, then keeps whichever of
/// the last two spoke counts lands closer. The seed rotates the spoke fan.
fn radial_grid(rate: f64, width: usize, height: usize, seed: u64) -> Vec<bool> {
    let total = width * height;
    let target = rate * total as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prev: Option<Vec<bool>> = None;
    for spokes in 1.. {
        let offset = rng.gen_range(0.0..PI / spokes as f64);
        let grid = rasterize_spokes(spokes, offset, width, height);
        let count = grid.iter().filter(|&&b| b).count() as f64;
        if count >= target || count as usize == total {
            if let Some(p) = prev {
                let pc = p.iter().filter(|&&b| b).count() as f64;
                if target - pc < count - target {
                    return p;
                }
            }
            return grid;
        }
        prev = Some(grid);
    }
    unreachable!()
}
