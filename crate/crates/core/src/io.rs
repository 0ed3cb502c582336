//! F64GRID images and 8-bit PGM export.
//!
//! An F64GRID file is the ASCII line `F64GRID <width> <height>\n` followed by
//! `width * height` little-endian IEEE-754 doubles in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::forward::FourierMask;
use crate::grid::Image;

const MAGIC: &str = "F64GRID";

fn format_err<T>(reason: impl Into<String>) -> Result<T> {
    Err(Error::Format { format: MAGIC, reason: reason.into() })
}

pub fn encode_f64grid(img: &Image) -> Vec<u8> {
    let header = format!("{MAGIC} {} {}\n", img.width(), img.height());
    let mut out = Vec::with_capacity(header.len() + 8 * img.len());
    out.extend_from_slice(header.as_bytes());
    for v in img.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_f64grid(bytes: &[u8]) -> Result<Image> {
    let Some(nl) = bytes.iter().position(|&b| b == b'\n') else {
        return format_err("missing header line");
    };
    let header = std::str::from_utf8(&bytes[..nl]).or_else(|_| format_err("header is not ASCII"))?;
    let mut parts = header.split(' ');
    if parts.next() != Some(MAGIC) {
        return format_err(format!("bad magic in header `{header}`"));
    }
    let mut dim = |name: &str| -> Result<usize> {
        match parts.next().map(str::parse::<usize>) {
            Some(Ok(v)) => Ok(v),
            _ => format_err(format!("bad {name} in header `{header}`")),
        }
    };
    let width = dim("width")?;
    let height = dim("height")?;
    if parts.next().is_some() {
        return format_err(format!("trailing fields in header `{header}`"));
    }
    let body = &bytes[nl + 1..];
    let expected = width.checked_mul(height).and_then(|n| n.checked_mul(8));
    if expected != Some(body.len()) {
        return format_err(format!(
            "{width}x{height} grid needs {} payload bytes, found {}",
            width.saturating_mul(height).saturating_mul(8),
            body.len()
        ));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight bytes")))
        .collect();
    Image::new(width, height, values)
}

pub fn write_f64grid(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    fs::write(path, encode_f64grid(img))?;
    Ok(())
}

pub fn read_f64grid(path: impl AsRef<Path>) -> Result<Image> {
    decode_f64grid(&fs::read(path)?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &FourierMask) -> Result<()> {
    write_f64grid(path, &mask.to_image())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<FourierMask> {
    FourierMask::from_image(&read_f64grid(path)?)
}

/// Linear window: `lo` maps to 0, `hi` to 255, values outside are clipped.
pub fn encode_pgm(img: &Image, lo: f64, hi: f64) -> Result<Vec<u8>> {
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return invalid(format!("display window [{lo}, {hi}] is empty"));
    }
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.values().iter().map(|&v| {
        let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        (t * 255.0).round() as u8
    }));
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, img: &Image, lo: f64, hi: f64) -> Result<()> {
    let bytes = encode_pgm(img, lo, hi)?;
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let img = Image::from_fn(5, 3, |r, c| (r as f64 - 1.3) * (c as f64 + 0.1) / 7.0).unwrap();
        let back = decode_f64grid(&encode_f64grid(&img)).unwrap();
        assert_eq!(back, img);
        let bytes = encode_f64grid(&img);
        assert!(bytes.starts_with(b"F64GRID 5 3\n"));
        assert_eq!(bytes.len(), 12 + 15 * 8);
    }

    #[test]
    fn rejects_malformed() {
        assert!(decode_f64grid(b"F64GRID 2 2").is_err());
        assert!(decode_f64grid(b"F32GRID 2 2\n").is_err());
        assert!(decode_f64grid(b"F64GRID 2 x\n").is_err());
        let mut bytes = encode_f64grid(&Image::zeros(2, 2).unwrap());
        bytes.pop();
        assert!(matches!(decode_f64grid(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn pgm_window() {
        let img = Image::new(2, 2, vec![-1.0, 0.0, 0.5, 3.0]).unwrap();
        let bytes = encode_pgm(&img, 0.0, 1.0).unwrap();
        assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 0, 128, 255]);
        assert!(encode_pgm(&img, 1.0, 1.0).is_err());
    }

    #[test]
    fn mask_file_round_trip() {
        let dir = std::env::temp_dir().join(format!("acid-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("mask.f64");
        let mask = crate::forward::make_mask(crate::forward::MaskPattern::Radial, 0.3, (16, 16), 4).unwrap();
        write_mask(&path, &mask).unwrap();
        assert_eq!(read_mask(&path).unwrap().grid(), mask.grid());
        fs::remove_dir_all(&dir).ok();
    }
}
