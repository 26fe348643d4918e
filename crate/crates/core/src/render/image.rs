//! Netpbm output. 8-bit color is binary PPM (`P6`, maxval 255); the 16-bit
//! dump is also `P6` with maxval 65535 and big-endian samples, the same
//! sample layout a 16-bit RGB PNG stores. Opacity maps are 8-bit PGM (`P5`).
//! Pixel (0, 0) is the top-left corner.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fields::Rgb;

fn quantize(v: f64, max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * max).round()
}

fn check_len(width: usize, height: usize, len: usize) -> Result<()> {
    if width * height != len {
        return Err(Error::DimensionMismatch(format!(
            "{len} pixels for a {width}x{height} image"
        )));
    }
    Ok(())
}

pub fn encode_ppm(width: usize, height: usize, pixels: &[Rgb]) -> Result<Vec<u8>> {
    check_len(width, height, pixels.len())?;
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for p in pixels {
        out.extend(p.iter().map(|c| quantize(*c, 255.0) as u8));
    }
    Ok(out)
}

pub fn encode_ppm16(width: usize, height: usize, pixels: &[Rgb]) -> Result<Vec<u8>> {
    check_len(width, height, pixels.len())?;
    let mut out = format!("P6\n{width} {height}\n65535\n").into_bytes();
    for p in pixels {
        for c in p.iter() {
            out.extend_from_slice(&(quantize(*c, 65535.0) as u16).to_be_bytes());
        }
    }
    Ok(out)
}

pub fn encode_pgm(width: usize, height: usize, values: &[f64]) -> Result<Vec<u8>> {
    check_len(width, height, values.len())?;
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| quantize(*v, 255.0) as u8));
    Ok(out)
}

fn write(path: &Path, bytes: Vec<u8>) -> Result<()> {
    std::fs::write(path, bytes).map_err(Error::io(path))
}

pub fn write_ppm(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[Rgb]) -> Result<()> {
    write(path.as_ref(), encode_ppm(width, height, pixels)?)
}

pub fn write_ppm16(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    pixels: &[Rgb],
) -> Result<()> {
    write(path.as_ref(), encode_ppm16(width, height, pixels)?)
}

pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, values: &[f64]) -> Result<()> {
    write(path.as_ref(), encode_pgm(width, height, values)?)
}

/// Per-pixel absolute difference, averaged over channels, as a gray ramp.
pub fn error_map(a: &[Rgb], b: &[Rgb]) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs().mean())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_layout() {
        let px = [Rgb::new(1.0, 0.0, 0.5), Rgb::new(0.0, 1.0, 2.0)];
        let b = encode_ppm(2, 1, &px).unwrap();
        let header = b"P6\n2 1\n255\n";
        assert_eq!(&b[..header.len()], header);
        assert_eq!(&b[header.len()..], &[255, 0, 128, 0, 255, 255]);
    }

    #[test]
    fn ppm16_is_big_endian() {
        let b = encode_ppm16(1, 1, &[Rgb::new(1.0, 0.0, 0.5)]).unwrap();
        let header = b"P6\n1 1\n65535\n";
        assert_eq!(&b[header.len()..], &[0xff, 0xff, 0, 0, 0x80, 0x00]);
    }

    #[test]
    fn pgm_and_size_checks() {
        let b = encode_pgm(2, 2, &[0.0, 1.0, 0.5, 0.25]).unwrap();
        assert_eq!(&b[b.len() - 4..], &[0, 255, 128, 64]);
        assert!(encode_pgm(3, 2, &[0.0; 5]).is_err());
    }
}
