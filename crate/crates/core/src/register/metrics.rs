use crate::error::{Error, Result};
use crate::fields::Rgb;
use crate::render::RenderedImage;

use super::OverlapMask;

/// Reported when the mean squared error is below `1e-10`.
pub const PSNR_CAP: f64 = 99.0;

fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// PSNR for colors in `[0, 1]`, over the pixels where `mask` is set (all
/// pixels when `None`).
pub fn psnr(a: &[Rgb], b: &[Rgb], mask: Option<&[bool]>) -> Result<f64> {
    if a.len() != b.len() || mask.is_some_and(|m| m.len() != a.len()) {
        return Err(Error::DimensionMismatch(format!(
            "psnr over {} and {} pixels",
            a.len(),
            b.len()
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        if mask.is_none_or(|m| m[k]) {
            sum += (x - y).norm_squared();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("psnr mask"));
    }
    Ok(psnr_from_mse(sum / (3 * n) as f64))
}

/// PSNR pooled over several image pairs and their masks.
pub fn masked_psnr(a: &[RenderedImage], b: &[RenderedImage], masks: &[OverlapMask]) -> Result<f64> {
    if a.len() != b.len() || a.len() != masks.len() {
        return Err(Error::DimensionMismatch("image and mask counts differ".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((x, y), m) in a.iter().zip(b).zip(masks) {
        if x.color.len() != m.bits.len() || y.color.len() != m.bits.len() {
            return Err(Error::DimensionMismatch(format!("mask {}", m.image_id)));
        }
        for (k, _) in m.bits.iter().enumerate().filter(|(_, b)| **b) {
            sum += (x.color[k] - y.color[k]).norm_squared();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMasks);
    }
    Ok(psnr_from_mse(sum / (3 * n) as f64))
}

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable filter over the windows that fit entirely inside the image.
fn filter_valid(img: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..WINDOW).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity for colors in `[0, 1]`: 11×11 Gaussian window
/// (σ = 1.5), valid windows only, averaged over the three channels.
pub fn ssim(a: &[Rgb], b: &[Rgb], width: usize, height: usize) -> Result<f64> {
    if a.len() != width * height || b.len() != width * height {
        return Err(Error::DimensionMismatch(format!(
            "ssim over {} and {} pixels for {width}x{height}",
            a.len(),
            b.len()
        )));
    }
    if width < WINDOW || height < WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {WINDOW}x{WINDOW} pixels"
        )));
    }
    let k = gaussian_kernel();
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let mut total = 0.0;
    for ch in 0..3 {
        let x: Vec<f64> = a.iter().map(|p| p[ch]).collect();
        let y: Vec<f64> = b.iter().map(|p| p[ch]).collect();
        let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> {
            x.iter().zip(&y).map(|(p, q)| f(*p, *q)).collect()
        };
        let mx = filter_valid(&x, width, height, &k);
        let my = filter_valid(&y, width, height, &k);
        let sxx = filter_valid(&prod(|p, _| p * p), width, height, &k);
        let syy = filter_valid(&prod(|_, q| q * q), width, height, &k);
        let sxy = filter_valid(&prod(|p, q| p * q), width, height, &k);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Vec<Rgb> {
        (0..w * h)
            .map(|k| {
                let (x, y) = ((k % w) as f64 / w as f64, (k / w) as f64 / h as f64);
                Rgb::new(x, y, 0.5 * (x + y))
            })
            .collect()
    }

    #[test]
    fn psnr_values() {
        let a = vec![Rgb::repeat(0.5); 4];
        assert_eq!(psnr(&a, &a, None).unwrap(), PSNR_CAP);
        let b = vec![Rgb::repeat(0.6); 4];
        // mse 0.01 -> 20 dB
        assert!((psnr(&a, &b, None).unwrap() - 20.0).abs() < 1e-9);
        let mut c = b.clone();
        c[0] = Rgb::repeat(1.0);
        let mask = [false, true, true, true];
        assert!((psnr(&a, &c, Some(&mask)).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &c, Some(&[false; 4])).is_err());
        assert!(psnr(&a, &c[..3], None).is_err());
    }

    #[test]
    fn ssim_identity_and_degradation() {
        let (w, h) = (24, 20);
        let a = ramp(w, h);
        assert!((ssim(&a, &a, w, h).unwrap() - 1.0).abs() < 1e-12);
        let noisy: Vec<Rgb> = a
            .iter()
            .enumerate()
            .map(|(k, p)| p + Rgb::repeat(if k % 2 == 0 { 0.05 } else { -0.05 }))
            .collect();
        let s = ssim(&a, &noisy, w, h).unwrap();
        assert!(s < 0.99 && s > 0.0, "{s}");
        assert!(ssim(&a, &a, 8, 60).is_err());
    }

    #[test]
    fn ssim_constant_shift_matches_closed_form() {
        // flat images: only the luminance term remains
        let (w, h) = (11, 11);
        let a = vec![Rgb::repeat(0.4); w * h];
        let b = vec![Rgb::repeat(0.6); w * h];
        let c1 = K1 * K1;
        let expect = (2.0 * 0.4 * 0.6 + c1) / (0.16 + 0.36 + c1);
        assert!((ssim(&a, &b, w, h).unwrap() - expect).abs() < 1e-12);
    }
}
