//! Analytic flow fields rendered as 3-channel images.
//!
//! The encoding is linear and invertible to quantization error: R carries dx,
//! G carries dy (each clamped to ±max_mag and mapped onto 0..=255 around a
//! 128 center), B is the constant 128. Zero motion is therefore the uniform
//! (128,128,128) image.

use image::RgbImage;
use ndarray::Array2;

use crate::error::{GtError, Result};

fn encode_component(v: f64, max_mag: f64) -> u8 {
    let n = (v / max_mag).clamp(-1.0, 1.0);
    // round half away from zero
    (127.5 * (n + 1.0)).round() as u8
}

/// Encode per-pixel displacements into an 8-bit image.
pub fn encode_flow(dx: &Array2<f64>, dy: &Array2<f64>, max_mag: f64) -> Result<RgbImage> {
    if max_mag <= 0.0 {
        return Err(GtError::Domain(format!("max_mag must be positive, got {max_mag}")));
    }
    if dx.dim() != dy.dim() {
        return Err(GtError::Input(format!(
            "flow components disagree in shape: {:?} vs {:?}",
            dx.dim(),
            dy.dim()
        )));
    }
    if dx.iter().chain(dy.iter()).any(|v| !v.is_finite()) {
        return Err(GtError::Domain("flow field contains non-finite values".into()));
    }
    let (h, w) = dx.dim();
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let r = encode_component(dx[(y, x)], max_mag);
            let g = encode_component(dy[(y, x)], max_mag);
            img.put_pixel(x as u32, y as u32, image::Rgb([r, g, 128]));
        }
    }
    Ok(img)
}

/// Invert [`encode_flow`]; exact up to `max_mag / 127.5` per component.
pub fn decode_flow(img: &RgbImage, max_mag: f64) -> Result<(Array2<f64>, Array2<f64>)> {
    if max_mag <= 0.0 {
        return Err(GtError::Domain(format!("max_mag must be positive, got {max_mag}")));
    }
    let (w, h) = img.dimensions();
    let mut dx = Array2::<f64>::zeros((h as usize, w as usize));
    let mut dy = Array2::<f64>::zeros((h as usize, w as usize));
    for y in 0..h {
        for x in 0..w {
            let p = img.get_pixel(x, y);
            dx[(y as usize, x as usize)] = (f64::from(p[0]) / 127.5 - 1.0) * max_mag;
            dy[(y as usize, x as usize)] = (f64::from(p[1]) / 127.5 - 1.0) * max_mag;
        }
    }
    Ok((dx, dy))
}
