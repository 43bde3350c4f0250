//! PNG helpers shared by the generator, the dataset loader and the CLI.

use std::path::Path;

use image::{GrayImage, RgbImage};
use ndarray::{Array2, Array3};

use crate::error::Result;

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_rgb(path: &Path, arr: &Array3<f64>) -> Result<()> {
    let (c, h, w) = arr.dim();
    assert_eq!(c, 3, "save_rgb expects 3 channels");
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            img.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([to_u8(arr[(0, y, x)]), to_u8(arr[(1, y, x)]), to_u8(arr[(2, y, x)])]),
            );
        }
    }
    img.save(path)?;
    Ok(())
}

pub fn save_gray(path: &Path, mask: &Array2<bool>) -> Result<()> {
    let (h, w) = mask.dim();
    let mut img = GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            img.put_pixel(x as u32, y as u32, image::Luma([if mask[(y, x)] { 255 } else { 0 }]));
        }
    }
    img.save(path)?;
    Ok(())
}

/// Write a probability map as 8-bit grayscale.
pub fn save_gray_f64(path: &Path, map: &Array2<f64>) -> Result<()> {
    let (h, w) = map.dim();
    let mut img = GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            img.put_pixel(x as u32, y as u32, image::Luma([to_u8(map[(y, x)])]));
        }
    }
    img.save(path)?;
    Ok(())
}

/// Decode any image to a (3,H,W) array in [0,1].
pub fn load_rgb(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let mut arr = Array3::<f64>::zeros((3, h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            arr[(c, y as usize, x as usize)] = f64::from(p[c]) / 255.0;
        }
    }
    Ok(arr)
}

/// Decode a grayscale image to [0,1] values.
pub fn load_gray_f64(path: &Path) -> Result<Array2<f64>> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    let mut arr = Array2::<f64>::zeros((h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        arr[(y as usize, x as usize)] = f64::from(p[0]) / 255.0;
    }
    Ok(arr)
}

/// Decode a mask image, thresholding at 128.
pub fn load_mask(path: &Path) -> Result<Array2<bool>> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    let mut arr = Array2::<bool>::from_elem((h as usize, w as usize), false);
    for (x, y, p) in img.enumerate_pixels() {
        arr[(y as usize, x as usize)] = p[0] >= 128;
    }
    Ok(arr)
}
