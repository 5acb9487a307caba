//! PNG / PNM reading and writing.

use std::path::Path;

use image::{GrayImage, ImageReader, RgbImage};

use crate::data::Mask;
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

fn open(path: &Path) -> Result<image::DynamicImage> {
    ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::load(path, e.to_string()))
}

/// Read an RGB (or grey, replicated) image as `[1, 3, H, W]` in `[0, 1]`.
pub fn read_rgb(path: &Path) -> Result<Tensor4<f32>> {
    let img = open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = f32::from(px[c]) / 255.0;
        }
    }
    Tensor4::new([1, 3, h, w], data)
}

/// Read a binary mask stored as 0/255 (or 0/1) grey values.
pub fn read_label(path: &Path) -> Result<Mask> {
    let img = open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    let max = raw.iter().copied().max().unwrap_or(0);
    let on = if max <= 1 { 1 } else { 255 };
    let mut data = Vec::with_capacity(raw.len());
    for (i, &v) in raw.iter().enumerate() {
        match v {
            0 => data.push(0),
            v if v == on => data.push(1),
            v => {
                return Err(Error::load(
                    path,
                    format!(
                        "non-binary label value {v} ({:.3}) at pixel ({}, {})",
                        f64::from(v) / 255.0,
                        i / w,
                        i % w
                    ),
                ))
            }
        }
    }
    Mask::new(h, w, data)
}

fn save(result: image::ImageResult<()>, path: &Path) -> Result<()> {
    result.map_err(|e| Error::load(path, format!("write failed: {e}")))
}

/// Write `[1, 3, H, W]` as 8-bit RGB; format from the extension (`png`, `ppm`).
pub fn write_rgb(path: &Path, image: &Tensor4<f32>) -> Result<()> {
    let (h, w) = (image.h(), image.w());
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = |c| (image.at(0, c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([at(0), at(1), at(2)])
    });
    save(img.save(path), path)
}

pub fn write_label(path: &Path, mask: &Mask) -> Result<()> {
    let img = GrayImage::from_raw(
        mask.w as u32,
        mask.h as u32,
        mask.data.iter().map(|&v| v * 255).collect(),
    )
    .expect("mask buffer matches dims");
    save(img.save(path), path)
}

/// Write a real-valued map as 8-bit grey, linearly mapping `[lo, hi]` to `[0, 255]`.
pub fn write_gray_map(
    path: &Path,
    values: &[f32],
    h: usize,
    w: usize,
    lo: f32,
    hi: f32,
) -> Result<()> {
    let span = (hi - lo).max(f32::MIN_POSITIVE);
    let data = values
        .iter()
        .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = GrayImage::from_raw(w as u32, h as u32, data).expect("map buffer matches dims");
    save(img.save(path), path)
}
