//! 8-bit PNG images and masks. Pixel values map linearly: `v / 255` on
//! load, `round(clamp(v, 0, 1) * 255)` on save.

use std::path::Path;

use blocksplat_core::image::{Image, Mask};

use crate::error::{format_err, IoError, Result};

/// Quantizes `v` with round-half-up.
pub fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0 + 0.5).floor() as u8
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> IoError + '_ {
    move |source| IoError::Image {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img.data.iter().map(|v| quantize(*v)).collect();
    image::save_buffer(path, &bytes, img.width as u32, img.height as u32, image::ExtendedColorType::Rgb8)
        .map_err(image_err(path))
}

pub fn load_image(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(image_err(path))?.to_rgb8();
    Ok(Image {
        width: img.width() as usize,
        height: img.height() as usize,
        data: img.as_raw().iter().map(|v| *v as f64 / 255.0).collect(),
    })
}

pub fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = mask.data.iter().map(|m| if *m { 255 } else { 0 }).collect();
    image::save_buffer(path, &bytes, mask.width as u32, mask.height as u32, image::ExtendedColorType::L8)
        .map_err(image_err(path))
}

/// Foreground where the gray value is at least 128.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(image_err(path))?.to_luma8();
    let mask = Mask {
        width: img.width() as usize,
        height: img.height() as usize,
        data: img.as_raw().iter().map(|v| *v >= 128).collect(),
    };
    if mask.data.is_empty() {
        return Err(format_err(path, "empty mask"));
    }
    Ok(mask)
}
