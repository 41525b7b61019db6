use std::path::Path;

use crate::color::is_in_box;
use crate::error::{Error, Result};
use crate::image::RgbImage;

/// Decodes any supported file into a real-valued copy of its 8-bit RGB values.
pub fn load_image(path: &Path) -> Result<RgbImage> {
    let decoded = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(from_rgb8(&decoded.to_rgb8()))
}

pub fn from_rgb8(buf: &image::RgbImage) -> RgbImage {
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let mut out = RgbImage::zeros(h, w);
    for (x, y, p) in buf.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        out.set_pixel(i, [p[0] as f32, p[1] as f32, p[2] as f32]);
    }
    out
}

/// Rounds half away from zero to 8 bits. Fails on out-of-range input.
pub fn to_rgb8(x: &RgbImage) -> Result<image::RgbImage> {
    if !is_in_box(x) {
        return Err(Error::InvalidArgument(
            "cannot quantize image with values outside [0, 255]".into(),
        ));
    }
    let (w, h) = (x.width(), x.height());
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for (px, py, p) in buf.enumerate_pixels_mut() {
        let v = x.pixel(py as usize * w + px as usize);
        *p = image::Rgb([quantize(v[0]), quantize(v[1]), quantize(v[2])]);
    }
    Ok(buf)
}

/// `f32::round` rounds half away from zero, e.g. 127.5 → 128.
pub fn quantize(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// The image as it would read back after an 8-bit save.
pub fn quantized(x: &RgbImage) -> Result<RgbImage> {
    Ok(from_rgb8(&to_rgb8(x)?))
}

/// Writes an 8-bit PNG, creating parent directories as needed.
pub fn save_image(x: &RgbImage, path: &Path) -> Result<()> {
    let buf = to_rgb8(x)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}
