//! 8-bit PNG/JPEG reading and writing, converting to and from the [0,1]
//! float representation used everywhere else.

use super::ImageBuf;
use crate::error::{Error, Result};
use ndarray::Array3;
use std::path::Path;

pub fn load_image(path: &Path) -> Result<ImageBuf> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let mut data = Array3::zeros((h as usize, w as usize, 3));
    for (x, y, p) in rgb.enumerate_pixels() {
        for c in 0..3 {
            data[[y as usize, x as usize, c]] = p.0[c] as f32 / 255.0;
        }
    }
    ImageBuf::new(data)
}

/// Quantize to 8-bit RGB with round-to-nearest.
pub fn to_rgb8(img: &ImageBuf) -> image::RgbImage {
    let (h, w) = (img.height(), img.width());
    let mut out = image::RgbImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            let px = [
                (img.data()[[i, j, 0]].clamp(0.0, 1.0) * 255.0).round() as u8,
                (img.data()[[i, j, 1]].clamp(0.0, 1.0) * 255.0).round() as u8,
                (img.data()[[i, j, 2]].clamp(0.0, 1.0) * 255.0).round() as u8,
            ];
            out.put_pixel(j as u32, i as u32, image::Rgb(px));
        }
    }
    out
}

/// Write as PNG or JPEG depending on the file extension.
pub fn save_image(img: &ImageBuf, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    to_rgb8(img).save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Write as JPEG at an explicit quality, for re-encoding experiments.
pub fn save_jpeg(img: &ImageBuf, path: &Path, quality: u8) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = std::io::BufWriter::new(file);
    let enc = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut writer, quality);
    to_rgb8(img)
        .write_with_encoder(enc)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

/// Raw RGB8 bytes of the decoded image, row-major; the pixel-hash input.
pub fn rgb8_bytes(img: &ImageBuf) -> Vec<u8> {
    to_rgb8(img).into_raw()
}
