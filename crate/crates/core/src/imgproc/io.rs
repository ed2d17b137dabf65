use std::fs;
use std::io::Write;
use std::path::Path;

use super::RawImage;
use crate::{Error, Result};

/// Reads an 8-bit PNG or binary PPM, mapping byte `v` to `v / 255`.
pub fn load_image(path: &Path) -> Result<RawImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes).map_err(|e| Error::ImageLoad {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    RawImage::from_u8(rgb.height() as usize, rgb.width() as usize, rgb.as_raw())
}

pub fn save_png(image: &RawImage, path: &Path) -> Result<()> {
    let buf = image::RgbImage::from_raw(image.width() as u32, image.height() as u32, image.to_u8())
        .expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::ImageLoad {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })
}

/// Writes a single-channel map as binary PGM (P5); each value is stored as
/// `round(255 v)`.
pub fn save_pgm(values: &[f32], height: usize, width: usize, path: &Path) -> Result<()> {
    assert_eq!(values.len(), height * width);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}
