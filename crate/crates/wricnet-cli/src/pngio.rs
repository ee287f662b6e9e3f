//! 8-bit PNG ingestion and export for image pairs, labels, predictions, and
//! overlays. Values map linearly between u8 and [0,1]; labels are strictly
//! two-valued.

use std::path::Path;

use image::{GrayImage, RgbImage};

use wricnet_core::data::{ImageBuf, MaskBuf};

use crate::{at_path, CliError, Result};

pub fn read_rgb(path: &Path) -> Result<ImageBuf> {
    let img = at_path(image::open(path), "reading image", path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = ImageBuf::zeros(3, h, w);
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out.set(c, y as usize, x as usize, f32::from(px.0[c]) / 255.0);
        }
    }
    Ok(out)
}

pub fn write_rgb(path: &Path, img: &ImageBuf) -> Result<()> {
    if img.channels != 3 {
        return Err(CliError::validation(format!(
            "writing {}: expected 3 channels, got {}",
            path.display(),
            img.channels
        )));
    }
    let mut out = RgbImage::new(img.width as u32, img.height as u32);
    for (x, y, px) in out.enumerate_pixels_mut() {
        for c in 0..3 {
            px.0[c] = to_u8(img.get(c, y as usize, x as usize));
        }
    }
    at_path(out.save(path), "writing image", path)
}

/// Reads a label or prediction mask; any pixel other than 0 or 255 is
/// rejected as malformed.
pub fn read_mask(path: &Path) -> Result<MaskBuf> {
    let img = at_path(image::open(path), "reading mask", path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = MaskBuf::zeros(h, w);
    for (x, y, px) in img.enumerate_pixels() {
        let v = px.0[0];
        if v != 0 && v != 255 {
            return Err(CliError::validation(format!(
                "mask {} has value {v} at ({x}, {y}); labels must be 0 or 255",
                path.display()
            )));
        }
        out.set(y as usize, x as usize, u8::from(v == 255));
    }
    Ok(out)
}

pub fn write_mask(path: &Path, mask: &MaskBuf) -> Result<()> {
    let mut out = GrayImage::new(mask.width as u32, mask.height as u32);
    for (x, y, px) in out.enumerate_pixels_mut() {
        px.0[0] = mask.get(y as usize, x as usize) * 255;
    }
    at_path(out.save(path), "writing mask", path)
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn u8_mapping_is_exact_at_endpoints() {
        assert_eq!(to_u8(0.0), 0);
        assert_eq!(to_u8(1.0), 255);
        assert_eq!(to_u8(-0.5), 0);
        assert_eq!(to_u8(2.0), 255);
        // The read scale is v/255, so every u8 value round-trips.
        for v in 0..=255u8 {
            assert_eq!(to_u8(f32::from(v) / 255.0), v);
        }
    }
}
