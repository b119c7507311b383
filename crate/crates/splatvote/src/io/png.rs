//! 8-bit PNG export for color renders and binary selection masks.

use std::path::Path;

use crate::error::{Error, Result};

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an RGB image from row-major interleaved [0, 1] floats.
pub fn save_color(path: &Path, width: u32, height: u32, rgb: &[f64]) -> Result<()> {
    assert_eq!(rgb.len(), (width * height * 3) as usize);
    let pixels: Vec<u8> = rgb.iter().map(|&v| to_u8(v)).collect();
    let img = image::RgbImage::from_raw(width, height, pixels).expect("raw buffer sized");
    img.save(path).map_err(|e| Error::invalid("png", format!("{}: {e}", path.display())))
}

/// Writes a binary mask: white where true.
pub fn save_mask(path: &Path, width: u32, height: u32, mask: &[bool]) -> Result<()> {
    assert_eq!(mask.len(), (width * height) as usize);
    let pixels: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    let img = image::GrayImage::from_raw(width, height, pixels).expect("raw buffer sized");
    img.save(path).map_err(|e| Error::invalid("png", format!("{}: {e}", path.display())))
}
