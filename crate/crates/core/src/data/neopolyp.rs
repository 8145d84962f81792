use image::{ColorType, DynamicImage};

use super::ClassMask;
use crate::error::{Error, Result};

/// Canonical colour of class 1.
pub const NEOPLASTIC: [u8; 3] = [255, 0, 0];
/// Canonical colour of class 2.
pub const NON_NEOPLASTIC: [u8; 3] = [0, 255, 0];

/// Dominant-channel rule: red wins → 1, green wins → 2, otherwise background.
/// The winning channel must also reach 128.
pub fn neopolyp_class([r, g, b]: [u8; 3]) -> u8 {
    if r >= 128 && r > g && r > b {
        1
    } else if g >= 128 && g > r && g > b {
        2
    } else {
        0
    }
}

/// Accepts 8-bit RGB or RGBA (alpha ignored); anything else is rejected.
pub fn decode_neopolyp_mask(image: &DynamicImage) -> Result<ClassMask> {
    let rgb = match image.color() {
        ColorType::Rgb8 | ColorType::Rgba8 => image.to_rgb8(),
        other => {
            return Err(Error::InvalidTensor(format!(
                "NeoPolyp masks must be 8-bit RGB, got {other:?}"
            )))
        }
    };
    let labels = rgb.pixels().map(|p| neopolyp_class(p.0)).collect();
    ClassMask::new(rgb.height() as usize, rgb.width() as usize, labels)
}
