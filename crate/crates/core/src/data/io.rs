use std::path::Path;

use image::{GrayImage, Rgb, RgbImage};

use super::ClassMask;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn open(path: &Path) -> Result<image::DynamicImage> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    image::open(path).map_err(|source| Error::Decode {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(open(path)?.into_rgb8())
}

/// Decodes any PNG to a `3×H×W` tensor in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let img = read_rgb(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Ok(Tensor::from_fn(&[3, h, w], |i| {
        let (ch, p) = (i / (h * w), i % (h * w));
        raw[p * 3 + ch] as f64 / 255.0
    }))
}

/// Writes a `3×H×W` tensor, clamped to `[0, 1]` and rounded to 8 bits.
pub fn write_image(path: &Path, image: &Tensor) -> Result<()> {
    let (h, w) = match *image.shape() {
        [3, h, w] => (h, w),
        _ => return Err(Error::InvalidTensor(format!("expected 3×H×W image, got {:?}", image.shape()))),
    };
    let d = image.data();
    let out = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let p = y as usize * w + x as usize;
        Rgb(std::array::from_fn(|ch| (d[ch * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    out.save(path)?;
    Ok(())
}

/// Grayscale PNG whose pixel values are class indices.
pub fn read_index_mask(path: &Path) -> Result<ClassMask> {
    let img = open(path)?.into_luma8();
    ClassMask::new(img.height() as usize, img.width() as usize, img.into_raw())
}

pub fn write_index_mask(path: &Path, mask: &ClassMask) -> Result<()> {
    let img = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, mask.labels().to_vec())
        .expect("mask buffer matches its extents");
    img.save(path)?;
    Ok(())
}

/// Display colour for a class: black background, then red, green, blue,
/// yellow, magenta, cyan, orange, purple, cycling past that.
pub fn palette_color(class: u8) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 8] = [
        [255, 0, 0],
        [0, 255, 0],
        [0, 0, 255],
        [255, 255, 0],
        [255, 0, 255],
        [0, 255, 255],
        [255, 128, 0],
        [128, 0, 255],
    ];
    match class {
        0 => [0, 0, 0],
        k => PALETTE[(k as usize - 1) % PALETTE.len()],
    }
}

pub fn write_color_mask(path: &Path, mask: &ClassMask) -> Result<()> {
    let img = RgbImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Rgb(palette_color(mask.get(y as usize, x as usize)))
    });
    img.save(path)?;
    Ok(())
}
