use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{save_dataset, ClassMask, SegmentationSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const PLACEMENT_TRIES: usize = 64;
const BACKGROUND: f64 = 0.1;
const NOISE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticShape {
    Disk { center: (i64, i64), radius: i64, class: u8 },
    Rect { top: usize, left: usize, height: usize, width: usize, class: u8 },
}

impl SyntheticShape {
    pub fn class(&self) -> u8 {
        match *self {
            Self::Disk { class, .. } | Self::Rect { class, .. } => class,
        }
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        match *self {
            Self::Disk { center, radius, .. } => disk_contains(center, radius, (r as i64, c as i64)),
            Self::Rect { top, left, height, width, .. } => {
                (top..top + height).contains(&r) && (left..left + width).contains(&c)
            }
        }
    }
}

/// Closed disk membership: `(r−cr)² + (c−cc)² ≤ radius²`.
pub fn disk_contains(center: (i64, i64), radius: i64, (r, c): (i64, i64)) -> bool {
    let (dr, dc) = (r - center.0, c - center.1);
    dr * dr + dc * dc <= radius * radius
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub sample: SegmentationSample,
    pub shapes: Vec<SyntheticShape>,
}

/// Mean brightness of a class; background sits at 0.1.
fn class_level(class: u8, num_classes: usize) -> f64 {
    0.35 + 0.55 * class as f64 / (num_classes - 1) as f64
}

fn random_shape(rng: &mut ChaCha8Rng, size: usize, num_classes: usize) -> SyntheticShape {
    let class = rng.random_range(1..num_classes) as u8;
    if rng.random_bool(0.5) {
        let radius = rng.random_range(3..=(size as i64 / 6).max(3));
        let lo = radius;
        let hi = size as i64 - 1 - radius;
        SyntheticShape::Disk {
            center: (rng.random_range(lo..=hi), rng.random_range(lo..=hi)),
            radius,
            class,
        }
    } else {
        let max_side = (size / 3).max(4);
        let (height, width) = (rng.random_range(4..=max_side), rng.random_range(4..=max_side));
        SyntheticShape::Rect {
            top: rng.random_range(0..=size - height),
            left: rng.random_range(0..=size - width),
            height,
            width,
            class,
        }
    }
}

/// Places shapes so that no two touch (a one-pixel gap, 8-connectivity).
fn place(rng: &mut ChaCha8Rng, size: usize, num_classes: usize, count: usize) -> Option<(ClassMask, Vec<SyntheticShape>)> {
    let mut mask = ClassMask::filled(size, size, 0);
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let placed = (0..PLACEMENT_TRIES).find_map(|_| {
            let shape = random_shape(rng, size, num_classes);
            let pixels: Vec<(usize, usize)> = (0..size)
                .flat_map(|r| (0..size).map(move |c| (r, c)))
                .filter(|&(r, c)| shape.contains(r, c))
                .collect();
            let clear = pixels.iter().all(|&(r, c)| {
                (r.saturating_sub(1)..=(r + 1).min(size - 1))
                    .all(|rr| (c.saturating_sub(1)..=(c + 1).min(size - 1)).all(|cc| mask.get(rr, cc) == 0))
            });
            clear.then_some((shape, pixels))
        });
        let (shape, pixels) = placed?;
        for (r, c) in pixels {
            mask.set(r, c, shape.class());
        }
        shapes.push(shape);
    }
    Some((mask, shapes))
}

/// One image: noisy dark background with 1 to 3 bright, non-touching shapes.
/// If the drawn number of shapes cannot be placed, one fewer is tried.
pub fn synthesize(index: u64, img_size: usize, num_classes: usize, seed: u64) -> Result<SyntheticSample> {
    if num_classes < 2 || num_classes > 256 {
        return Err(Error::Config(format!("num_classes must be in 2..=256, got {num_classes}")));
    }
    if img_size < 16 {
        return Err(Error::Config(format!("img_size must be at least 16, got {img_size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut count = rng.random_range(1..=3usize);
    let (mask, shapes) = loop {
        if let Some(found) = place(&mut rng, img_size, num_classes, count) {
            break found;
        }
        count -= 1;
    };
    let plane = img_size * img_size;
    let mut data = vec![0.0; 3 * plane];
    for (i, v) in data.iter_mut().enumerate() {
        let class = mask.labels()[i % plane];
        let level = if class == 0 { BACKGROUND } else { class_level(class, num_classes) };
        *v = level + rng.random_range(-NOISE..=NOISE);
    }
    let image = Tensor::new(&[3, img_size, img_size], data)?;
    Ok(SyntheticSample {
        sample: SegmentationSample::new(image, mask, format!("synth_{index:04}"))?,
        shapes,
    })
}

/// Writes `count` samples plus `manifest.json` into `dir`; returns the manifest path.
pub fn gen_synthetic(dir: &Path, count: usize, img_size: usize, num_classes: usize, seed: u64) -> Result<PathBuf> {
    let samples = (0..count as u64)
        .map(|i| synthesize(i, img_size, num_classes, seed).map(|s| s.sample))
        .collect::<Result<Vec<_>>>()?;
    save_dataset(dir, &samples, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_membership_is_analytic() {
        let s = synthesize(0, 32, 3, 7).unwrap();
        for shape in &s.shapes {
            if let SyntheticShape::Disk { center, radius, class } = *shape {
                for r in 0..32 {
                    for c in 0..32 {
                        let inside = disk_contains(center, radius, (r as i64, c as i64));
                        assert_eq!(inside, s.sample.mask.get(r, c) == class && shape.contains(r, c));
                    }
                }
            }
        }
    }

    #[test]
    fn generator_contract() {
        for i in 0..20 {
            let s = synthesize(i, 16, 4, 1).unwrap();
            assert!((1..=3).contains(&s.shapes.len()));
            assert!(s.sample.mask.max_class().unwrap() < 4);
            for shape in &s.shapes {
                let n = (0..16).flat_map(|r| (0..16).map(move |c| (r, c))).filter(|&(r, c)| shape.contains(r, c)).count();
                assert!(n >= 16);
            }
        }
    }

    #[test]
    fn foreground_brighter_than_background() {
        let s = synthesize(3, 64, 3, 0).unwrap();
        let d = s.sample.image.data();
        let plane = 64 * 64;
        let labels = s.sample.mask.labels();
        let bg: Vec<f64> = (0..plane).filter(|&p| labels[p] == 0).map(|p| d[p]).collect();
        let bg_mean = bg.iter().sum::<f64>() / bg.len() as f64;
        for p in (0..plane).filter(|&p| labels[p] != 0) {
            for ch in 0..3 {
                assert!(d[ch * plane + p] > bg_mean);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(synthesize(2, 32, 3, 5).unwrap(), synthesize(2, 32, 3, 5).unwrap());
        assert_ne!(synthesize(2, 32, 3, 5).unwrap(), synthesize(2, 32, 3, 6).unwrap());
    }
}
