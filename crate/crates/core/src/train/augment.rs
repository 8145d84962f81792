use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClassMask, SegmentationSample};
use crate::tensor::Tensor;

/// Independent horizontal flip (p = ½), vertical flip (p = ½) and a rotation
/// by `k·90°` with `k` uniform in `{0, 1, 2, 3}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub hflip: bool,
    pub vflip: bool,
    pub rotate: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip: true,
            vflip: true,
            rotate: true,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            hflip: false,
            vflip: false,
            rotate: false,
        }
    }
}

/// Applies the same random transform to image and mask. All three draws are
/// made regardless of the toggles so the random stream never depends on them.
pub fn augment(sample: &SegmentationSample, cfg: &AugmentConfig, rng: &mut impl Rng) -> SegmentationSample {
    let h = rng.random_bool(0.5);
    let v = rng.random_bool(0.5);
    let k = rng.random_range(0..4u32);
    let mut out = sample.clone();
    if cfg.hflip && h {
        out = hflip(&out);
    }
    if cfg.vflip && v {
        out = vflip(&out);
    }
    if cfg.rotate {
        for _ in 0..k {
            out = rot90(&out);
        }
    }
    out
}

/// Remaps every pixel: `map(r, c)` gives the destination of source `(r, c)`.
fn remap(
    sample: &SegmentationSample,
    (oh, ow): (usize, usize),
    map: impl Fn(usize, usize) -> (usize, usize),
) -> SegmentationSample {
    let (h, w) = sample.dims();
    let src = sample.image.data();
    let mut image = vec![0.0; src.len()];
    let mut labels = vec![0u8; h * w];
    for r in 0..h {
        for c in 0..w {
            let (nr, nc) = map(r, c);
            labels[nr * ow + nc] = sample.mask.get(r, c);
            for ch in 0..3 {
                image[(ch * oh + nr) * ow + nc] = src[(ch * h + r) * w + c];
            }
        }
    }
    SegmentationSample {
        image: Tensor::new(&[3, oh, ow], image).expect("same numel"),
        mask: ClassMask::new(oh, ow, labels).expect("same numel"),
        id: sample.id.clone(),
    }
}

pub fn hflip(sample: &SegmentationSample) -> SegmentationSample {
    let (h, w) = sample.dims();
    remap(sample, (h, w), |r, c| (r, w - 1 - c))
}

pub fn vflip(sample: &SegmentationSample) -> SegmentationSample {
    let (h, w) = sample.dims();
    remap(sample, (h, w), |r, c| (h - 1 - r, c))
}

/// Clockwise quarter turn: `(r, c) → (c, H − 1 − r)`.
pub fn rot90(sample: &SegmentationSample) -> SegmentationSample {
    let (h, w) = sample.dims();
    remap(sample, (w, h), |r, c| (c, h - 1 - r))
}
