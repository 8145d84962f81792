//! Samples, PNG I/O, manifests, NeoPolyp colour masks and the synthetic shapes generator.

mod io;
mod manifest;
mod neopolyp;
mod synthetic;

pub use io::{palette_color, read_image, read_index_mask, write_color_mask, write_image, write_index_mask};
pub use manifest::{load_dataset, load_manifest, save_dataset, ColorEntry, DatasetManifest, ManifestItem};
pub use neopolyp::{decode_neopolyp_mask, neopolyp_class, NEOPLASTIC, NON_NEOPLASTIC};
pub use synthetic::{disk_contains, gen_synthetic, synthesize, SyntheticShape, SyntheticSample};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Integer class label per pixel, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl ClassMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::InvalidTensor(format!(
                "mask {height}×{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self { height, width, labels })
    }

    pub fn filled(height: usize, width: usize, class: u8) -> Self {
        Self {
            height,
            width,
            labels: vec![class; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.labels[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, class: u8) {
        self.labels[r * self.width + c] = class;
    }

    pub fn max_class(&self) -> Option<u8> {
        self.labels.iter().copied().max()
    }

    /// Pixel count per class `0..classes` (labels ≥ `classes` are ignored).
    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for &l in &self.labels {
            if let Some(c) = counts.get_mut(l as usize) {
                *c += 1;
            }
        }
        counts
    }
}

/// An image (`3×H×W`, values in `[0, 1]`) with its aligned class mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationSample {
    pub image: Tensor,
    pub mask: ClassMask,
    pub id: String,
}

impl SegmentationSample {
    pub fn new(image: Tensor, mask: ClassMask, id: impl Into<String>) -> Result<Self> {
        match *image.shape() {
            [3, h, w] if (h, w) == mask.dims() => Ok(Self {
                image,
                mask,
                id: id.into(),
            }),
            _ => Err(Error::ShapeMismatch {
                op: "segmentation_sample",
                lhs: image.shape().to_vec(),
                rhs: vec![3, mask.height, mask.width],
            }),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mask.dims()
    }
}

/// Stacks samples into an `N×3×H×W` batch and flattened `N×H×W` targets.
pub fn collate(samples: &[SegmentationSample]) -> Result<(Tensor, Vec<usize>)> {
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    let (h, w) = first.dims();
    let mut data = Vec::with_capacity(samples.len() * 3 * h * w);
    let mut targets = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if s.dims() != (h, w) {
            return Err(Error::ShapeMismatch {
                op: "collate",
                lhs: vec![h, w],
                rhs: vec![s.mask.height, s.mask.width],
            });
        }
        data.extend_from_slice(s.image.data());
        targets.extend(s.mask.labels().iter().map(|&l| l as usize));
    }
    Ok((Tensor::new(&[samples.len(), 3, h, w], data)?, targets))
}
