use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::{read_image, read_index_mask, read_rgb, write_image, write_index_mask};
use super::{ClassMask, SegmentationSample};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorEntry {
    pub rgb: [u8; 3],
    pub class: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestItem {
    /// Relative to the manifest's directory.
    pub image: PathBuf,
    pub mask: PathBuf,
    pub id: String,
}

/// Masks are grayscale class indices unless `color_map` is given, in which
/// case they are RGB and every colour must appear in the table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color_map: Option<Vec<ColorEntry>>,
    pub items: Vec<ManifestItem>,
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let manifest: DatasetManifest = serde_json::from_slice(&fs::read(path)?)?;
    if manifest.num_classes < 1 || manifest.num_classes > 256 {
        return Err(Error::Config(format!(
            "num_classes must be in 1..=256, got {}",
            manifest.num_classes
        )));
    }
    Ok(manifest)
}

fn read_color_mask(path: &Path, table: &HashMap<[u8; 3], usize>) -> Result<ClassMask> {
    let rgb = read_rgb(path)?;
    let labels = rgb
        .pixels()
        .map(|p| {
            table.get(&p.0).map(|&c| c.min(255) as u8).ok_or(Error::UnknownColor {
                path: path.to_path_buf(),
                rgb: p.0,
            })
        })
        .collect::<Result<Vec<u8>>>()?;
    ClassMask::new(rgb.height() as usize, rgb.width() as usize, labels)
}

/// Samples in manifest order.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<SegmentationSample>> {
    let manifest = load_manifest(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new(""));
    let k = manifest.num_classes;
    let table: Option<HashMap<[u8; 3], usize>> = match &manifest.color_map {
        Some(entries) => {
            if let Some(e) = entries.iter().find(|e| e.class >= k) {
                return Err(Error::Config(format!(
                    "color_map maps {:?} to class {} but num_classes is {k}",
                    e.rgb, e.class
                )));
            }
            Some(entries.iter().map(|e| (e.rgb, e.class)).collect())
        }
        None => None,
    };

    let mut samples = Vec::with_capacity(manifest.items.len());
    for item in &manifest.items {
        let (image_path, mask_path) = (root.join(&item.image), root.join(&item.mask));
        let image = read_image(&image_path)?;
        let mask = match &table {
            Some(t) => read_color_mask(&mask_path, t)?,
            None => read_index_mask(&mask_path)?,
        };
        if let Some(c) = mask.max_class().filter(|&c| c as usize >= k) {
            return Err(Error::MaskClass {
                path: mask_path,
                class: c as usize,
                classes: k,
            });
        }
        let image_dims = (image.shape()[2] as u32, image.shape()[1] as u32);
        let mask_dims = (mask.width() as u32, mask.height() as u32);
        if image_dims != mask_dims {
            return Err(Error::SizeMismatch {
                image: image_path,
                mask: mask_path,
                image_dims,
                mask_dims,
            });
        }
        samples.push(SegmentationSample::new(image, mask, item.id.clone())?);
    }
    Ok(samples)
}

/// Writes `images/<id>.png`, `masks/<id>.png` and `manifest.json` under `dir`;
/// returns the manifest path.
pub fn save_dataset(dir: &Path, samples: &[SegmentationSample], num_classes: usize) -> Result<PathBuf> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    let mut items = Vec::with_capacity(samples.len());
    for s in samples {
        let item = ManifestItem {
            image: Path::new("images").join(format!("{}.png", s.id)),
            mask: Path::new("masks").join(format!("{}.png", s.id)),
            id: s.id.clone(),
        };
        write_image(&dir.join(&item.image), &s.image)?;
        write_index_mask(&dir.join(&item.mask), &s.mask)?;
        items.push(item);
    }
    let manifest = DatasetManifest {
        num_classes,
        color_map: None,
        items,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(path)
}
