use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("{op}: output extent would be < 1 (input {input:?}, kernel {kernel:?})")]
    EmptyOutput {
        op: &'static str,
        input: Vec<usize>,
        kernel: Vec<usize>,
    },

    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss {value} at iteration {iteration}")]
    NonFiniteLoss { iteration: u64, value: f64 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("corrupt checkpoint manifest: {0}")]
    CorruptManifest(String),

    #[error("checkpoint truncated at entry `{entry}`: needs bytes up to {needed}, payload has {available}")]
    TruncatedCheckpoint {
        entry: String,
        needed: usize,
        available: usize,
    },

    #[error("checkpoint entry `{entry}` has shape {found:?}, model expects {expected:?}")]
    CheckpointShape {
        entry: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("checkpoint is missing entry `{0}`")]
    MissingEntry(String),

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("cannot decode image {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("mask {path} contains color {rgb:?} with no color_map entry")]
    UnknownColor { path: PathBuf, rgb: [u8; 3] },

    #[error("mask {path} contains class {class} but num_classes is {classes}")]
    MaskClass {
        path: PathBuf,
        class: usize,
        classes: usize,
    },

    #[error("image {image} is {image_dims:?} but mask {mask} is {mask_dims:?}")]
    SizeMismatch {
        image: PathBuf,
        mask: PathBuf,
        image_dims: (u32, u32),
        mask_dims: (u32, u32),
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
