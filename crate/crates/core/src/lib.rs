//! Focal-modulation U-Net for dense segmentation, built on a small
//! reverse-mode autodiff engine over `f64` tensors.
//!
//! * [`tensor`]: tensors, the recording [`tensor::Graph`], finite-difference checks
//! * [`focal`]: focal modulation and the FM block
//! * [`model`]: the asymmetric encoder/bottleneck/decoder network
//! * [`train`]: loss, AdamW, cosine warm restarts, augmentation, the training loop
//! * [`checkpoint`]: bitwise-exact parameter/optimizer persistence
//! * [`metrics`]: Dice and Hausdorff evaluation
//! * [`data`]: PNG datasets, NeoPolyp colour masks, synthetic shapes
//! * [`cli`]: the `focal-unet` command line

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod focal;
pub mod gradsuite;
pub mod metrics;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use focal::{fm_block, fm_param_count, focal_modulation, init_fm_block, FMBlockParams, FocalModulationConfig};
pub use model::{FocalUNet, ModelConfig};
pub use tensor::{Graph, Tensor, Var};
pub use train::{TrainConfig, Trainer};
