//! Trains a few steps, checkpoints, resumes, and confirms the continuation
//! matches an uninterrupted run bit for bit.

use focal_unet::checkpoint::{load_checkpoint, save_checkpoint};
use focal_unet::data::synthesize;
use focal_unet::{FocalUNet, ModelConfig, TrainConfig, Trainer};

fn main() -> focal_unet::Result<()> {
    let data: Vec<_> = (0..4).map(|i| synthesize(i, 32, 3, 0).map(|s| s.sample)).collect::<focal_unet::Result<_>>()?;
    let model_cfg = ModelConfig {
        num_classes: 3,
        img_size: 32,
        embed_dim: 8,
        encoder_depths: vec![1, 1],
        bottleneck_depth: 1,
        decoder_depths: vec![1, 1],
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        batch_size: 2,
        lr: 1e-3,
        max_iterations: 8,
        ..TrainConfig::default()
    };

    let mut straight = Trainer::new(FocalUNet::build(model_cfg.clone(), 0)?, train_cfg.clone())?;
    let full = straight.run(&data, 8, |_| {})?;

    let mut first = Trainer::new(FocalUNet::build(model_cfg, 0)?, train_cfg.clone())?;
    first.run(&data, 4, |_| {})?;
    let path = std::env::temp_dir().join("focal-unet-resume.ckpt");
    save_checkpoint(&path, &first.model, &first.state)?;
    let (model, state) = load_checkpoint(&path)?;
    let mut resumed = Trainer::resume(model, state, train_cfg)?;
    let tail = resumed.run(&data, 4, |_| {})?;

    for (a, b) in full[4..].iter().zip(&tail) {
        println!("iter {}  uninterrupted {:.12}  resumed {:.12}", a.iteration, a.loss, b.loss);
    }
    println!("identical: {}", full[4..].iter().zip(&tail).all(|(a, b)| a.loss.to_bits() == b.loss.to_bits()));
    Ok(())
}
