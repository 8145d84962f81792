//! Overfits the tiny network on eight synthetic images and reports training Dice.
//!
//! `cargo run --release --example train_overfit [iterations]`

use focal_unet::data::{synthesize, ClassMask};
use focal_unet::metrics::evaluate;
use focal_unet::model::ModelConfig;
use focal_unet::train::{AugmentConfig, TrainConfig, Trainer};
use focal_unet::FocalUNet;

fn main() -> focal_unet::Result<()> {
    let iterations: u64 = std::env::args().nth(1).map_or(497, |s| s.parse().expect("iteration count"));
    let samples: Vec<_> = (0..8)
        .map(|i| synthesize(i, 64, 3, 0).map(|s| s.sample))
        .collect::<focal_unet::Result<_>>()?;

    let model_cfg = ModelConfig {
        num_classes: 3,
        img_size: 64,
        patch_size: 4,
        embed_dim: 16,
        encoder_depths: vec![2, 2],
        bottleneck_depth: 2,
        decoder_depths: vec![1, 1],
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        batch_size: 8,
        lr: 1e-3,
        t_0: Some(71),
        max_iterations: iterations,
        augment: AugmentConfig::none(),
        ..TrainConfig::default()
    };
    let model = FocalUNet::build(model_cfg, 0)?;
    println!("parameters: {}", model.count_parameters());
    let mut trainer = Trainer::new(model, train_cfg)?;
    trainer.run(&samples, iterations, |row| {
        if row.iteration % 25 == 0 {
            println!("iter {:>4}  lr {:.3e}  loss {:.5}  {:.0} ms", row.iteration, row.lr, row.loss, row.wall_ms);
        }
    })?;

    let mut preds = Vec::new();
    for s in &samples {
        let (h, w) = s.dims();
        let x = s.image.clone().reshape(&[1, 3, h, w])?;
        preds.push(ClassMask::new(h, w, trainer.model.predict(&x)?)?);
    }
    let targets: Vec<ClassMask> = samples.iter().map(|s| s.mask.clone()).collect();
    let report = evaluate(&preds, &targets, 3, 100.0)?;
    for c in &report.per_class {
        println!("class {}  dsc {:.4}  ({} cases)", c.class, c.dsc.unwrap_or(f64::NAN), c.dsc_cases);
    }
    println!("mean foreground DSC {:.4}", report.mean_dsc.unwrap_or(f64::NAN));
    Ok(())
}
