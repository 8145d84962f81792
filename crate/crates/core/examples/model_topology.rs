//! Stage ledger and parameter count of the default network, plus a forward pass
//! on a small configuration.

use focal_unet::model::ForwardOptions;
use focal_unet::{FocalUNet, Graph, ModelConfig, Tensor};

fn main() -> focal_unet::Result<()> {
    let default = ModelConfig::default();
    println!("default depths {:?}", default.depth_report());
    println!("stage extents {:?}, widths {:?}", default.stage_extents(), default.stage_widths());
    println!("parameters {}", FocalUNet::build(default, 0)?.count_parameters());

    let cfg = ModelConfig {
        num_classes: 3,
        img_size: 64,
        embed_dim: 16,
        encoder_depths: vec![2, 2],
        bottleneck_depth: 2,
        decoder_depths: vec![1, 1],
        ..ModelConfig::default()
    };
    let model = FocalUNet::build(cfg, 0)?;
    let mut g = Graph::new();
    let b = model.params.bind_frozen(&mut g);
    let x = g.constant(Tensor::full(&[2, 3, 64, 64], 0.5));
    let out = model.forward_with(&mut g, &b, x, &ForwardOptions::default())?;
    println!("skips {:?}", out.skip_shapes);
    println!("bottleneck {:?}", out.bottleneck_shape);
    println!("logits {:?}", g.shape(out.logits));
    Ok(())
}
