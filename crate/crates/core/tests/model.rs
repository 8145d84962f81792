//! Network topology, parameter accounting and mechanism probes.

use focal_unet::model::{argmax_classes, ForwardOptions};
use focal_unet::{FocalUNet, Graph, ModelConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(img: usize, patch: usize, embed: usize, stages: usize) -> ModelConfig {
    ModelConfig {
        num_classes: 3,
        img_size: img,
        patch_size: patch,
        embed_dim: embed,
        encoder_depths: vec![1; stages],
        bottleneck_depth: 1,
        decoder_depths: vec![1; stages],
        ..ModelConfig::default()
    }
}

fn images(n: usize, size: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[n, 3, size, size], |_| rng.random_range(0.0..1.0))
}

/// Independent count: each FM block of width `c` with `l` levels, base window `k0`.
fn block_params(c: usize, l: usize, k0: usize, ratio: f64, global: bool) -> usize {
    let hidden = (ratio * c as f64).ceil() as usize;
    let mut n = 2 * c; // norm1
    n += 3 * (c * c + c); // query, context, proj
    let gates = l + usize::from(global);
    n += gates * c + gates;
    for lvl in 0..l {
        let k = k0 + 2 * lvl;
        n += c * k * k;
    }
    n += c * c + c; // modulator
    n += 2 * c; // norm2
    n += hidden * c + hidden + c * hidden + c;
    n
}

fn count_oracle(cfg: &ModelConfig) -> usize {
    let s = cfg.encoder_depths.len();
    let c = |i: usize| cfg.embed_dim << i;
    let lv = |i: usize| if cfg.focal_levels.len() == 1 { cfg.focal_levels[0] } else { cfg.focal_levels[i] };
    let kw = |i: usize| if cfg.focal_windows.len() == 1 { cfg.focal_windows[0] } else { cfg.focal_windows[i] };
    let blk = |i: usize| block_params(c(i), lv(i), kw(i), cfg.mlp_ratio, cfg.global_context);
    let p = cfg.patch_size;
    let mut n = c(0) * cfg.in_channels * p * p + c(0);
    for i in 0..s {
        n += cfg.encoder_depths[i] * blk(i);
        n += c(i + 1) * c(i) * 4 + c(i + 1);
        n += c(i + 1) * c(i) * 4 + c(i);
        n += c(i) * 2 * c(i) + c(i);
        n += cfg.decoder_depths[i] * blk(i);
    }
    n += cfg.bottleneck_depth * blk(s);
    n += c(0) * c(0) * p * p + c(0);
    n += cfg.num_classes * c(0) + cfg.num_classes;
    n
}

#[test]
fn tiny_two_stage_shapes() {
    let cfg = small(64, 4, 8, 2);
    let model = FocalUNet::build(cfg, 0).unwrap();
    let mut g = Graph::new();
    let b = model.params.bind_frozen(&mut g);
    let x = g.constant(images(2, 64, 1));
    let out = model.forward_with(&mut g, &b, x, &ForwardOptions::default()).unwrap();
    assert_eq!(g.shape(out.logits), &[2, 3, 64, 64]);
    assert_eq!(out.skip_shapes, vec![vec![2, 8, 16, 16], vec![2, 16, 8, 8]]);
    assert_eq!(out.bottleneck_shape, vec![2, 32, 4, 4]);
}

#[test]
fn stage_ledger_for_default_configuration() {
    let cfg = ModelConfig::default();
    assert_eq!(cfg.stage_extents(), vec![56, 28, 14, 7]);
    assert_eq!(cfg.stage_widths(), vec![96, 192, 384, 768]);
    let d = cfg.depth_report();
    assert_eq!(d.encoder, vec![4, 4, 4]);
    assert_eq!(d.bottleneck, 4);
    assert_eq!(d.decoder, vec![1, 1, 1]);
    assert!(d.encoder.iter().sum::<usize>() > d.decoder.iter().sum::<usize>());
}

#[test]
fn parameter_count_matches_independent_enumeration() {
    for cfg in [
        small(32, 4, 8, 2),
        small(64, 4, 8, 2),
        ModelConfig {
            focal_levels: vec![1, 2, 3],
            focal_windows: vec![3, 5, 3],
            global_context: false,
            mlp_ratio: 2.0,
            ..small(32, 2, 4, 2)
        },
        ModelConfig::default(),
    ] {
        let model = FocalUNet::build(cfg.clone(), 0).unwrap();
        assert_eq!(model.count_parameters(), count_oracle(&cfg), "{cfg:?}");
    }
}

#[test]
fn zeroing_a_skip_changes_the_output() {
    let model = FocalUNet::build(small(32, 4, 8, 2), 3).unwrap();
    let x = images(1, 32, 4);
    let run = |model: &FocalUNet, level: Option<usize>| {
        let mut g = Graph::new();
        let b = model.params.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let out = model
            .forward_with(&mut g, &b, xv, &ForwardOptions { zero_skip: level })
            .unwrap();
        g.value(out.logits).clone()
    };
    let base = run(&model, None);
    for level in 0..2 {
        let probed = run(&model, Some(level));
        let diff = base.data().iter().zip(probed.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff > 1e-6, "skip {level} had no effect ({diff:e})");
    }

    // Removing the skip columns of the fuse projection severs the dependence.
    let mut cut = model.clone();
    for stage in &model.layout.decoder {
        let w = cut.params.get_mut(stage.fuse_w);
        let (rows, cols) = (w.shape()[0], w.shape()[1]);
        for r in 0..rows {
            w.data_mut()[r * cols + cols / 2..(r + 1) * cols].fill(0.0);
        }
    }
    let base = run(&cut, None);
    for level in 0..2 {
        assert_eq!(run(&cut, Some(level)), base);
    }
}

#[test]
fn gradient_reaches_the_embedding() {
    let model = FocalUNet::build(small(16, 2, 4, 1), 5).unwrap();
    let mut g = Graph::new();
    let b = model.params.bind(&mut g);
    let x = g.constant(images(1, 16, 6));
    let y = model.forward(&mut g, &b, x).unwrap();
    let loss = focal_unet::train::combined_loss(&mut g, y, &vec![1; 256], 0.4, 0.6).unwrap();
    g.backward(loss).unwrap();
    let grads = b.grads(&g, &model.params);
    let embed = model.layout.embed_w.index();
    assert!(grads[embed].data().iter().any(|v| v.abs() > 0.0));
}

#[test]
fn build_and_forward_are_deterministic() {
    let cfg = small(32, 4, 8, 2);
    let (a, b) = (FocalUNet::build(cfg.clone(), 9).unwrap(), FocalUNet::build(cfg.clone(), 9).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, FocalUNet::build(cfg, 10).unwrap());
    let x = images(1, 32, 2);
    let (la, lb) = (a.logits(&x).unwrap(), b.logits(&x).unwrap());
    assert!(la.data().iter().zip(lb.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn wrong_input_size_rejected() {
    let model = FocalUNet::build(small(32, 4, 8, 2), 0).unwrap();
    assert!(model.logits(&images(1, 16, 0)).is_err());
    assert!(model.logits(&Tensor::zeros(&[1, 1, 32, 32])).is_err());
}

#[test]
fn predict_is_argmax_of_logits() {
    let model = FocalUNet::build(small(16, 2, 4, 1), 7).unwrap();
    let x = images(2, 16, 8);
    let pred = model.predict(&x).unwrap();
    assert_eq!(pred.len(), 2 * 16 * 16);
    assert_eq!(pred, argmax_classes(&model.logits(&x).unwrap()));
    assert!(pred.iter().all(|&c| c < 3));
}

#[test]
fn config_rejections() {
    let bad = [
        ModelConfig { decoder_depths: vec![1], ..small(32, 4, 8, 2) },
        ModelConfig { num_classes: 1, ..small(32, 4, 8, 2) },
        ModelConfig { focal_levels: vec![2, 2], ..small(32, 4, 8, 2) },
        ModelConfig { focal_windows: vec![4], ..small(32, 4, 8, 2) },
        ModelConfig { img_size: 40, ..small(32, 4, 8, 2) },
    ];
    for cfg in bad {
        assert!(FocalUNet::build(cfg.clone(), 0).is_err(), "{cfg:?}");
    }
}
