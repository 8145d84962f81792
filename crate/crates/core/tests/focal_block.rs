//! Focal modulation and FM block behaviour.

use focal_unet::focal::{FMBlockParams, FocalModulationParams};
use focal_unet::params::{kaiming_normal, ParamStore};
use focal_unet::{fm_block, fm_param_count, focal_modulation, init_fm_block, FocalModulationConfig, Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Weights (and focal kernels) all one, biases all zero.
fn unit_store(cfg: &FocalModulationConfig) -> (ParamStore, FMBlockParams) {
    let (mut store, p) = init_fm_block(cfg, 0).unwrap();
    for i in 0..store.len() {
        let is_bias = store.entries()[i].name.ends_with(".bias") || store.entries()[i].name.ends_with(".beta");
        let fill = if is_bias { 0.0 } else { 1.0 };
        store.tensor_mut(i).data_mut().iter_mut().for_each(|v| *v = fill);
    }
    (store, p)
}

fn modulate(store: &ParamStore, p: &FocalModulationParams, cfg: &FocalModulationConfig, x: Tensor) -> Tensor {
    let mut g = Graph::new();
    let b = store.bind_frozen(&mut g);
    let xv = g.constant(x);
    let y = focal_modulation(&mut g, &b, p, cfg, xv).unwrap();
    g.value(y).clone()
}

fn block(store: &ParamStore, p: &FMBlockParams, cfg: &FocalModulationConfig, x: Tensor) -> Tensor {
    let mut g = Graph::new();
    let b = store.bind_frozen(&mut g);
    let xv = g.constant(x);
    let y = fm_block(&mut g, &b, p, cfg, xv).unwrap();
    g.value(y).clone()
}

fn scalar_cfg() -> FocalModulationConfig {
    FocalModulationConfig {
        focal_levels: 1,
        mlp_ratio: 1.0,
        ..FocalModulationConfig::new(1)
    }
}

#[test]
fn scalar_trace_matches_closed_form() {
    // y = x²·(GELU(x) + GELU(GELU(x))), values from an erf-based reference.
    let cfg = scalar_cfg();
    let (store, p) = unit_store(&cfg);
    for (x, expect) in [
        (1.0, 1.5143554102379468),
        (0.5, 0.14133731646251374),
        (-0.7, -0.11890906845128692),
    ] {
        let y = modulate(&store, &p.modulation, &cfg, Tensor::full(&[1, 1, 1, 1], x));
        assert!((y.data()[0] - expect).abs() <= 1e-12, "x={x}: {}", y.data()[0]);
    }
}

#[test]
fn zero_gates_reduce_modulation_to_projection_bias() {
    let cfg = FocalModulationConfig::new(4);
    let (mut store, p) = init_fm_block(&cfg, 5).unwrap();
    store.get_mut(p.modulation.gate_w).data_mut().fill(0.0);
    store.get_mut(p.modulation.proj_b).data_mut().copy_from_slice(&[0.1, -0.2, 0.3, 0.4]);
    let y = modulate(&store, &p.modulation, &cfg, random(&[2, 4, 5, 5], 1));
    for (i, v) in y.data().iter().enumerate() {
        let expect = [0.1, -0.2, 0.3, 0.4][(i / 25) % 4];
        assert!((v - expect).abs() <= 1e-15);
    }
}

#[test]
fn zeroed_branches_make_block_the_identity() {
    let cfg = FocalModulationConfig::new(6);
    let (mut store, p) = init_fm_block(&cfg, 2).unwrap();
    for id in [p.modulation.proj_w, p.fc2_w] {
        store.get_mut(id).data_mut().fill(0.0);
    }
    let x = random(&[1, 6, 4, 4], 3);
    assert_eq!(block(&store, &p, &cfg, x.clone()), x);
}

#[test]
fn block_preserves_shape() {
    let cfg = FocalModulationConfig::new(8);
    let (store, p) = init_fm_block(&cfg, 4).unwrap();
    let y = block(&store, &p, &cfg, random(&[2, 8, 7, 5], 4));
    assert_eq!(y.shape(), &[2, 8, 7, 5]);
}

#[test]
fn perturbation_stays_within_receptive_radius_without_global_level() {
    let cfg = FocalModulationConfig {
        global_context: false,
        ..FocalModulationConfig::new(4)
    };
    assert_eq!(cfg.receptive_radius(), 3);
    let (store, p) = init_fm_block(&cfg, 6).unwrap();
    let (n, center) = (13usize, 6usize);
    let x = random(&[1, 4, n, n], 7);
    let mut bumped = x.clone();
    bumped.data_mut()[center * n + center] += 0.5;
    let (a, b) = (block(&store, &p, &cfg, x), block(&store, &p, &cfg, bumped));
    let mut reached = 0usize;
    for c in 0..4 {
        for r in 0..n {
            for col in 0..n {
                let i = (c * n + r) * n + col;
                let dist = r.abs_diff(center).max(col.abs_diff(center));
                let changed = a.data()[i] != b.data()[i];
                if dist > 3 {
                    assert!(!changed, "pixel ({r},{col}) at distance {dist} changed");
                } else if changed {
                    reached = reached.max(dist);
                }
            }
        }
    }
    assert_eq!(reached, 3);
}

#[test]
fn global_level_reaches_every_position() {
    let cfg = FocalModulationConfig::new(4);
    let (store, p) = init_fm_block(&cfg, 6).unwrap();
    let n = 13;
    let x = random(&[1, 4, n, n], 7);
    let mut bumped = x.clone();
    bumped.data_mut()[6 * n + 6] += 0.5;
    let (a, b) = (block(&store, &p, &cfg, x), block(&store, &p, &cfg, bumped));
    assert_ne!(a.data()[0], b.data()[0]);
}

#[test]
fn translation_covariant_away_from_borders() {
    let cfg = FocalModulationConfig {
        global_context: false,
        ..FocalModulationConfig::new(3)
    };
    let (store, p) = init_fm_block(&cfg, 8).unwrap();
    let n = 20;
    let patch = random(&[3, 4, 4], 9);
    let place = |off: usize| {
        let mut t = Tensor::zeros(&[1, 3, n, n]);
        for c in 0..3 {
            for r in 0..4 {
                for col in 0..4 {
                    t.data_mut()[(c * n + r + off) * n + col + off] = patch.data()[(c * 4 + r) * 4 + col];
                }
            }
        }
        t
    };
    let (a, b) = (block(&store, &p, &cfg, place(5)), block(&store, &p, &cfg, place(8)));
    for c in 0..3 {
        for r in 0..n - 3 {
            for col in 0..n - 3 {
                let va = a.data()[(c * n + r) * n + col];
                let vb = b.data()[(c * n + r + 3) * n + col + 3];
                assert!((va - vb).abs() <= 1e-12, "({c},{r},{col}): {va} vs {vb}");
            }
        }
    }
}

#[test]
fn parameter_count_matches_enumeration() {
    assert_eq!(fm_param_count(&scalar_cfg()), 29);
    let (store, _) = init_fm_block(&scalar_cfg(), 0).unwrap();
    assert_eq!(store.numel(), 29);
    for (dim, levels, window) in [(4, 2, 3), (8, 3, 5), (16, 1, 7)] {
        let cfg = FocalModulationConfig {
            focal_levels: levels,
            focal_window: window,
            ..FocalModulationConfig::new(dim)
        };
        let (store, _) = init_fm_block(&cfg, 0).unwrap();
        assert_eq!(store.numel(), fm_param_count(&cfg), "{cfg:?}");
    }
}

#[test]
fn kaiming_std_within_ten_percent() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let t = kaiming_normal(&[256, 256], 256, &mut rng);
    let n = t.data().len() as f64;
    let mean = t.data().iter().sum::<f64>() / n;
    let std = (t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let target = (2.0f64 / 256.0).sqrt();
    assert!((std / target - 1.0).abs() <= 0.1, "std {std} vs {target}");
}

#[test]
fn every_parameter_receives_gradient() {
    let cfg = FocalModulationConfig::new(4);
    let (store, p) = init_fm_block(&cfg, 11).unwrap();
    let mut g = Graph::new();
    let b = store.bind(&mut g);
    let x = g.constant(random(&[2, 4, 6, 6], 12));
    let y = fm_block(&mut g, &b, &p, &cfg, x).unwrap();
    let r = g.constant(random(&[2, 4, 6, 6], 13));
    let prod = g.mul(y, r).unwrap();
    let loss = g.sum(prod);
    g.backward(loss).unwrap();
    for (entry, grad) in store.entries().iter().zip(b.grads(&g, &store)) {
        assert!(grad.data().iter().any(|&v| v != 0.0), "{} has zero gradient", entry.name);
    }
}

#[test]
fn initialization_is_deterministic_per_seed() {
    let cfg = FocalModulationConfig::new(4);
    let (a, _) = init_fm_block(&cfg, 21).unwrap();
    let (b, _) = init_fm_block(&cfg, 21).unwrap();
    let (c, _) = init_fm_block(&cfg, 22).unwrap();
    assert_eq!(a.entries(), b.entries());
    assert_ne!(a.entries(), c.entries());
}
