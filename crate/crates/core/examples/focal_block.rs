//! One focal-modulation block: parameter count, output shape and receptive field.

use focal_unet::{fm_block, fm_param_count, init_fm_block, FocalModulationConfig, Graph, Tensor};

fn main() -> focal_unet::Result<()> {
    let cfg = FocalModulationConfig::new(16);
    let (store, params) = init_fm_block(&cfg, 0)?;
    println!("kernels {:?}, hidden {}, parameters {}", cfg.kernel_sizes(), cfg.hidden_dim(), fm_param_count(&cfg));
    assert_eq!(store.numel(), fm_param_count(&cfg));

    let n = 15;
    let x = Tensor::from_fn(&[1, 16, n, n], |i| ((i * 7919) % 101) as f64 / 50.0 - 1.0);
    let mut g = Graph::new();
    let b = store.bind_frozen(&mut g);
    let xv = g.constant(x.clone());
    let y = fm_block(&mut g, &b, &params, &cfg, xv)?;
    println!("input {:?} -> output {:?}", x.shape(), g.shape(y));

    // Without the global level a single-pixel change stays within the focal radius.
    let local = FocalModulationConfig { global_context: false, ..cfg };
    let (store, params) = init_fm_block(&local, 0)?;
    let run = |t: Tensor| -> focal_unet::Result<Tensor> {
        let mut g = Graph::new();
        let b = store.bind_frozen(&mut g);
        let xv = g.constant(t);
        let y = fm_block(&mut g, &b, &params, &local, xv)?;
        Ok(g.value(y).clone())
    };
    let mut bumped = x.clone();
    bumped.data_mut()[7 * n + 7] += 1.0;
    let (a, c) = (run(x)?, run(bumped)?);
    let reach = (0..a.numel())
        .filter(|&i| a.data()[i] != c.data()[i])
        .map(|i| ((i / n) % n).abs_diff(7).max((i % n).abs_diff(7)))
        .max()
        .unwrap_or(0);
    println!("perturbation reach {reach}, bound {}", local.receptive_radius());
    Ok(())
}
