//! The finite-difference suite run by `focal-unet gradcheck`: every graph op,
//! one FM block and a tiny end-to-end network, each checked over all inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::focal::{fm_block, init_fm_block, FocalModulationConfig, LAYER_NORM_EPS};
use crate::model::{FocalUNet, ModelConfig};
use crate::params::Bindings;
use crate::tensor::{GradCheck, Graph, Tensor, Var};
use crate::train::{combined_loss, DICE_EPS};

/// Pass threshold on the worst elementwise relative error.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// Worst relative error over every scalar of every input.
    pub worst: f64,
    pub scalars: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradReport {
    pub checks: Vec<CheckResult>,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.checks.iter().map(|c| c.worst).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() <= TOLERANCE
    }
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.sample(StandardNormal))
}

/// Contracts `y` with a fixed random tensor so every output element matters.
fn project(g: &mut Graph, y: Var, rng_seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let r = g.constant(randn(&mut rng, g.shape(y)));
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

fn check<F>(name: &str, inputs: Vec<Tensor>, build: F) -> Result<CheckResult>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let worst = GradCheck::default().run(&inputs, build)?;
    Ok(CheckResult {
        name: name.into(),
        worst: worst.into_iter().fold(0.0, f64::max),
        scalars: inputs.iter().map(Tensor::numel).sum(),
    })
}

/// One check per differentiable graph operation.
pub fn op_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |shape: &[usize]| randn(&mut rng, shape);
    let s = seed.wrapping_add(1);
    let targets = vec![0, 2, 1, 1, 2, 0, 0, 1, 2, 1, 0, 2, 1, 1, 0, 2];
    let out = vec![
        check("add (broadcast)", vec![r(&[2, 3]), r(&[1, 3])], |g, v| {
            let y = g.add(v[0], v[1])?;
            project(g, y, s)
        })?,
        check("sub", vec![r(&[2, 3]), r(&[2, 3])], |g, v| {
            let y = g.sub(v[0], v[1])?;
            project(g, y, s)
        })?,
        check("mul (broadcast)", vec![r(&[1, 3, 2, 2]), r(&[1, 1, 2, 2])], |g, v| {
            let y = g.mul(v[0], v[1])?;
            project(g, y, s)
        })?,
        check("scale", vec![r(&[4])], |g, v| {
            let y = g.scale(v[0], -1.5);
            project(g, y, s)
        })?,
        check("linear", vec![r(&[2, 3]), r(&[4, 3]), r(&[4])], |g, v| {
            let y = g.linear(v[0], v[1], v[2])?;
            project(g, y, s)
        })?,
        check("channel_linear", vec![r(&[2, 3, 2, 2]), r(&[4, 3]), r(&[4])], |g, v| {
            let y = g.channel_linear(v[0], v[1], v[2])?;
            project(g, y, s)
        })?,
        check("conv2d (3x3, stride 2, pad 1)", vec![r(&[1, 2, 5, 5]), r(&[3, 2, 3, 3]), r(&[3])], |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], 2, 1)?;
            project(g, y, s)
        })?,
        check("conv2d (1x1)", vec![r(&[1, 3, 2, 2]), r(&[2, 3, 1, 1]), r(&[2])], |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], 1, 0)?;
            project(g, y, s)
        })?,
        check("depthwise_conv2d", vec![r(&[1, 2, 4, 4]), r(&[2, 1, 3, 3])], |g, v| {
            let y = g.depthwise_conv2d(v[0], v[1], 1, 1)?;
            project(g, y, s)
        })?,
        check("conv_transpose2d", vec![r(&[1, 3, 2, 2]), r(&[3, 2, 2, 2]), r(&[2])], |g, v| {
            let y = g.conv_transpose2d(v[0], v[1], v[2], 2)?;
            project(g, y, s)
        })?,
        check("gelu", vec![r(&[2, 5])], |g, v| {
            let y = g.gelu(v[0]);
            project(g, y, s)
        })?,
        check("layer_norm", vec![r(&[1, 3, 2, 2]), r(&[3]), r(&[3])], |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS)?;
            project(g, y, s)
        })?,
        check("global_avg_pool", vec![r(&[1, 2, 3, 3])], |g, v| {
            let y = g.global_avg_pool(v[0])?;
            project(g, y, s)
        })?,
        check("concat_channels", vec![r(&[1, 2, 2, 2]), r(&[1, 1, 2, 2])], |g, v| {
            let y = g.concat_channels(v[0], v[1])?;
            project(g, y, s)
        })?,
        check("slice_channels", vec![r(&[1, 4, 2, 2])], |g, v| {
            let y = g.slice_channels(v[0], 1, 2)?;
            project(g, y, s)
        })?,
        check("sum", vec![r(&[3, 2])], |g, v| Ok(g.sum(v[0])))?,
        check("mean", vec![r(&[3, 2])], |g, v| Ok(g.mean(v[0])))?,
        check("softmax_cross_entropy", vec![r(&[1, 3, 4, 4])], |g, v| g.softmax_cross_entropy(v[0], &targets))?,
        check("soft_dice_loss", vec![r(&[1, 3, 4, 4])], |g, v| g.soft_dice_loss(v[0], &targets, DICE_EPS))?,
        check("combined_loss", vec![r(&[1, 3, 4, 4])], |g, v| combined_loss(g, v[0], &targets, 0.4, 0.6))?,
    ];
    Ok(out)
}

/// Whole FM block (`C = 4`, `5×5` input) over its input and every parameter.
pub fn fm_block_check(seed: u64) -> Result<CheckResult> {
    let cfg = FocalModulationConfig::new(4);
    let (store, params) = init_fm_block(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut inputs: Vec<Tensor> = store.entries().iter().map(|e| perturb(&e.tensor, &mut rng)).collect();
    inputs.push(randn(&mut rng, &[1, 4, 5, 5]));
    let s = seed.wrapping_add(2);
    check("fm_block (C=4, 5x5)", inputs, |g, v| {
        let (last, params_v) = v.split_last().expect("input present");
        let b = Bindings::from_vars(params_v.to_vec());
        let y = fm_block(g, &b, &params, &cfg, *last)?;
        project(g, y, s)
    })
}

/// Zero-initialized biases and unit norm gains are moved off their special
/// values so the block check exercises a generic point.
fn perturb(t: &Tensor, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(t.shape(), |i| t.data()[i] + 0.1 * rng.sample::<f64, _>(StandardNormal))
}

/// The small end-to-end configuration used by the suite.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        in_channels: 3,
        num_classes: 3,
        img_size: 16,
        patch_size: 2,
        embed_dim: 8,
        encoder_depths: vec![1],
        bottleneck_depth: 1,
        decoder_depths: vec![1],
        ..ModelConfig::default()
    }
}

/// Training loss of the tiny network, as initialized from `seed`, against
/// every parameter and the image.
pub fn tiny_model_check(seed: u64) -> Result<CheckResult> {
    tiny_model_check_with(seed, GradCheck::default().h)
}

/// [`tiny_model_check`] with a custom finite-difference step.
pub fn tiny_model_check_with(seed: u64, h: f64) -> Result<CheckResult> {
    let model = FocalUNet::build(tiny_model_config(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7f4a_7c15);
    let mut inputs: Vec<Tensor> = model.params.entries().iter().map(|e| e.tensor.clone()).collect();
    inputs.push(Tensor::from_fn(&[1, 3, 16, 16], |_| rng.random::<f64>()));
    let targets: Vec<usize> = (0..16 * 16).map(|_| rng.random_range(0..3)).collect();
    let name = format!("focal-unet (img 16, patch 2, C=8, h={h:e})");
    let scalars = inputs.iter().map(Tensor::numel).sum();
    let worst = GradCheck { h }.run(&inputs, |g, v| {
        let (last, params_v) = v.split_last().expect("input present");
        let b = Bindings::from_vars(params_v.to_vec());
        let logits = model.forward(g, &b, *last)?;
        combined_loss(g, logits, &targets, 0.4, 0.6)
    })?;
    Ok(CheckResult {
        name,
        worst: worst.into_iter().fold(0.0, f64::max),
        scalars,
    })
}

pub fn run_suite(seed: u64) -> Result<GradReport> {
    let mut checks = op_checks(seed)?;
    checks.push(fm_block_check(seed)?);
    checks.push(tiny_model_check(seed)?);
    Ok(GradReport { checks })
}
