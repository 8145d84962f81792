//! Focal modulation and the pre-norm FM block.
//!
//! The modulation aggregates context before it interacts with the query:
//!
//! ```text
//! q   = W_q x                z_0 = W_z x              g = W_g x   (L+1 gate maps)
//! z_l = GELU(DWConv_{k_l}(z_{l-1}))                  l = 1..L
//! z_{L+1} = GELU(GAP(z_L))   broadcast over H×W
//! Z   = Σ_l g_l ⊙ z_l
//! y   = W_o(q ⊙ W_m Z)
//! ```
//!
//! Every gate map is a single channel broadcast across all `C` features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Bindings, ParamId, ParamStore};
use crate::tensor::{Graph, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalModulationConfig {
    pub dim: usize,
    pub focal_levels: usize,
    pub focal_window: usize,
    pub focal_factor: usize,
    pub mlp_ratio: f64,
    /// Include the global-average-pool context level.
    pub global_context: bool,
}

impl FocalModulationConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            focal_levels: 2,
            focal_window: 3,
            focal_factor: 2,
            mlp_ratio: 4.0,
            global_context: true,
        }
    }

    /// Kernel size of hierarchical level `level` (1-indexed).
    pub fn kernel_size(&self, level: usize) -> usize {
        self.focal_window + self.focal_factor * (level - 1)
    }

    pub fn kernel_sizes(&self) -> Vec<usize> {
        (1..=self.focal_levels).map(|l| self.kernel_size(l)).collect()
    }

    pub fn hidden_dim(&self) -> usize {
        (self.mlp_ratio * self.dim as f64).ceil() as usize
    }

    /// One gate per hierarchical level, plus one for the global level when enabled.
    pub fn num_gates(&self) -> usize {
        self.focal_levels + usize::from(self.global_context)
    }

    /// Chebyshev radius reachable through the hierarchical levels alone.
    pub fn receptive_radius(&self) -> usize {
        self.kernel_sizes().iter().map(|k| (k - 1) / 2).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("focal modulation dim must be >= 1".into()));
        }
        if self.focal_levels == 0 {
            return Err(Error::Config("focal_levels must be >= 1".into()));
        }
        if self.focal_window % 2 == 0 || self.focal_factor % 2 == 1 {
            return Err(Error::Config(format!(
                "focal kernels must all be odd (window {}, factor {})",
                self.focal_window, self.focal_factor
            )));
        }
        if !(self.mlp_ratio > 0.0 && self.mlp_ratio.is_finite()) {
            return Err(Error::Config(format!("mlp_ratio must be positive, got {}", self.mlp_ratio)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FocalModulationParams {
    pub query_w: ParamId,
    pub query_b: ParamId,
    pub context_w: ParamId,
    pub context_b: ParamId,
    pub gate_w: ParamId,
    pub gate_b: ParamId,
    /// `C×1×k_l×k_l` per level.
    pub focal_kernels: Vec<ParamId>,
    /// 1×1 convolution `C→C`.
    pub modulator_w: ParamId,
    pub modulator_b: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
}

impl FocalModulationParams {
    pub fn init(store: &mut ParamStore, prefix: &str, cfg: &FocalModulationConfig, rng: &mut ChaCha8Rng) -> Self {
        let c = cfg.dim;
        let gates = cfg.num_gates();
        let query_w = store.kaiming(format!("{prefix}.query.weight"), &[c, c], c, rng);
        let query_b = store.zeros(format!("{prefix}.query.bias"), &[c]);
        let context_w = store.kaiming(format!("{prefix}.context.weight"), &[c, c], c, rng);
        let context_b = store.zeros(format!("{prefix}.context.bias"), &[c]);
        let gate_w = store.kaiming(format!("{prefix}.gates.weight"), &[gates, c], c, rng);
        let gate_b = store.zeros(format!("{prefix}.gates.bias"), &[gates]);
        let focal_kernels = cfg
            .kernel_sizes()
            .into_iter()
            .enumerate()
            .map(|(l, k)| store.kaiming(format!("{prefix}.focal.{l}.weight"), &[c, 1, k, k], k * k, rng))
            .collect();
        let modulator_w = store.kaiming(format!("{prefix}.modulator.weight"), &[c, c, 1, 1], c, rng);
        let modulator_b = store.zeros(format!("{prefix}.modulator.bias"), &[c]);
        let proj_w = store.kaiming(format!("{prefix}.proj.weight"), &[c, c], c, rng);
        let proj_b = store.zeros(format!("{prefix}.proj.bias"), &[c]);
        Self {
            query_w,
            query_b,
            context_w,
            context_b,
            gate_w,
            gate_b,
            focal_kernels,
            modulator_w,
            modulator_b,
            proj_w,
            proj_b,
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = vec![
            self.query_w,
            self.query_b,
            self.context_w,
            self.context_b,
            self.gate_w,
            self.gate_b,
        ];
        ids.extend(&self.focal_kernels);
        ids.extend([self.modulator_w, self.modulator_b, self.proj_w, self.proj_b]);
        ids
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FMBlockParams {
    pub norm1_gamma: ParamId,
    pub norm1_beta: ParamId,
    pub modulation: FocalModulationParams,
    pub norm2_gamma: ParamId,
    pub norm2_beta: ParamId,
    pub fc1_w: ParamId,
    pub fc1_b: ParamId,
    pub fc2_w: ParamId,
    pub fc2_b: ParamId,
}

impl FMBlockParams {
    pub fn init(store: &mut ParamStore, prefix: &str, cfg: &FocalModulationConfig, rng: &mut ChaCha8Rng) -> Self {
        let c = cfg.dim;
        let hidden = cfg.hidden_dim();
        let norm1_gamma = store.ones(format!("{prefix}.norm1.gamma"), &[c]);
        let norm1_beta = store.zeros(format!("{prefix}.norm1.beta"), &[c]);
        let modulation = FocalModulationParams::init(store, &format!("{prefix}.modulation"), cfg, rng);
        let norm2_gamma = store.ones(format!("{prefix}.norm2.gamma"), &[c]);
        let norm2_beta = store.zeros(format!("{prefix}.norm2.beta"), &[c]);
        let fc1_w = store.kaiming(format!("{prefix}.mlp.fc1.weight"), &[hidden, c], c, rng);
        let fc1_b = store.zeros(format!("{prefix}.mlp.fc1.bias"), &[hidden]);
        let fc2_w = store.kaiming(format!("{prefix}.mlp.fc2.weight"), &[c, hidden], hidden, rng);
        let fc2_b = store.zeros(format!("{prefix}.mlp.fc2.bias"), &[c]);
        Self {
            norm1_gamma,
            norm1_beta,
            modulation,
            norm2_gamma,
            norm2_beta,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.norm1_gamma, self.norm1_beta];
        ids.extend(self.modulation.ids());
        ids.extend([
            self.norm2_gamma,
            self.norm2_beta,
            self.fc1_w,
            self.fc1_b,
            self.fc2_w,
            self.fc2_b,
        ]);
        ids
    }
}

/// A standalone block with its own store, Kaiming-initialized from `seed`.
pub fn init_fm_block(cfg: &FocalModulationConfig, seed: u64) -> Result<(ParamStore, FMBlockParams)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let params = FMBlockParams::init(&mut store, "block", cfg, &mut rng);
    Ok((store, params))
}

/// Closed-form scalar parameter count of one FM block.
pub fn fm_param_count(cfg: &FocalModulationConfig) -> usize {
    let c = cfg.dim;
    let hidden = cfg.hidden_dim();
    let projections = 4 * (c * c + c);
    let gates = cfg.num_gates() * (c + 1);
    let focal: usize = cfg.kernel_sizes().iter().map(|k| c * k * k).sum();
    let norms = 4 * c;
    let mlp = c * hidden + hidden + hidden * c + c;
    projections + gates + focal + norms + mlp
}

pub fn focal_modulation(
    g: &mut Graph,
    b: &Bindings,
    p: &FocalModulationParams,
    cfg: &FocalModulationConfig,
    x: Var,
) -> Result<Var> {
    let (_, c, _, _) = g.value(x).dims4("focal_modulation")?;
    if c != cfg.dim {
        return Err(Error::ShapeMismatch {
            op: "focal_modulation",
            lhs: g.shape(x).to_vec(),
            rhs: vec![cfg.dim],
        });
    }
    let query = g.channel_linear(x, b[p.query_w], b[p.query_b])?;
    let mut context = g.channel_linear(x, b[p.context_w], b[p.context_b])?;
    let gates = g.channel_linear(x, b[p.gate_w], b[p.gate_b])?;

    let mut aggregate: Option<Var> = None;
    let gated = |g: &mut Graph, level: usize, ctx: Var, agg: &mut Option<Var>| -> Result<()> {
        let gate = g.slice_channels(gates, level, 1)?;
        let term = g.mul(ctx, gate)?;
        *agg = Some(match *agg {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
        Ok(())
    };
    for (level, &kernel) in p.focal_kernels.iter().enumerate() {
        let k = cfg.kernel_size(level + 1);
        let conv = g.depthwise_conv2d(context, b[kernel], 1, k / 2)?;
        context = g.gelu(conv);
        gated(g, level, context, &mut aggregate)?;
    }
    if cfg.global_context {
        let pooled = g.global_avg_pool(context)?;
        let global = g.gelu(pooled);
        gated(g, cfg.focal_levels, global, &mut aggregate)?;
    }
    let aggregate = aggregate.expect("focal_levels >= 1");
    let modulator = g.conv2d(aggregate, b[p.modulator_w], b[p.modulator_b], 1, 0)?;
    let modulated = g.mul(query, modulator)?;
    g.channel_linear(modulated, b[p.proj_w], b[p.proj_b])
}

/// `y = x + FM(LN(x)); out = y + MLP(LN(y))`.
pub fn fm_block(g: &mut Graph, b: &Bindings, p: &FMBlockParams, cfg: &FocalModulationConfig, x: Var) -> Result<Var> {
    let normed = g.layer_norm(x, b[p.norm1_gamma], b[p.norm1_beta], LAYER_NORM_EPS)?;
    let modulated = focal_modulation(g, b, &p.modulation, cfg, normed)?;
    let y = g.add(x, modulated)?;
    let normed = g.layer_norm(y, b[p.norm2_gamma], b[p.norm2_beta], LAYER_NORM_EPS)?;
    let hidden = g.channel_linear(normed, b[p.fc1_w], b[p.fc1_b])?;
    let hidden = g.gelu(hidden);
    let out = g.channel_linear(hidden, b[p.fc2_w], b[p.fc2_b])?;
    g.add(y, out)
}
