//! The asymmetric U-shaped network: patch embedding, deep encoder stages,
//! a bottleneck, shallow decoder stages with skip fusion, and a full-resolution head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::focal::{fm_block, FMBlockParams, FocalModulationConfig};
use crate::params::{Bindings, ParamId, ParamStore};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub img_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub encoder_depths: Vec<usize>,
    pub bottleneck_depth: usize,
    pub decoder_depths: Vec<usize>,
    /// Focal levels per stage (encoder stages then bottleneck); a single value applies everywhere.
    pub focal_levels: Vec<usize>,
    /// Base focal kernel per stage, same indexing as `focal_levels`.
    pub focal_windows: Vec<usize>,
    pub focal_factor: usize,
    pub mlp_ratio: f64,
    pub global_context: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            num_classes: 9,
            img_size: 224,
            patch_size: 4,
            embed_dim: 96,
            encoder_depths: vec![4, 4, 4],
            bottleneck_depth: 4,
            decoder_depths: vec![1, 1, 1],
            focal_levels: vec![2],
            focal_windows: vec![3],
            focal_factor: 2,
            mlp_ratio: 4.0,
            global_context: true,
        }
    }
}

/// Per-stage block counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DepthReport {
    pub encoder: Vec<usize>,
    pub bottleneck: usize,
    pub decoder: Vec<usize>,
}

impl ModelConfig {
    pub fn num_stages(&self) -> usize {
        self.encoder_depths.len()
    }

    /// Channel width at stage `s`; `s == num_stages()` is the bottleneck.
    pub fn width(&self, stage: usize) -> usize {
        self.embed_dim << stage
    }

    /// Spatial extent at stage `s`; `s == num_stages()` is the bottleneck.
    pub fn extent(&self, stage: usize) -> usize {
        self.img_size / (self.patch_size << stage)
    }

    pub fn stage_extents(&self) -> Vec<usize> {
        (0..=self.num_stages()).map(|s| self.extent(s)).collect()
    }

    pub fn stage_widths(&self) -> Vec<usize> {
        (0..=self.num_stages()).map(|s| self.width(s)).collect()
    }

    fn per_stage(values: &[usize], stage: usize) -> usize {
        if values.len() == 1 {
            values[0]
        } else {
            values[stage]
        }
    }

    /// Focal configuration of stage `s` (decoder stages reuse their encoder's).
    pub fn focal(&self, stage: usize) -> FocalModulationConfig {
        FocalModulationConfig {
            dim: self.width(stage),
            focal_levels: Self::per_stage(&self.focal_levels, stage),
            focal_window: Self::per_stage(&self.focal_windows, stage),
            focal_factor: self.focal_factor,
            mlp_ratio: self.mlp_ratio,
            global_context: self.global_context,
        }
    }

    pub fn depth_report(&self) -> DepthReport {
        DepthReport {
            encoder: self.encoder_depths.clone(),
            bottleneck: self.bottleneck_depth,
            decoder: self.decoder_depths.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stages = self.num_stages();
        if stages == 0 {
            return Err(Error::Config("at least one encoder stage is required".into()));
        }
        if self.decoder_depths.len() != stages {
            return Err(Error::Config(format!(
                "decoder_depths has {} stages but encoder_depths has {stages}",
                self.decoder_depths.len()
            )));
        }
        for (field, v) in [("focal_levels", &self.focal_levels), ("focal_windows", &self.focal_windows)] {
            if v.len() != 1 && v.len() != stages + 1 {
                return Err(Error::Config(format!(
                    "{field} must have 1 or {} entries, got {}",
                    stages + 1,
                    v.len()
                )));
            }
        }
        if self.in_channels == 0 || self.embed_dim == 0 || self.patch_size == 0 {
            return Err(Error::Config(
                "in_channels, embed_dim and patch_size must be >= 1".into(),
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be >= 2, got {}", self.num_classes)));
        }
        let factor = self.patch_size << stages;
        if self.img_size == 0 || self.img_size % factor != 0 {
            return Err(Error::Config(format!(
                "img_size {} is not divisible by patch_size {} * 2^{stages} = {factor}",
                self.img_size, self.patch_size
            )));
        }
        for s in 0..=stages {
            self.focal(s).validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderStage {
    pub blocks: Vec<FMBlockParams>,
    /// 2×2 stride-2 conv, `C_s → 2C_s`.
    pub down_w: ParamId,
    pub down_b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderStage {
    /// Resolution level this stage produces; it consumes the encoder skip of the same level.
    pub level: usize,
    /// 2×2 stride-2 transposed conv, `C_{s+1} → C_s`.
    pub up_w: ParamId,
    pub up_b: ParamId,
    /// Projection of `[upsampled ‖ skip]` (`2C_s`) back to `C_s`.
    pub fuse_w: ParamId,
    pub fuse_b: ParamId,
    pub blocks: Vec<FMBlockParams>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelLayout {
    pub embed_w: ParamId,
    pub embed_b: ParamId,
    pub encoder: Vec<EncoderStage>,
    pub bottleneck: Vec<FMBlockParams>,
    /// In execution order, deepest first.
    pub decoder: Vec<DecoderStage>,
    pub head_up_w: ParamId,
    pub head_up_b: ParamId,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

/// Hooks for mechanism probes.
#[derive(Clone, Debug, Default)]
pub struct ForwardOptions {
    /// Replace the encoder skip feature at this level with zeros.
    pub zero_skip: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    /// Shapes of the retained skip features, shallowest first.
    pub skip_shapes: Vec<Vec<usize>>,
    pub bottleneck_shape: Vec<usize>,
}

/// Configuration, parameters and their layout.
#[derive(Clone, Debug, PartialEq)]
pub struct FocalUNet {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub layout: ModelLayout,
}

impl FocalUNet {
    /// Allocates and Kaiming-initializes every submodule.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = ParamStore::new();
        let cfg = &config;
        let (c0, p, stages) = (cfg.embed_dim, cfg.patch_size, cfg.num_stages());

        let embed_w = st.kaiming("embed.weight", &[c0, cfg.in_channels, p, p], cfg.in_channels * p * p, &mut rng);
        let embed_b = st.zeros("embed.bias", &[c0]);

        let blocks = |st: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, stage: usize, depth: usize| {
            let focal = cfg.focal(stage);
            (0..depth)
                .map(|i| FMBlockParams::init(st, &format!("{prefix}.blocks.{i}"), &focal, rng))
                .collect::<Vec<_>>()
        };

        let mut encoder = Vec::with_capacity(stages);
        for (s, &depth) in cfg.encoder_depths.iter().enumerate() {
            let (cin, cout) = (cfg.width(s), cfg.width(s + 1));
            let blocks = blocks(&mut st, &mut rng, &format!("encoder.{s}"), s, depth);
            let down_w = st.kaiming(format!("encoder.{s}.down.weight"), &[cout, cin, 2, 2], cin * 4, &mut rng);
            let down_b = st.zeros(format!("encoder.{s}.down.bias"), &[cout]);
            encoder.push(EncoderStage { blocks, down_w, down_b });
        }

        let bottleneck = blocks(&mut st, &mut rng, "bottleneck", stages, cfg.bottleneck_depth);

        let mut decoder = Vec::with_capacity(stages);
        for s in (0..stages).rev() {
            let (wide, narrow) = (cfg.width(s + 1), cfg.width(s));
            let up_w = st.kaiming(format!("decoder.{s}.up.weight"), &[wide, narrow, 2, 2], wide, &mut rng);
            let up_b = st.zeros(format!("decoder.{s}.up.bias"), &[narrow]);
            let fuse_w = st.kaiming(format!("decoder.{s}.fuse.weight"), &[narrow, 2 * narrow], 2 * narrow, &mut rng);
            let fuse_b = st.zeros(format!("decoder.{s}.fuse.bias"), &[narrow]);
            let blocks = blocks(&mut st, &mut rng, &format!("decoder.{s}"), s, cfg.decoder_depths[s]);
            decoder.push(DecoderStage {
                level: s,
                up_w,
                up_b,
                fuse_w,
                fuse_b,
                blocks,
            });
        }

        let head_up_w = st.kaiming("head.up.weight", &[c0, c0, p, p], c0, &mut rng);
        let head_up_b = st.zeros("head.up.bias", &[c0]);
        let head_w = st.kaiming("head.classifier.weight", &[cfg.num_classes, c0, 1, 1], c0, &mut rng);
        let head_b = st.zeros("head.classifier.bias", &[cfg.num_classes]);

        let layout = ModelLayout {
            embed_w,
            embed_b,
            encoder,
            bottleneck,
            decoder,
            head_up_w,
            head_up_b,
            head_w,
            head_b,
        };
        Ok(Self {
            config,
            params: st,
            layout,
        })
    }

    pub fn count_parameters(&self) -> usize {
        self.params.numel()
    }

    pub fn forward(&self, g: &mut Graph, b: &Bindings, x: Var) -> Result<Var> {
        Ok(self.forward_with(g, b, x, &ForwardOptions::default())?.logits)
    }

    /// `embed → [FM×d, down]×S → FM×d → [up, concat skip, fuse, FM×d]×S → expand ×patch → 1×1 conv`.
    pub fn forward_with(&self, g: &mut Graph, b: &Bindings, x: Var, opts: &ForwardOptions) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let (_, c, h, w) = g.value(x).dims4("forward")?;
        if c != cfg.in_channels || h != cfg.img_size || w != cfg.img_size {
            return Err(Error::ShapeMismatch {
                op: "forward",
                lhs: g.shape(x).to_vec(),
                rhs: vec![cfg.in_channels, cfg.img_size, cfg.img_size],
            });
        }
        let l = &self.layout;
        let mut h = g.conv2d(x, b[l.embed_w], b[l.embed_b], cfg.patch_size, 0)?;

        let mut skips = Vec::with_capacity(l.encoder.len());
        for (s, stage) in l.encoder.iter().enumerate() {
            let focal = cfg.focal(s);
            for block in &stage.blocks {
                h = fm_block(g, b, block, &focal, h)?;
            }
            skips.push(h);
            h = g.conv2d(h, b[stage.down_w], b[stage.down_b], 2, 0)?;
        }
        let skip_shapes = skips.iter().map(|&v| g.shape(v).to_vec()).collect();

        let focal = cfg.focal(cfg.num_stages());
        for block in &l.bottleneck {
            h = fm_block(g, b, block, &focal, h)?;
        }
        let bottleneck_shape = g.shape(h).to_vec();

        for stage in &l.decoder {
            let up = g.conv_transpose2d(h, b[stage.up_w], b[stage.up_b], 2)?;
            let mut skip = skips[stage.level];
            if opts.zero_skip == Some(stage.level) {
                skip = g.constant(Tensor::zeros(g.shape(skip)));
            }
            let merged = g.concat_channels(up, skip)?;
            h = g.channel_linear(merged, b[stage.fuse_w], b[stage.fuse_b])?;
            let focal = cfg.focal(stage.level);
            for block in &stage.blocks {
                h = fm_block(g, b, block, &focal, h)?;
            }
        }

        let up = g.conv_transpose2d(h, b[l.head_up_w], b[l.head_up_b], cfg.patch_size)?;
        let logits = g.conv2d(up, b[l.head_w], b[l.head_b], 1, 0)?;
        Ok(ForwardOutput {
            logits,
            skip_shapes,
            bottleneck_shape,
        })
    }

    /// Inference without gradient bookkeeping.
    pub fn logits(&self, images: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.params.bind_frozen(&mut g);
        let x = g.constant(images.clone());
        let y = self.forward(&mut g, &b, x)?;
        Ok(g.value(y).clone())
    }

    /// Per-pixel argmax labels, `N×H×W` flattened.
    pub fn predict(&self, images: &Tensor) -> Result<Vec<u8>> {
        let logits = self.logits(images)?;
        Ok(argmax_classes(&logits))
    }
}

/// Argmax over the class axis of `N×K×H×W` logits (lowest index wins ties).
pub fn argmax_classes(logits: &Tensor) -> Vec<u8> {
    let s = logits.shape();
    let (n, k, planes) = (s[0], s[1], s[2] * s[3]);
    let d = logits.data();
    let mut out = Vec::with_capacity(n * planes);
    for ni in 0..n {
        for p in 0..planes {
            let mut best = 0;
            for c in 1..k {
                if d[(ni * k + c) * planes + p] > d[(ni * k + best) * planes + p] {
                    best = c;
                }
            }
            out.push(best as u8);
        }
    }
    out
}
