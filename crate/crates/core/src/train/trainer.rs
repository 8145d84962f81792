use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adamw_step, augment, combined_loss, cosine_warm_restart_lr, OptimizerState, TrainConfig};
use crate::checkpoint::save_checkpoint;
use crate::data::{collate, SegmentationSample};
use crate::error::{Error, Result};
use crate::model::FocalUNet;
use crate::tensor::Graph;

const AUGMENT_SALT: u64 = 0x5eed_a6a6_0f0f_1234;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: u64,
    pub lr: f64,
    pub loss: f64,
    pub wall_ms: f64,
}

/// Owns the model and optimizer state for a training run.
///
/// Batch order and augmentation draws are pure functions of `(seed, iteration)`,
/// so a run restored from a checkpoint continues exactly where it stopped.
#[derive(Debug)]
pub struct Trainer {
    pub model: FocalUNet,
    pub state: OptimizerState,
    pub config: TrainConfig,
    checkpoint_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(model: FocalUNet, config: TrainConfig) -> Result<Self> {
        let state = OptimizerState::new(&model.params);
        Self::resume(model, state, config)
    }

    pub fn resume(model: FocalUNet, state: OptimizerState, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            model,
            state,
            config,
            checkpoint_dir: None,
        })
    }

    /// Enables periodic checkpoints (every `checkpoint_every` iterations) into `dir`.
    pub fn with_checkpoint_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    /// Completed iterations.
    pub fn iteration(&self) -> u64 {
        self.state.t
    }

    /// Dataset indices of iteration `t`: epoch-wise shuffles, last short batch kept.
    pub fn batch_indices(&self, t: u64, len: usize) -> Vec<usize> {
        let bs = self.config.batch_size;
        let per_epoch = len.div_ceil(bs) as u64;
        let (epoch, batch) = (t / per_epoch, (t % per_epoch) as usize);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        order[batch * bs..((batch + 1) * bs).min(len)].to_vec()
    }

    pub fn step(&mut self, dataset: &[SegmentationSample]) -> Result<TraceRow> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let started = Instant::now();
        let t = self.state.t;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ AUGMENT_SALT);
        rng.set_stream(t);
        let batch: Vec<SegmentationSample> = self
            .batch_indices(t, dataset.len())
            .into_iter()
            .map(|i| augment(&dataset[i], &self.config.augment, &mut rng))
            .collect();
        let (images, targets) = collate(&batch)?;

        let mut g = Graph::new();
        let bindings = self.model.params.bind(&mut g);
        let x = g.constant(images);
        let logits = self.model.forward(&mut g, &bindings, x)?;
        let loss = combined_loss(&mut g, logits, &targets, self.config.ce_weight, self.config.dice_weight)?;
        let loss_value = g.value(loss).data()[0];
        if !loss_value.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: t,
                value: loss_value,
            });
        }
        g.backward(loss)?;
        let grads = bindings.grads(&g, &self.model.params);
        drop(g);

        let lr = cosine_warm_restart_lr(t, &self.config);
        adamw_step(&mut self.model.params, &grads, &mut self.state, lr, &self.config)?;

        if let (Some(dir), Some(every)) = (&self.checkpoint_dir, self.config.checkpoint_every) {
            if every > 0 && self.state.t % every == 0 {
                let path = dir.join(format!("checkpoint_{:06}.ckpt", self.state.t));
                save_checkpoint(&path, &self.model, &self.state)?;
            }
        }

        Ok(TraceRow {
            iteration: t,
            lr,
            loss: loss_value,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Runs `iterations` further steps.
    pub fn run(
        &mut self,
        dataset: &[SegmentationSample],
        iterations: u64,
        mut on_step: impl FnMut(&TraceRow),
    ) -> Result<Vec<TraceRow>> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut trace = Vec::with_capacity(iterations as usize);
        for _ in 0..iterations {
            let row = self.step(dataset)?;
            on_step(&row);
            trace.push(row);
        }
        Ok(trace)
    }
}

/// Trains from scratch up to `config.max_iterations`.
pub fn train(
    model: FocalUNet,
    dataset: &[SegmentationSample],
    config: TrainConfig,
    on_step: impl FnMut(&TraceRow),
) -> Result<(Trainer, Vec<TraceRow>)> {
    let iterations = config.max_iterations;
    let mut trainer = Trainer::new(model, config)?;
    let trace = trainer.run(dataset, iterations, on_step)?;
    Ok((trainer, trace))
}

/// `iteration,lr,loss,wall_ms` with a header row.
pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
