//! `focal-unet` command line: train, eval, predict, gen-synthetic, gradcheck.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::data::{
    gen_synthetic, load_dataset, load_manifest, read_image, write_color_mask, write_index_mask, ClassMask,
    SegmentationSample,
};
use crate::error::{Error, Result};
use crate::gradsuite::{run_suite, TOLERANCE};
use crate::metrics::evaluate_cases;
use crate::model::FocalUNet;
use crate::tensor::Tensor;
use crate::train::{write_trace_csv, Trainer};

#[derive(Debug, Parser)]
#[command(name = "focal-unet", version, about = "Focal-modulation U-Net segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on a dataset manifest; writes trace.csv and checkpoints into --out.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint (its model configuration wins).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Steps to run now; defaults to the remainder of train.max_iterations.
        #[arg(long)]
        iterations: Option<u64>,
    },
    /// Score predictions against a dataset; writes metrics.csv and metrics.json.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
        checkpoint: Option<PathBuf>,
        /// A manifest whose masks are taken as the predictions, matched by id.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// 100 for the classical Hausdorff distance, 95 for HD95.
        #[arg(long, default_value_t = 100.0)]
        percentile: f64,
    },
    /// Write class-index and colour prediction PNGs per image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset manifest whose images are segmented.
        #[arg(long, required_unless_present = "image")]
        data: Option<PathBuf>,
        /// Individual image files.
        #[arg(long)]
        image: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic shapes dataset with its manifest.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        img_size: usize,
        #[arg(long, default_value_t = 3)]
        num_classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference check of every op, an FM block and a tiny network.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Parses `argv` (program name first) and runs the subcommand; returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Train {
            config,
            data,
            out,
            resume,
            iterations,
        } => train(config.as_deref(), &data, &out, resume.as_deref(), iterations),
        Command::Eval {
            data,
            checkpoint,
            predictions,
            out,
            percentile,
        } => eval(&data, checkpoint.as_deref(), predictions.as_deref(), &out, percentile),
        Command::Predict {
            checkpoint,
            data,
            image,
            out,
        } => predict(&checkpoint, data.as_deref(), &image, &out),
        Command::GenSynthetic {
            out,
            count,
            img_size,
            num_classes,
            seed,
        } => {
            let manifest = gen_synthetic(&out, count, img_size, num_classes, seed)?;
            println!("wrote {count} samples; manifest {}", manifest.display());
            Ok(0)
        }
        Command::Gradcheck { seed } => {
            let report = run_suite(seed)?;
            for c in &report.checks {
                println!("{:<36} scalars {:>6}  max rel err {:.3e}", c.name, c.scalars, c.worst);
            }
            let worst = report.worst();
            println!("worst relative error: {worst:.3e} (tolerance {TOLERANCE:e})");
            Ok(if report.passed() { 0 } else { 1 })
        }
    }
}

fn train(config: Option<&Path>, data: &Path, out: &Path, resume: Option<&Path>, iterations: Option<u64>) -> Result<i32> {
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    }
    .apply_env()?;
    let manifest = load_manifest(data)?;
    let dataset = load_dataset(data)?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut trainer = match resume {
        Some(ckpt) => {
            let (model, state) = load_checkpoint(ckpt)?;
            Trainer::resume(model, state, cfg.train.clone())?
        }
        None => Trainer::new(FocalUNet::build(cfg.model.clone(), cfg.train.seed)?, cfg.train.clone())?,
    };
    if manifest.num_classes != trainer.model.config.num_classes {
        return Err(Error::Config(format!(
            "manifest has {} classes but model.num_classes is {}",
            manifest.num_classes, trainer.model.config.num_classes
        )));
    }
    fs::create_dir_all(out)?;
    trainer = trainer.with_checkpoint_dir(out);
    let steps = iterations.unwrap_or_else(|| cfg.train.max_iterations.saturating_sub(trainer.iteration()));
    let trace = trainer.run(&dataset, steps, |row| {
        if row.iteration % 10 == 0 {
            println!("iter {:>6}  lr {:.6e}  loss {:.6}", row.iteration, row.lr, row.loss);
        }
    })?;
    write_trace_csv(&out.join("trace.csv"), &trace)?;
    save_checkpoint(&out.join("final.ckpt"), &trainer.model, &trainer.state)?;
    println!("trained {steps} iterations; now at {}", trainer.iteration());
    Ok(0)
}

fn predict_mask(model: &FocalUNet, image: &Tensor) -> Result<ClassMask> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let batch = image.clone().reshape(&[1, 3, h, w])?;
    ClassMask::new(h, w, model.predict(&batch)?)
}

fn eval(data: &Path, checkpoint: Option<&Path>, predictions: Option<&Path>, out: &Path, percentile: f64) -> Result<i32> {
    let manifest = load_manifest(data)?;
    let targets = load_dataset(data)?;
    let preds: Vec<ClassMask> = match (checkpoint, predictions) {
        (Some(ckpt), _) => {
            let (model, _) = load_checkpoint(ckpt)?;
            targets.iter().map(|s| predict_mask(&model, &s.image)).collect::<Result<_>>()?
        }
        (None, Some(pred_manifest)) => {
            let predicted = load_dataset(pred_manifest)?;
            targets
                .iter()
                .map(|t| {
                    predicted
                        .iter()
                        .find(|p| p.id == t.id)
                        .map(|p| p.mask.clone())
                        .ok_or_else(|| Error::Config(format!("no prediction for id `{}`", t.id)))
                })
                .collect::<Result<_>>()?
        }
        (None, None) => return Err(Error::Config("eval needs --checkpoint or --predictions".into())),
    };
    let ids: Vec<String> = targets.iter().map(|s| s.id.clone()).collect();
    let masks: Vec<ClassMask> = targets.into_iter().map(|s| s.mask).collect();
    let report = evaluate_cases(&ids, &preds, &masks, manifest.num_classes, percentile)?;
    fs::create_dir_all(out)?;
    report.write_csv(&out.join("metrics.csv"))?;
    report.write_json(&out.join("metrics.json"))?;
    let show = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.6}"));
    println!("mean_dsc {}  mean_hd {}", show(report.mean_dsc), show(report.mean_hd));
    Ok(0)
}

fn predict(checkpoint: &Path, data: Option<&Path>, images: &[PathBuf], out: &Path) -> Result<i32> {
    let (model, _) = load_checkpoint(checkpoint)?;
    let mut inputs: Vec<(String, Tensor)> = match data {
        Some(d) => load_dataset(d)?
            .into_iter()
            .map(|s: SegmentationSample| (s.id, s.image))
            .collect(),
        None => Vec::new(),
    };
    for p in images {
        let id = p.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
        inputs.push((id, read_image(p)?));
    }
    fs::create_dir_all(out)?;
    for (id, image) in &inputs {
        let mask = predict_mask(&model, image)?;
        write_index_mask(&out.join(format!("{id}_index.png")), &mask)?;
        write_color_mask(&out.join(format!("{id}_color.png")), &mask)?;
    }
    println!("wrote {} predictions to {}", inputs.len(), out.display());
    Ok(0)
}
