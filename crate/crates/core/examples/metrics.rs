//! Dice and Hausdorff on two overlapping squares, then a CSV/JSON report.

use focal_unet::data::ClassMask;
use focal_unet::metrics::{dice, evaluate, hausdorff};

fn square(size: usize, top: usize, left: usize, side: usize, class: u8) -> ClassMask {
    let mut m = ClassMask::filled(size, size, 0);
    for r in top..top + side {
        for c in left..left + side {
            m.set(r, c, class);
        }
    }
    m
}

fn main() -> focal_unet::Result<()> {
    let target = square(32, 8, 8, 12, 1);
    let pred = square(32, 10, 11, 12, 1);
    println!("dice {:?}", dice(&pred, &target, 1)?);
    println!("hd {:?}  hd95 {:?}", hausdorff(&pred, &target, 1, 100.0)?, hausdorff(&pred, &target, 1, 95.0)?);

    let report = evaluate(&[pred, target.clone()], &[target.clone(), target], 3, 95.0)?;
    println!("mean dsc {:?}  mean hd95 {:?}", report.mean_dsc, report.mean_hd);
    for s in &report.skipped {
        println!("skipped class {} {}: {}", s.class, s.metric, s.reason);
    }
    let dir = std::env::temp_dir().join("focal-unet-metrics");
    std::fs::create_dir_all(&dir)?;
    report.write_csv(&dir.join("metrics.csv"))?;
    report.write_json(&dir.join("metrics.json"))?;
    println!("wrote {}", dir.display());
    Ok(())
}
