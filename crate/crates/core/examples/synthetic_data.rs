//! Generates the synthetic shapes dataset and reads it back through the manifest.
//!
//! `cargo run --release --example synthetic_data [out-dir]`

use focal_unet::data::{gen_synthetic, load_dataset, synthesize};

fn main() -> focal_unet::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("focal-unet-synth"), Into::into);
    let manifest = gen_synthetic(&out, 8, 64, 3, 0)?;
    let samples = load_dataset(&manifest)?;
    for s in &samples {
        println!("{}  {:?}  class pixels {:?}", s.id, s.dims(), s.mask.class_counts(3));
    }
    for shape in synthesize(0, 64, 3, 0)?.shapes {
        println!("{shape:?}");
    }
    println!("manifest {}", manifest.display());
    Ok(())
}
