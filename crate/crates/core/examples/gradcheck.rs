//! Finite-difference check of every autodiff op, one FM block and a tiny network.
//!
//! `cargo run --release --example gradcheck [seed]`

use focal_unet::gradsuite::{run_suite, TOLERANCE};

fn main() -> focal_unet::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let report = run_suite(seed)?;
    for c in &report.checks {
        let mark = if c.worst <= TOLERANCE { "ok " } else { "BAD" };
        println!("{mark} {:<40} {:>6} scalars  {:.3e}", c.name, c.scalars, c.worst);
    }
    println!("worst relative error {:.3e} (tolerance {TOLERANCE:e})", report.worst());
    Ok(())
}
