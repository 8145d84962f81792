//! Cosine annealing with warm restarts for T_0 = 100, T_mult = 2.

use focal_unet::train::{cosine_warm_restart_lr, Cycle};
use focal_unet::TrainConfig;

fn main() {
    let cfg = TrainConfig {
        t_0: Some(100),
        ..TrainConfig::default()
    };
    for t in [0, 50, 99, 100, 200, 250, 299, 300, 500, 700] {
        let c = Cycle::locate(t, 100, 2);
        println!("t {t:>4}  cycle {} [{}, {})  lr {:.6e}", c.index, c.start, c.start + c.len, cosine_warm_restart_lr(t, &cfg));
    }
}
