use super::TrainConfig;

/// Position of an iteration inside the warm-restart schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cycle {
    pub index: u32,
    pub start: u64,
    pub len: u64,
}

impl Cycle {
    /// Cycle `i` has length `T_0·T_mult^i` and starts where cycle `i-1` ended.
    pub fn locate(t: u64, t_0: u64, t_mult: u64) -> Self {
        let mut cycle = Cycle {
            index: 0,
            start: 0,
            len: t_0.max(1),
        };
        while t >= cycle.start + cycle.len {
            cycle.start += cycle.len;
            cycle.len = cycle.len.saturating_mul(t_mult.max(1));
            cycle.index += 1;
        }
        cycle
    }
}

/// `η_t = ½η(1 + cos(π·(t − S_i)/T_i))` with `η_min = 0`.
pub fn cosine_warm_restart_lr(t: u64, cfg: &TrainConfig) -> f64 {
    let cycle = Cycle::locate(t, cfg.period(), cfg.t_mult);
    let progress = (t - cycle.start) as f64 / cycle.len as f64;
    0.5 * cfg.lr * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(t_0: u64, t_mult: u64) -> TrainConfig {
        TrainConfig {
            t_0: Some(t_0),
            t_mult,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn starts_at_peak() {
        assert_eq!(cosine_warm_restart_lr(0, &cfg(100, 2)), 0.01);
    }

    #[test]
    fn midpoint_is_half_peak() {
        for t_mult in [1, 2, 3] {
            assert!((cosine_warm_restart_lr(50, &cfg(100, t_mult)) - 0.005).abs() < 1e-15);
        }
    }

    #[test]
    fn restarts_and_doubling() {
        let c = cfg(100, 2);
        assert_eq!(cosine_warm_restart_lr(100, &c), 0.01);
        assert!((cosine_warm_restart_lr(200, &c) - 0.005).abs() < 1e-15);
        assert!((cosine_warm_restart_lr(250, &c) - 0.0014644660940672626).abs() < 1e-15);
        assert_eq!(cosine_warm_restart_lr(300, &c), 0.01);
        assert_eq!(Cycle::locate(299, 100, 2), Cycle { index: 1, start: 100, len: 200 });
        assert_eq!(Cycle::locate(700, 100, 2), Cycle { index: 3, start: 700, len: 800 });
        assert_eq!(Cycle::locate(250, 100, 1), Cycle { index: 2, start: 200, len: 100 });
    }

    #[test]
    fn non_increasing_within_cycle() {
        let c = cfg(7, 2);
        let mut prev = f64::INFINITY;
        for t in 0..200 {
            let lr = cosine_warm_restart_lr(t, &c);
            let cycle = Cycle::locate(t, 7, 2);
            if t == cycle.start {
                assert_eq!(lr, c.lr);
            } else {
                assert!(lr <= prev);
            }
            prev = lr;
        }
    }
}
