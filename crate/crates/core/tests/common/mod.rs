//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use focal_unet::data::ClassMask;
use rand::Rng;

/// Random blobs of classes `1..k` (rectangles, possibly overlapping) on background.
pub fn random_mask(rng: &mut impl Rng, h: usize, w: usize, k: u8) -> ClassMask {
    let mut m = ClassMask::filled(h, w, 0);
    for _ in 0..rng.random_range(0..5) {
        let class = rng.random_range(1..k);
        let (r0, c0) = (rng.random_range(0..h), rng.random_range(0..w));
        let (r1, c1) = ((r0 + rng.random_range(1..h)).min(h), (c0 + rng.random_range(1..w)).min(w));
        for r in r0..r1 {
            for c in c0..c1 {
                m.set(r, c, class);
            }
        }
    }
    // sprinkle isolated pixels so boundaries are irregular
    for _ in 0..rng.random_range(0..4) {
        m.set(rng.random_range(0..h), rng.random_range(0..w), rng.random_range(0..k));
    }
    m
}

pub fn dice_oracle(p: &ClassMask, g: &ClassMask, k: u8) -> Option<f64> {
    let a: Vec<bool> = p.labels().iter().map(|&v| v == k).collect();
    let b: Vec<bool> = g.labels().iter().map(|&v| v == k).collect();
    let inter = a.iter().zip(&b).filter(|(x, y)| **x && **y).count();
    let total = a.iter().filter(|x| **x).count() + b.iter().filter(|x| **x).count();
    (total > 0).then(|| 2.0 * inter as f64 / total as f64)
}

fn boundary_oracle(m: &ClassMask, k: u8) -> Vec<(i64, i64)> {
    let (h, w) = (m.height() as i64, m.width() as i64);
    let inside = |r: i64, c: i64| r >= 0 && c >= 0 && r < h && c < w && m.get(r as usize, c as usize) == k;
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if inside(r, c) && [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dr, dc)| !inside(r + dr, c + dc)) {
                out.push((r, c));
            }
        }
    }
    out
}

fn directed_oracle(from: &[(i64, i64)], to: &[(i64, i64)], percentile: f64) -> f64 {
    let mut d: Vec<f64> = from
        .iter()
        .map(|&(r, c)| {
            to.iter()
                .map(|&(r2, c2)| (((r - r2).pow(2) + (c - c2).pow(2)) as f64).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = percentile / 100.0 * (d.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    d[lo] + (d[hi] - d[lo]) * (pos - lo as f64)
}

/// All-pairs Hausdorff over 4-neighbour boundaries, image border counted as outside.
pub fn hausdorff_oracle(p: &ClassMask, g: &ClassMask, k: u8, percentile: f64) -> Option<f64> {
    let (bp, bg) = (boundary_oracle(p, k), boundary_oracle(g, k));
    if bp.is_empty() || bg.is_empty() {
        return None;
    }
    Some(directed_oracle(&bp, &bg, percentile).max(directed_oracle(&bg, &bp, percentile)))
}

pub fn rotate(m: &ClassMask) -> ClassMask {
    let (h, w) = m.dims();
    let mut out = ClassMask::filled(w, h, 0);
    for r in 0..h {
        for c in 0..w {
            out.set(c, h - 1 - r, m.get(r, c));
        }
    }
    out
}
