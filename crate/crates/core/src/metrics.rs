//! Dice and Hausdorff evaluation on integer class masks.
//!
//! Only foreground classes `1..K` are scored. A metric that is undefined for a
//! case (both masks empty for DSC, either boundary empty for HD) is excluded
//! from the averages and listed in [`MetricsReport::skipped`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ClassMask;
use crate::error::{Error, Result};

fn check_dims(pred: &ClassMask, target: &ClassMask, op: &'static str) -> Result<()> {
    if pred.dims() != target.dims() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: vec![pred.height(), pred.width()],
            rhs: vec![target.height(), target.width()],
        });
    }
    Ok(())
}

/// `2|P∩G| / (|P|+|G|)` for class `k`; `None` when both sets are empty.
pub fn dice(pred: &ClassMask, target: &ClassMask, class: u8) -> Result<Option<f64>> {
    check_dims(pred, target, "dice")?;
    let (mut p, mut g, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.labels().iter().zip(target.labels()) {
        let (ia, ib) = (a == class, b == class);
        p += ia as usize;
        g += ib as usize;
        both += (ia && ib) as usize;
    }
    if p + g == 0 {
        return Ok(None);
    }
    Ok(Some(2.0 * both as f64 / (p + g) as f64))
}

/// Foreground pixels of `class` with at least one 4-neighbour outside the class.
/// Pixels on the image border always qualify.
pub fn boundary(mask: &ClassMask, class: u8) -> Vec<(usize, usize)> {
    let (h, w) = mask.dims();
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) != class {
                continue;
            }
            let edge = r == 0
                || c == 0
                || r + 1 == h
                || c + 1 == w
                || mask.get(r - 1, c) != class
                || mask.get(r + 1, c) != class
                || mask.get(r, c - 1) != class
                || mask.get(r, c + 1) != class;
            if edge {
                out.push((r, c));
            }
        }
    }
    out
}

/// Exact squared Euclidean distance transform to the given sites.
/// Column pass, then the lower envelope of parabolas along each row.
fn squared_edt(h: usize, w: usize, sites: &[(usize, usize)]) -> Vec<i64> {
    const INF: i64 = i64::MAX / 4;
    let mut col = vec![INF; h * w];
    for &(r, c) in sites {
        col[r * w + c] = 0;
    }
    for c in 0..w {
        let mut last: Option<usize> = None;
        for r in 0..h {
            if col[r * w + c] == 0 {
                last = Some(r);
            } else if let Some(s) = last {
                col[r * w + c] = ((r - s) * (r - s)) as i64;
            }
        }
        last = None;
        for r in (0..h).rev() {
            if col[r * w + c] == 0 {
                last = Some(r);
            } else if let Some(s) = last {
                let d = ((s - r) * (s - r)) as i64;
                col[r * w + c] = col[r * w + c].min(d);
            }
        }
    }

    let mut out = vec![INF; h * w];
    let mut v = Vec::with_capacity(w);
    let mut z: Vec<f64> = Vec::with_capacity(w + 1);
    for r in 0..h {
        let f = &col[r * w..(r + 1) * w];
        v.clear();
        z.clear();
        let meet = |q: usize, p: usize| -> f64 {
            let (qi, pi) = (q as i64, p as i64);
            ((f[q] + qi * qi) - (f[p] + pi * pi)) as f64 / (2 * (qi - pi)) as f64
        };
        for q in (0..w).filter(|&q| f[q] < INF) {
            while let Some(&p) = v.last() {
                if meet(q, p) <= z[z.len() - 1] {
                    v.pop();
                    z.pop();
                } else {
                    break;
                }
            }
            z.push(if v.is_empty() { f64::NEG_INFINITY } else { meet(q, *v.last().unwrap()) });
            v.push(q);
        }
        if v.is_empty() {
            continue;
        }
        let mut k = 0;
        for c in 0..w {
            while k + 1 < v.len() && z[k + 1] < c as f64 {
                k += 1;
            }
            let d = c as i64 - v[k] as i64;
            out[r * w + c] = d * d + f[v[k]];
        }
    }
    out
}

/// Linear interpolation between closest ranks; `values` must be sorted.
fn percentile_sorted(values: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

fn directed(from: &[(usize, usize)], to_edt: &[i64], w: usize, percentile: f64) -> f64 {
    let mut d: Vec<f64> = from.iter().map(|&(r, c)| (to_edt[r * w + c] as f64).sqrt()).collect();
    if percentile >= 100.0 {
        return d.into_iter().fold(0.0, f64::max);
    }
    d.sort_by(f64::total_cmp);
    percentile_sorted(&d, percentile)
}

fn check_percentile(percentile: f64) -> Result<()> {
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::Config(format!("percentile must lie in (0, 100], got {percentile}")));
    }
    Ok(())
}

/// Symmetric boundary Hausdorff distance in pixels; `percentile` 100 is the
/// classical maximum, 95 gives HD95. `None` when either boundary is empty.
pub fn hausdorff(pred: &ClassMask, target: &ClassMask, class: u8, percentile: f64) -> Result<Option<f64>> {
    check_dims(pred, target, "hausdorff")?;
    check_percentile(percentile)?;
    let (bp, bg) = (boundary(pred, class), boundary(target, class));
    if bp.is_empty() || bg.is_empty() {
        return Ok(None);
    }
    let (h, w) = pred.dims();
    let to_g = squared_edt(h, w, &bg);
    let to_p = squared_edt(h, w, &bp);
    Ok(Some(directed(&bp, &to_g, w, percentile).max(directed(&bg, &to_p, w, percentile))))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseClassMetrics {
    pub case: String,
    pub class: usize,
    pub dsc: Option<f64>,
    pub hd: Option<f64>,
    /// Target pixels of this class.
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    /// Mean over cases with a defined value.
    pub dsc: Option<f64>,
    pub hd: Option<f64>,
    pub support: usize,
    pub dsc_cases: usize,
    pub hd_cases: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    /// `None` when the whole class is excluded from a mean.
    pub case: Option<String>,
    pub class: usize,
    pub metric: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_classes: usize,
    pub percentile: f64,
    pub per_case: Vec<CaseClassMetrics>,
    pub per_class: Vec<ClassMetrics>,
    pub mean_dsc: Option<f64>,
    pub mean_hd: Option<f64>,
    pub skipped: Vec<Skipped>,
}

fn mean(values: impl Iterator<Item = f64>) -> (Option<f64>, usize) {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    ((n > 0).then(|| sum / n as f64), n)
}

/// Cases are labelled by their index.
pub fn evaluate(preds: &[ClassMask], targets: &[ClassMask], num_classes: usize, percentile: f64) -> Result<MetricsReport> {
    let ids: Vec<String> = (0..preds.len()).map(|i| i.to_string()).collect();
    evaluate_cases(&ids, preds, targets, num_classes, percentile)
}

/// Scores each foreground class per case, averages each class over its
/// defined cases, then averages the classes.
pub fn evaluate_cases(
    ids: &[String],
    preds: &[ClassMask],
    targets: &[ClassMask],
    num_classes: usize,
    percentile: f64,
) -> Result<MetricsReport> {
    check_percentile(percentile)?;
    if preds.len() != targets.len() || ids.len() != preds.len() {
        return Err(Error::ShapeMismatch {
            op: "evaluate",
            lhs: vec![preds.len()],
            rhs: vec![targets.len()],
        });
    }
    if num_classes > 256 {
        return Err(Error::Config(format!("num_classes {num_classes} exceeds 8-bit masks")));
    }
    for (p, t) in preds.iter().zip(targets) {
        check_dims(p, t, "evaluate")?;
        for m in [p, t] {
            if let Some(c) = m.max_class().filter(|&c| c as usize >= num_classes) {
                return Err(Error::ClassOutOfRange {
                    index: c as usize,
                    classes: num_classes,
                });
            }
        }
    }

    let mut per_case = Vec::new();
    let mut skipped = Vec::new();
    for ((id, p), t) in ids.iter().zip(preds).zip(targets) {
        for class in 1..num_classes {
            let k = class as u8;
            let dsc = dice(p, t, k)?;
            let hd = hausdorff(p, t, k, percentile)?;
            if dsc.is_none() {
                skipped.push(Skipped {
                    case: Some(id.clone()),
                    class,
                    metric: "dsc".into(),
                    reason: "class absent from prediction and target".into(),
                });
            }
            if hd.is_none() {
                let reason = match (boundary(p, k).is_empty(), boundary(t, k).is_empty()) {
                    (true, true) => "class absent from prediction and target",
                    (true, false) => "class absent from prediction",
                    _ => "class absent from target",
                };
                skipped.push(Skipped {
                    case: Some(id.clone()),
                    class,
                    metric: "hd".into(),
                    reason: reason.into(),
                });
            }
            per_case.push(CaseClassMetrics {
                case: id.clone(),
                class,
                dsc,
                hd,
                support: t.labels().iter().filter(|&&l| l == k).count(),
            });
        }
    }

    let mut per_class = Vec::new();
    for class in 1..num_classes {
        let rows = || per_case.iter().filter(move |r| r.class == class);
        let (dsc, dsc_cases) = mean(rows().filter_map(|r| r.dsc));
        let (hd, hd_cases) = mean(rows().filter_map(|r| r.hd));
        for (metric, defined) in [("dsc", dsc_cases), ("hd", hd_cases)] {
            if defined == 0 {
                skipped.push(Skipped {
                    case: None,
                    class,
                    metric: metric.into(),
                    reason: "undefined in every case".into(),
                });
            }
        }
        per_class.push(ClassMetrics {
            class,
            dsc,
            hd,
            support: rows().map(|r| r.support).sum(),
            dsc_cases,
            hd_cases,
        });
    }
    let mean_dsc = mean(per_class.iter().filter_map(|c| c.dsc)).0;
    let mean_hd = mean(per_class.iter().filter_map(|c| c.hd)).0;
    Ok(MetricsReport {
        num_classes,
        percentile,
        per_case,
        per_class,
        mean_dsc,
        mean_hd,
        skipped,
    })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    scope: &'a str,
    case: &'a str,
    class: String,
    dsc: Option<f64>,
    hd: Option<f64>,
    support: Option<usize>,
}

impl MetricsReport {
    /// `scope,case,class,dsc,hd,support`: one `case` row per case and class,
    /// one `class` row per class, then a `mean` row. Undefined values are empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.per_case {
            w.serialize(CsvRow {
                scope: "case",
                case: &r.case,
                class: r.class.to_string(),
                dsc: r.dsc,
                hd: r.hd,
                support: Some(r.support),
            })?;
        }
        for c in &self.per_class {
            w.serialize(CsvRow {
                scope: "class",
                case: "",
                class: c.class.to_string(),
                dsc: c.dsc,
                hd: c.hd,
                support: Some(c.support),
            })?;
        }
        w.serialize(CsvRow {
            scope: "mean",
            case: "",
            class: String::new(),
            dsc: self.mean_dsc,
            hd: self.mean_hd,
            support: None,
        })?;
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}
