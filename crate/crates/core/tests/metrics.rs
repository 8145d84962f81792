mod common;

use common::{dice_oracle, hausdorff_oracle, random_mask, rotate};
use focal_unet::data::ClassMask;
use focal_unet::metrics::{dice, evaluate, evaluate_cases, hausdorff};
use focal_unet::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pairs(seed: u64, n: usize) -> Vec<(ClassMask, ClassMask)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (h, w) = (rng.random_range(3..20), rng.random_range(3..20));
            (random_mask(&mut rng, h, w, 3), random_mask(&mut rng, h, w, 3))
        })
        .collect()
}

#[test]
fn dice_and_hausdorff_match_brute_force() {
    for (p, g) in pairs(1, 200) {
        for k in 1..3u8 {
            let (d, o) = (dice(&p, &g, k).unwrap(), dice_oracle(&p, &g, k));
            match (d, o) {
                (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12),
                (a, b) => assert_eq!(a, b),
            }
            assert_eq!(hausdorff(&p, &g, k, 100.0).unwrap(), hausdorff_oracle(&p, &g, k, 100.0));
            let (a, b) = (hausdorff(&p, &g, k, 95.0).unwrap(), hausdorff_oracle(&p, &g, k, 95.0));
            assert_eq!(a.is_some(), b.is_some());
            if let (Some(a), Some(b)) = (a, b) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn metrics_are_symmetric() {
    for (p, g) in pairs(2, 100) {
        for k in 1..3u8 {
            assert_eq!(dice(&p, &g, k).unwrap(), dice(&g, &p, k).unwrap());
            assert_eq!(hausdorff(&p, &g, k, 100.0).unwrap(), hausdorff(&g, &p, k, 100.0).unwrap());
        }
    }
}

#[test]
fn invariant_under_quarter_turns() {
    for (p, g) in pairs(3, 60) {
        let (rp, rg) = (rotate(&p), rotate(&g));
        for k in 1..3u8 {
            assert_eq!(dice(&p, &g, k).unwrap(), dice(&rp, &rg, k).unwrap());
            assert_eq!(hausdorff(&p, &g, k, 100.0).unwrap(), hausdorff(&rp, &rg, k, 100.0).unwrap());
        }
    }
}

#[test]
fn identical_masks_are_perfect() {
    for (p, _) in pairs(4, 50) {
        for k in 1..3u8 {
            if let Some(d) = dice(&p, &p, k).unwrap() {
                assert_eq!(d, 1.0);
                assert_eq!(hausdorff(&p, &p, k, 100.0).unwrap(), Some(0.0));
            }
        }
    }
}

#[test]
fn hausdorff_grows_with_displacement() {
    let block = |shift: usize| {
        let mut m = ClassMask::filled(30, 30, 0);
        for r in 5..10 {
            for c in 2 + shift..7 + shift {
                m.set(r, c, 1);
            }
        }
        m
    };
    let g = block(0);
    let mut last = -1.0;
    for s in 0..15 {
        let hd = hausdorff(&block(s), &g, 1, 100.0).unwrap().unwrap();
        assert_eq!(hd, s as f64);
        assert!(hd > last);
        last = hd;
    }
}

#[test]
fn case_order_does_not_change_aggregates() {
    let ps = pairs(5, 12);
    let (preds, targets): (Vec<_>, Vec<_>) = ps.iter().cloned().unzip();
    let a = evaluate(&preds, &targets, 3, 100.0).unwrap();
    let (rp, rt): (Vec<_>, Vec<_>) = ps.iter().rev().cloned().unzip();
    let b = evaluate(&rp, &rt, 3, 100.0).unwrap();
    for (x, y) in a.per_class.iter().zip(&b.per_class) {
        assert!((x.dsc.unwrap() - y.dsc.unwrap()).abs() <= 1e-12);
        assert!((x.hd.unwrap() - y.hd.unwrap()).abs() <= 1e-12);
        assert_eq!(x.support, y.support);
    }
}

#[test]
fn aggregation_averages_cases_then_classes() {
    let ps = pairs(6, 20);
    let (preds, targets): (Vec<_>, Vec<_>) = ps.iter().cloned().unzip();
    let report = evaluate(&preds, &targets, 3, 100.0).unwrap();
    let mut class_means = Vec::new();
    for k in 1..3u8 {
        let vals: Vec<f64> = ps.iter().filter_map(|(p, g)| dice_oracle(p, g, k)).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((report.per_class[k as usize - 1].dsc.unwrap() - m).abs() <= 1e-12);
        assert_eq!(report.per_class[k as usize - 1].dsc_cases, vals.len());
        class_means.push(m);
    }
    let expect = class_means.iter().sum::<f64>() / 2.0;
    assert!((report.mean_dsc.unwrap() - expect).abs() <= 1e-12);
    assert_eq!(report.per_case.len(), 2 * 20);
}

#[test]
fn undefined_values_are_listed() {
    let empty = ClassMask::filled(5, 5, 0);
    let mut one = ClassMask::filled(5, 5, 0);
    one.set(2, 2, 1);
    let report = evaluate_cases(
        &["a".into(), "b".into()],
        &[empty.clone(), empty.clone()],
        &[one, empty],
        3,
        95.0,
    )
    .unwrap();
    assert_eq!(report.per_class[0].dsc, Some(0.0));
    assert_eq!(report.per_class[0].hd, None);
    assert!(report.skipped.iter().any(|s| s.case.as_deref() == Some("b") && s.metric == "dsc" && s.class == 1));
    assert!(report.skipped.iter().any(|s| s.case.is_none() && s.class == 2 && s.metric == "dsc"));
    assert_eq!(report.mean_dsc, Some(0.0));
    assert_eq!(report.mean_hd, None);
}

#[test]
fn invalid_inputs_rejected() {
    let a = ClassMask::filled(4, 4, 0);
    let b = ClassMask::filled(4, 5, 0);
    assert!(matches!(dice(&a, &b, 1), Err(Error::ShapeMismatch { .. })));
    assert!(hausdorff(&a, &a, 1, 0.0).is_err());
    assert!(hausdorff(&a, &a, 1, 100.5).is_err());
    let high = ClassMask::filled(4, 4, 3);
    assert!(matches!(evaluate(&[high], &[a], 3, 100.0), Err(Error::ClassOutOfRange { .. })));
}

#[test]
fn reports_serialize() {
    let ps = pairs(7, 3);
    let (preds, targets): (Vec<_>, Vec<_>) = ps.into_iter().unzip();
    let report = evaluate(&preds, &targets, 3, 95.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    report.write_csv(&dir.path().join("m.csv")).unwrap();
    report.write_json(&dir.path().join("m.json")).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "scope,case,class,dsc,hd,support");
    assert_eq!(csv.lines().filter(|l| l.starts_with("case,")).count(), 6);
    assert_eq!(csv.lines().filter(|l| l.starts_with("mean,")).count(), 1);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(json["percentile"], 95.0);
}
