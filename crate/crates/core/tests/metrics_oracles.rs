mod common;

use common::rng;
use proptest::prelude::*;
use rand::Rng;
use sre_unet::data::{
    gen_synthetic_vessels, make_rotated_testset, make_rotated_testset_with_angles, Mask, Sample,
};
use sre_unet::metrics::{
    auc, confusion, equivariance_error, evaluate, metrics_from_confusion, pad_to_multiple,
    EvalOptions, LabelMode, Predictor, RowMetrics,
};
use sre_unet::{build_unet, ConvType, Error, Tensor4, UNetConfig, D4};

/// Probability that a random positive outranks a random negative, ties counted half.
fn auc_pairs(scores: &[f32], labels: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        if li != 1 {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj != 0 {
                continue;
            }
            den += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / den
}

#[test]
fn auc_matches_pairwise_oracle_with_ties() {
    let mut r = rng(1);
    for case in 0..60 {
        let n = r.gen_range(2..200);
        let levels = if case % 2 == 0 { 5 } else { 1000 };
        let scores: Vec<f32> = (0..n)
            .map(|_| r.gen_range(0..levels) as f32 / levels as f32)
            .collect();
        let mut labels: Vec<u8> = (0..n).map(|_| r.gen_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let got = auc(&scores, &labels).unwrap();
        assert!(
            (got - auc_pairs(&scores, &labels)).abs() <= 1e-12,
            "case {case}"
        );
    }
}

#[test]
fn auc_edge_cases() {
    assert_eq!(auc(&[0.1, 0.9], &[0, 1]).unwrap(), 1.0);
    assert_eq!(auc(&[0.9, 0.1], &[0, 1]).unwrap(), 0.0);
    assert_eq!(auc(&[0.5, 0.5], &[0, 1]).unwrap(), 0.5);
    assert_eq!(auc(&[0.2, 0.7], &[1, 1]).unwrap(), 0.5);
    assert!(matches!(auc(&[0.2], &[1, 0]), Err(Error::Shape(_))));
}

proptest! {
    #[test]
    fn auc_is_invariant_to_monotone_maps(raw in prop::collection::vec((0u8..16, 0u8..2), 2..120)) {
        let scores: Vec<f32> = raw.iter().map(|&(s, _)| f32::from(s) / 16.0).collect();
        let labels: Vec<u8> = raw.iter().map(|&(_, l)| l).collect();
        let mapped: Vec<f32> = scores.iter().map(|&s| s * s * 0.5 + 0.125).collect();
        prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&mapped, &labels).unwrap());
    }

    #[test]
    fn scores_are_invariant_under_joint_d4(seed in any::<u64>(), gi in 0usize..8) {
        let g = D4::all()[gi];
        let mut r = rng(seed);
        let (h, w) = (6, 9);
        let prob = Tensor4::<f32>::from_fn([1, 1, h, w], |_, _, _, _| r.gen_range(0..8) as f32 / 8.0);
        let label = Mask::new(h, w, (0..h * w).map(|_| r.gen_range(0..2)).collect()).unwrap();
        let pred = |p: &Tensor4<f32>| -> Vec<u8> { p.data().iter().map(|&v| u8::from(v >= 0.5)).collect() };
        let (pg, lg) = (prob.transform(g), label.transform(g));
        prop_assert_eq!(
            confusion(&pred(&prob), &label.data, None).unwrap(),
            confusion(&pred(&pg), &lg.data, None).unwrap()
        );
        prop_assert_eq!(auc(prob.data(), &label.data).unwrap(), auc(pg.data(), &lg.data).unwrap());
    }

    #[test]
    fn dice_and_iou_are_linked(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..200)) {
        let (p, l): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        let c = confusion(&p, &l, None).unwrap();
        let m = metrics_from_confusion(&c);
        prop_assert!((m.dice - 2.0 * m.iou / (1.0 + m.iou)).abs() <= 1e-12);
        prop_assert_eq!(c.total() as usize, p.len());
        let acc = (c.tp + c.tn) as f64 / c.total() as f64;
        prop_assert!((m.accuracy - acc).abs() <= 1e-15);
    }
}

#[test]
fn confusion_counts_by_hand() {
    let pred = [1, 1, 0, 0, 1];
    let label = [1, 0, 1, 0, 1];
    let c = confusion(&pred, &label, None).unwrap();
    assert_eq!((c.tp, c.fp, c.tn, c.fn_), (2, 1, 1, 1));
    let m = metrics_from_confusion(&c);
    assert!((m.dice - 4.0 / 6.0).abs() < 1e-15);
    assert!((m.iou - 0.5).abs() < 1e-15);
    assert!((m.sensitivity - 2.0 / 3.0).abs() < 1e-15);
    assert!((m.specificity - 0.5).abs() < 1e-15);
    let c = confusion(&pred, &label, Some(&[1, 1, 0, 0, 0])).unwrap();
    assert_eq!((c.tp, c.fp, c.tn, c.fn_), (1, 1, 0, 0));
    assert!(confusion(&pred, &label[..4], None).is_err());
}

fn label_images(count: usize, size: usize) -> Vec<Sample> {
    gen_synthetic_vessels(3, count, size)
        .unwrap()
        .into_iter()
        .map(|mut s| {
            for (v, &l) in s.image.plane_mut(0, 0).iter_mut().zip(&s.label.data) {
                *v = f32::from(l);
            }
            s
        })
        .collect()
}

fn channel0(x: &Tensor4<f32>) -> sre_unet::Result<Vec<f32>> {
    Ok(x.plane(0, 0).to_vec())
}

#[test]
fn perfect_predictor_scores_one_at_every_angle() {
    let samples = label_images(3, 40);
    let set = make_rotated_testset(&samples);
    let report = evaluate(&channel0, &set, &EvalOptions::default()).unwrap();
    assert_eq!(report.rows.len(), 3 * 11);
    for row in &report.rows {
        assert_eq!(row.metrics.dice, 1.0, "{} {}", row.sample_id, row.angle);
        assert_eq!(row.metrics.auc, 1.0);
        assert_eq!(row.metrics.accuracy, 1.0);
    }
    assert_eq!(report.summary.per_angle.len(), 11);
    assert_eq!(report.summary.samples, 3);
    assert_eq!(report.summary.rotated.unwrap().dice, 1.0);

    let csv = report.to_csv();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert_eq!(header.split(',').count(), 2 + RowMetrics::COLUMNS.len());
    assert!(header.starts_with("sample_id,angle,"));
    assert_eq!(lines.count(), 33);
    let json = serde_json::to_string(&report.summary).unwrap();
    let back: sre_unet::metrics::EvalSummary = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report.summary);
}

#[test]
fn rotate_back_mode_on_quarter_turns() {
    let samples = label_images(2, 32);
    let set = make_rotated_testset_with_angles(&samples, &[0, 90, 180]);
    let opts = EvalOptions {
        label_mode: LabelMode::RotateBack,
        ..EvalOptions::default()
    };
    let report = evaluate(&channel0, &set, &opts).unwrap();
    assert!(report
        .rows
        .iter()
        .all(|r| r.metrics.dice == 1.0 && r.metrics.equivariance_mse == 0.0));

    let small = make_rotated_testset_with_angles(&samples, &[0, 3]);
    let back = evaluate(&channel0, &small, &opts).unwrap();
    let fwd = evaluate(&channel0, &small, &EvalOptions::default()).unwrap();
    assert_eq!(back.rows[0].metrics, fwd.rows[0].metrics);
    assert!(back.rows[1].metrics.dice > 0.8);
}

#[test]
fn protocol_violations_are_rejected() {
    let samples = label_images(2, 24);
    let full = make_rotated_testset_with_angles(&samples, &[-1, 0, 1]);
    let opts = EvalOptions::default();

    let mut missing = full.clone();
    missing.entries.remove(4);
    assert!(matches!(
        evaluate(&channel0, &missing, &opts),
        Err(Error::Protocol(_))
    ));

    let mut dup = full.clone();
    let e = dup.entries[0].clone();
    dup.entries.push(e);
    assert!(matches!(
        evaluate(&channel0, &dup, &opts),
        Err(Error::Protocol(_))
    ));

    let mut no_zero = full.clone();
    no_zero.angles = vec![-1, 1];
    assert!(matches!(
        evaluate(&channel0, &no_zero, &opts),
        Err(Error::Protocol(_))
    ));

    let mut empty = full.clone();
    empty.entries.clear();
    assert!(matches!(
        evaluate(&channel0, &empty, &opts),
        Err(Error::Protocol(_))
    ));

    for t in [0.0, 1.0, f32::NAN, -0.5] {
        let bad = EvalOptions {
            threshold: t,
            ..EvalOptions::default()
        };
        assert!(matches!(
            evaluate(&channel0, &full, &bad),
            Err(Error::InvalidArgument(_))
        ));
    }
}

#[test]
fn quarter_turn_evaluation_of_untrained_nets() {
    let samples = gen_synthetic_vessels(9, 2, 32).unwrap();
    let set = make_rotated_testset_with_angles(&samples, &[0, 90]);
    let cfg = UNetConfig {
        base_channels: 4,
        ..UNetConfig::default()
    };
    let sre = build_unet::<f32>(&cfg, 1).unwrap();
    let report = evaluate(&sre, &set, &EvalOptions::default()).unwrap();
    for pair in report.rows.chunks(2) {
        assert_eq!(pair[0].metrics.values()[..6], pair[1].metrics.values()[..6]);
        assert_eq!(pair[1].metrics.equivariance_mse, 0.0);
    }

    let std = build_unet::<f32>(
        &UNetConfig {
            conv_type: ConvType::Standard,
            ..cfg
        },
        1,
    )
    .unwrap();
    let report = evaluate(&std, &set, &EvalOptions::default()).unwrap();
    assert!(report.rows.iter().any(|r| r.metrics.equivariance_mse > 0.0));
}

#[test]
fn network_predictor_handles_awkward_sizes() {
    let x = Tensor4::<f32>::from_fn([1, 3, 10, 13], |_, c, y, x| (c + y * 13 + x) as f32);
    let (p, top, left) = pad_to_multiple(&x, 4);
    assert_eq!(p.dims(), [1, 3, 12, 16]);
    assert_eq!((top, left), (1, 1));
    for c in 0..3 {
        for y in 0..10 {
            for j in 0..13 {
                assert_eq!(p.at(0, c, y + top, j + left), x.at(0, c, y, j));
            }
        }
    }
    let (same, t, l) = pad_to_multiple(&p, 4);
    assert_eq!((same, t, l), (p.clone(), 0, 0));

    let net = build_unet::<f32>(
        &UNetConfig {
            base_channels: 2,
            ..UNetConfig::default()
        },
        0,
    )
    .unwrap();
    let prob = net.predict(&x).unwrap();
    assert_eq!(prob.len(), 130);
    assert!(prob.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn equivariance_error_of_identical_maps_is_zero() {
    let mut r = rng(4);
    let (h, w) = (20, 20);
    let a: Vec<f32> = (0..h * w).map(|_| r.gen()).collect();
    let e = equivariance_error(&a, &a, h, w, 0.0).unwrap();
    assert_eq!(e.mse, 0.0);
    assert_eq!(e.valid.iter().map(|&v| v as usize).sum::<usize>(), h * w);
    let rotated = Tensor4::new([1, 1, h, w], a.clone()).unwrap().rot90(1);
    let e = equivariance_error(&a, rotated.data(), h, w, 90.0).unwrap();
    assert_eq!(e.mse, 0.0);
}
