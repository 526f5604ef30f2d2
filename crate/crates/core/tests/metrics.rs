use bda_core::dataio::{Mask, MaskPair};
use bda_core::metrics::{argmax_masks, compute_scores, ConfusionMatrix, ScoreReport};
use bda_core::numerics::{Rng, Tensor};

struct Case {
    gt: MaskPair,
    pred_loc: Mask,
    pred_dmg: Mask,
}

fn random_mask(rng: &mut Rng, n: usize, max: u8, p_zero: f64) -> Mask {
    let data = (0..n * n)
        .map(|_| if rng.bernoulli(p_zero) { 0 } else { 1 + rng.below(max as usize) as u8 })
        .collect();
    Mask::new(n, n, data).unwrap()
}

fn random_case(rng: &mut Rng) -> Case {
    let dmg = random_mask(rng, 8, 4, 0.4);
    let pred_dmg = random_mask(rng, 8, 4, 0.3);
    let pred_loc = random_mask(rng, 8, 1, 0.4);
    Case {
        gt: MaskPair::new(dmg.footprint(), dmg).unwrap(),
        pred_loc,
        pred_dmg,
    }
}

/// Scores recomputed from raw pixels without the confusion matrix.
fn brute_force(cases: &[Case]) -> (f64, [f64; 4], f64, f64) {
    let f1 = |tp: u64, fp: u64, fn_: u64| {
        if 2 * tp + fp + fn_ == 0 {
            0.0
        } else {
            (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
        }
    };
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut per = [(0u64, 0u64, 0u64); 4];
    for c in cases {
        for i in 0..64 {
            let g = c.gt.loc.data[i];
            let p = c.pred_loc.data[i];
            tp += u64::from(g == 1 && p == 1);
            fp += u64::from(g == 0 && p == 1);
            fn_ += u64::from(g == 1 && p == 0);
            let gd = c.gt.dmg.data[i];
            if gd == 0 {
                continue;
            }
            let pd = c.pred_dmg.data[i];
            for (k, slot) in per.iter_mut().enumerate() {
                let level = k as u8 + 1;
                if gd == level && pd == level {
                    slot.0 += 1;
                } else if gd != level && pd == level {
                    slot.1 += 1;
                } else if gd == level {
                    slot.2 += 1;
                }
            }
        }
    }
    let loc = f1(tp, fp, fn_);
    let levels = per.map(|(a, b, c)| f1(a, b, c));
    let clf = if levels.iter().any(|&v| v == 0.0) {
        0.0
    } else {
        4.0 / (1.0 / levels[0] + 1.0 / levels[1] + 1.0 / levels[2] + 1.0 / levels[3])
    };
    (loc, levels, clf, 0.3 * loc + 0.7 * clf)
}

fn perfect(gt: &MaskPair) -> Case {
    Case {
        gt: gt.clone(),
        pred_loc: gt.loc.clone(),
        pred_dmg: gt.dmg.clone(),
    }
}

#[test]
fn perfect_predictions_score_one() {
    let dmg = Mask::new(2, 3, vec![1, 2, 3, 4, 0, 0]).unwrap();
    let gt = MaskPair::new(dmg.footprint(), dmg.clone()).unwrap();
    let mut cm = ConfusionMatrix::new();
    cm.accumulate(&gt.loc, &gt.dmg, &gt).unwrap();
    assert_eq!((cm.loc_fp, cm.loc_fn), (0, 0));
    for (k, row) in cm.dmg.iter().enumerate() {
        for (p, &v) in row.iter().enumerate() {
            assert_eq!(v, u64::from(p == k + 1));
        }
    }
    let r = compute_scores(&cm);
    assert_eq!((r.f1_loc, r.f1_clf, r.f1_oa), (1.0, 1.0, 1.0));
}

#[test]
fn localization_counts_by_hand() {
    let gt_loc = Mask::new(2, 2, vec![1, 1, 0, 0]).unwrap();
    let gt = MaskPair::new(gt_loc.clone(), gt_loc).unwrap();
    let pred = Mask::new(2, 2, vec![1, 0, 0, 0]).unwrap();
    let mut cm = ConfusionMatrix::new();
    cm.accumulate(&pred, &pred, &gt).unwrap();
    assert_eq!((cm.loc_tp, cm.loc_fn, cm.loc_fp, cm.loc_tn), (1, 1, 0, 2));
}

#[test]
fn background_prediction_is_a_miss_not_a_false_alarm() {
    let dmg = Mask::new(1, 2, vec![2, 3]).unwrap();
    let gt = MaskPair::new(dmg.footprint(), dmg.clone()).unwrap();
    let pred = Mask::new(1, 2, vec![0, 3]).unwrap();
    let mut cm = ConfusionMatrix::new();
    cm.accumulate(&gt.loc, &pred, &gt).unwrap();
    assert_eq!(cm.level_counts(2), (0, 0, 1));
    assert_eq!(cm.level_counts(3), (1, 0, 0));
}

#[test]
fn weighting_extremes() {
    let mut cm = ConfusionMatrix {
        loc_tp: 10,
        ..ConfusionMatrix::default()
    };
    let r = compute_scores(&cm);
    assert_eq!(r.f1_loc, 1.0);
    assert_eq!(r.f1_clf, 0.0);
    assert_eq!(r.f1_oa, 0.3);
    // Three levels perfect, level 4 always called level 1.
    cm.dmg = [[5, 5, 0, 0, 0], [0, 0, 5, 0, 0], [0, 0, 0, 5, 0], [0, 5, 0, 0, 0]];
    let r = compute_scores(&cm);
    assert_eq!(r.f1_levels[3], 0.0);
    assert_eq!(r.f1_clf, 0.0);
    assert_eq!(r.f1_oa, 0.3 * r.f1_loc);
}

#[test]
fn streaming_scores_equal_brute_force_recount() {
    let mut rng = Rng::new(42);
    for _ in 0..1000 {
        let n = 1 + rng.below(3);
        let cases: Vec<Case> = (0..n).map(|_| random_case(&mut rng)).collect();
        let mut cm = ConfusionMatrix::new();
        for c in &cases {
            cm.accumulate(&c.pred_loc, &c.pred_dmg, &c.gt).unwrap();
        }
        let r = compute_scores(&cm);
        let (loc, levels, clf, oa) = brute_force(&cases);
        assert_eq!(r.f1_loc, loc);
        assert_eq!(r.f1_levels, levels);
        assert_eq!(r.f1_clf, clf);
        assert_eq!(r.f1_oa, oa);
        assert!((r.f1_oa - (0.3 * r.f1_loc + 0.7 * r.f1_clf)).abs() < 1e-12);
    }
}

#[test]
fn sharded_merge_equals_single_pass() {
    let mut rng = Rng::new(7);
    let cases: Vec<Case> = (0..12).map(|_| random_case(&mut rng)).collect();
    let mut whole = ConfusionMatrix::new();
    for c in &cases {
        whole.accumulate(&c.pred_loc, &c.pred_dmg, &c.gt).unwrap();
    }
    let mut shards: Vec<ConfusionMatrix> = vec![ConfusionMatrix::new(); 3];
    for (i, c) in cases.iter().enumerate() {
        shards[i % 3].accumulate(&c.pred_loc, &c.pred_dmg, &c.gt).unwrap();
    }
    let mut merged = ConfusionMatrix::new();
    for s in shards.iter().rev() {
        merged.merge(s);
    }
    assert_eq!(merged, whole);
}

#[test]
fn argmax_is_scale_invariant() {
    let mut rng = Rng::new(3);
    let logits = Tensor::randn(vec![2, 5, 4, 4], 1.0, &mut rng);
    let a = argmax_masks(&logits).unwrap();
    let b = argmax_masks(&logits.map(|v| 3.7 * v)).unwrap();
    assert_eq!(a, b);
    let dmg = a[0].clone();
    let gt = MaskPair::new(dmg.footprint(), dmg).unwrap();
    let score = |m: &[Mask]| {
        let mut cm = ConfusionMatrix::new();
        cm.accumulate(&m[1].footprint(), &m[1], &gt).unwrap();
        compute_scores(&cm)
    };
    assert_eq!(score(&a), score(&b));
}

#[test]
fn accumulate_rejects_bad_shapes_and_values() {
    let gt = perfect(&MaskPair::new(Mask::zeros(2, 2), Mask::zeros(2, 2)).unwrap()).gt;
    let mut cm = ConfusionMatrix::new();
    assert!(cm.accumulate(&Mask::zeros(2, 3), &Mask::zeros(2, 2), &gt).is_err());
    let bad = Mask::new(2, 2, vec![0, 7, 0, 0]).unwrap();
    assert!(cm.accumulate(&Mask::zeros(2, 2), &bad, &gt).is_err());
}

// ---- serialization -------------------------------------------------------

#[test]
fn perfect_report_serializes_as_hundreds() {
    let r = ScoreReport {
        f1_loc: 1.0,
        f1_levels: [1.0; 4],
        f1_clf: 1.0,
        f1_oa: 1.0,
        samples: 3,
        variant: "Baseline".into(),
        dataset: "toy".into(),
    };
    assert_eq!(
        r.to_json(),
        "{\"f1_loc\": 100.0000, \"f1_clf\": 100.0000, \"f1_oa\": 100.0000, \"f1_l1\": 100.0000, \
         \"f1_l2\": 100.0000, \"f1_l3\": 100.0000, \"f1_l4\": 100.0000, \"samples\": 3, \
         \"variant\": \"Baseline\", \"dataset\": \"toy\"}\n"
    );
}

#[test]
fn table_row_values_serialize_with_fixed_precision() {
    let r = ScoreReport {
        f1_loc: 0.8486,
        f1_clf: 0.7523,
        f1_oa: 0.3 * 0.8486 + 0.7 * 0.7523,
        variant: "Baseline".into(),
        ..ScoreReport::default()
    };
    let json = r.to_json();
    assert!(json.contains("\"f1_loc\": 84.8600"));
    assert!(json.contains("\"f1_clf\": 75.2300"));
    // 0.3·84.86 + 0.7·75.23 = 78.119, displayed as 78.12 at two decimals.
    assert!(json.contains("\"f1_oa\": 78.1190"));
    assert!(r.display_row().contains("78.12"));
    assert_eq!(json, r.to_json());
    let back = ScoreReport::from_json(&json).unwrap();
    assert!((back.f1_oa - r.f1_oa).abs() < 1e-9);
    assert_eq!(back.variant, "Baseline");
}

#[test]
fn csv_rows_follow_the_header() {
    let r = ScoreReport {
        f1_loc: 0.5,
        variant: "FOCAL + ALIGN".into(),
        dataset: "a,b".into(),
        ..ScoreReport::default()
    };
    assert_eq!(
        ScoreReport::csv_header(),
        "f1_loc,f1_clf,f1_oa,f1_l1,f1_l2,f1_l3,f1_l4,samples,variant,dataset"
    );
    assert_eq!(
        r.to_csv_row(),
        "50.0000,0.0000,0.0000,0.0000,0.0000,0.0000,0.0000,0,FOCAL + ALIGN,\"a,b\""
    );
}
