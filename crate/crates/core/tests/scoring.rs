mod common;

use convlstm_ad::dataio::GroundTruth;
use convlstm_ad::scoring::*;
use convlstm_ad::Tensor;
use proptest::prelude::*;
use rand::Rng;

/// Double loop over frames and pixels.
fn volume_error_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let s = a.shape();
    let mut total = 0.0;
    for t in 0..s[4] {
        let mut sq = 0.0;
        for n in 0..s[0] {
            for c in 0..s[1] {
                for y in 0..s[2] {
                    for x in 0..s[3] {
                        let d = a.get(&[n, c, y, x, t]) - b.get(&[n, c, y, x, t]);
                        sq += d * d;
                    }
                }
            }
        }
        total += sq.sqrt();
    }
    total
}

/// P(score_abnormal < score_normal) over all pairs, ties counted 1/2.
fn mann_whitney(samples: &[(f64, bool)]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for &(sa, _) in samples.iter().filter(|s| s.1) {
        for &(sn, _) in samples.iter().filter(|s| !s.1) {
            pairs += 1.0;
            if sa < sn {
                wins += 1.0;
            } else if sa == sn {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

#[test]
fn volume_error_examples() {
    let a = Tensor::<f64>::zeros(&[1, 1, 4, 4, 2]);
    assert_eq!(volume_error(&a, &a).unwrap(), 0.0);
    let mut b = a.clone();
    for t in 0..2 {
        for (y, x) in [(0, 0), (1, 2), (3, 3), (2, 1)] {
            b.set(&[0, 0, y, x, t], 1.0);
        }
    }
    assert!((volume_error(&a, &b).unwrap() - 4.0).abs() < 1e-12);
    assert!(volume_error(&a, &Tensor::zeros(&[1, 1, 4, 4, 3])).is_err());
}

#[test]
fn volume_error_matches_double_loop() {
    let mut rng = common::rng(21);
    for _ in 0..100 {
        let shape = [1, 1, rng.random_range(1..9), rng.random_range(1..9), rng.random_range(1..7)];
        let a = common::random_tensor(&mut rng, &shape);
        let b = common::random_tensor(&mut rng, &shape);
        let got = volume_error(&a, &b).unwrap();
        let want = volume_error_oracle(&a, &b);
        assert!(common::rel_err(got, want) < 1e-6);
        assert_eq!(got, volume_error(&b, &a).unwrap());
    }
}

#[test]
fn batch_errors_split_by_item() {
    let mut rng = common::rng(3);
    let a = common::random_tensor(&mut rng, &[3, 1, 4, 5, 2]);
    let b = common::random_tensor(&mut rng, &[3, 1, 4, 5, 2]);
    let per = batch_volume_errors(&a, &b).unwrap();
    for (i, e) in per.iter().enumerate() {
        let want = volume_error_oracle(&a.batch_item(i).unwrap(), &b.batch_item(i).unwrap());
        assert!(common::rel_err(*e, want) < 1e-9);
    }
}

#[test]
fn heatmap_examples_and_oracle() {
    let a = Tensor::<f64>::zeros(&[1, 1, 3, 4, 5]);
    assert!(error_heatmap(&a, &a).unwrap().data().iter().all(|&v| v == 0.0));
    let mut b = a.clone();
    b.set(&[0, 0, 2, 1, 3], 0.5);
    let map = error_heatmap(&a, &b).unwrap();
    assert_eq!(map.shape(), &[1, 3, 4]);
    for y in 0..3 {
        for x in 0..4 {
            assert_eq!(map.get(&[0, y, x]), if (y, x) == (2, 1) { 1.0 } else { 0.0 });
        }
    }
    let mut rng = common::rng(5);
    let a = common::random_tensor(&mut rng, &[1, 1, 5, 6, 3]);
    let b = common::random_tensor(&mut rng, &[1, 1, 5, 6, 3]);
    let raw = error_heatmap_raw(&a, &b).unwrap();
    let norm = error_heatmap(&a, &b).unwrap();
    let max = raw.max_abs();
    for y in 0..5 {
        for x in 0..6 {
            let want: f64 = (0..3).map(|t| (a.get(&[0, 0, y, x, t]) - b.get(&[0, 0, y, x, t])).powi(2)).sum();
            assert!((raw.get(&[0, y, x]) - want).abs() < 1e-12);
            assert!((norm.get(&[0, y, x]) - want / max).abs() < 1e-12);
        }
    }
    assert!(norm.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn auc_matches_mann_whitney_on_random_pairs() {
    let mut rng = common::rng(9);
    for _ in 0..100 {
        let n = 20;
        let mut samples: Vec<(f64, bool)> = (0..n)
            .map(|_| ((rng.random_range(0..10) as f64) / 10.0, rng.random_bool(0.4)))
            .collect();
        samples[0].1 = true;
        samples[1].1 = false;
        let r = roc_from_samples(&samples).unwrap();
        assert!((r.auc - mann_whitney(&samples)).abs() < 1e-6);
    }
}

fn sample_strategy() -> impl Strategy<Value = Vec<(f64, bool)>> {
    proptest::collection::vec((0u8..12, any::<bool>()), 2..=25).prop_map(|v| {
        let mut s: Vec<(f64, bool)> = v.into_iter().map(|(q, a)| (q as f64 / 11.0, a)).collect();
        s[0].1 = true;
        s[1].1 = false;
        s
    })
}

proptest! {
    #[test]
    fn roc_properties(samples in sample_strategy()) {
        let r = roc_from_samples(&samples).unwrap();
        prop_assert!((r.auc - mann_whitney(&samples)).abs() < 1e-12);
        let first = r.roc.first().unwrap();
        let last = r.roc.last().unwrap();
        prop_assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in r.roc.windows(2) {
            prop_assert!(w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr);
            prop_assert!(w[0].threshold < w[1].threshold);
        }
        for p in &r.roc {
            prop_assert_eq!(p.true_positives + p.false_negatives, r.positives);
            prop_assert_eq!(p.false_positives + p.true_negatives, r.negatives);
        }
        prop_assert!((0.0..=1.0).contains(&r.auc) && (0.0..=1.0).contains(&r.eer));
        // Equal scores never straddle a threshold.
        for p in &r.roc {
            for a in &samples {
                for b in &samples {
                    if a.0 == b.0 {
                        prop_assert_eq!(a.0 < p.threshold, b.0 < p.threshold);
                    }
                }
            }
        }
    }

    #[test]
    fn regularity_properties(errors in proptest::collection::vec(0.0f64..100.0, 1..40), shift in 0.1f64..50.0) {
        let n = errors.len();
        let series = ErrorSeries::new("v", (0..n).map(|i| 3 * i).collect(), errors.clone()).unwrap();
        let s = regularity(&series, Normalization::Paper);
        let min = errors.iter().copied().fold(f64::INFINITY, f64::min);
        let max = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let argmin = errors.iter().position(|&e| e == min).unwrap();
        prop_assert!((s.scores[argmin] - 1.0).abs() < 1e-12);
        for i in 0..n {
            prop_assert!(s.scores[i] >= min / max - 1e-12 && s.scores[i] <= 1.0 + 1e-12);
            for j in 0..n {
                if errors[i] < errors[j] {
                    prop_assert!(s.scores[i] > s.scores[j]);
                }
            }
        }
        let shifted = ErrorSeries::new("v", series.starts.clone(), errors.iter().map(|e| e + shift).collect()).unwrap();
        let t = regularity(&shifted, Normalization::Paper);
        let arg = |v: &[f64], better: fn(f64, f64) -> bool| {
            (0..v.len()).fold(0, |k, i| if better(v[i], v[k]) { i } else { k })
        };
        prop_assert_eq!(arg(&s.scores, |a, b| a > b), arg(&t.scores, |a, b| a > b));
        prop_assert_eq!(arg(&s.scores, |a, b| a < b), arg(&t.scores, |a, b| a < b));
        let m = regularity(&series, Normalization::MinMax);
        prop_assert!(m.scores.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn classify_is_pointwise(scores in proptest::collection::vec(0.0f64..1.0, 1..30), threshold in 0.0f64..1.0) {
        let a = RegularityScores { video: "v".into(), starts: (0..scores.len()).collect(), scores: scores.clone() };
        let mut rev = scores.clone();
        rev.reverse();
        let b = RegularityScores { video: "v".into(), starts: (0..scores.len()).collect(), scores: rev };
        let mut db = classify(&b, threshold);
        db.reverse();
        prop_assert_eq!(classify(&a, threshold), db);
    }
}

#[test]
fn evaluation_pools_videos_with_window_labels() {
    let gt = vec![
        GroundTruth { video: "a".into(), labels: [vec![false; 10], vec![true; 5], vec![false; 5]].concat() },
        GroundTruth { video: "b".into(), labels: vec![false; 20] },
    ];
    let scores = vec![
        RegularityScores { video: "a".into(), starts: vec![0, 5, 10, 15], scores: vec![1.0, 0.9, 0.2, 0.8] },
        RegularityScores { video: "b".into(), starts: vec![0, 5, 10, 15], scores: vec![0.95, 0.85, 0.7, 1.0] },
    ];
    let r = evaluate(&scores, &gt, 5, VolumeLabeling::InputWindow).unwrap();
    assert_eq!((r.positives, r.negatives), (1, 7));
    assert_eq!((r.auc, r.eer), (1.0, 0.0));
    let frames = evaluate(&scores, &gt, 5, VolumeLabeling::PerFrame).unwrap();
    assert_eq!((frames.positives, frames.negatives), (5, 35));
    let short = vec![RegularityScores { video: "b".into(), starts: vec![18], scores: vec![1.0] }];
    assert!(evaluate(&short, &gt, 5, VolumeLabeling::InputWindow).is_err());
}

#[test]
fn eer_interpolates_between_roc_points() {
    // Sorted scores 0.1 (normal), 0.2 (abnormal), 0.3 (normal).
    let r = roc_from_samples(&[(0.1, false), (0.2, true), (0.3, false)]).unwrap();
    let pts: Vec<_> = r.roc.iter().map(|p| (p.fpr, p.tpr)).collect();
    assert_eq!(pts, vec![(0.0, 0.0), (0.5, 0.0), (0.5, 1.0), (1.0, 1.0)]);
    assert!((r.auc - 0.5).abs() < 1e-12);
    assert!((r.eer - 0.5).abs() < 1e-12);
    // FPR + TPR - 1 goes from -0.5 at (0.5, 0) to +0.5 at (0.5, 1): the
    // crossing sits on the vertical segment, so EER = 0.5.
}
