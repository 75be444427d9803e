//! Example-based scores and threshold search against set-based oracles.

use std::collections::BTreeSet;

use codir::metrics::{best_threshold, binary_f1, example_prf, micro_f1, sample_prf};
use codir::numerics::Rng;
use proptest::prelude::*;
use rand::Rng as _;

fn as_set(mask: &[bool]) -> BTreeSet<usize> {
    mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
}

/// Precision, recall and F1 from set operations.
fn prf_oracle(pred: &[bool], truth: &[bool]) -> (f64, f64, f64) {
    let (p, y) = (as_set(pred), as_set(truth));
    if p.is_empty() && y.is_empty() {
        return (1.0, 1.0, 1.0);
    }
    let inter = p.intersection(&y).count() as f64;
    let precision = if p.is_empty() { 0.0 } else { inter / p.len() as f64 };
    let recall = if y.is_empty() { 1.0 } else { inter / y.len() as f64 };
    (precision, recall, 2.0 * inter / (p.len() + y.len()) as f64)
}

#[test]
fn sample_scores_match_set_oracle() {
    let mut rng = Rng::new(41);
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    for _ in 0..100 {
        let n = rng.gen_range(1..12);
        let pred: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        let truth: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        let s = sample_prf(&pred, &truth);
        let (p, r, f) = prf_oracle(&pred, &truth);
        assert!((s.precision - p).abs() < 1e-15 && (s.recall - r).abs() < 1e-15 && (s.f1 - f).abs() < 1e-15);
        if n == 6 {
            preds.push(pred);
            truths.push(truth);
        }
    }
    let report = example_prf(&preds, &truths).unwrap();
    let n = preds.len() as f64;
    let mean_f1 = preds.iter().zip(&truths).map(|(p, t)| prf_oracle(p, t).2).sum::<f64>() / n;
    assert!((report.f1 - mean_f1).abs() < 1e-12);
    assert_eq!(report.per_sample.len(), preds.len());
}

#[test]
fn empty_set_conventions() {
    let none = [false; 4];
    let some = [true, false, false, false];
    let s = sample_prf(&none, &none);
    assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    let s = sample_prf(&none, &some);
    assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    let s = sample_prf(&some, &none);
    assert_eq!((s.precision, s.recall, s.f1), (0.0, 1.0, 0.0));
}

#[test]
fn shape_mismatches_are_rejected() {
    assert!(example_prf(&[vec![true]], &[vec![true], vec![false]]).is_err());
    assert!(example_prf(&[vec![true, false]], &[vec![true]]).is_err());
    assert!(best_threshold(&[0.1, 0.2], &[true]).is_err());
    assert!(best_threshold(&[0.1, f64::NAN], &[true, false]).is_err());
}

#[test]
fn micro_f1_pools_counts() {
    let pred = [vec![true, true], vec![false, true]];
    let truth = [vec![true, false], vec![false, true]];
    // tp 2, predicted 3, actual 2.
    assert!((micro_f1(&pred, &truth) - 0.8).abs() < 1e-15);
}

#[test]
fn threshold_search_matches_brute_force() {
    let mut rng = Rng::new(42);
    for trial in 0..200 {
        let n = rng.gen_range(1..25);
        // Coarse grid so that ties occur.
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..8u8)) / 8.0).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        let got = best_threshold(&scores, &labels).unwrap();

        let mut grid = vec![f64::NEG_INFINITY, f64::INFINITY];
        grid.extend(scores.iter().copied());
        grid.extend((0..80).map(|i| f64::from(i) / 64.0 - 0.1));
        let brute = grid
            .iter()
            .map(|&t| {
                let pred: Vec<bool> = scores.iter().map(|&s| s > t).collect();
                binary_f1(&pred, &labels)
            })
            .fold(0.0, f64::max);
        assert!((got.f1 - brute).abs() < 1e-12, "trial {trial}: {} vs {brute}", got.f1);
        let pred: Vec<bool> = scores.iter().map(|&s| s > got.threshold).collect();
        assert!((binary_f1(&pred, &labels) - got.f1).abs() < 1e-12, "reported F1 is achieved");
    }
}

#[test]
fn threshold_ties_choose_the_smallest() {
    // Every threshold yields F1 0 when no label is positive except the
    // all-negative prediction (F1 1): the largest candidate, +inf.
    let t = best_threshold(&[0.1, 0.2, 0.3], &[false; 3]).unwrap();
    assert_eq!(t.threshold, f64::INFINITY);
    // All positive: -inf predicts everything.
    let t = best_threshold(&[0.1, 0.2, 0.3], &[true; 3]).unwrap();
    assert_eq!(t.threshold, f64::NEG_INFINITY);
    // Perfectly separable: the midpoint between the classes.
    let t = best_threshold(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap();
    assert!((t.threshold - 0.5).abs() < 1e-15 && t.f1 == 1.0);
}

fn masks(n: usize) -> impl Strategy<Value = (Vec<bool>, Vec<bool>)> {
    (proptest::collection::vec(any::<bool>(), n), proptest::collection::vec(any::<bool>(), n))
}

proptest! {
    #[test]
    fn scores_are_invariant_to_label_permutation((pred, truth) in (1usize..16).prop_flat_map(masks), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..pred.len()).collect();
        let mut rng = Rng::new(seed);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let p2: Vec<bool> = order.iter().map(|&i| pred[i]).collect();
        let t2: Vec<bool> = order.iter().map(|&i| truth[i]).collect();
        prop_assert_eq!(sample_prf(&pred, &truth), sample_prf(&p2, &t2));
    }

    #[test]
    fn adding_a_true_label_never_lowers_recall_or_f1((pred, truth) in (1usize..16).prop_flat_map(masks), pick in any::<prop::sample::Index>()) {
        let missed: Vec<usize> = (0..pred.len()).filter(|&i| truth[i] && !pred[i]).collect();
        prop_assume!(!missed.is_empty());
        let mut better = pred.clone();
        better[missed[pick.index(missed.len())]] = true;
        let (a, b) = (sample_prf(&pred, &truth), sample_prf(&better, &truth));
        prop_assert!(b.recall >= a.recall && b.f1 >= a.f1);
    }

    #[test]
    fn removing_a_false_positive_never_lowers_precision_or_f1((pred, truth) in (1usize..16).prop_flat_map(masks), pick in any::<prop::sample::Index>()) {
        let wrong: Vec<usize> = (0..pred.len()).filter(|&i| pred[i] && !truth[i]).collect();
        prop_assume!(!wrong.is_empty());
        let mut better = pred.clone();
        better[wrong[pick.index(wrong.len())]] = false;
        let (a, b) = (sample_prf(&pred, &truth), sample_prf(&better, &truth));
        prop_assert!(b.f1 >= a.f1);
        prop_assert!(b.precision >= a.precision || better.iter().all(|&x| !x));
    }

    #[test]
    fn scores_stay_in_unit_interval((pred, truth) in (1usize..16).prop_flat_map(masks)) {
        let s = sample_prf(&pred, &truth);
        for v in [s.precision, s.recall, s.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
