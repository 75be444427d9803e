//! Example-based multi-label scores and exact F1-optimal threshold search.
//!
//! Per sample, with `P` the predicted and `Y` the true label set:
//! precision `|P∩Y|/|P|`, recall `|P∩Y|/|Y|`, F1 `2|P∩Y|/(|P|+|Y|)`. The
//! report averages each quantity over samples. Empty-set conventions: both
//! empty scores 1 everywhere; an empty prediction against a non-empty truth
//! has precision 0; an empty truth has recall 1.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplePrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrfReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_sample: Vec<SamplePrf>,
}

impl PrfReport {
    pub fn to_csv(&self, method: &str) -> String {
        format!(
            "method,precision,recall,f1,samples\n{method},{:.6},{:.6},{:.6},{}\n",
            self.precision,
            self.recall,
            self.f1,
            self.per_sample.len()
        )
    }
}

pub fn sample_prf(pred: &[bool], truth: &[bool]) -> SamplePrf {
    let inter = pred.iter().zip(truth).filter(|(p, t)| **p && **t).count() as f64;
    let np = pred.iter().filter(|p| **p).count() as f64;
    let nt = truth.iter().filter(|t| **t).count() as f64;
    if np == 0.0 && nt == 0.0 {
        return SamplePrf {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        };
    }
    SamplePrf {
        precision: if np == 0.0 { 0.0 } else { inter / np },
        recall: if nt == 0.0 { 1.0 } else { inter / nt },
        f1: 2.0 * inter / (np + nt),
    }
}

/// Example-based precision, recall and F1 over paired label masks.
pub fn example_prf<P: AsRef<[bool]>, T: AsRef<[bool]>>(pred: &[P], truth: &[T]) -> Result<PrfReport> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} samples",
            pred.len(),
            truth.len()
        )));
    }
    let mut per_sample = Vec::with_capacity(pred.len());
    for (k, (p, t)) in pred.iter().zip(truth).enumerate() {
        let (p, t) = (p.as_ref(), t.as_ref());
        if p.len() != t.len() {
            return Err(Error::Shape(format!(
                "sample {k}: {} predicted labels vs {} true labels",
                p.len(),
                t.len()
            )));
        }
        per_sample.push(sample_prf(p, t));
    }
    let n = per_sample.len().max(1) as f64;
    let mean = |f: fn(&SamplePrf) -> f64| per_sample.iter().map(f).sum::<f64>() / n;
    Ok(PrfReport {
        precision: mean(|s| s.precision),
        recall: mean(|s| s.recall),
        f1: mean(|s| s.f1),
        per_sample,
    })
}

/// Label-based micro-averaged F1 (pooled counts over all labels).
pub fn micro_f1<P: AsRef<[bool]>, T: AsRef<[bool]>>(pred: &[P], truth: &[T]) -> f64 {
    let (mut tp, mut np, mut nt) = (0usize, 0usize, 0usize);
    for (p, t) in pred.iter().zip(truth) {
        for (&a, &b) in p.as_ref().iter().zip(t.as_ref()) {
            tp += usize::from(a && b);
            np += usize::from(a);
            nt += usize::from(b);
        }
    }
    binary_f1_counts(tp, np, nt)
}

/// `2 tp / (predicted + actual)`; 1 when both counts are zero.
pub fn binary_f1_counts(tp: usize, predicted: usize, actual: usize) -> f64 {
    if predicted + actual == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (predicted + actual) as f64
    }
}

pub fn binary_f1(pred: &[bool], truth: &[bool]) -> f64 {
    let tp = pred.iter().zip(truth).filter(|(p, t)| **p && **t).count();
    binary_f1_counts(tp, pred.iter().filter(|p| **p).count(), truth.iter().filter(|t| **t).count())
}

/// Outcome of the threshold search for one output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub f1: f64,
}

/// Threshold `t` maximizing the binary F1 of the rule `score > t`.
///
/// Candidates are `-inf`, the midpoints between consecutive distinct sorted
/// scores, and `+inf`; together they realize every distinct prediction
/// split, so the search is exact. Ties go to the smallest threshold.
pub fn best_threshold(scores: &[f64], labels: &[bool]) -> Result<ThresholdChoice> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(k) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score of sample {k}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let actual = labels.iter().filter(|l| **l).count();

    // Threshold -inf predicts everything.
    let mut tp = actual;
    let mut predicted = scores.len();
    let mut best = ThresholdChoice {
        threshold: f64::NEG_INFINITY,
        f1: binary_f1_counts(tp, predicted, actual),
    };
    let mut idx = 0;
    while idx < order.len() {
        // Drop the whole group of equal scores below the next candidate.
        let v = scores[order[idx]];
        while idx < order.len() && scores[order[idx]] == v {
            tp -= usize::from(labels[order[idx]]);
            predicted -= 1;
            idx += 1;
        }
        let threshold = match order.get(idx) {
            Some(&next) => v + (scores[next] - v) / 2.0,
            None => f64::INFINITY,
        };
        let f1 = binary_f1_counts(tp, predicted, actual);
        if f1 > best.f1 {
            best = ThresholdChoice { threshold, f1 };
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let t = vec![vec![true, false, true], vec![false, true, false]];
        let r = example_prf(&t, &t).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn subset_prediction_arithmetic() {
        let r = example_prf(&[vec![true, false]], &[vec![true, true]]).unwrap();
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.recall, 0.5);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_set_conventions() {
        let both = sample_prf(&[false, false], &[false, false]);
        assert_eq!((both.precision, both.recall, both.f1), (1.0, 1.0, 1.0));
        let miss = sample_prf(&[false, false], &[true, false]);
        assert_eq!((miss.precision, miss.recall, miss.f1), (0.0, 0.0, 0.0));
        let spurious = sample_prf(&[true, false], &[false, false]);
        assert_eq!((spurious.precision, spurious.recall, spurious.f1), (0.0, 1.0, 0.0));
    }

    #[test]
    fn length_mismatch() {
        assert!(example_prf(&[vec![true]], &[vec![true], vec![false]]).is_err());
        assert!(example_prf(&[vec![true]], &[vec![true, false]]).is_err());
    }

    #[test]
    fn separable_threshold_is_midpoint() {
        let scores = [0.9, 0.1, 0.9, 0.1, 0.1];
        let labels = [true, false, true, false, false];
        let c = best_threshold(&scores, &labels).unwrap();
        assert!((c.threshold - 0.5).abs() < 1e-15);
        assert_eq!(c.f1, 1.0);
    }

    #[test]
    fn all_members_select_neg_infinity() {
        let c = best_threshold(&[0.3, 0.1, 0.7], &[true, true, true]).unwrap();
        assert_eq!(c.threshold, f64::NEG_INFINITY);
        assert_eq!(c.f1, 1.0);
    }

    #[test]
    fn no_members_select_pos_infinity() {
        let c = best_threshold(&[0.3, 0.1], &[false, false]).unwrap();
        assert_eq!(c.threshold, f64::INFINITY);
        assert_eq!(c.f1, 1.0);
    }

    #[test]
    fn micro_pools_counts() {
        let p = [vec![true, true], vec![false, false]];
        let t = [vec![true, false], vec![true, false]];
        assert!((micro_f1(&p, &t) - 0.5).abs() < 1e-15);
    }
}
