//! L2-regularized logistic-regression probe on frozen representations,
//! evaluated by seeded k-fold cross-validation.
//!
//! The objective is `mean_k logloss(w.x_k + b, y_k) + l2/2 |w|^2` (bias not
//! penalized), minimized by full-batch gradient descent with step `1/L`,
//! where `L` bounds the gradient's Lipschitz constant.

use rand::seq::SliceRandom;

use crate::baseline::sigmoid;
use crate::error::{Error, Result};
use crate::metrics::binary_f1;
use crate::numerics::Rng;
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub l2: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            l2: 1e-2,
            max_iter: 10_000,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl ProbeModel {
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).fold(self.bias, |a, (w, v)| a + w * v)
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.logit(x) > 0.0
    }
}

fn check(x: &[Vec<f64>], y: &[bool]) -> Result<usize> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Shape(format!("{} feature rows for {} targets", x.len(), y.len())));
    }
    let d = x[0].len();
    if let Some(k) = x.iter().position(|r| r.len() != d) {
        return Err(Error::Shape(format!("feature row {k} has a different length")));
    }
    if let Some(k) = x.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(format!("feature row {k}")));
    }
    Ok(d)
}

/// Objective value and gradient (weights then bias) at `(w, b)`.
pub fn probe_loss_grad(x: &[Vec<f64>], y: &[bool], w: &[f64], b: f64, l2: f64) -> (f64, Vec<f64>) {
    let n = x.len() as f64;
    let d = w.len();
    let mut grad = vec![0.0; d + 1];
    let mut loss = 0.0;
    for (row, &t) in x.iter().zip(y) {
        let z = row.iter().zip(w).fold(b, |a, (v, wi)| a + v * wi);
        let t = f64::from(u8::from(t));
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z;
        let r = sigmoid(z) - t;
        for (g, v) in grad[..d].iter_mut().zip(row) {
            *g += r * v;
        }
        grad[d] += r;
    }
    grad.iter_mut().for_each(|g| *g /= n);
    for (g, wi) in grad[..d].iter_mut().zip(w) {
        *g += l2 * wi;
    }
    let reg = 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    (loss / n + reg, grad)
}

/// Largest eigenvalue of `A^T A / n` for `A = [x, 1]`, by power iteration.
fn gram_max_eigenvalue(x: &[Vec<f64>]) -> f64 {
    let d = x[0].len() + 1;
    let n = x.len() as f64;
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..200 {
        let mut next = vec![0.0; d];
        for row in x {
            let av = row.iter().zip(&v).fold(v[d - 1], |a, (r, vi)| a + r * vi);
            for (o, r) in next.iter_mut().zip(row) {
                *o += av * r;
            }
            next[d - 1] += av;
        }
        next.iter_mut().for_each(|o| *o /= n);
        let norm = next.iter().map(|o| o * o).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let converged = (norm - lambda).abs() <= 1e-9 * norm;
        lambda = norm;
        next.iter_mut().for_each(|o| *o /= norm);
        v = next;
        if converged {
            break;
        }
    }
    lambda
}

pub fn fit_probe(x: &[Vec<f64>], y: &[bool], cfg: &ProbeConfig) -> Result<ProbeModel> {
    let d = check(x, y)?;
    fit_probe_from(x, y, cfg, vec![0.0; d], 0.0)
}

/// Gradient descent from an explicit starting point.
pub fn fit_probe_from(x: &[Vec<f64>], y: &[bool], cfg: &ProbeConfig, w0: Vec<f64>, b0: f64) -> Result<ProbeModel> {
    let d = check(x, y)?;
    if !y.contains(&true) || !y.contains(&false) {
        return Err(Error::InvalidArgument("probe targets need both classes".into()));
    }
    if w0.len() != d {
        return Err(Error::Shape("initial weights have the wrong length".into()));
    }
    // sigmoid' <= 1/4; a 5% margin covers the power-iteration estimate.
    let lipschitz = 0.25 * gram_max_eigenvalue(x) * 1.05 + cfg.l2;
    let step = 1.0 / lipschitz;
    let (mut w, mut b) = (w0, b0);
    let mut iterations = 0;
    let mut grad_norm;
    loop {
        let (_, g) = probe_loss_grad(x, y, &w, b, cfg.l2);
        grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if grad_norm <= cfg.grad_tol || iterations == cfg.max_iter {
            break;
        }
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= step * gi;
        }
        b -= step * g[d];
        iterations += 1;
    }
    if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(Error::NonFinite("probe weights".into()));
    }
    Ok(ProbeModel {
        weights: w,
        bias: b,
        l2: cfg.l2,
        iterations,
        grad_norm,
    })
}

/// Test-index lists of `k` folds over `0..n` from a seeded permutation;
/// each list is sorted.
pub fn fold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!("{k} folds over {n} samples")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut Rng::new(seed).child("folds"));
    let mut folds = vec![Vec::new(); k];
    for (r, &i) in perm.iter().enumerate() {
        folds[r % k].push(i);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

/// Features standardized with the mean and deviation of `fit_rows`
/// (constant features are only centred).
pub fn standardize(all: &[Vec<f64>], fit_rows: &[usize]) -> Vec<Vec<f64>> {
    let d = all[0].len();
    let n = fit_rows.len() as f64;
    let mut mean = vec![0.0; d];
    for &r in fit_rows {
        mean.iter_mut().zip(&all[r]).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for &r in fit_rows {
        for ((s, v), m) in var.iter_mut().zip(&all[r]).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let sd: Vec<f64> = var
        .iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    all.iter()
        .map(|row| row.iter().zip(&mean).zip(&sd).map(|((v, m), s)| (v - m) / s).collect())
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub f1: f64,
    /// Positive rate of the fold's targets.
    pub positive_rate: f64,
    /// Fraction of the fold predicted positive.
    pub predicted_rate: f64,
}

/// Cross-validated binary F1 for one feature set.
pub fn cross_validate(x: &[Vec<f64>], y: &[bool], folds: &[Vec<usize>], cfg: &ProbeConfig) -> Result<Vec<FoldResult>> {
    check(x, y)?;
    par::try_map_range(folds.len(), |f| {
        let test = &folds[f];
        let mut in_test = vec![false; x.len()];
        test.iter().for_each(|&i| in_test[i] = true);
        let train: Vec<usize> = (0..x.len()).filter(|&i| !in_test[i]).collect();
        let z = standardize(x, &train);
        let xt: Vec<Vec<f64>> = train.iter().map(|&i| z[i].clone()).collect();
        let yt: Vec<bool> = train.iter().map(|&i| y[i]).collect();
        let model = fit_probe(&xt, &yt, cfg)?;
        let pred: Vec<bool> = test.iter().map(|&i| model.predict(&z[i])).collect();
        let truth: Vec<bool> = test.iter().map(|&i| y[i]).collect();
        let nt = test.len() as f64;
        Ok(FoldResult {
            f1: binary_f1(&pred, &truth),
            positive_rate: truth.iter().filter(|t| **t).count() as f64 / nt,
            predicted_rate: pred.iter().filter(|p| **p).count() as f64 / nt,
        })
    })
}

/// Expected F1 of predictions independent of the targets with the given
/// positive and predicted-positive rates: `2pq / (p + q)`.
pub fn chance_f1(positive_rate: f64, predicted_rate: f64) -> f64 {
    if positive_rate + predicted_rate == 0.0 {
        0.0
    } else {
        2.0 * positive_rate * predicted_rate / (positive_rate + predicted_rate)
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Report rows `method,fold,F1,mean,std`.
pub fn probe_report_csv(results: &[(String, Vec<FoldResult>)]) -> String {
    let mut s = String::from("method,fold,F1,mean,std\n");
    for (method, folds) in results {
        let f1: Vec<f64> = folds.iter().map(|f| f.f1).collect();
        let (mean, std) = mean_std(&f1);
        for (k, v) in f1.iter().enumerate() {
            s.push_str(&format!("{method},{k},{v:.6},{mean:.6},{std:.6}\n"));
        }
    }
    s
}
