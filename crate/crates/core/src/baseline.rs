//! Binary cross-entropy baseline on the same backbone: independent sigmoid
//! outputs for the classes (and optionally the context labels), thresholds
//! chosen per output on validation F1, and the sigmoid vector as a
//! semantic representation.

use std::time::Instant;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::fisher::TrainConfig;
use crate::metrics::best_threshold;
use crate::net::{AdamState, HeadKind, Model, Outputs, Scalar};
use crate::numerics::Rng;
use crate::par;
use crate::synthdata::Dataset;

/// Thresholds are kept strictly inside (0, 1).
pub const THRESHOLD_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Class labels only.
    Single,
    /// Class labels followed by the context labels.
    Joint,
}

/// Target masks, `outputs` per sample, indexed by dataset sample id.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub outputs: usize,
    pub values: Vec<bool>,
}

impl Targets {
    pub fn from_dataset(ds: &Dataset, variant: Variant) -> Self {
        let outputs = match variant {
            Variant::Single => ds.n_c,
            Variant::Joint => ds.n_c + ds.n_l,
        };
        let mut values = Vec::with_capacity(ds.len() * outputs);
        for k in 0..ds.len() {
            values.extend_from_slice(ds.classes(k));
            if variant == Variant::Joint {
                values.extend_from_slice(ds.context(k));
            }
        }
        Targets { outputs, values }
    }

    pub fn row(&self, k: usize) -> &[bool] {
        &self.values[k * self.outputs..(k + 1) * self.outputs]
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy with logits over all `n_b * m` entries, and
/// its gradient `(sigmoid(z) - y) / (n_b m)`.
pub fn bce_with_grad<T: Scalar>(out: &Outputs<T>, targets: &[&[bool]]) -> Result<(f64, Vec<f64>)> {
    if targets.len() != out.n_b || targets.iter().any(|t| t.len() != out.outputs) {
        return Err(Error::Shape("targets do not match the outputs".into()));
    }
    let scale = 1.0 / (out.n_b * out.outputs) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(out.data.len());
    for (k, t) in targets.iter().enumerate() {
        for (&z, &y) in out.row(k).iter().zip(t.iter()) {
            let z = z.as_f64();
            if !z.is_finite() {
                return Err(Error::NonFinite(format!("logit for batch sample {k}")));
            }
            let y = f64::from(u8::from(y));
            // softplus(z) - y z, computed stably
            loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
            grad.push((sigmoid(z) - y) * scale);
        }
    }
    Ok((loss * scale, grad))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BxentEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub wall_seconds: f64,
}

pub fn bxent_log_csv(log: &[BxentEpoch]) -> String {
    let mut s = String::from("epoch,loss\n");
    for e in log {
        s.push_str(&format!("{},{:.9e}\n", e.epoch, e.loss));
    }
    s
}

/// Adam on the mean BCE over `ids`, with the same shuffling and batching as
/// the critic training.
pub fn bxent_train<T: Scalar>(
    model: &mut Model<T>,
    ds: &Dataset,
    targets: &Targets,
    ids: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<BxentEpoch>> {
    match *model.head() {
        HeadKind::Bxent { outputs } if outputs == targets.outputs => {}
        _ => {
            return Err(Error::Shape(format!(
                "model head does not provide {} logits",
                targets.outputs
            )))
        }
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut adam = AdamState::new(model.num_params(), cfg.lr);
    let root = Rng::new(cfg.seed);
    let start = Instant::now();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let mut order = ids.to_vec();
        order.shuffle(&mut root.child_indexed("shuffle", epoch as u64));
        let (mut sum, mut batches) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let diverged = |loss| Error::Diverged { epoch, step, loss };
            let (out, cache) = model.forward(&ds.gather_images(batch)).map_err(|e| match e {
                Error::NonFinite(_) => diverged(f64::NAN),
                other => other,
            })?;
            let rows: Vec<&[bool]> = batch.iter().map(|&k| targets.row(k)).collect();
            let (loss, grad) = bce_with_grad(&out, &rows)?;
            if !loss.is_finite() {
                return Err(diverged(loss));
            }
            let grad: Vec<T> = grad.into_iter().map(T::of).collect();
            let grads = model.backward(&cache, &grad)?;
            model.adam_step(&grads, &mut adam)?;
            sum += loss;
            batches += 1;
            step += 1;
        }
        log.push(BxentEpoch {
            epoch,
            loss: sum / batches.max(1) as f64,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(log)
}

/// Sigmoid outputs for `ids`, one vector per sample.
pub fn sem_representations<T: Scalar>(model: &Model<T>, ds: &Dataset, ids: &[usize]) -> Result<Vec<Vec<f64>>> {
    const CHUNK: usize = 256;
    let parts = par::try_map_range(ids.len().div_ceil(CHUNK), |c| {
        let part = &ids[c * CHUNK..((c + 1) * CHUNK).min(ids.len())];
        model.predict(&ds.gather_images(part))
    })?;
    let mut out = Vec::with_capacity(ids.len());
    for o in parts {
        for k in 0..o.n_b {
            out.push(o.row(k).iter().map(|z| sigmoid(z.as_f64())).collect());
        }
    }
    Ok(out)
}

pub fn sem_representation<T: Scalar>(model: &Model<T>, image: &[f32]) -> Result<Vec<f64>> {
    let o = model.predict(image)?;
    Ok(o.row(0).iter().map(|z| sigmoid(z.as_f64())).collect())
}

/// Per-output thresholds maximizing binary F1 of `sigmoid > t`.
pub fn fit_bxent_thresholds(sem: &[Vec<f64>], targets: &[&[bool]]) -> Result<Vec<f64>> {
    let m = sem.first().map_or(0, Vec::len);
    (0..m)
        .map(|o| {
            let scores: Vec<f64> = sem.iter().map(|v| v[o]).collect();
            let labels: Vec<bool> = targets.iter().map(|t| t[o]).collect();
            let c = best_threshold(&scores, &labels)?;
            Ok(c.threshold.clamp(THRESHOLD_CLAMP, 1.0 - THRESHOLD_CLAMP))
        })
        .collect()
}

/// Predicted class mask from the first `n_c` sigmoid outputs.
pub fn bxent_classify(sem: &[f64], thresholds: &[f64], n_c: usize) -> Vec<bool> {
    sem[..n_c].iter().zip(thresholds).map(|(s, t)| s > t).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Architecture, Layer};

    #[test]
    fn zero_head_outputs_one_half() {
        let arch = Architecture {
            in_h: 8,
            in_w: 8,
            in_c: 1,
            widths: [2, 2, 2],
        };
        let m = Model::<f64>::zeros(arch, HeadKind::Bxent { outputs: 5 }).unwrap();
        let sem = sem_representation(&m, &[0.3; 64]).unwrap();
        assert!(sem.iter().all(|&s| s == 0.5));
        let _ = m.block(Layer::HeadB);
    }

    #[test]
    fn threshold_rule() {
        assert_eq!(bxent_classify(&[0.9, 0.2, 0.7], &[0.5, 0.5], 2), vec![true, false]);
    }

    #[test]
    fn bce_known_values() {
        let out = Outputs {
            n_b: 1,
            outputs: 2,
            data: vec![0.0f64, 2.0],
        };
        let (loss, grad) = bce_with_grad(&out, &[&[true, false]]).unwrap();
        let expect = (2f64.ln() + (1.0 + 2f64.exp()).ln()) / 2.0;
        assert!((loss - expect).abs() < 1e-12);
        assert!((grad[0] - (-0.25)).abs() < 1e-12);
        assert!((grad[1] - sigmoid(2.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn bce_is_stable_for_large_logits() {
        let out = Outputs {
            n_b: 1,
            outputs: 2,
            data: vec![800.0f64, -800.0],
        };
        let (loss, _) = bce_with_grad(&out, &[&[false, true]]).unwrap();
        assert!((loss - 800.0).abs() < 1e-9);
    }

    #[test]
    fn thresholds_clamped_inside_unit_interval() {
        let sem = vec![vec![0.2, 0.4], vec![0.6, 0.8]];
        let t = fit_bxent_thresholds(&sem, &[&[true, false], &[true, false]]).unwrap();
        assert!(t.iter().all(|&x| x > 0.0 && x < 1.0));
        assert_eq!(t[0], THRESHOLD_CLAMP);
        assert_eq!(t[1], 1.0 - THRESHOLD_CLAMP);
    }
}
