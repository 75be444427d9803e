use std::time::Instant;

use rand::seq::SliceRandom;

use super::{fisher_stats, lambda_update, loss_output_grad, FisherBatchStats, LagrangeState};
use crate::envmask::{batch_masks, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::net::{AdamState, HeadKind, Model, Outputs, Scalar};
use crate::numerics::Rng;
use crate::synthdata::Dataset;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub rho: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            lr: crate::net::DEFAULT_LR,
            rho: super::DEFAULT_RHO,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub loss: f64,
    pub mean_abs_constraint: f64,
    pub mean_ipm_numerator: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub mean_abs_constraint: f64,
    pub mean_ipm_numerator: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub adam_steps: u64,
    pub lambda_updates: u64,
}

impl TrainLog {
    /// Per-epoch CSV; wall times are left out so logs are reproducible.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,mean_abs_constraint,mean_ipm_numerator\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{:.9e},{:.9e},{:.9e}\n",
                e.epoch, e.loss, e.mean_abs_constraint, e.mean_ipm_numerator
            ));
        }
        s
    }

    /// Exponential moving average of the per-step `|constraint|` means,
    /// sampled at the end of every epoch.
    pub fn constraint_ema(&self, decay: f64) -> Vec<f64> {
        let mut ema = None;
        let mut out = Vec::new();
        for (idx, s) in self.steps.iter().enumerate() {
            let v = s.mean_abs_constraint;
            ema = Some(match ema {
                None => v,
                Some(e) => decay * e + (1.0 - decay) * v,
            });
            let last_of_epoch = self.steps.get(idx + 1).is_none_or(|n| n.epoch != s.epoch);
            if last_of_epoch {
                out.push(ema.unwrap());
            }
        }
        out
    }
}

fn critic_dims<T: Scalar>(model: &Model<T>, spec: &EnvironmentSpec) -> Result<(usize, usize)> {
    match *model.head() {
        HeadKind::Critic { n_c, n_e } if n_e == spec.n_e() => Ok((n_c, n_e)),
        HeadKind::Critic { n_e, .. } => Err(Error::Shape(format!(
            "model has {n_e} environment columns, spec has {}",
            spec.n_e()
        ))),
        HeadKind::Bxent { .. } => Err(Error::InvalidArgument(
            "fisher training needs a critic head".into(),
        )),
    }
}

fn check_dataset<T: Scalar>(model: &Model<T>, ds: &Dataset, spec: &EnvironmentSpec) -> Result<(usize, usize)> {
    let (n_c, n_e) = critic_dims(model, spec)?;
    if ds.n_c != n_c {
        return Err(Error::Shape(format!("dataset has {} classes, model {n_c}", ds.n_c)));
    }
    if ds.n_l != spec.n_l {
        return Err(Error::Shape(format!(
            "dataset has {} environment labels, spec {}",
            ds.n_l, spec.n_l
        )));
    }
    if ds.image_len() != model.arch().image_len() {
        return Err(Error::Shape("dataset image size differs from the model input".into()));
    }
    Ok((n_c, n_e))
}

/// Trains the critic on the samples `ids` of `ds`, whose context masks must
/// be the environment label pool of `spec`. Returns the log and the final
/// multipliers.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    ds: &Dataset,
    ids: &[usize],
    spec: &EnvironmentSpec,
    cfg: &TrainConfig,
) -> Result<(TrainLog, LagrangeState)> {
    let (n_c, n_e) = check_dataset(model, ds, spec)?;
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut lag = LagrangeState::new(n_c, n_e, cfg.rho);
    let mut adam = AdamState::new(model.num_params(), cfg.lr);
    let mut log = TrainLog::default();
    let root = Rng::new(cfg.seed);
    let start = Instant::now();

    for epoch in 1..=cfg.epochs {
        let mut order = ids.to_vec();
        order.shuffle(&mut root.child_indexed("shuffle", epoch as u64));
        let (mut loss_sum, mut con_sum, mut num_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let images = ds.gather_images(batch);
            let (out, cache) = model.forward(&images).map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged {
                    epoch,
                    step: log.steps.len(),
                    loss: f64::NAN,
                },
                other => other,
            })?;
            let masks = masks_for(ds, batch, n_c, spec)?;
            let stats = fisher_stats(&out, &masks, &lag)?;
            if !stats.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: log.steps.len(),
                    loss: stats.loss,
                });
            }
            let grad: Vec<T> = loss_output_grad(&out, &masks, &lag, &stats)?
                .into_iter()
                .map(T::of)
                .collect();
            let grads = model.backward(&cache, &grad)?;
            model.adam_step(&grads, &mut adam)?;
            log.adam_steps += 1;
            lag = lambda_update(&lag, &stats)?;
            log.lambda_updates += 1;

            let rec = StepRecord {
                epoch,
                loss: stats.loss,
                mean_abs_constraint: stats.mean_abs_constraint(),
                mean_ipm_numerator: stats.mean_numerator(),
            };
            loss_sum += rec.loss;
            con_sum += rec.mean_abs_constraint;
            num_sum += rec.mean_ipm_numerator;
            batches += 1;
            log.steps.push(rec);
        }
        let nb = batches.max(1) as f64;
        log.epochs.push(EpochRecord {
            epoch,
            loss: loss_sum / nb,
            mean_abs_constraint: con_sum / nb,
            mean_ipm_numerator: num_sum / nb,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((log, lag))
}

fn masks_for(
    ds: &Dataset,
    ids: &[usize],
    n_c: usize,
    spec: &EnvironmentSpec,
) -> Result<crate::envmask::MaskPair> {
    let class_rows: Vec<&[bool]> = ids.iter().map(|&k| ds.classes(k)).collect();
    let ctx_rows: Vec<&[bool]> = ids.iter().map(|&k| ds.context(k)).collect();
    batch_masks(&class_rows, &ctx_rows, n_c, spec)
}

/// Batch statistics over all of `ids` treated as one batch.
pub fn evaluate_fisher<T: Scalar>(
    model: &Model<T>,
    ds: &Dataset,
    ids: &[usize],
    spec: &EnvironmentSpec,
    lag: &LagrangeState,
) -> Result<FisherBatchStats> {
    let (n_c, _) = check_dataset(model, ds, spec)?;
    let mut data = Vec::with_capacity(ids.len() * model.outputs());
    for chunk in ids.chunks(256) {
        data.extend(model.predict(&ds.gather_images(chunk))?.data);
    }
    let out = Outputs {
        n_b: ids.len(),
        outputs: model.outputs(),
        data,
    };
    fisher_stats(&out, &masks_for(ds, ids, n_c, spec)?, lag)
}
