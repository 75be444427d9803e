use rand::seq::SliceRandom;

use super::{fisher_stats, loss_output_grad, LagrangeState};
use crate::envmask::MaskPair;
use crate::error::Result;
use crate::net::{Layer, Model, Outputs};
use crate::numerics::Rng;

/// Central-difference step for the critic loss. The loss is quadratic in
/// the outputs and the network is piecewise linear, so on a fixed
/// activation pattern the difference quotient is exact up to rounding.
pub const FD_STEP: f64 = 1e-3;

/// Worst relative error between analytic and central-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub checked: usize,
    /// Candidates skipped because a `+-h` step crossed a ReLU or max-pool
    /// switch, where finite differences are not valid.
    pub skipped: usize,
    pub max_rel_error: f64,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Indices of `layer` whose `+-h` perturbation keeps every ReLU sign and
/// pooling choice of the batch, in random order, up to `wanted` of them.
/// Also returns how many candidates were rejected.
pub fn pattern_preserving_indices(
    model: &Model<f64>,
    images: &[f32],
    layer: Layer,
    h: f64,
    rng: &mut Rng,
    wanted: usize,
) -> Result<(Vec<usize>, usize)> {
    let mut candidates: Vec<usize> = model.block(layer).range().collect();
    candidates.shuffle(rng);
    let base = model.activation_pattern(images)?;
    let mut keep = Vec::new();
    let mut skipped = 0;
    let mut probe = model.clone();
    for idx in candidates {
        if keep.len() == wanted {
            break;
        }
        let w = probe.params()[idx];
        let mut same = true;
        for delta in [h, -h] {
            probe.params_mut()[idx] = w + delta;
            if probe.activation_pattern(images)? != base {
                same = false;
            }
        }
        probe.params_mut()[idx] = w;
        if same {
            keep.push(idx);
        } else {
            skipped += 1;
        }
    }
    Ok((keep, skipped))
}

/// Compares backpropagated weight gradients of `loss` (which maps head
/// outputs to a value and its output gradient) with central differences on
/// up to `count` random weights of `layer`.
pub fn finite_difference_check<F>(
    model: &Model<f64>,
    images: &[f32],
    layer: Layer,
    count: usize,
    h: f64,
    rng: &mut Rng,
    loss: F,
) -> Result<GradcheckReport>
where
    F: Fn(&Outputs<f64>) -> Result<(f64, Vec<f64>)>,
{
    let (out, cache) = model.forward(images)?;
    let (_, grad_out) = loss(&out)?;
    let analytic = model.backward(&cache, &grad_out)?;

    let (indices, skipped) = pattern_preserving_indices(model, images, layer, h, rng, count)?;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for &idx in &indices {
        let w = probe.params()[idx];
        probe.params_mut()[idx] = w + h;
        let plus = loss(&probe.predict(images)?)?.0;
        probe.params_mut()[idx] = w - h;
        let minus = loss(&probe.predict(images)?)?.0;
        probe.params_mut()[idx] = w;
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(relative_error(analytic.values[idx], numeric));
    }
    Ok(GradcheckReport {
        checked: indices.len(),
        skipped,
        max_rel_error: worst,
    })
}

/// [`finite_difference_check`] for the Fisher critic loss with fixed
/// multipliers.
pub fn loss_gradcheck(
    model: &Model<f64>,
    images: &[f32],
    masks: &MaskPair,
    lag: &LagrangeState,
    layer: Layer,
    count: usize,
    rng: &mut Rng,
) -> Result<GradcheckReport> {
    finite_difference_check(model, images, layer, count, FD_STEP, rng, |out| {
        let stats = fisher_stats(out, masks, lag)?;
        let grad = loss_output_grad(out, masks, lag, &stats)?;
        Ok((stats.loss, grad))
    })
}
