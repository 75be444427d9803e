//! Fisher IPM critic objective with an augmented-Lagrangian second-moment
//! constraint, evaluated on a single mixed mini-batch through masks.
//!
//! For every cell `(i, j)` the batch statistics are
//!
//! ```text
//! E_fE  = mean_k O[k,i,j] Me[k,i,j]        E_fEs = mean_k (O Me)^2
//! E_fC  = mean_k O[k,i,j] Mc[k,i,j]        E_fCs = mean_k (O Mc)^2
//! constraint = 1 - (E_fEs + E_fCs) / 2
//! loss = -sum_{i,j} (E_fE - E_fC + lambda * constraint - rho/2 * constraint^2)
//! ```
//!
//! Means run over the whole batch (masked-out samples contribute zeros), so
//! every sample is weighted by its label prevalence.

mod gradcheck;
mod train;

pub use gradcheck::{
    finite_difference_check, loss_gradcheck, pattern_preserving_indices, relative_error, GradcheckReport, FD_STEP,
};
pub use train::{evaluate_fisher, train, EpochRecord, StepRecord, TrainConfig, TrainLog};

use crate::envmask::MaskPair;
use crate::error::{Error, Result};
use crate::net::{Outputs, Scalar};

/// Penalty weight used at desk scale.
pub const DEFAULT_RHO: f64 = 1e-2;
/// Penalty weight used for the full-size backbones.
pub const LARGE_SCALE_RHO: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct LagrangeState {
    pub n_c: usize,
    pub n_e: usize,
    pub lambda: Vec<f64>,
    pub rho: f64,
}

impl LagrangeState {
    pub fn new(n_c: usize, n_e: usize, rho: f64) -> Self {
        LagrangeState {
            n_c,
            n_e,
            lambda: vec![0.0; n_c * n_e],
            rho,
        }
    }
}

/// Per-cell batch statistics, each `n_c x n_e` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherBatchStats {
    pub n_c: usize,
    pub n_e: usize,
    pub e_fe: Vec<f64>,
    pub e_fc: Vec<f64>,
    pub e_fes: Vec<f64>,
    pub e_fcs: Vec<f64>,
    pub constraint: Vec<f64>,
    pub loss: f64,
}

impl FisherBatchStats {
    /// Mean over cells of the IPM numerator `E_fE - E_fC`.
    pub fn mean_numerator(&self) -> f64 {
        let n = self.e_fe.len() as f64;
        self.e_fe.iter().zip(&self.e_fc).map(|(e, c)| e - c).sum::<f64>() / n
    }

    pub fn mean_abs_constraint(&self) -> f64 {
        self.constraint.iter().map(|c| c.abs()).sum::<f64>() / self.constraint.len() as f64
    }
}

fn check_shapes<T>(out: &Outputs<T>, masks: &MaskPair, lag: &LagrangeState) -> Result<()> {
    let cells = lag.n_c * lag.n_e;
    if out.outputs != cells || masks.n_c != lag.n_c || masks.n_e != lag.n_e || out.n_b != masks.n_b {
        return Err(Error::Shape(format!(
            "outputs {}x{}, masks {}x{}x{}, multipliers {}x{}",
            out.n_b, out.outputs, masks.n_b, masks.n_c, masks.n_e, lag.n_c, lag.n_e
        )));
    }
    if out.n_b == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    Ok(())
}

pub fn fisher_stats<T: Scalar>(out: &Outputs<T>, masks: &MaskPair, lag: &LagrangeState) -> Result<FisherBatchStats> {
    check_shapes(out, masks, lag)?;
    let (n_c, n_e, n_b) = (lag.n_c, lag.n_e, out.n_b);
    let cells = n_c * n_e;
    let mut e_fe = vec![0.0; cells];
    let mut e_fc = vec![0.0; cells];
    let mut e_fes = vec![0.0; cells];
    let mut e_fcs = vec![0.0; cells];
    for k in 0..n_b {
        let row = out.row(k);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("critic output for batch sample {k}")));
        }
        for i in 0..n_c {
            let mc = masks.mc(k, i, 0);
            for j in 0..n_e {
                let c = i * n_e + j;
                let o = row[c].as_f64();
                let oe = o * masks.me(k, i, j);
                let oc = o * mc;
                e_fe[c] += oe;
                e_fes[c] += oe * oe;
                e_fc[c] += oc;
                e_fcs[c] += oc * oc;
            }
        }
    }
    let inv = 1.0 / n_b as f64;
    for v in [&mut e_fe, &mut e_fc, &mut e_fes, &mut e_fcs] {
        v.iter_mut().for_each(|x| *x *= inv);
    }
    let constraint: Vec<f64> = e_fes
        .iter()
        .zip(&e_fcs)
        .map(|(es, cs)| 1.0 - (0.5 * es + 0.5 * cs))
        .collect();
    let mut objective = 0.0;
    for c in 0..cells {
        let con = constraint[c];
        objective += e_fe[c] - e_fc[c] + lag.lambda[c] * con - lag.rho / 2.0 * con * con;
    }
    Ok(FisherBatchStats {
        n_c,
        n_e,
        e_fe,
        e_fc,
        e_fes,
        e_fcs,
        constraint,
        loss: -objective,
    })
}

/// `d loss / d O[k, i, j]` with the multipliers held fixed.
pub fn loss_output_grad<T: Scalar>(
    out: &Outputs<T>,
    masks: &MaskPair,
    lag: &LagrangeState,
    stats: &FisherBatchStats,
) -> Result<Vec<f64>> {
    check_shapes(out, masks, lag)?;
    let (n_c, n_e, n_b) = (lag.n_c, lag.n_e, out.n_b);
    let inv = 1.0 / n_b as f64;
    // d loss/dO = -(Me - Mc)/n_b + (lambda - rho * con) * O (Me^2 + Mc^2) / n_b
    let coef: Vec<f64> = lag
        .lambda
        .iter()
        .zip(&stats.constraint)
        .map(|(l, c)| (l - lag.rho * c) * inv)
        .collect();
    let mut grad = vec![0.0; n_b * n_c * n_e];
    for k in 0..n_b {
        let row = out.row(k);
        for i in 0..n_c {
            let mc = masks.mc(k, i, 0);
            for j in 0..n_e {
                let c = i * n_e + j;
                let me = masks.me(k, i, j);
                let o = row[c].as_f64();
                grad[k * n_c * n_e + c] = -(me - mc) * inv + coef[c] * o * (me * me + mc * mc);
            }
        }
    }
    Ok(grad)
}

/// `lambda <- lambda - rho * constraint`.
pub fn lambda_update(lag: &LagrangeState, stats: &FisherBatchStats) -> Result<LagrangeState> {
    if stats.constraint.len() != lag.lambda.len() {
        return Err(Error::Shape("constraint and multiplier shapes differ".into()));
    }
    let mut next = lag.clone();
    for (l, c) in next.lambda.iter_mut().zip(&stats.constraint) {
        *l -= lag.rho * c;
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envmask::{class_mask, env_mask, EnvironmentSpec};

    fn outputs(n_b: usize, cells: usize, f: impl Fn(usize) -> f64) -> Outputs<f64> {
        Outputs {
            n_b,
            outputs: cells,
            data: (0..n_b * cells).map(f).collect(),
        }
    }

    #[test]
    fn zero_outputs_give_unit_constraint() {
        let (n_c, n_e, n_b) = (3, 4, 5);
        let spec = EnvironmentSpec::from_labels(2, 2, vec![vec![0], vec![1], vec![0, 1], vec![1]]).unwrap();
        let cb: Vec<bool> = (0..n_b * n_c).map(|i| i % 2 == 0).collect();
        let lb: Vec<bool> = (0..n_b * 2).map(|i| i % 3 == 0).collect();
        let masks = MaskPair::new(class_mask(&cb, n_c, n_e), env_mask(&lb, &spec).unwrap()).unwrap();
        let lag = LagrangeState::new(n_c, n_e, 2.0);
        let s = fisher_stats(&outputs(n_b, n_c * n_e, |_| 0.0), &masks, &lag).unwrap();
        assert!(s.constraint.iter().all(|&c| c == 1.0));
        assert_eq!(s.loss, (n_c * n_e) as f64);
    }

    #[test]
    fn single_cell_arithmetic() {
        let spec = EnvironmentSpec::from_labels(1, 1, vec![vec![0]]).unwrap();
        let masks = MaskPair::new(class_mask(&[true], 1, 1), env_mask(&[false], &spec).unwrap()).unwrap();
        let lag = LagrangeState::new(1, 1, 0.0);
        let s = fisher_stats(&outputs(1, 1, |_| 3.0), &masks, &lag).unwrap();
        assert_eq!(s.e_fc, vec![3.0]);
        assert_eq!(s.e_fcs, vec![9.0]);
        assert_eq!(s.e_fe, vec![0.0]);
        assert_eq!(s.loss, 3.0);
    }

    #[test]
    fn nan_output_names_sample() {
        let spec = EnvironmentSpec::from_labels(1, 1, vec![vec![0]]).unwrap();
        let masks = MaskPair::new(class_mask(&[true, false], 1, 1), env_mask(&[true, true], &spec).unwrap()).unwrap();
        let lag = LagrangeState::new(1, 1, 0.0);
        let err = fisher_stats(&outputs(2, 1, |k| if k == 1 { f64::NAN } else { 0.0 }), &masks, &lag).unwrap_err();
        assert!(err.to_string().contains("batch sample 1"));
    }

    #[test]
    fn lambda_update_examples() {
        let mut lag = LagrangeState::new(1, 2, 1e-2);
        let mut stats = FisherBatchStats {
            n_c: 1,
            n_e: 2,
            e_fe: vec![0.0; 2],
            e_fc: vec![0.0; 2],
            e_fes: vec![0.0; 2],
            e_fcs: vec![0.0; 2],
            constraint: vec![1.0, 0.0],
            loss: 0.0,
        };
        lag = lambda_update(&lag, &stats).unwrap();
        assert_eq!(lag.lambda, vec![-1e-2, 0.0]);
        stats.constraint = vec![0.0, 0.0];
        assert_eq!(lambda_update(&lag, &stats).unwrap().lambda, vec![-1e-2, 0.0]);
    }

    #[test]
    fn multiplier_gradient_is_minus_constraint() {
        // loss is linear in lambda with slope -constraint
        let spec = EnvironmentSpec::from_labels(3, 2, vec![vec![0, 2], vec![1]]).unwrap();
        let cb = [true, false, false, true, true, true];
        let lb = [true, true, false, false, false, true, true, false, true];
        let masks = MaskPair::new(class_mask(&cb, 2, 2), env_mask(&lb, &spec).unwrap()).unwrap();
        let out = outputs(3, 4, |x| (x as f64 * 0.37).sin());
        let mut lag = LagrangeState::new(2, 2, 0.3);
        lag.lambda = vec![0.1, -0.2, 0.05, 0.4];
        let base = fisher_stats(&out, &masks, &lag).unwrap();
        for c in 0..4 {
            let mut bumped = lag.clone();
            bumped.lambda[c] += 0.5;
            let s = fisher_stats(&out, &masks, &bumped).unwrap();
            let slope = (s.loss - base.loss) / 0.5;
            assert!((slope + base.constraint[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn augmented_lagrangian_drives_constraint_to_zero() {
        // Scalar critic f(x) = w * x on two fixed distributions: the
        // statistics are E_fE = w mu_e, E_fC = w mu_c, E_fEs = w^2 s_e,
        // E_fCs = w^2 s_c. Alternate a gradient step on w with the
        // multiplier update.
        let (mu_e, mu_c, s_e, s_c) = (0.8, 0.2, 1.3, 0.7);
        let rho = 0.5;
        let mut lag = LagrangeState::new(1, 1, rho);
        let mut w = 0.1f64;
        let lr = 0.05;
        let mut reached = None;
        for step in 0..2000 {
            let con = 1.0 - 0.5 * w * w * (s_e + s_c);
            let stats = FisherBatchStats {
                n_c: 1,
                n_e: 1,
                e_fe: vec![w * mu_e],
                e_fc: vec![w * mu_c],
                e_fes: vec![w * w * s_e],
                e_fcs: vec![w * w * s_c],
                constraint: vec![con],
                loss: 0.0,
            };
            if con.abs() < 0.05 && reached.is_none() {
                reached = Some(step);
            }
            let dcon = -w * (s_e + s_c);
            let dloss = -((mu_e - mu_c) + (lag.lambda[0] - rho * con) * dcon);
            w -= lr * dloss;
            lag = lambda_update(&lag, &stats).unwrap();
        }
        let con = 1.0 - 0.5 * w * w * (s_e + s_c);
        assert!(reached.is_some());
        assert!(con.abs() < 0.05, "final constraint {con}");
    }
}
