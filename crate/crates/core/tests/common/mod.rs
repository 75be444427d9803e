//! Random Fisher batches and nested-loop evaluations of the batch
//! statistics, shared by the fisher tests and the acceptance run.

#![allow(dead_code)]

use codir::envmask::{batch_masks, sample_environments, EnvironmentSpec, MaskPair};
use codir::fisher::LagrangeState;
use codir::net::Outputs;
use codir::numerics::Rng;
use rand::Rng as _;

pub struct Batch {
    pub n_b: usize,
    pub n_c: usize,
    pub n_l: usize,
    pub classes: Vec<Vec<bool>>,
    pub context: Vec<Vec<bool>>,
    pub spec: EnvironmentSpec,
    pub out: Outputs<f64>,
    pub lag: LagrangeState,
}

pub fn random_batch(rng: &mut Rng) -> Batch {
    let n_b = rng.gen_range(1..12);
    let n_c = rng.gen_range(1..5);
    let n_l = rng.gen_range(2..9);
    let n_e = rng.gen_range(1..6);
    let r = rng.gen_range(1..=n_l);
    let spec = sample_environments(n_l, n_e, r, rng).unwrap();
    let classes = (0..n_b).map(|_| (0..n_c).map(|_| rng.gen_bool(0.4)).collect()).collect();
    let context = (0..n_b).map(|_| (0..n_l).map(|_| rng.gen_bool(0.4)).collect()).collect();
    let out = Outputs {
        n_b,
        outputs: n_c * n_e,
        data: (0..n_b * n_c * n_e).map(|_| rng.gen_range(-2.0..2.0)).collect(),
    };
    let mut lag = LagrangeState::new(n_c, n_e, rng.gen_range(0.0..2.0));
    lag.lambda.iter_mut().for_each(|l| *l = rng.gen_range(-1.0..1.0));
    Batch {
        n_b,
        n_c,
        n_l,
        classes,
        context,
        spec,
        out,
        lag,
    }
}

pub fn masks(b: &Batch) -> MaskPair {
    let c: Vec<&[bool]> = b.classes.iter().map(Vec::as_slice).collect();
    let l: Vec<&[bool]> = b.context.iter().map(Vec::as_slice).collect();
    batch_masks(&c, &l, b.n_c, &b.spec).unwrap()
}

/// Dense masks straight from the definitions: `Mc[k,i,j] = C[k,i]` and
/// `Me[k,i,j] = sum_l L[k,l] V[l,j]`.
pub fn oracle_masks(b: &Batch) -> (Vec<f64>, Vec<f64>) {
    let n_e = b.spec.n_e();
    let v = b.spec.v_matrix();
    let mut mc = Vec::new();
    let mut me = Vec::new();
    for k in 0..b.n_b {
        for i in 0..b.n_c {
            for j in 0..n_e {
                mc.push(if b.classes[k][i] { 1.0 } else { 0.0 });
                let mut s = 0.0;
                for l in 0..b.n_l {
                    if b.context[k][l] && v[l * n_e + j] {
                        s += 1.0;
                    }
                }
                me.push(s);
            }
        }
    }
    (mc, me)
}

pub struct Oracle {
    pub e_fe: Vec<f64>,
    pub e_fc: Vec<f64>,
    pub e_fes: Vec<f64>,
    pub e_fcs: Vec<f64>,
    pub constraint: Vec<f64>,
    pub loss: f64,
    pub grad: Vec<f64>,
}

pub fn oracle_stats(b: &Batch) -> Oracle {
    let (mc, me) = oracle_masks(b);
    let n_e = b.spec.n_e();
    let cells = b.n_c * n_e;
    let nb = b.n_b as f64;
    let mut o = Oracle {
        e_fe: vec![0.0; cells],
        e_fc: vec![0.0; cells],
        e_fes: vec![0.0; cells],
        e_fcs: vec![0.0; cells],
        constraint: vec![0.0; cells],
        loss: 0.0,
        grad: vec![0.0; b.n_b * cells],
    };
    for c in 0..cells {
        for k in 0..b.n_b {
            let x = b.out.data[k * cells + c];
            let (oe, oc) = (x * me[k * cells + c], x * mc[k * cells + c]);
            o.e_fe[c] += oe / nb;
            o.e_fc[c] += oc / nb;
            o.e_fes[c] += oe * oe / nb;
            o.e_fcs[c] += oc * oc / nb;
        }
        o.constraint[c] = 1.0 - 0.5 * (o.e_fes[c] + o.e_fcs[c]);
        let (l, rho, con) = (b.lag.lambda[c], b.lag.rho, o.constraint[c]);
        o.loss -= o.e_fe[c] - o.e_fc[c] + l * con - rho / 2.0 * con * con;
        for k in 0..b.n_b {
            let x = b.out.data[k * cells + c];
            let (e, m) = (me[k * cells + c], mc[k * cells + c]);
            // derivative of -(E_fE - E_fC + l*con - rho/2 con^2) in O[k,c]
            let dcon = -(e * e + m * m) * x / nb;
            o.grad[k * cells + c] = -((e - m) / nb) - (l - rho * con) * dcon;
        }
    }
    o
}

pub fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

pub fn split_batch(b: &Batch, lo: usize, hi: usize) -> Batch {
    let cells = b.out.outputs;
    Batch {
        n_b: hi - lo,
        n_c: b.n_c,
        n_l: b.n_l,
        classes: b.classes[lo..hi].to_vec(),
        context: b.context[lo..hi].to_vec(),
        spec: b.spec.clone(),
        out: Outputs {
            n_b: hi - lo,
            outputs: cells,
            data: b.out.data[lo * cells..hi * cells].to_vec(),
        },
        lag: b.lag.clone(),
    }
}
