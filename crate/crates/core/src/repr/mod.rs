//! Post-training pass: environment expectations, class templates, per-class
//! cosine thresholds and instance representations.
//!
//! For critic outputs `f(s)` (an `n_c x n_e` grid):
//!
//! ```text
//! Ebar[i,j] = sum_k w[k,j] f[i,j](s_k) / sum_k w[k,j]   (w = environment match counts)
//! T[i,j]    = Ebar[i,j] - mean of f[i,j] over class-i members
//! D(s)      = Ebar - f(s)
//! s has class i  <=>  cos(D(s)[i,:], T[i,:]) > t[i]
//! ```

mod io;

pub use io::{
    read_reps, read_templates, write_reps, write_templates, RepRecord, REP_MAGIC, TEMPLATE_MAGIC,
};

use rand::seq::SliceRandom;

use crate::envmask::EnvironmentSpec;
use crate::error::{Error, Result};
use crate::metrics::best_threshold;
use crate::net::{Model, Scalar};
use crate::numerics::{cosine_unchecked, Matrix, Rng};
use crate::par;
use crate::synthdata::Dataset;

/// Samples per predict call when scoring a split.
const SCORE_CHUNK: usize = 256;

/// How expectations are normalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weighting {
    /// Weighted conditional means (divide by the total mask weight); used
    /// for templates and representations.
    Conditional,
    /// Batch means with masked-out samples contributing zero, as in the
    /// training loss; each term is scaled by its label prevalence.
    Prevalence,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemplateSet {
    pub ebar: Matrix,
    pub templates: Matrix,
    /// Per-class thresholds; empty until [`fit_thresholds`] has run.
    pub thresholds: Vec<f64>,
    pub template_ids: Vec<usize>,
    pub threshold_ids: Vec<usize>,
}

impl TemplateSet {
    pub fn n_c(&self) -> usize {
        self.templates.rows()
    }

    pub fn n_e(&self) -> usize {
        self.templates.cols()
    }

    pub fn has_thresholds(&self) -> bool {
        self.thresholds.len() == self.n_c()
    }

    fn check_rep(&self, d: &Matrix) -> Result<()> {
        if d.rows() != self.n_c() || d.cols() != self.n_e() {
            return Err(Error::Shape(format!(
                "representation {}x{} vs templates {}x{}",
                d.rows(),
                d.cols(),
                self.n_c(),
                self.n_e()
            )));
        }
        Ok(())
    }

    fn require_thresholds(&self) -> Result<()> {
        if !self.has_thresholds() {
            return Err(Error::InvalidArgument("templates have no fitted thresholds".into()));
        }
        Ok(())
    }
}

/// Deterministic 2/3 : 1/3 split of `ids` into template and threshold
/// samples; both halves are returned in ascending order.
pub fn split_for_templates(ids: &[usize], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut shuffled = ids.to_vec();
    shuffled.sort_unstable();
    shuffled.shuffle(&mut Rng::new(seed).child("template-split"));
    let cut = (2 * shuffled.len()).div_ceil(3);
    let (mut a, mut b) = (shuffled[..cut].to_vec(), shuffled[cut..].to_vec());
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

/// Critic outputs for `ids`, one `n_c*n_e` row per sample, in `ids` order.
pub fn critic_outputs<T: Scalar>(model: &Model<T>, ds: &Dataset, ids: &[usize]) -> Result<Vec<Vec<f64>>> {
    let chunks = par::try_map_range(ids.len().div_ceil(SCORE_CHUNK), |c| {
        let part = &ids[c * SCORE_CHUNK..((c + 1) * SCORE_CHUNK).min(ids.len())];
        model.predict(&ds.gather_images(part))
    })?;
    let mut rows = Vec::with_capacity(ids.len());
    for out in chunks {
        for k in 0..out.n_b {
            rows.push(out.row(k).iter().map(|v| v.as_f64()).collect());
        }
    }
    if let Some(k) = rows.iter().position(|r: &Vec<f64>| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(format!("critic output for sample {}", ids[k])));
    }
    Ok(rows)
}

/// `(Ebar, T)` from precomputed outputs. `classes[k]` and `contexts[k]` are
/// the label masks of the sample whose outputs are `outputs[k]`.
pub fn templates_from_outputs(
    outputs: &[Vec<f64>],
    classes: &[&[bool]],
    contexts: &[&[bool]],
    n_c: usize,
    spec: &EnvironmentSpec,
    weighting: Weighting,
) -> Result<(Matrix, Matrix)> {
    let n_e = spec.n_e();
    if outputs.is_empty() {
        return Err(Error::InvalidArgument("template split is empty".into()));
    }
    if classes.len() != outputs.len() || contexts.len() != outputs.len() {
        return Err(Error::Shape("outputs and label masks differ in length".into()));
    }
    let mut env_sum = vec![0.0; n_c * n_e];
    let mut env_w = vec![0.0; n_e];
    let mut cls_sum = vec![0.0; n_c * n_e];
    let mut cls_w = vec![0.0; n_c];
    for (k, row) in outputs.iter().enumerate() {
        if row.len() != n_c * n_e {
            return Err(Error::Shape(format!("output row {k} has {} values", row.len())));
        }
        for j in 0..n_e {
            let w = spec.match_count(j, contexts[k]) as f64;
            if w == 0.0 {
                continue;
            }
            env_w[j] += w;
            for i in 0..n_c {
                env_sum[i * n_e + j] += w * row[i * n_e + j];
            }
        }
        for i in 0..n_c {
            if classes[k][i] {
                cls_w[i] += 1.0;
                for j in 0..n_e {
                    cls_sum[i * n_e + j] += row[i * n_e + j];
                }
            }
        }
    }
    if let Some(i) = cls_w.iter().position(|&w| w == 0.0) {
        return Err(Error::InvalidArgument(format!(
            "class {i} has no members in the template split"
        )));
    }
    if let Some(j) = env_w.iter().position(|&w| w == 0.0) {
        return Err(Error::InvalidArgument(format!(
            "environment {j} has no members in the template split"
        )));
    }
    let n = outputs.len() as f64;
    let mut ebar = Matrix::zeros(n_c, n_e);
    let mut t = Matrix::zeros(n_c, n_e);
    for i in 0..n_c {
        for j in 0..n_e {
            let (ed, cd) = match weighting {
                Weighting::Conditional => (env_w[j], cls_w[i]),
                Weighting::Prevalence => (n, n),
            };
            let e = env_sum[i * n_e + j] / ed;
            ebar[(i, j)] = e;
            t[(i, j)] = e - cls_sum[i * n_e + j] / cd;
        }
    }
    Ok((ebar, t))
}

/// Environment expectations and templates over the template samples `ids`
/// (thresholds are left empty).
pub fn fit_templates<T: Scalar>(
    model: &Model<T>,
    ds: &Dataset,
    ids: &[usize],
    spec: &EnvironmentSpec,
) -> Result<TemplateSet> {
    if ds.n_l != spec.n_l {
        return Err(Error::Shape(format!(
            "dataset has {} context labels, environments use {}",
            ds.n_l, spec.n_l
        )));
    }
    let outputs = critic_outputs(model, ds, ids)?;
    let classes: Vec<&[bool]> = ids.iter().map(|&k| ds.classes(k)).collect();
    let contexts: Vec<&[bool]> = ids.iter().map(|&k| ds.context(k)).collect();
    let (ebar, templates) =
        templates_from_outputs(&outputs, &classes, &contexts, ds.n_c, spec, Weighting::Conditional)?;
    Ok(TemplateSet {
        ebar,
        templates,
        thresholds: Vec::new(),
        template_ids: ids.to_vec(),
        threshold_ids: Vec::new(),
    })
}

/// `D = Ebar - f` for one output row.
pub fn rep_from_output(output: &[f64], ebar: &Matrix) -> Result<Matrix> {
    if output.len() != ebar.rows() * ebar.cols() {
        return Err(Error::Shape(format!(
            "{} outputs for a {}x{} grid",
            output.len(),
            ebar.rows(),
            ebar.cols()
        )));
    }
    let data = ebar.data().iter().zip(output).map(|(e, f)| e - f).collect();
    Matrix::from_vec(ebar.rows(), ebar.cols(), data)
}

pub fn instance_rep<T: Scalar>(model: &Model<T>, image: &[f32], ebar: &Matrix) -> Result<Matrix> {
    let out = model.predict(image)?;
    let row: Vec<f64> = out.row(0).iter().map(|v| v.as_f64()).collect();
    rep_from_output(&row, ebar)
}

pub fn instance_reps<T: Scalar>(model: &Model<T>, ds: &Dataset, ids: &[usize], ebar: &Matrix) -> Result<Vec<Matrix>> {
    critic_outputs(model, ds, ids)?
        .iter()
        .map(|row| rep_from_output(row, ebar))
        .collect()
}

/// `cos(D[i,:], T[i,:])` for every class.
pub fn class_cosines(d: &Matrix, templates: &Matrix) -> Vec<f64> {
    (0..templates.rows())
        .map(|i| cosine_unchecked(d.row(i), templates.row(i)))
        .collect()
}

/// Per-class result of the threshold fit.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdFit {
    pub thresholds: Vec<f64>,
    pub f1: Vec<f64>,
    /// Classes with no member among the threshold samples (threshold +inf).
    pub absent_classes: Vec<usize>,
}

/// Thresholds maximizing per-class binary F1 over the given
/// representations and class masks.
pub fn fit_thresholds_from_reps(
    reps: &[Matrix],
    classes: &[&[bool]],
    templates: &Matrix,
) -> Result<ThresholdFit> {
    if reps.len() != classes.len() {
        return Err(Error::Shape("representations and labels differ in length".into()));
    }
    let cos: Vec<Vec<f64>> = reps.iter().map(|d| class_cosines(d, templates)).collect();
    let n_c = templates.rows();
    let mut fit = ThresholdFit {
        thresholds: Vec::with_capacity(n_c),
        f1: Vec::with_capacity(n_c),
        absent_classes: Vec::new(),
    };
    for i in 0..n_c {
        let scores: Vec<f64> = cos.iter().map(|c| c[i]).collect();
        let labels: Vec<bool> = classes.iter().map(|c| c[i]).collect();
        if !labels.contains(&true) {
            fit.absent_classes.push(i);
            fit.thresholds.push(f64::INFINITY);
            fit.f1.push(1.0);
            continue;
        }
        let choice = best_threshold(&scores, &labels)?;
        fit.thresholds.push(choice.threshold);
        fit.f1.push(choice.f1);
    }
    Ok(fit)
}

/// Fits thresholds on the samples `ids` and stores them in `templates`.
pub fn fit_thresholds<T: Scalar>(
    model: &Model<T>,
    ds: &Dataset,
    ids: &[usize],
    templates: &mut TemplateSet,
) -> Result<ThresholdFit> {
    let reps = instance_reps(model, ds, ids, &templates.ebar)?;
    let classes: Vec<&[bool]> = ids.iter().map(|&k| ds.classes(k)).collect();
    let fit = fit_thresholds_from_reps(&reps, &classes, &templates.templates)?;
    templates.thresholds = fit.thresholds.clone();
    templates.threshold_ids = ids.to_vec();
    Ok(fit)
}

/// Predicted class mask: `cos(D[i,:], T[i,:]) > t[i]`.
pub fn classify(d: &Matrix, templates: &TemplateSet) -> Result<Vec<bool>> {
    templates.check_rep(d)?;
    templates.require_thresholds()?;
    Ok(class_cosines(d, &templates.templates)
        .iter()
        .zip(&templates.thresholds)
        .map(|(c, t)| c > t)
        .collect())
}
