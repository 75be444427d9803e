//! Randomized environments and the per-batch class/environment masks.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numerics::{sample_without_replacement, Rng};

/// Fixed random environments over a pool of `n_l` labels.
///
/// Environment `j` selects `sizes[j]` distinct labels, stored ascending in
/// `labels[j]`; the label-selection matrix `V` (`n_l x n_e`) has a one at
/// `(l, j)` for each of them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnvironmentSpec {
    pub n_l: usize,
    pub max_labels: usize,
    labels: Vec<Vec<usize>>,
}

impl EnvironmentSpec {
    pub fn from_labels(n_l: usize, max_labels: usize, labels: Vec<Vec<usize>>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("no environments".into()));
        }
        for (j, env) in labels.iter().enumerate() {
            if env.is_empty() || env.len() > max_labels {
                return Err(Error::InvalidArgument(format!(
                    "environment {j} has {} labels (allowed 1..={max_labels})",
                    env.len()
                )));
            }
            if env.windows(2).any(|w| w[0] >= w[1]) || env.iter().any(|&l| l >= n_l) {
                return Err(Error::InvalidArgument(format!(
                    "environment {j} labels must be distinct, ascending and below {n_l}"
                )));
            }
        }
        Ok(EnvironmentSpec {
            n_l,
            max_labels,
            labels,
        })
    }

    pub fn n_e(&self) -> usize {
        self.labels.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.labels.iter().map(Vec::len).collect()
    }

    pub fn labels(&self, j: usize) -> &[usize] {
        &self.labels[j]
    }

    /// `V[l * n_e + j]` (row-major `n_l x n_e`).
    pub fn v_matrix(&self) -> Vec<bool> {
        let n_e = self.n_e();
        let mut v = vec![false; self.n_l * n_e];
        for (j, env) in self.labels.iter().enumerate() {
            for &l in env {
                v[l * n_e + j] = true;
            }
        }
        v
    }

    /// Column-major bit order used by the serialized block.
    pub fn v_column_major(&self) -> Vec<bool> {
        let mut bits = vec![false; self.n_l * self.n_e()];
        for (j, env) in self.labels.iter().enumerate() {
            for &l in env {
                bits[j * self.n_l + l] = true;
            }
        }
        bits
    }

    pub fn from_column_major(n_l: usize, n_e: usize, max_labels: usize, bits: &[bool]) -> Result<Self> {
        if bits.len() != n_l * n_e {
            return Err(Error::Shape("environment bit matrix".into()));
        }
        let labels = (0..n_e)
            .map(|j| (0..n_l).filter(|&l| bits[j * n_l + l]).collect())
            .collect();
        Self::from_labels(n_l, max_labels, labels)
    }

    /// Number of labels of environment `j` that a sample carries.
    pub fn match_count(&self, j: usize, context: &[bool]) -> usize {
        self.labels[j].iter().filter(|&&l| context[l]).count()
    }
}

/// Draws `n_e` environments: `r_j ~ U{1..=max_labels}`, then `r_j` labels
/// uniformly without replacement from the `n_l` labels.
pub fn sample_environments(n_l: usize, n_e: usize, max_labels: usize, rng: &mut Rng) -> Result<EnvironmentSpec> {
    if max_labels == 0 || max_labels > n_l {
        return Err(Error::InvalidArgument(format!(
            "max labels per environment R = {max_labels} must lie in 1..={n_l}"
        )));
    }
    if n_e == 0 {
        return Err(Error::InvalidArgument("n_e must be positive".into()));
    }
    let mut labels = Vec::with_capacity(n_e);
    for _ in 0..n_e {
        let r = rng.gen_range(1..=max_labels);
        labels.push(sample_without_replacement(n_l, r, rng)?);
    }
    EnvironmentSpec::from_labels(n_l, max_labels, labels)
}

/// Class mask `Mc` and environment mask `Me` for a batch.
///
/// Both are `n_b x n_c x n_e` tensors; since `Mc` is constant along `j` and
/// `Me` along `i`, only the `n_b x n_c` and `n_b x n_e` factors are stored.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPair {
    pub n_b: usize,
    pub n_c: usize,
    pub n_e: usize,
    class: Vec<f64>,
    env: Vec<f64>,
}

impl MaskPair {
    pub fn new(class_mask: ClassMask, env_mask: EnvMask) -> Result<Self> {
        if class_mask.n_b != env_mask.n_b || class_mask.n_e != env_mask.n_e {
            return Err(Error::Shape(format!(
                "class mask {}x{}x{} vs environment mask {}x_x{}",
                class_mask.n_b, class_mask.n_c, class_mask.n_e, env_mask.n_b, env_mask.n_e
            )));
        }
        Ok(MaskPair {
            n_b: class_mask.n_b,
            n_c: class_mask.n_c,
            n_e: class_mask.n_e,
            class: class_mask.values,
            env: env_mask.values,
        })
    }

    #[inline]
    pub fn mc(&self, k: usize, i: usize, _j: usize) -> f64 {
        self.class[k * self.n_c + i]
    }

    #[inline]
    pub fn me(&self, k: usize, _i: usize, j: usize) -> f64 {
        self.env[k * self.n_e + j]
    }

    pub fn class_factor(&self) -> &[f64] {
        &self.class
    }

    pub fn env_factor(&self) -> &[f64] {
        &self.env
    }

    /// Expanded `(Mc, Me)`, each `n_b * n_c * n_e` values.
    pub fn to_dense(&self) -> (Vec<f64>, Vec<f64>) {
        let len = self.n_b * self.n_c * self.n_e;
        let mut mc = Vec::with_capacity(len);
        let mut me = Vec::with_capacity(len);
        for k in 0..self.n_b {
            for i in 0..self.n_c {
                for j in 0..self.n_e {
                    mc.push(self.mc(k, i, j));
                    me.push(self.me(k, i, j));
                }
            }
        }
        (mc, me)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMask {
    pub n_b: usize,
    pub n_c: usize,
    pub n_e: usize,
    values: Vec<f64>,
}

impl ClassMask {
    pub fn get(&self, k: usize, i: usize, _j: usize) -> f64 {
        self.values[k * self.n_c + i]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvMask {
    pub n_b: usize,
    pub n_e: usize,
    values: Vec<f64>,
}

impl EnvMask {
    pub fn get(&self, k: usize, _i: usize, j: usize) -> f64 {
        self.values[k * self.n_e + j]
    }
}

/// Expands batch class labels (`n_b x n_c`, row-major) along the
/// environment axis: `Mc[k, i, j] = Cb[k, i]`.
pub fn class_mask(class_labels: &[bool], n_c: usize, n_e: usize) -> ClassMask {
    ClassMask {
        n_b: class_labels.len() / n_c.max(1),
        n_c,
        n_e,
        values: class_labels.iter().map(|&b| f64::from(u8::from(b))).collect(),
    }
}

/// `Me[k, i, j] = (Lb V)[k, j]`: how many labels of environment `j` sample
/// `k` carries (counts, not clipped).
pub fn env_mask(context_labels: &[bool], spec: &EnvironmentSpec) -> Result<EnvMask> {
    let n_l = spec.n_l;
    if n_l == 0 || !context_labels.len().is_multiple_of(n_l) {
        return Err(Error::Shape(format!(
            "{} context bits do not form rows of {n_l}",
            context_labels.len()
        )));
    }
    let n_b = context_labels.len() / n_l;
    let n_e = spec.n_e();
    let mut values = Vec::with_capacity(n_b * n_e);
    for row in context_labels.chunks(n_l) {
        for j in 0..n_e {
            values.push(spec.match_count(j, row) as f64);
        }
    }
    Ok(EnvMask { n_b, n_e, values })
}

/// Masks for the samples `ids` of a dataset-like label source.
pub fn batch_masks(
    class_rows: &[&[bool]],
    context_rows: &[&[bool]],
    n_c: usize,
    spec: &EnvironmentSpec,
) -> Result<MaskPair> {
    let cb: Vec<bool> = class_rows.iter().flat_map(|r| r.iter().copied()).collect();
    let lb: Vec<bool> = context_rows.iter().flat_map(|r| r.iter().copied()).collect();
    MaskPair::new(class_mask(&cb, n_c, spec.n_e()), env_mask(&lb, spec)?)
}
