//! Dense linear algebra, cosine similarity, rank estimation and seeded
//! randomness shared by the rest of the crate.

mod matrix;
mod rng;
mod svd;

pub use matrix::Matrix;
pub use rng::Rng;
pub use svd::{reconstruct, svd, SvdResult, MAX_SWEEPS, ROTATION_TOL};

use crate::error::{Error, Result};

/// Vectors with norm below this compare as cosine 0.
pub const COSINE_ZERO_NORM: f64 = 1e-12;

/// Cosine similarity; 0 when either vector is (numerically) zero.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() || u.is_empty() {
        return Err(Error::Shape(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(cosine_unchecked(u, v))
}

pub(crate) fn cosine_unchecked(u: &[f64], v: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    let (nu, nv) = (nu.sqrt(), nv.sqrt());
    if nu < COSINE_ZERO_NORM || nv < COSINE_ZERO_NORM {
        return 0.0;
    }
    (dot / (nu * nv)).clamp(-1.0, 1.0)
}

/// Numerical rank with the Numerical Recipes cut-off
/// `0.5 * sqrt(m + n + 1) * s_max * f64::EPSILON`.
pub fn effective_rank(m: &Matrix) -> Result<usize> {
    effective_rank_with_eps(m, f64::EPSILON)
}

/// Same rule with an explicit machine epsilon, for data that was stored at
/// lower precision than the SVD runs at.
pub fn effective_rank_with_eps(m: &Matrix, eps: f64) -> Result<usize> {
    let r = svd(m)?;
    let smax = r.s.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Ok(0);
    }
    let tol = 0.5 * ((m.rows() + m.cols() + 1) as f64).sqrt() * smax * eps;
    Ok(r.s.iter().filter(|&&s| s > tol).count())
}

/// `k` distinct indices from `0..n`, uniform over k-subsets, sorted ascending.
pub fn sample_without_replacement(n: usize, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {k} of {n} without replacement"
        )));
    }
    let mut idx = rand::seq::index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}
