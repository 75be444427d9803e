//! One-sided Jacobi singular value decomposition.

use super::Matrix;
use crate::error::{Error, Result};

/// Sweep limit for the cyclic Jacobi iteration.
pub const MAX_SWEEPS: usize = 60;
/// A column pair counts as orthogonal once `|<a_p, a_q>| <= ROTATION_TOL * |a_p| |a_q|`.
pub const ROTATION_TOL: f64 = 1e-12;

/// Thin SVD `M = U * diag(S) * V`.
///
/// `u` is `m x r` with orthonormal columns, `v` is `r x n` with orthonormal
/// rows and `s` is sorted descending, with `r = min(m, n)`. Each column of
/// `u` has its largest-magnitude entry nonnegative (first index on ties);
/// the matching row of `v` carries the compensating sign.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdResult {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    pub fn rank_bound(&self) -> usize {
        self.s.len()
    }

    /// `sum_k s[k] * outer(u[:, k], v[k, :])` over the first `k` components.
    pub fn reconstruct_truncated(&self, k: usize) -> Matrix {
        reconstruct(&self.u, &self.s[..k.min(self.s.len())], &self.v)
    }

    pub fn reconstruct(&self) -> Matrix {
        self.reconstruct_truncated(self.s.len())
    }
}

/// Outer-product reconstruction `sum_k s[k] * u[:, k] v[k, :]` using the
/// first `s.len()` columns of `u` and rows of `v`.
pub fn reconstruct(u: &Matrix, s: &[f64], v: &Matrix) -> Matrix {
    let (m, n) = (u.rows(), v.cols());
    let mut out = Matrix::zeros(m, n);
    for (k, &sk) in s.iter().enumerate() {
        let vrow = v.row(k);
        for i in 0..m {
            let a = sk * u[(i, k)];
            if a == 0.0 {
                continue;
            }
            for (o, &b) in out.row_mut(i).iter_mut().zip(vrow) {
                *o += a * b;
            }
        }
    }
    out
}

pub fn svd(m: &Matrix) -> Result<SvdResult> {
    let (rows, cols) = (m.rows(), m.cols());
    if rows == 0 || cols == 0 {
        return Err(Error::Shape(format!("svd of empty {rows}x{cols} matrix")));
    }
    if m.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("svd input {rows}x{cols}")));
    }
    let (u, s, v) = if rows >= cols {
        let cols_major = (0..cols).map(|j| m.col(j)).collect();
        let t = jacobi_tall(cols_major, rows, cols)?;
        (t.u, t.s, t.v.transpose())
    } else {
        // M^T = U' S V'^T  =>  M = V' S U'^T
        let cols_major = (0..rows).map(|i| m.row(i).to_vec()).collect();
        let t = jacobi_tall(cols_major, cols, rows)?;
        (t.v, t.s, t.u.transpose())
    };
    Ok(canonical_signs(SvdResult { u, s, v }))
}

struct Tall {
    /// m x n, orthonormal columns.
    u: Matrix,
    s: Vec<f64>,
    /// n x n orthogonal; `A = U diag(S) V^T`.
    v: Matrix,
}

/// Cyclic one-sided Jacobi on the `n` columns (each of length `m >= n`).
fn jacobi_tall(mut a: Vec<Vec<f64>>, m: usize, n: usize) -> Result<Tall> {
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    // Columns with squared norm below this are rounding noise of a rank-
    // deficient input; rotating them against each other never settles.
    let frob2: f64 = a.iter().flatten().map(|x| x * x).sum();
    let negligible = f64::EPSILON * f64::EPSILON * frob2;

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (ap, aq) = (&a[p], &a[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for (x, y) in ap.iter().zip(aq) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    (alpha, beta, gamma)
                };
                if alpha <= negligible || beta <= negligible || gamma.abs() <= ROTATION_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut a, p, q, c, s);
                rotate_pair(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdNoConvergence {
            rows: m,
            cols: n,
            sweeps: MAX_SWEEPS,
        });
    }

    let norms: Vec<f64> = a
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let mut ucols: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    for &j in &order {
        let sigma = norms[j];
        s.push(sigma);
        if sigma * sigma > negligible && sigma > f64::MIN_POSITIVE * 1e10 {
            ucols.push(Some(a[j].iter().map(|x| x / sigma).collect()));
        } else {
            ucols.push(None);
        }
    }
    let ucols = complete_orthonormal(ucols, m);

    let mut u = Matrix::zeros(m, n);
    let mut v = Matrix::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        for i in 0..m {
            u[(i, k)] = ucols[k][i];
        }
        for i in 0..n {
            v[(i, k)] = vcols[j][i];
        }
    }
    Ok(Tall { u, s, v })
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills the `None` slots with unit vectors orthogonal to every other
/// column, trying standard basis vectors in order.
fn complete_orthonormal(cols: Vec<Option<Vec<f64>>>, m: usize) -> Vec<Vec<f64>> {
    let mut done: Vec<Option<Vec<f64>>> = cols;
    let missing: Vec<usize> = (0..done.len()).filter(|&k| done[k].is_none()).collect();
    let mut basis = 0usize;
    for k in missing {
        while basis < m {
            let mut cand = vec![0.0; m];
            cand[basis] = 1.0;
            basis += 1;
            for _ in 0..2 {
                for other in done.iter().flatten() {
                    let dot: f64 = other.iter().zip(&cand).map(|(a, b)| a * b).sum();
                    for (c, o) in cand.iter_mut().zip(other) {
                        *c -= dot * o;
                    }
                }
            }
            let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.5 {
                cand.iter_mut().for_each(|x| *x /= norm);
                done[k] = Some(cand);
                break;
            }
        }
    }
    done.into_iter()
        .map(|c| c.expect("orthonormal completion exhausted the basis"))
        .collect()
}

fn canonical_signs(mut r: SvdResult) -> SvdResult {
    let (m, k) = (r.u.rows(), r.u.cols());
    for j in 0..k {
        let mut best = 0usize;
        for i in 1..m {
            if r.u[(i, j)].abs() > r.u[(best, j)].abs() {
                best = i;
            }
        }
        if r.u[(best, j)] < 0.0 {
            for i in 0..m {
                r.u[(i, j)] = -r.u[(i, j)];
            }
            r.v.row_mut(j).iter_mut().for_each(|x| *x = -*x);
        }
    }
    r
}
