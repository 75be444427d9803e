//! SVD decomposition of representations, class-swap composition, rank-k
//! compression and the rank of a stacked representation set.
//!
//! With `D = U S V`, row `i` of `U` carries class `i`'s coordinates in the
//! shared environment basis `V`. Swapping class `c_plus` for `c_minus`
//! replaces row `c_plus` by the mean `U` row of the classes the sample is
//! not predicted to have, and row `c_minus` by the template's `U` row for
//! that class; the result is rebuilt with the original `S` and `V`.

mod io;

pub use io::{read_compressed, write_compressed, COMPRESSED_MAGIC};

use crate::error::{Error, Result};
use crate::numerics::{effective_rank_with_eps, reconstruct, svd, Matrix, SvdResult};

fn check_wide(d: &Matrix) -> Result<()> {
    if d.rows() > d.cols() {
        return Err(Error::InvalidArgument(format!(
            "decomposition needs n_c <= n_e, got {}x{}",
            d.rows(),
            d.cols()
        )));
    }
    Ok(())
}

/// `D = U S V` with `U` square (`n_c x n_c`).
pub fn decompose(d: &Matrix) -> Result<SvdResult> {
    check_wide(d)?;
    svd(d)
}

/// Rebuilds `sum_k S[k] outer(U~[:,k], V[k,:])` from an edited `U`.
pub fn recompose(u_tilde: &Matrix, parts: &SvdResult) -> Result<Matrix> {
    if u_tilde.rows() != parts.u.rows() || u_tilde.cols() != parts.u.cols() {
        return Err(Error::Shape("edited U differs in shape from the original".into()));
    }
    Ok(reconstruct(u_tilde, &parts.s, &parts.v))
}

/// `U` with the two class rows replaced as described in the module docs.
pub fn swapped_u(
    parts: &SvdResult,
    template_parts: &SvdResult,
    c_plus: usize,
    c_minus: usize,
    predicted: &[bool],
) -> Result<Matrix> {
    let n_c = parts.u.rows();
    if predicted.len() != n_c || template_parts.u.rows() != n_c || template_parts.u.cols() != parts.u.cols() {
        return Err(Error::Shape(format!(
            "predicted mask of {} for {n_c} classes",
            predicted.len()
        )));
    }
    if c_plus >= n_c || c_minus >= n_c {
        return Err(Error::InvalidArgument(format!(
            "class index out of range ({c_plus}, {c_minus}) for {n_c} classes"
        )));
    }
    if c_plus == c_minus {
        return Err(Error::InvalidArgument("c_plus and c_minus must differ".into()));
    }
    if !predicted[c_plus] || predicted[c_minus] {
        return Err(Error::InvalidArgument(format!(
            "swap needs c_plus={c_plus} predicted and c_minus={c_minus} not predicted"
        )));
    }
    let others: Vec<usize> = (0..n_c).filter(|&c| !predicted[c]).collect();
    let r = parts.u.cols();
    let mut mean = vec![0.0; r];
    for &c in &others {
        for (m, &v) in mean.iter_mut().zip(parts.u.row(c)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= others.len() as f64);
    let mut u = parts.u.clone();
    u.row_mut(c_plus).copy_from_slice(&mean);
    u.row_mut(c_minus).copy_from_slice(template_parts.u.row(c_minus));
    Ok(u)
}

/// Edits `d` so that it expresses `c_minus` instead of `c_plus`.
/// `predicted` is the class mask the classifier assigns to `d`.
pub fn compose_swap(
    d: &Matrix,
    c_plus: usize,
    c_minus: usize,
    templates: &Matrix,
    predicted: &[bool],
) -> Result<Matrix> {
    if templates.rows() != d.rows() || templates.cols() != d.cols() {
        return Err(Error::Shape("representation and templates differ in shape".into()));
    }
    if predicted.iter().all(|&p| p) {
        return Err(Error::InvalidArgument(
            "every class is predicted; no rows to average".into(),
        ));
    }
    let parts = decompose(d)?;
    let tparts = decompose(templates)?;
    let u = swapped_u(&parts, &tparts, c_plus, c_minus, predicted)?;
    recompose(&u, &parts)
}

/// Rank-k factors of one representation.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedRep {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl CompressedRep {
    pub fn k(&self) -> usize {
        self.s.len()
    }

    pub fn n_c(&self) -> usize {
        self.u.rows()
    }

    pub fn n_e(&self) -> usize {
        self.v.cols()
    }

    /// Stored values, `k * (n_c + n_e + 1)`.
    pub fn storage_count(&self) -> usize {
        self.k() * (self.n_c() + self.n_e() + 1)
    }

    /// `U_k`, `S_k`, `V_k` flattened in that order (row-major).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.storage_count());
        out.extend_from_slice(self.u.data());
        out.extend_from_slice(&self.s);
        out.extend_from_slice(self.v.data());
        out
    }
}

/// Fraction of the full representation's size kept per retained component
/// pair, `k (n_c + n_e) / (n_c n_e)`.
pub fn storage_ratio(n_c: usize, n_e: usize, k: usize) -> f64 {
    (k * (n_c + n_e)) as f64 / (n_c * n_e) as f64
}

pub fn compress(d: &Matrix, k: usize) -> Result<CompressedRep> {
    let r = d.rows().min(d.cols());
    if k == 0 || k > r {
        return Err(Error::InvalidArgument(format!("rank {k} outside 1..={r}")));
    }
    let parts = decompose(d)?;
    let u_data = (0..d.rows()).flat_map(|i| parts.u.row(i)[..k].to_vec()).collect();
    let v_data = parts.v.data()[..k * d.cols()].to_vec();
    Ok(CompressedRep {
        u: Matrix::from_vec(d.rows(), k, u_data)?,
        s: parts.s[..k].to_vec(),
        v: Matrix::from_vec(k, d.cols(), v_data)?,
    })
}

pub fn decompress(c: &CompressedRep) -> Matrix {
    reconstruct(&c.u, &c.s, &c.v)
}

/// Effective rank of the stacked `rows x cols` top-left blocks of `reps`.
///
/// Representations come from single-precision critic outputs, so the
/// cut-off uses the single-precision epsilon; rounding noise would
/// otherwise count as rank.
pub fn representation_rank(reps: &[Matrix], rows: usize, cols: usize) -> Result<usize> {
    representation_rank_with_eps(reps, rows, cols, f64::from(f32::EPSILON))
}

pub fn representation_rank_with_eps(reps: &[Matrix], rows: usize, cols: usize, eps: f64) -> Result<usize> {
    if reps.is_empty() {
        return Err(Error::InvalidArgument("no representations".into()));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("rank block must be non-empty".into()));
    }
    let mut data = Vec::with_capacity(reps.len() * rows * cols);
    for (n, d) in reps.iter().enumerate() {
        if rows > d.rows() || cols > d.cols() {
            return Err(Error::InvalidArgument(format!(
                "block {rows}x{cols} exceeds representation {n} of shape {}x{}",
                d.rows(),
                d.cols()
            )));
        }
        for i in 0..rows {
            data.extend_from_slice(&d.row(i)[..cols]);
        }
    }
    effective_rank_with_eps(&Matrix::from_vec(reps.len(), rows * cols, data)?, eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use rand::Rng as _;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = Rng::new(seed);
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn tall_input_rejected() {
        assert!(decompose(&Matrix::zeros(5, 3)).is_err());
    }

    #[test]
    fn unedited_u_recomposes_input() {
        let d = random(8, 48, 1);
        let parts = decompose(&d).unwrap();
        let back = recompose(&parts.u, &parts).unwrap();
        assert!(back.max_abs_diff(&d) < 1e-8);
    }

    #[test]
    fn swap_and_restore_round_trip() {
        let d = random(8, 48, 2);
        let t = random(8, 48, 3);
        let parts = decompose(&d).unwrap();
        let tparts = decompose(&t).unwrap();
        let mut predicted = vec![false; 8];
        predicted[1] = true;
        predicted[4] = true;
        let mut u = swapped_u(&parts, &tparts, 1, 6, &predicted).unwrap();
        assert_ne!(u, parts.u);
        for c in [1, 6] {
            u.row_mut(c).copy_from_slice(parts.u.row(c));
        }
        assert!(recompose(&u, &parts).unwrap().max_abs_diff(&d) < 1e-8);
    }

    #[test]
    fn swap_touches_only_two_rows_of_u() {
        let d = random(4, 10, 5);
        let t = random(4, 10, 6);
        let parts = decompose(&d).unwrap();
        let tparts = decompose(&t).unwrap();
        let predicted = [true, false, true, false];
        let u = swapped_u(&parts, &tparts, 0, 3, &predicted).unwrap();
        assert_eq!(u.row(1), parts.u.row(1));
        assert_eq!(u.row(2), parts.u.row(2));
        assert_eq!(u.row(3), tparts.u.row(3));
        let mean: Vec<f64> = (0..4).map(|k| (parts.u[(1, k)] + parts.u[(3, k)]) / 2.0).collect();
        assert_eq!(u.row(0), &mean[..]);
    }

    #[test]
    fn swap_preconditions() {
        let d = random(3, 5, 7);
        let t = random(3, 5, 8);
        assert!(compose_swap(&d, 0, 0, &t, &[true, false, false]).is_err());
        assert!(compose_swap(&d, 0, 1, &t, &[true, true, true]).is_err());
        assert!(compose_swap(&d, 1, 2, &t, &[true, false, false]).is_err());
        assert!(compose_swap(&d, 0, 2, &t, &[true, false, true]).is_err());
        assert!(compose_swap(&d, 0, 2, &t, &[true, false, false]).is_ok());
    }

    #[test]
    fn reference_storage_ratio() {
        let r = storage_ratio(91, 300, 1);
        assert!((r - 391.0 / 27300.0).abs() < 1e-15);
        assert_eq!(format!("{:.1}%", 100.0 * r), "1.4%");
    }

    #[test]
    fn full_rank_compression_is_lossless() {
        let d = random(8, 48, 9);
        let c = compress(&d, 8).unwrap();
        assert!(decompress(&c).max_abs_diff(&d) < 1e-8);
        assert_eq!(c.storage_count(), 8 * 57);
        assert_eq!(c.flatten().len(), c.storage_count());
    }

    #[test]
    fn eckart_young_error() {
        let d = random(8, 48, 10);
        let parts = decompose(&d).unwrap();
        let mut prev = f64::INFINITY;
        for k in 1..=8 {
            let err = decompress(&compress(&d, k).unwrap()).sub(&d).frobenius_norm().powi(2);
            let tail: f64 = parts.s[k..].iter().map(|s| s * s).sum();
            assert!((err - tail).abs() < 1e-8, "k={k}");
            assert!(err <= prev + 1e-12);
            prev = err;
        }
    }

    #[test]
    fn compress_rank_range() {
        let d = random(3, 5, 11);
        assert!(compress(&d, 0).is_err());
        assert!(compress(&d, 4).is_err());
    }

    #[test]
    fn rank_of_copies_is_one() {
        let d = random(3, 6, 12);
        let reps = vec![d; 20];
        assert_eq!(representation_rank(&reps, 3, 6).unwrap(), 1);
    }

    #[test]
    fn rank_block_must_fit() {
        let reps = vec![random(3, 6, 13)];
        assert!(representation_rank(&reps, 4, 6).is_err());
        assert!(representation_rank(&reps, 3, 7).is_err());
        assert!(representation_rank(&[], 1, 1).is_err());
    }
}
