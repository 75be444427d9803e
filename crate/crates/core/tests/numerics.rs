//! Randomized properties of the SVD, cosine and seeded streams.

use codir::numerics::{cosine, effective_rank, svd, Matrix, Rng};
use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

fn max_gram_error(m: &Matrix, rows: bool) -> f64 {
    let n = if rows { m.rows() } else { m.cols() };
    let mut worst: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            let (x, y) = if rows { (m.row(a).to_vec(), m.row(b).to_vec()) } else { (m.col(a), m.col(b)) };
            let dot: f64 = x.iter().zip(&y).map(|(p, q)| p * q).sum();
            worst = worst.max((dot - f64::from(u8::from(a == b))).abs());
        }
    }
    worst
}

#[test]
fn svd_round_trip_on_random_matrices() {
    let mut rng = Rng::new(61);
    for _ in 0..200 {
        let (r, c) = (rng.gen_range(1..=32), rng.gen_range(1..=32));
        let scale = 10f64.powi(rng.gen_range(-3..=3));
        let data = (0..r * c).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect::<Vec<f64>>();
        let m = Matrix::from_vec(r, c, data).unwrap();
        let p = svd(&m).unwrap();
        let err = p.reconstruct().sub(&m).frobenius_norm();
        assert!(err <= 1e-8 * m.frobenius_norm(), "{r}x{c}: {err}");
        assert!(max_gram_error(&p.u, false) <= 1e-8);
        assert!(max_gram_error(&p.v, true) <= 1e-8);
    }
}

#[test]
fn rank_of_products_is_the_inner_dimension() {
    let mut rng = Rng::new(62);
    for _ in 0..20 {
        let (m, k, n) = (rng.gen_range(5..30), rng.gen_range(1..8), rng.gen_range(5..30));
        let a = Matrix::from_vec(m, k, (0..m * k).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
        let b = Matrix::from_vec(k, n, (0..k * n).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
        assert_eq!(effective_rank(&a.matmul(&b).unwrap()).unwrap(), k.min(m).min(n));
    }
}

#[test]
fn child_streams_do_not_depend_on_parent_draws() {
    let a = Rng::new(9);
    let mut b = Rng::new(9);
    let _: u64 = b.gen();
    let mut ca = a.child("x");
    let mut cb = b.child("x");
    assert_eq!(ca.gen::<u64>(), cb.gen::<u64>());
    assert_ne!(Rng::new(9).child("x").gen::<u64>(), Rng::new(9).child("y").gen::<u64>());
}

proptest! {
    #[test]
    fn cosine_is_symmetric_and_scale_invariant(
        u in proptest::collection::vec(-10.0f64..10.0, 1..20),
        seed in any::<u64>(),
        alpha in 1e-3f64..1e3,
    ) {
        let mut rng = Rng::new(seed);
        let v: Vec<f64> = (0..u.len()).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let c = cosine(&u, &v).unwrap();
        prop_assert!((-1.0..=1.0).contains(&c));
        prop_assert!((c - cosine(&v, &u).unwrap()).abs() <= 1e-12);
        let scaled: Vec<f64> = u.iter().map(|x| alpha * x).collect();
        prop_assert!((c - cosine(&scaled, &v).unwrap()).abs() <= 1e-12);
    }
}

#[test]
fn cosine_rejects_mismatched_lengths() {
    assert!(cosine(&[1.0, 2.0], &[1.0]).is_err());
    assert!(cosine(&[], &[]).is_err());
    assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), 0.0);
}
