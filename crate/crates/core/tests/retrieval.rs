//! Retrieval ranking, similarity and scoring against brute-force evaluations.

use codir::numerics::{Matrix, Rng};
use codir::repr::TemplateSet;
use codir::retrieval::{
    make_queries, queries_from_csv, queries_to_csv, random_control_prec, relevant_classes, retrieval_metrics,
    retrieve, similarity, top1_all, Labels, Mode, Query, RELEVANCE_SCALE,
};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn template_set(rng: &mut Rng, n_c: usize, n_e: usize) -> TemplateSet {
    TemplateSet {
        ebar: Matrix::zeros(n_e, 1),
        templates: gaussian(n_c, n_e, rng),
        thresholds: (0..n_c).map(|_| rng.gen_range(-0.2..0.3)).collect(),
        template_ids: vec![],
        threshold_ids: vec![],
    }
}

/// Similarity written out directly from its definition.
fn similarity_oracle(da: &Matrix, db: &Matrix, ts: &TemplateSet) -> f64 {
    let n_c = da.rows();
    let rel: Vec<usize> = (0..n_c)
        .filter(|&c| cos(da.row(c), ts.templates.row(c)) > RELEVANCE_SCALE * ts.thresholds[c])
        .collect();
    let rel = if rel.is_empty() { (0..n_c).collect() } else { rel };
    rel.iter().map(|&c| cos(da.row(c), db.row(c))).sum::<f64>() / rel.len() as f64
}

#[test]
fn nn_ranking_matches_brute_force() {
    let mut rng = Rng::new(31);
    let ts = template_set(&mut rng, 4, 10);
    let corpus: Vec<Matrix> = (0..50).map(|_| gaussian(4, 10, &mut rng)).collect();
    let ids: Vec<usize> = (0..50).map(|i| 1000 + 3 * i).collect();
    for pos in [0, 7, 23, 49] {
        let q = Query {
            ref_id: ids[pos],
            c_plus: 0,
            c_minus: 1,
        };
        let ranked = retrieve(&q, Mode::Nn, &ids, &corpus, &ts).unwrap();
        assert_eq!(ranked.len(), 49);
        assert!(!ranked.contains(&pos), "the reference is excluded");

        let mut oracle: Vec<(f64, usize)> = (0..50)
            .filter(|&p| p != pos)
            .map(|p| (similarity_oracle(&corpus[pos], &corpus[p], &ts), p))
            .collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(ids[a.1].cmp(&ids[b.1])));
        let oracle: Vec<usize> = oracle.into_iter().map(|(_, p)| p).collect();
        assert_eq!(ranked, oracle);
        for p in 0..50 {
            let s = similarity(&corpus[pos], &corpus[p], &ts);
            assert!((s - similarity_oracle(&corpus[pos], &corpus[p], &ts)).abs() < 1e-12);
        }
    }
}

#[test]
fn duplicate_of_the_reference_ranks_first() {
    let mut rng = Rng::new(32);
    let ts = template_set(&mut rng, 3, 8);
    let mut corpus: Vec<Matrix> = (0..30).map(|_| gaussian(3, 8, &mut rng)).collect();
    corpus[17] = corpus[4].clone();
    let ids: Vec<usize> = (0..30).collect();
    let q = Query {
        ref_id: 4,
        c_plus: 0,
        c_minus: 2,
    };
    assert_eq!(retrieve(&q, Mode::Nn, &ids, &corpus, &ts).unwrap()[0], 17);
    // A positive rescaling has the same row cosines and also ties at 1;
    // ties are broken by the smaller sample id.
    corpus[2] = corpus[4].scale(3.0);
    assert_eq!(retrieve(&q, Mode::Nn, &ids, &corpus, &ts).unwrap()[0], 2);
}

#[test]
fn relevant_set_comes_from_the_first_argument() {
    let ts = TemplateSet {
        ebar: Matrix::zeros(2, 1),
        templates: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
        thresholds: vec![0.5, 0.5],
        template_ids: vec![],
        threshold_ids: vec![],
    };
    // `a` is near template 0 only; `b` is near template 1 only.
    let a = Matrix::from_rows(&[vec![1.0, 0.1], vec![1.0, 0.0]]).unwrap();
    let b = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.5, 1.0]]).unwrap();
    assert_eq!(relevant_classes(&a, &ts), vec![0]);
    assert_eq!(relevant_classes(&b, &ts), vec![1]);
    let ab = similarity(&a, &b, &ts);
    let ba = similarity(&b, &a, &ts);
    assert!((ab - cos(a.row(0), b.row(0))).abs() < 1e-12);
    assert!((ba - cos(b.row(1), a.row(1))).abs() < 1e-12);
    assert!((ab - ba).abs() > 1e-3, "similarity is not symmetric");

    // No class relevant: every row counts.
    let far = Matrix::from_rows(&[vec![-1.0, 0.0], vec![0.0, -1.0]]).unwrap();
    assert!(relevant_classes(&far, &ts).is_empty());
    let s = similarity(&far, &b, &ts);
    assert!((s - 0.5 * (cos(far.row(0), b.row(0)) + cos(far.row(1), b.row(1)))).abs() < 1e-12);
}

#[test]
fn mnn_retrieval_uses_the_modified_query() {
    let mut rng = Rng::new(33);
    let ts = template_set(&mut rng, 4, 10);
    let corpus: Vec<Matrix> = (0..20).map(|_| gaussian(4, 10, &mut rng)).collect();
    let ids: Vec<usize> = (0..20).collect();
    let q = Query {
        ref_id: 5,
        c_plus: 1,
        c_minus: 3,
    };
    let d = codir::retrieval::modified_query(&corpus[5], &q, &ts).unwrap();
    let ranked = retrieve(&q, Mode::Mnn, &ids, &corpus, &ts).unwrap();
    let mut best = (f64::NEG_INFINITY, 0);
    for p in (0..20).filter(|&p| p != 5) {
        let s = similarity_oracle(&d, &corpus[p], &ts);
        if s > best.0 {
            best = (s, p);
        }
    }
    assert_eq!(ranked[0], best.1);
    let (nn, mnn) = top1_all(&[q], &ids, &corpus, &ts).unwrap();
    assert_eq!(mnn, vec![best.1]);
    assert_eq!(nn[0], retrieve(&q, Mode::Nn, &ids, &corpus, &ts).unwrap()[0]);
}

#[test]
fn metrics_match_hand_computation() {
    // Three queries over four classes and two context labels.
    let queries = [
        Query { ref_id: 0, c_plus: 0, c_minus: 2 },
        Query { ref_id: 1, c_plus: 1, c_minus: 3 },
        Query { ref_id: 2, c_plus: 0, c_minus: 1 },
    ];
    // Reference label sets.
    static REFS: [[bool; 4]; 3] = [
        [true, true, false, false],
        [false, true, false, false],
        [true, false, false, true],
    ];
    // NN results: F1 1, 0 and 2*1/(1+2).
    static NN: [[bool; 4]; 3] = [
        [true, true, false, false],
        [true, false, false, false],
        [true, false, false, false],
    ];
    // M-NN results against targets {1,2}, {3}, {1,3}: F1 1, 2*1/(3+1), 1;
    // the second still holds c_plus, so two of three succeed.
    static MNN: [[bool; 4]; 3] = [
        [false, true, true, false],
        [false, true, true, true],
        [false, true, false, true],
    ];
    // Context F1 against the reference: NN 1, 0, 1; M-NN 2/3, 1, 0.
    static CR: [[bool; 2]; 3] = [[true, false], [false, true], [true, true]];
    static CN: [[bool; 2]; 3] = [[true, false], [true, false], [true, true]];
    static CM: [[bool; 2]; 3] = [[true, true], [false, true], [false, false]];
    let labels = |c: &'static [[bool; 4]; 3], x: &'static [[bool; 2]; 3]| -> Vec<Labels<'static>> {
        (0..3).map(|k| Labels { classes: &c[k], context: &x[k] }).collect()
    };

    let r = retrieval_metrics(&queries, &labels(&REFS, &CR), &labels(&NN, &CN), &labels(&MNN, &CM)).unwrap();
    assert!((r.nn_f1 - (1.0 + 0.0 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
    assert!((r.mnn_f1 - (1.0 + 0.5 + 1.0) / 3.0).abs() < 1e-12);
    assert!((r.mnn_prec - 2.0 / 3.0).abs() < 1e-12);
    assert!((r.f1_pct - 100.0 * (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-9);
    assert!(retrieval_metrics(&queries[..2], &labels(&REFS, &CR), &labels(&NN, &CN), &labels(&MNN, &CM)).is_err());
}

#[test]
fn random_control_is_the_exact_hit_fraction() {
    let classes: Vec<Vec<bool>> = vec![
        vec![true, false, false],
        vec![false, true, false],
        vec![false, true, true],
        vec![true, true, false],
        vec![false, false, true],
    ];
    let refs: Vec<&[bool]> = classes.iter().map(Vec::as_slice).collect();
    let ids = [10, 11, 12, 13, 14];
    let q = [Query { ref_id: 10, c_plus: 0, c_minus: 1 }];
    // Candidates 11..14: hits are samples with class 1 and without class 0 -> 11, 12.
    assert!((random_control_prec(&q, &ids, &refs) - 0.5).abs() < 1e-15);
    let q2 = [Query { ref_id: 12, c_plus: 1, c_minus: 2 }];
    // Candidates 10, 11, 13, 14: only 14 has class 2 without class 1.
    assert!((random_control_prec(&q2, &ids, &refs) - 0.25).abs() < 1e-15);
}

#[test]
fn queries_are_valid_and_round_trip() {
    let mut rng = Rng::new(34);
    let classes: Vec<Vec<bool>> = (0..60).map(|_| (0..5).map(|_| rng.gen_bool(0.4)).collect()).collect();
    let refs: Vec<&[bool]> = classes.iter().map(Vec::as_slice).collect();
    let ids: Vec<usize> = (0..60).map(|i| i * 2).collect();
    let qs = make_queries(&ids, &refs, 20, 5).unwrap();
    assert_eq!(qs.len(), 20);
    for q in &qs {
        let p = ids.iter().position(|&id| id == q.ref_id).unwrap();
        assert!(classes[p][q.c_plus] && !classes[p][q.c_minus]);
    }
    assert_eq!(qs, make_queries(&ids, &refs, 20, 5).unwrap());
    assert_eq!(queries_from_csv(&queries_to_csv(&qs)).unwrap(), qs);
    assert!(queries_from_csv("a,b,c\n1,2,3\n").is_err());
    assert!(queries_from_csv("ref_id,c_plus,c_minus\n1,x,3\n").is_err());
    assert!(make_queries(&ids, &refs, 1000, 5).is_err());
}
