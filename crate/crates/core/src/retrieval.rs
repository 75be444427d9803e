//! Nearest-neighbour retrieval over representation corpora, with optional
//! class-swap modification of the query (M-NN), and the retrieval scores.
//!
//! The similarity of `Da` to `Db` is the mean row cosine over the classes
//! `Da` is close to its template for (`cos(Da[c,:], T[c,:]) > 0.75 t[c]`),
//! falling back to all classes when that set is empty. The relevant set is
//! always taken from the first argument.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::compose::compose_swap;
use crate::error::{Error, Result};
use crate::metrics::sample_prf;
use crate::numerics::{cosine_unchecked, Matrix, Rng};
use crate::par;
use crate::repr::{class_cosines, classify, TemplateSet};

/// Scale applied to the classification thresholds for the relevant-class filter.
pub const RELEVANCE_SCALE: f64 = 0.75;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Query {
    pub ref_id: usize,
    pub c_plus: usize,
    pub c_minus: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Nn,
    Mnn,
}

/// Classes counted by [`similarity`] for query-side representation `da`.
pub fn relevant_classes(da: &Matrix, templates: &TemplateSet) -> Vec<usize> {
    class_cosines(da, &templates.templates)
        .iter()
        .zip(&templates.thresholds)
        .enumerate()
        .filter(|(_, (c, t))| **c > RELEVANCE_SCALE * **t)
        .map(|(i, _)| i)
        .collect()
}

pub fn similarity_over(da: &Matrix, db: &Matrix, classes: &[usize]) -> f64 {
    if classes.is_empty() {
        let all: Vec<usize> = (0..da.rows()).collect();
        return similarity_over(da, db, &all);
    }
    classes
        .iter()
        .map(|&c| cosine_unchecked(da.row(c), db.row(c)))
        .sum::<f64>()
        / classes.len() as f64
}

pub fn similarity(da: &Matrix, db: &Matrix, templates: &TemplateSet) -> f64 {
    similarity_over(da, db, &relevant_classes(da, templates))
}

/// Corpus positions ranked by descending score; ties by sample id. The
/// position `exclude` (if any) is left out.
pub fn rank_by_score(ids: &[usize], scores: &[f64], exclude: Option<usize>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).filter(|&p| Some(p) != exclude).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(ids[a].cmp(&ids[b])));
    order
}

/// The query representation after the M-NN edit: swap `c_plus` for
/// `c_minus` with the classifier's prediction, forced to contain `c_plus`
/// and not `c_minus`.
pub fn modified_query(d: &Matrix, q: &Query, templates: &TemplateSet) -> Result<Matrix> {
    let mut predicted = classify(d, templates)?;
    predicted[q.c_plus] = true;
    predicted[q.c_minus] = false;
    compose_swap(d, q.c_plus, q.c_minus, &templates.templates, &predicted)
}

/// Ranked corpus positions for `query`; the reference itself is excluded.
pub fn retrieve(
    query: &Query,
    mode: Mode,
    ids: &[usize],
    corpus: &[Matrix],
    templates: &TemplateSet,
) -> Result<Vec<usize>> {
    if corpus.is_empty() || ids.len() != corpus.len() {
        return Err(Error::InvalidArgument("corpus is empty or ids mismatch".into()));
    }
    let pos = ids
        .iter()
        .position(|&id| id == query.ref_id)
        .ok_or_else(|| Error::InvalidArgument(format!("reference {} not in corpus", query.ref_id)))?;
    let d = match mode {
        Mode::Nn => corpus[pos].clone(),
        Mode::Mnn => modified_query(&corpus[pos], query, templates)?,
    };
    let rel = relevant_classes(&d, templates);
    let scores: Vec<f64> = corpus.iter().map(|db| similarity_over(&d, db, &rel)).collect();
    Ok(rank_by_score(ids, &scores, Some(pos)))
}

/// Top-1 corpus position for every query, NN and M-NN.
pub fn top1_all(
    queries: &[Query],
    ids: &[usize],
    corpus: &[Matrix],
    templates: &TemplateSet,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let res = par::try_map_range(queries.len(), |n| {
        let nn = retrieve(&queries[n], Mode::Nn, ids, corpus, templates)?;
        let mnn = retrieve(&queries[n], Mode::Mnn, ids, corpus, templates)?;
        Ok::<_, Error>((nn[0], mnn[0]))
    })?;
    Ok(res.into_iter().unzip())
}

/// `count` queries over the reference pool `ids`, with `c_plus` uniform
/// over the reference's classes and `c_minus` uniform over the others.
pub fn make_queries(ids: &[usize], classes: &[&[bool]], count: usize, seed: u64) -> Result<Vec<Query>> {
    let eligible: Vec<usize> = (0..ids.len())
        .filter(|&p| classes[p].contains(&true) && classes[p].contains(&false))
        .collect();
    if eligible.len() < count {
        return Err(Error::InvalidArgument(format!(
            "only {} eligible references for {count} queries",
            eligible.len()
        )));
    }
    let mut rng = Rng::new(seed).child("queries");
    let mut chosen: Vec<usize> = eligible.choose_multiple(&mut rng, count).copied().collect();
    chosen.sort_unstable();
    Ok(chosen
        .into_iter()
        .map(|p| {
            let present: Vec<usize> = (0..classes[p].len()).filter(|&c| classes[p][c]).collect();
            let absent: Vec<usize> = (0..classes[p].len()).filter(|&c| !classes[p][c]).collect();
            Query {
                ref_id: ids[p],
                c_plus: present[rng.gen_range(0..present.len())],
                c_minus: absent[rng.gen_range(0..absent.len())],
            }
        })
        .collect())
}

pub fn queries_to_csv(queries: &[Query]) -> String {
    let mut s = String::from("ref_id,c_plus,c_minus\n");
    for q in queries {
        s.push_str(&format!("{},{},{}\n", q.ref_id, q.c_plus, q.c_minus));
    }
    s
}

pub fn queries_from_csv(text: &str) -> Result<Vec<Query>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == "ref_id,c_plus,c_minus" => {}
        _ => return Err(Error::Config("query file must start with ref_id,c_plus,c_minus".into())),
    }
    lines
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::Config(format!("query line {}: bad number '{s}'", n + 1)))
            };
            if f.len() != 3 {
                return Err(Error::Config(format!("query line {}: expected 3 fields", n + 1)));
            }
            Ok(Query {
                ref_id: parse(f[0])?,
                c_plus: parse(f[1])?,
                c_minus: parse(f[2])?,
            })
        })
        .collect()
}

/// Label masks of one corpus sample.
pub struct Labels<'a> {
    pub classes: &'a [bool],
    pub context: &'a [bool],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetrievalReport {
    pub nn_f1: f64,
    pub mnn_f1: f64,
    pub mnn_prec: f64,
    pub f1_pct: f64,
}

impl RetrievalReport {
    pub const CSV_HEADER: &'static str = "method,NN_F1,MNN_F1,MNN_PREC,F1_PCT";

    pub fn csv_row(&self, method: &str) -> String {
        format!(
            "{method},{:.6},{:.6},{:.6},{:.2}",
            self.nn_f1, self.mnn_f1, self.mnn_prec, self.f1_pct
        )
    }
}

/// Scores top-1 results. `reference[n]`, `nn[n]` and `mnn[n]` are the
/// labels of query `n`'s reference and its NN / M-NN results.
pub fn retrieval_metrics(queries: &[Query], reference: &[Labels], nn: &[Labels], mnn: &[Labels]) -> Result<RetrievalReport> {
    let n = queries.len();
    if n == 0 || reference.len() != n || nn.len() != n || mnn.len() != n {
        return Err(Error::Shape("queries and results differ in length".into()));
    }
    let (mut nn_f1, mut mnn_f1, mut prec, mut ctx_nn, mut ctx_mnn) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, q) in queries.iter().enumerate() {
        let mut target = reference[k].classes.to_vec();
        target[q.c_plus] = false;
        target[q.c_minus] = true;
        nn_f1 += sample_prf(nn[k].classes, reference[k].classes).f1;
        mnn_f1 += sample_prf(mnn[k].classes, &target).f1;
        if mnn[k].classes[q.c_minus] && !mnn[k].classes[q.c_plus] {
            prec += 1.0;
        }
        ctx_nn += sample_prf(nn[k].context, reference[k].context).f1;
        ctx_mnn += sample_prf(mnn[k].context, reference[k].context).f1;
    }
    let nf = n as f64;
    Ok(RetrievalReport {
        nn_f1: nn_f1 / nf,
        mnn_f1: mnn_f1 / nf,
        mnn_prec: prec / nf,
        f1_pct: if ctx_nn == 0.0 { 0.0 } else { 100.0 * ctx_mnn / ctx_nn },
    })
}

/// Expected M-NN precision of a retriever returning a uniformly random
/// corpus sample other than the reference.
pub fn random_control_prec(queries: &[Query], ids: &[usize], classes: &[&[bool]]) -> f64 {
    let mut total = 0.0;
    for q in queries {
        let (mut hits, mut n) = (0usize, 0usize);
        for (p, &id) in ids.iter().enumerate() {
            if id == q.ref_id {
                continue;
            }
            n += 1;
            hits += usize::from(classes[p][q.c_minus] && !classes[p][q.c_plus]);
        }
        total += hits as f64 / n.max(1) as f64;
    }
    total / queries.len().max(1) as f64
}

/// Mean vector of the corpus members of each class (the baseline's
/// per-class template in semantic-output space).
pub fn class_mean_vectors(vectors: &[Vec<f64>], classes: &[&[bool]], n_c: usize) -> Result<Vec<Vec<f64>>> {
    let dim = vectors.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; n_c];
    let mut counts = vec![0usize; n_c];
    for (v, c) in vectors.iter().zip(classes) {
        for i in (0..n_c).filter(|&i| c[i]) {
            counts[i] += 1;
            sums[i].iter_mut().zip(v).for_each(|(s, x)| *s += x);
        }
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidArgument(format!("class {i} has no members")));
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|x| *x /= c as f64);
    }
    Ok(sums)
}

/// Vector-space retrieval for the baseline: cosine NN, and M-NN after
/// subtracting the `c_plus` class mean and adding the `c_minus` one.
pub fn vector_top1_all(
    queries: &[Query],
    ids: &[usize],
    vectors: &[Vec<f64>],
    class_means: &[Vec<f64>],
) -> Result<(Vec<usize>, Vec<usize>)> {
    let res = par::try_map_range(queries.len(), |n| {
        let q = &queries[n];
        let pos = ids
            .iter()
            .position(|&id| id == q.ref_id)
            .ok_or_else(|| Error::InvalidArgument(format!("reference {} not in corpus", q.ref_id)))?;
        let top = |v: &[f64]| {
            let scores: Vec<f64> = vectors.iter().map(|w| cosine_unchecked(v, w)).collect();
            rank_by_score(ids, &scores, Some(pos))[0]
        };
        let modified: Vec<f64> = vectors[pos]
            .iter()
            .zip(&class_means[q.c_plus])
            .zip(&class_means[q.c_minus])
            .map(|((v, p), m)| v - p + m)
            .collect();
        Ok::<_, Error>((top(&vectors[pos]), top(&modified)))
    })?;
    Ok(res.into_iter().unzip())
}
