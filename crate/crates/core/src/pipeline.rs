//! Experiment steps over a run directory.
//!
//! Layout of `runs/<name>/`:
//!
//! ```text
//! manifest.txt     effective config, git description, completed steps
//! dataset.cdir     synthetic dataset                          (gen)
//! model.cdmw       critic checkpoint with its environments    (train)
//! bxent.cdmw       baseline checkpoint with thresholds        (train --method bxent)
//! templates.cdts   Ebar, T and thresholds                     (fit)
//! reps.cdrep       representations of every sample           (dump-reps)
//! compressed.cdck  rank-k factors of the test split           (compress)
//! reports/*.csv    logs and evaluation reports
//! ```
//!
//! Each step checks that the artifacts it reads exist and names the step
//! that produces a missing one. Every random choice derives from the
//! configured seed, so identical configs give identical artifacts (the
//! wall-clock columns of logs and manifest aside).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::baseline::{self, bxent_classify, sem_representations, Targets, Variant};
use crate::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::compose::{compress, decompress, representation_rank, storage_ratio, write_compressed};
use crate::config::{EnvSource, Method, RunConfig};
use crate::envmask::{batch_masks, sample_environments, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::fisher::{self, evaluate_fisher, finite_difference_check, LagrangeState, TrainConfig};
use crate::metrics::{example_prf, PrfReport};
use crate::net::{Architecture, HeadKind, Layer, Model};
use crate::numerics::{Matrix, Rng};
use crate::probe::{self, chance_f1, cross_validate, fold_indices, FoldResult, ProbeConfig};
use crate::repr::{
    class_cosines, classify, fit_templates, fit_thresholds, instance_reps, read_reps, read_templates,
    split_for_templates, write_reps, write_templates, RepRecord, TemplateSet,
};
use crate::retrieval::{
    self, class_mean_vectors, make_queries, modified_query, queries_from_csv, queries_to_csv,
    random_control_prec, top1_all, vector_top1_all, Labels, Query, RetrievalReport,
};
use crate::synthdata::{generate, read_dataset, write_dataset, Dataset, Split};

pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.txt")
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.cdir")
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("model.cdmw")
    }

    pub fn bxent(&self) -> PathBuf {
        self.root.join("bxent.cdmw")
    }

    pub fn templates(&self) -> PathBuf {
        self.root.join("templates.cdts")
    }

    pub fn reps(&self) -> PathBuf {
        self.root.join("reps.cdrep")
    }

    pub fn compressed(&self) -> PathBuf {
        self.root.join("compressed.cdck")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.reports().join(name)
    }

    fn require(&self, path: PathBuf, step: &str) -> Result<PathBuf> {
        if path.is_file() {
            Ok(path)
        } else {
            Err(Error::Dependency {
                artifact: path,
                step: step.into(),
            })
        }
    }

    fn write_report(&self, name: &str, text: &str) -> Result<()> {
        let dir = self.reports();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = self.report(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn ensure_root(&self) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))
    }
}

/// `git describe` of the working tree, or `unknown`.
pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

const STEPS_MARKER: &str = "[steps]";

/// Rewrites the manifest with the effective config and appends `step` to
/// the recorded step history.
pub fn record_step(dir: &RunDir, cfg: &RunConfig, step: &str, wall_seconds: f64) -> Result<()> {
    dir.ensure_root()?;
    let path = dir.manifest();
    let mut history: Vec<String> = match fs::read_to_string(&path) {
        Ok(old) => old
            .split_once(STEPS_MARKER)
            .map(|(_, rest)| rest.lines().filter(|l| !l.trim().is_empty()).map(String::from).collect())
            .unwrap_or_default(),
        Err(_) => Vec::new(),
    };
    history.push(format!("{step} wall_seconds = {wall_seconds:.3}"));
    let text = format!(
        "# codir run manifest\ngit = {}\nseed = {}\n\n[config]\n{}\n{STEPS_MARKER}\n{}\n",
        git_describe(),
        cfg.seed,
        cfg.to_text(),
        history.join("\n")
    );
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn root_rng(cfg: &RunConfig) -> Rng {
    Rng::new(cfg.seed)
}

fn derived_seed(cfg: &RunConfig, label: &str) -> u64 {
    root_rng(cfg).child(label).next_u64()
}

pub fn architecture(cfg: &RunConfig) -> Architecture {
    Architecture::standard(cfg.height, cfg.width, cfg.channels)
}

pub fn load_dataset(dir: &RunDir, cfg: &RunConfig) -> Result<Dataset> {
    let ds = read_dataset(&dir.require(dir.dataset(), "gen")?)?;
    let spec = cfg.dataset_spec();
    if (ds.n_c, ds.n_l, ds.height, ds.width, ds.channels) != (spec.n_c, spec.n_l, spec.height, spec.width, spec.channels) {
        return Err(Error::Config(format!(
            "dataset in {} does not match the config dimensions",
            dir.root().display()
        )));
    }
    Ok(ds)
}

/// Dataset views used for training: context masks without the held-out
/// label, and the environment label pool (class labels or the reduced
/// context labels).
pub struct TrainingViews {
    pub reduced: Dataset,
    pub env_pool: Dataset,
}

pub fn training_views(cfg: &RunConfig, ds: &Dataset) -> Result<TrainingViews> {
    let reduced = match cfg.holdout_label() {
        Some(h) => ds.holdout_context_label(h)?.0,
        None => ds.clone(),
    };
    let env_pool = match cfg.env_source {
        EnvSource::Context => reduced.clone(),
        EnvSource::Class => reduced.with_context_labels(ds.n_c, ds.class_labels_flat().to_vec())?,
    };
    Ok(TrainingViews { reduced, env_pool })
}

pub fn gen(cfg: &RunConfig, dir: &RunDir) -> Result<Dataset> {
    let t = Instant::now();
    dir.ensure_root()?;
    let ds = generate(&cfg.dataset_spec())?;
    write_dataset(&ds, &dir.dataset())?;
    record_step(dir, cfg, "gen", t.elapsed().as_secs_f64())?;
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub method: Method,
    pub final_loss: f64,
    /// Mean IPM numerator on the validation split before and after training
    /// (critic only).
    pub val_numerator: Option<(f64, f64)>,
    /// Exponential moving average of `|constraint|` at each epoch end.
    pub constraint_ema: Vec<f64>,
}

fn train_config(cfg: &RunConfig, label: &str) -> TrainConfig {
    TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch,
        lr: cfg.lr,
        rho: cfg.rho,
        seed: derived_seed(cfg, label),
    }
}

pub fn environments(cfg: &RunConfig, pool: usize) -> Result<EnvironmentSpec> {
    sample_environments(pool, cfg.n_e, cfg.r, &mut root_rng(cfg).child("environments"))
}

pub fn train(cfg: &RunConfig, dir: &RunDir, method: Method) -> Result<TrainSummary> {
    let t = Instant::now();
    let ds = load_dataset(dir, cfg)?;
    let views = training_views(cfg, &ds)?;
    let train_ids = ds.indices(Split::Train);
    let summary = match method {
        Method::Codir => {
            let spec = environments(cfg, views.env_pool.n_l)?;
            let head = HeadKind::Critic {
                n_c: cfg.n_c,
                n_e: cfg.n_e,
            };
            let mut model = Model::<f32>::new(architecture(cfg), head, &mut root_rng(cfg).child("critic-init"))?;
            let val = ds.indices(Split::Val);
            let probe_lag = LagrangeState::new(cfg.n_c, cfg.n_e, cfg.rho);
            let before = evaluate_fisher(&model, &views.env_pool, &val, &spec, &probe_lag)?.mean_numerator();
            let (log, _) = fisher::train(&mut model, &views.env_pool, &train_ids, &spec, &train_config(cfg, "critic-train"))?;
            let after = evaluate_fisher(&model, &views.env_pool, &val, &spec, &probe_lag)?.mean_numerator();
            dir.write_report("train_log.csv", &log.to_csv())?;
            dir.write_report(
                "train_val.csv",
                &format!("stage,mean_ipm_numerator\ninitial,{before:.9e}\nfinal,{after:.9e}\n"),
            )?;
            write_checkpoint(
                &Checkpoint {
                    model,
                    env_source: cfg.env_source,
                    holdout: cfg.holdout_label(),
                    environments: Some(spec),
                    seed: cfg.seed,
                    thresholds: Vec::new(),
                },
                &dir.model(),
            )?;
            TrainSummary {
                method,
                final_loss: log.epochs.last().map_or(f64::NAN, |e| e.loss),
                val_numerator: Some((before, after)),
                constraint_ema: log.constraint_ema(0.9),
            }
        }
        Method::Bxent => {
            let targets = Targets::from_dataset(&views.reduced, Variant::Joint);
            let head = HeadKind::Bxent {
                outputs: targets.outputs,
            };
            let mut model = Model::<f32>::new(architecture(cfg), head, &mut root_rng(cfg).child("bxent-init"))?;
            let log = baseline::bxent_train(&mut model, &ds, &targets, &train_ids, &train_config(cfg, "bxent-train"))?;
            let val = ds.indices(Split::Val);
            let sem = sem_representations(&model, &ds, &val)?;
            let rows: Vec<&[bool]> = val.iter().map(|&k| targets.row(k)).collect();
            let thresholds = baseline::fit_bxent_thresholds(&sem, &rows)?;
            dir.write_report("bxent_log.csv", &baseline::bxent_log_csv(&log))?;
            write_checkpoint(
                &Checkpoint {
                    model,
                    env_source: cfg.env_source,
                    holdout: cfg.holdout_label(),
                    environments: None,
                    seed: cfg.seed,
                    thresholds,
                },
                &dir.bxent(),
            )?;
            TrainSummary {
                method,
                final_loss: log.last().map_or(f64::NAN, |e| e.loss),
                val_numerator: None,
                constraint_ema: Vec::new(),
            }
        }
    };
    let step = match method {
        Method::Codir => "train",
        Method::Bxent => "train --method bxent",
    };
    record_step(dir, cfg, step, t.elapsed().as_secs_f64())?;
    Ok(summary)
}

fn load_critic(dir: &RunDir) -> Result<(Checkpoint, EnvironmentSpec)> {
    let ck = read_checkpoint(&dir.require(dir.model(), "train")?)?;
    let spec = ck
        .environments
        .clone()
        .ok_or_else(|| Error::InvalidArgument("critic checkpoint has no environments".into()))?;
    Ok((ck, spec))
}

fn load_templates(dir: &RunDir) -> Result<TemplateSet> {
    read_templates(&dir.require(dir.templates(), "fit")?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitSummary {
    pub template_samples: usize,
    pub threshold_samples: usize,
    pub thresholds: Vec<f64>,
    pub f1: Vec<f64>,
    pub absent_classes: Vec<usize>,
}

pub fn fit(cfg: &RunConfig, dir: &RunDir) -> Result<FitSummary> {
    let t = Instant::now();
    let ds = load_dataset(dir, cfg)?;
    let (ck, spec) = load_critic(dir)?;
    let views = training_views(cfg, &ds)?;
    if views.env_pool.n_l != spec.n_l {
        return Err(Error::Config(format!(
            "checkpoint environments use {} labels but the config gives {}",
            spec.n_l, views.env_pool.n_l
        )));
    }
    let (tmpl_ids, thr_ids) = split_for_templates(&ds.indices(Split::Train), cfg.seed);
    let mut ts = fit_templates(&ck.model, &views.env_pool, &tmpl_ids, &spec)?;
    let fitres = fit_thresholds(&ck.model, &views.env_pool, &thr_ids, &mut ts)?;
    write_templates(&ts, &dir.templates())?;
    let mut csv = String::from("class,threshold,f1\n");
    for (i, (t, f)) in fitres.thresholds.iter().zip(&fitres.f1).enumerate() {
        csv.push_str(&format!("{i},{t:.9e},{f:.6}\n"));
    }
    dir.write_report("thresholds.csv", &csv)?;
    record_step(dir, cfg, "fit", t.elapsed().as_secs_f64())?;
    Ok(FitSummary {
        template_samples: tmpl_ids.len(),
        threshold_samples: thr_ids.len(),
        thresholds: fitres.thresholds,
        f1: fitres.f1,
        absent_classes: fitres.absent_classes,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub codir: PrfReport,
    pub compressed: PrfReport,
    pub all_labels: PrfReport,
    pub bxent: Option<PrfReport>,
    pub k: usize,
}

pub fn eval(cfg: &RunConfig, dir: &RunDir) -> Result<EvalSummary> {
    let t = Instant::now();
    let ds = load_dataset(dir, cfg)?;
    let ts = load_templates(dir)?;
    let (ck, _) = load_critic(dir)?;
    let test = ds.indices(Split::Test);
    let truth: Vec<&[bool]> = test.iter().map(|&k| ds.classes(k)).collect();
    let reps = instance_reps(&ck.model, &ds, &test, &ts.ebar)?;
    let pred: Vec<Vec<bool>> = reps.iter().map(|d| classify(d, &ts)).collect::<Result<_>>()?;
    let codir = example_prf(&pred, &truth)?;
    let pred_k: Vec<Vec<bool>> = reps
        .iter()
        .map(|d| classify(&decompress(&compress(d, cfg.k)?), &ts))
        .collect::<Result<_>>()?;
    let compressed = example_prf(&pred_k, &truth)?;
    let all_labels = example_prf(&vec![vec![true; ds.n_c]; test.len()], &truth)?;
    let bxent = if dir.bxent().is_file() {
        let bk = read_checkpoint(&dir.bxent())?;
        let sem = sem_representations(&bk.model, &ds, &test)?;
        let pred: Vec<Vec<bool>> = sem.iter().map(|s| bxent_classify(s, &bk.thresholds, ds.n_c)).collect();
        Some(example_prf(&pred, &truth)?)
    } else {
        None
    };
    let mut csv = String::from("method,precision,recall,f1\n");
    let mut row = |name: &str, r: &PrfReport| {
        csv.push_str(&format!("{name},{:.6},{:.6},{:.6}\n", r.precision, r.recall, r.f1));
    };
    row("codir", &codir);
    row(&format!("c-codir-{}", cfg.k), &compressed);
    row("all-labels", &all_labels);
    if let Some(b) = &bxent {
        row("bxent-joint", b);
    }
    dir.write_report("eval.csv", &csv)?;
    record_step(dir, cfg, "eval", t.elapsed().as_secs_f64())?;
    Ok(EvalSummary {
        codir,
        compressed,
        all_labels,
        bxent,
        k: cfg.k,
    })
}

pub fn dump_reps(cfg: &RunConfig, dir: &RunDir) -> Result<usize> {
    let t = Instant::now();
    let ds = load_dataset(dir, cfg)?;
    let ts = load_templates(dir)?;
    let (ck, _) = load_critic(dir)?;
    let ids: Vec<usize> = (0..ds.len()).collect();
    let reps = instance_reps(&ck.model, &ds, &ids, &ts.ebar)?;
    let records: Vec<RepRecord> = ids
        .iter()
        .zip(&reps)
        .map(|(&k, d)| RepRecord::new(k, d, ds.classes(k).to_vec(), ds.context(k).to_vec()))
        .collect::<Result<_>>()?;
    write_reps(&records, &dir.reps())?;
    record_step(dir, cfg, "dump-reps", t.elapsed().as_secs_f64())?;
    Ok(records.len())
}

/// Dumped representations of the test split.
pub fn test_records(cfg: &RunConfig, dir: &RunDir) -> Result<Vec<RepRecord>> {
    let ds = load_dataset(dir, cfg)?;
    let recs = read_reps(&dir.require(dir.reps(), "dump-reps")?)?;
    Ok(recs.into_iter().filter(|r| r.id < ds.len() && ds.split(r.id) == Split::Test).collect())
}

/// Queries from `reports/queries.csv`, created on first use.
pub fn load_or_make_queries(cfg: &RunConfig, dir: &RunDir, corpus: &[RepRecord]) -> Result<Vec<Query>> {
    let path = dir.report("queries.csv");
    if path.is_file() {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        return queries_from_csv(&text);
    }
    let ids: Vec<usize> = corpus.iter().map(|r| r.id).collect();
    let classes: Vec<&[bool]> = corpus.iter().map(|r| &r.classes[..]).collect();
    let qs = make_queries(&ids, &classes, cfg.queries, cfg.seed)?;
    dir.write_report("queries.csv", &queries_to_csv(&qs))?;
    Ok(qs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalSummary {
    pub queries: usize,
    pub codir: RetrievalReport,
    pub random: RetrievalReport,
    pub sem: Option<RetrievalReport>,
}

/// Expected scores of a retriever returning a uniformly random corpus
/// sample other than the reference.
pub fn random_control(queries: &[Query], corpus: &[RepRecord]) -> Result<RetrievalReport> {
    let ids: Vec<usize> = corpus.iter().map(|r| r.id).collect();
    let classes: Vec<&[bool]> = corpus.iter().map(|r| &r.classes[..]).collect();
    let mut nn = 0.0;
    let mut mnn = 0.0;
    for q in queries {
        let rp = ids.iter().position(|&i| i == q.ref_id).ok_or_else(|| {
            Error::InvalidArgument(format!("reference {} not in corpus", q.ref_id))
        })?;
        let mut target = corpus[rp].classes.clone();
        target[q.c_plus] = false;
        target[q.c_minus] = true;
        let others: Vec<&RepRecord> = corpus.iter().filter(|r| r.id != q.ref_id).collect();
        let n = others.len() as f64;
        nn += others.iter().map(|r| crate::metrics::sample_prf(&r.classes, &corpus[rp].classes).f1).sum::<f64>() / n;
        mnn += others.iter().map(|r| crate::metrics::sample_prf(&r.classes, &target).f1).sum::<f64>() / n;
    }
    let nq = queries.len() as f64;
    Ok(RetrievalReport {
        nn_f1: nn / nq,
        mnn_f1: mnn / nq,
        mnn_prec: random_control_prec(queries, &ids, &classes),
        f1_pct: 100.0,
    })
}

fn labels_of<'a>(corpus: &'a [RepRecord], positions: &[usize]) -> Vec<Labels<'a>> {
    positions
        .iter()
        .map(|&p| Labels {
            classes: &corpus[p].classes,
            context: &corpus[p].context,
        })
        .collect()
}

pub fn retrieve(cfg: &RunConfig, dir: &RunDir) -> Result<RetrievalSummary> {
    let t = Instant::now();
    let ts = load_templates(dir)?;
    let corpus = test_records(cfg, dir)?;
    let queries = load_or_make_queries(cfg, dir, &corpus)?;
    let ids: Vec<usize> = corpus.iter().map(|r| r.id).collect();
    let reps: Vec<Matrix> = corpus.iter().map(|r| r.d.clone()).collect();
    let pos_of = |id: usize| ids.iter().position(|&i| i == id).unwrap_or(0);
    let refs: Vec<usize> = queries.iter().map(|q| pos_of(q.ref_id)).collect();

    let (nn, mnn) = top1_all(&queries, &ids, &reps, &ts)?;
    let codir = retrieval::retrieval_metrics(&queries, &labels_of(&corpus, &refs), &labels_of(&corpus, &nn), &labels_of(&corpus, &mnn))?;
    let random = random_control(&queries, &corpus)?;

    let sem = if dir.bxent().is_file() {
        let ds = load_dataset(dir, cfg)?;
        let bk = read_checkpoint(&dir.bxent())?;
        let vectors = sem_representations(&bk.model, &ds, &ids)?;
        let train = ds.indices(Split::Train);
        let train_sem = sem_representations(&bk.model, &ds, &train)?;
        let train_classes: Vec<&[bool]> = train.iter().map(|&k| ds.classes(k)).collect();
        let means = class_mean_vectors(&train_sem, &train_classes, ds.n_c)?;
        let (snn, smnn) = vector_top1_all(&queries, &ids, &vectors, &means)?;
        Some(retrieval::retrieval_metrics(
            &queries,
            &labels_of(&corpus, &refs),
            &labels_of(&corpus, &snn),
            &labels_of(&corpus, &smnn),
        )?)
    } else {
        None
    };
    let mut csv = format!("{}\n", RetrievalReport::CSV_HEADER);
    csv.push_str(&format!("{}\n", codir.csv_row("codir")));
    csv.push_str(&format!("{}\n", random.csv_row("random")));
    if let Some(s) = &sem {
        csv.push_str(&format!("{}\n", s.csv_row("bxent-sem")));
    }
    dir.write_report("retrieval.csv", &csv)?;
    record_step(dir, cfg, "retrieve", t.elapsed().as_secs_f64())?;
    Ok(RetrievalSummary {
        queries: queries.len(),
        codir,
        random,
        sem,
    })
}

/// Template cosines of one query before and after the swap.
#[derive(Clone, Debug, PartialEq)]
pub struct SwapEffect {
    pub query: Query,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

impl SwapEffect {
    pub fn minus_delta(&self) -> f64 {
        self.after[self.query.c_minus] - self.before[self.query.c_minus]
    }

    pub fn plus_delta(&self) -> f64 {
        self.after[self.query.c_plus] - self.before[self.query.c_plus]
    }
}

pub fn swap_effect(d: &Matrix, q: &Query, ts: &TemplateSet) -> Result<SwapEffect> {
    let edited = modified_query(d, q, ts)?;
    Ok(SwapEffect {
        query: *q,
        before: class_cosines(d, &ts.templates),
        after: class_cosines(&edited, &ts.templates),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComposeSummary {
    pub swaps: usize,
    /// Mean change of `cos(D[c-,:], T[c-,:])`.
    pub mean_minus_delta: f64,
    /// Mean change of `cos(D[c+,:], T[c+,:])`.
    pub mean_plus_delta: f64,
    pub demo: Option<SwapEffect>,
}

/// Applies the swap of every retrieval query (and optionally a single demo
/// swap) and reports the template-cosine changes.
pub fn compose(cfg: &RunConfig, dir: &RunDir, demo: Option<Query>) -> Result<ComposeSummary> {
    let t = Instant::now();
    let ts = load_templates(dir)?;
    let corpus = test_records(cfg, dir)?;
    let queries = load_or_make_queries(cfg, dir, &corpus)?;
    let find = |id: usize| {
        corpus
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| Error::InvalidArgument(format!("sample {id} is not in the test split")))
    };
    let effects: Vec<SwapEffect> = queries
        .iter()
        .map(|q| swap_effect(&find(q.ref_id)?.d, q, &ts))
        .collect::<Result<_>>()?;
    let n = effects.len() as f64;
    let mut csv = String::from("ref_id,c_plus,c_minus,cos_minus_before,cos_minus_after,cos_plus_before,cos_plus_after\n");
    for e in &effects {
        let q = e.query;
        csv.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6}\n",
            q.ref_id, q.c_plus, q.c_minus, e.before[q.c_minus], e.after[q.c_minus], e.before[q.c_plus], e.after[q.c_plus]
        ));
    }
    dir.write_report("compose.csv", &csv)?;
    let demo = match demo {
        Some(q) => {
            let e = swap_effect(&find(q.ref_id)?.d, &q, &ts)?;
            let mut csv = String::from("class,cos_before,cos_after\n");
            for (i, (b, a)) in e.before.iter().zip(&e.after).enumerate() {
                csv.push_str(&format!("{i},{b:.6},{a:.6}\n"));
            }
            dir.write_report("compose_demo.csv", &csv)?;
            Some(e)
        }
        None => None,
    };
    record_step(dir, cfg, "compose", t.elapsed().as_secs_f64())?;
    Ok(ComposeSummary {
        swaps: effects.len(),
        mean_minus_delta: effects.iter().map(SwapEffect::minus_delta).sum::<f64>() / n,
        mean_plus_delta: effects.iter().map(SwapEffect::plus_delta).sum::<f64>() / n,
        demo,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressSummary {
    pub k: usize,
    pub storage_ratio: f64,
    pub storage_count: usize,
    /// Mean `|D - D_k|_F / |D|_F` over the test split.
    pub mean_rel_error: f64,
    pub f1: f64,
    pub f1_uncompressed: f64,
}

pub fn compress_step(cfg: &RunConfig, dir: &RunDir, k: usize) -> Result<CompressSummary> {
    let t = Instant::now();
    let ts = load_templates(dir)?;
    let corpus = test_records(cfg, dir)?;
    let packed: Vec<(usize, crate::compose::CompressedRep)> = corpus
        .iter()
        .map(|r| Ok((r.id, compress(&r.d, k)?)))
        .collect::<Result<_>>()?;
    write_compressed(&packed, &dir.compressed())?;
    let truth: Vec<&[bool]> = corpus.iter().map(|r| &r.classes[..]).collect();
    let mut rel = 0.0;
    let mut pred_k = Vec::with_capacity(corpus.len());
    let mut pred = Vec::with_capacity(corpus.len());
    for (r, (_, c)) in corpus.iter().zip(&packed) {
        let dk = decompress(c);
        rel += dk.sub(&r.d).frobenius_norm() / r.d.frobenius_norm().max(f64::MIN_POSITIVE);
        pred_k.push(classify(&dk, &ts)?);
        pred.push(classify(&r.d, &ts)?);
    }
    let summary = CompressSummary {
        k,
        storage_ratio: storage_ratio(ts.n_c(), ts.n_e(), k),
        storage_count: packed.first().map_or(0, |(_, c)| c.storage_count()),
        mean_rel_error: rel / corpus.len().max(1) as f64,
        f1: example_prf(&pred_k, &truth)?.f1,
        f1_uncompressed: example_prf(&pred, &truth)?.f1,
    };
    dir.write_report(
        "compress.csv",
        &format!(
            "k,storage_ratio,storage_count,mean_rel_error,f1,f1_uncompressed\n{},{:.6},{},{:.6e},{:.6},{:.6}\n",
            summary.k, summary.storage_ratio, summary.storage_count, summary.mean_rel_error, summary.f1, summary.f1_uncompressed
        ),
    )?;
    record_step(dir, cfg, "compress", t.elapsed().as_secs_f64())?;
    Ok(summary)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RankSummary {
    pub samples: usize,
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
}

pub fn rank(cfg: &RunConfig, dir: &RunDir, rows: usize, cols: usize) -> Result<RankSummary> {
    let t = Instant::now();
    let corpus = test_records(cfg, dir)?;
    let n = cfg.rank_samples.min(corpus.len());
    let reps: Vec<Matrix> = corpus[..n].iter().map(|r| r.d.clone()).collect();
    let r = representation_rank(&reps, rows, cols)?;
    dir.write_report(
        "rank.csv",
        &format!("samples,rows,cols,rank,rows_plus_cols\n{n},{rows},{cols},{r},{}\n", rows + cols),
    )?;
    record_step(dir, cfg, "rank", t.elapsed().as_secs_f64())?;
    Ok(RankSummary {
        samples: n,
        rows,
        cols,
        rank: r,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSummary {
    pub label: usize,
    pub results: Vec<(String, Vec<FoldResult>)>,
    /// For each control probe, the expected F1 of target-independent
    /// predictions at its fold rates, averaged over folds.
    pub chance: Vec<(String, f64)>,
}

impl ProbeSummary {
    pub fn chance_f1(&self, method: &str) -> Option<f64> {
        self.chance.iter().find(|(m, _)| m == method).map(|(_, c)| *c)
    }

    pub fn mean_f1(&self, method: &str) -> Option<f64> {
        self.results
            .iter()
            .find(|(m, _)| m == method)
            .map(|(_, f)| probe::mean_std(&f.iter().map(|r| r.f1).collect::<Vec<_>>()).0)
    }
}

/// Control probe: CoDiR features against randomly permuted targets.
pub const PERMUTATION: &str = "codir-permuted";
/// Control probe: standard-normal features against the true targets.
pub const NOISE: &str = "noise";
pub const NOISE_FEATURES: usize = 32;

pub fn probe_step(cfg: &RunConfig, dir: &RunDir, label: Option<usize>) -> Result<ProbeSummary> {
    let t = Instant::now();
    let label = label
        .or(cfg.holdout_label())
        .ok_or_else(|| Error::Config("no probe label given and no held-out label configured".into()))?;
    let (ck, _) = load_critic(dir)?;
    let bk = read_checkpoint(&dir.require(dir.bxent(), "train --method bxent")?)?;
    for (name, c) in [("critic", &ck), ("baseline", &bk)] {
        if c.holdout != Some(label) {
            return Err(Error::InvalidArgument(format!(
                "label leakage: context label {label} was not held out when training the {name}"
            )));
        }
    }
    let ds = load_dataset(dir, cfg)?;
    let corpus = test_records(cfg, dir)?;
    if label >= ds.n_l {
        return Err(Error::InvalidArgument(format!("context label {label} out of range")));
    }
    let y: Vec<bool> = corpus.iter().map(|r| r.context[label]).collect();
    let ids: Vec<usize> = corpus.iter().map(|r| r.id).collect();
    let flat: Vec<Vec<f64>> = corpus.iter().map(|r| r.d.data().to_vec()).collect();
    let factors: Vec<Vec<f64>> = corpus
        .iter()
        .map(|r| Ok(compress(&r.d, cfg.k)?.flatten()))
        .collect::<Result<_>>()?;
    let sem = sem_representations(&bk.model, &ds, &ids)?;
    let mut permuted = y.clone();
    permuted.shuffle(&mut root_rng(cfg).child("probe-permutation"));
    let mut noise_rng = root_rng(cfg).child("probe-noise");
    let noise: Vec<Vec<f64>> = (0..corpus.len())
        .map(|_| (0..NOISE_FEATURES).map(|_| StandardNormal.sample(&mut noise_rng)).collect())
        .collect();

    let folds = fold_indices(corpus.len(), cfg.probe_folds, cfg.seed)?;
    let pcfg = ProbeConfig {
        l2: cfg.probe_l2,
        ..ProbeConfig::default()
    };
    let mut results = Vec::new();
    for (name, x, targets) in [
        ("codir".to_string(), &flat, &y),
        (format!("c-codir-{}", cfg.k), &factors, &y),
        ("bxent-sem".to_string(), &sem, &y),
        (PERMUTATION.to_string(), &flat, &permuted),
        (NOISE.to_string(), &noise, &y),
    ] {
        results.push((name, cross_validate(x, targets, &folds, &pcfg)?));
    }
    let chance: Vec<(String, f64)> = results
        .iter()
        .filter(|(name, _)| name == PERMUTATION || name == NOISE)
        .map(|(name, folds)| {
            let c = folds.iter().map(|f| chance_f1(f.positive_rate, f.predicted_rate)).sum::<f64>() / folds.len() as f64;
            (name.clone(), c)
        })
        .collect();
    dir.write_report("probe.csv", &probe::probe_report_csv(&results))?;
    dir.write_report(
        "probe_control.csv",
        &chance.iter().fold(String::from("method,chance_f1\n"), |acc, (m, c)| acc + &format!("{m},{c:.6}\n")),
    )?;
    record_step(dir, cfg, "probe", t.elapsed().as_secs_f64())?;
    Ok(ProbeSummary {
        label,
        results,
        chance,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckRow {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradcheckRow {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error <= self.tolerance
    }
}

pub const CONV_TOLERANCE: f64 = 1e-4;
pub const HEAD_TOLERANCE: f64 = 1e-5;
/// Step for the cross-entropy and probe checks, whose losses are not
/// quadratic.
pub const SMOOTH_FD_STEP: f64 = 1e-5;

/// Finite-difference checks of the critic loss, the cross-entropy loss and
/// the probe objective on tiny models at 64-bit.
pub fn gradcheck_suite(seed: u64, samples: usize) -> Result<Vec<GradcheckRow>> {
    let root = Rng::new(seed).child("gradcheck");
    let arch = Architecture {
        in_h: 8,
        in_w: 8,
        in_c: 1,
        widths: [4, 4, 4],
    };
    let ds = generate(&crate::synthdata::DatasetSpec {
        n_c: 2,
        n_l: 12,
        height: 8,
        width: 8,
        channels: 1,
        n_train: 6,
        n_val: 1,
        n_test: 1,
        seed,
    })?;
    let batch: Vec<usize> = (0..6).collect();
    let images = ds.gather_images(&batch);
    let spec = sample_environments(12, 3, 4, &mut root.child("envs"))?;
    let critic = Model::<f64>::new(arch, HeadKind::Critic { n_c: 2, n_e: 3 }, &mut root.child("critic"))?;
    let class_rows: Vec<&[bool]> = batch.iter().map(|&k| ds.classes(k)).collect();
    let ctx_rows: Vec<&[bool]> = batch.iter().map(|&k| ds.context(k)).collect();
    let masks = batch_masks(&class_rows, &ctx_rows, 2, &spec)?;
    let mut lag = LagrangeState::new(2, 3, 0.5);
    let mut lrng = root.child("lambda");
    lag.lambda.iter_mut().for_each(|l| *l = StandardNormal.sample(&mut lrng));

    let layers = [
        ("conv1.weight", Layer::Conv1W, CONV_TOLERANCE),
        ("conv2.weight", Layer::Conv2W, CONV_TOLERANCE),
        ("conv3.weight", Layer::Conv3W, CONV_TOLERANCE),
        ("conv3.bias", Layer::Conv3B, CONV_TOLERANCE),
        ("head.weight", Layer::HeadW, HEAD_TOLERANCE),
        ("head.bias", Layer::HeadB, HEAD_TOLERANCE),
    ];
    let mut rows = Vec::new();
    for (name, layer, tol) in layers {
        let r = fisher::loss_gradcheck(&critic, &images, &masks, &lag, layer, samples, &mut root.child(name))?;
        rows.push(GradcheckRow {
            name: format!("fisher/{name}"),
            checked: r.checked,
            skipped: r.skipped,
            max_rel_error: r.max_rel_error,
            tolerance: tol,
        });
    }

    let targets = Targets::from_dataset(&ds, Variant::Joint);
    let bx = Model::<f64>::new(arch, HeadKind::Bxent { outputs: targets.outputs }, &mut root.child("bxent"))?;
    let trows: Vec<&[bool]> = batch.iter().map(|&k| targets.row(k)).collect();
    for (name, layer, tol) in [
        ("conv2.weight", Layer::Conv2W, CONV_TOLERANCE),
        ("head.weight", Layer::HeadW, HEAD_TOLERANCE),
        ("head.bias", Layer::HeadB, HEAD_TOLERANCE),
    ] {
        let r = finite_difference_check(&bx, &images, layer, samples, SMOOTH_FD_STEP, &mut root.child(name), |out| {
            baseline::bce_with_grad(out, &trows)
        })?;
        rows.push(GradcheckRow {
            name: format!("bce/{name}"),
            checked: r.checked,
            skipped: 0,
            max_rel_error: r.max_rel_error,
            tolerance: tol,
        });
    }

    rows.push(probe_gradcheck(&mut root.child("probe"))?);
    Ok(rows)
}

fn probe_gradcheck(rng: &mut Rng) -> Result<GradcheckRow> {
    use rand::Rng as _;
    let (n, d, l2) = (40, 6, 0.1);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let y: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
    let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b = 0.3;
    let (_, g) = probe::probe_loss_grad(&x, &y, &w, b, l2);
    let mut worst = 0.0f64;
    for i in 0..=d {
        let eval = |delta: f64| {
            let mut w2 = w.clone();
            let mut b2 = b;
            if i < d {
                w2[i] += delta;
            } else {
                b2 += delta;
            }
            probe::probe_loss_grad(&x, &y, &w2, b2, l2).0
        };
        let numeric = (eval(SMOOTH_FD_STEP) - eval(-SMOOTH_FD_STEP)) / (2.0 * SMOOTH_FD_STEP);
        worst = worst.max(fisher::relative_error(g[i], numeric));
    }
    Ok(GradcheckRow {
        name: "probe/weights+bias".into(),
        checked: d + 1,
        skipped: 0,
        max_rel_error: worst,
        tolerance: HEAD_TOLERANCE,
    })
}

pub fn gradcheck(cfg: &RunConfig, dir: &RunDir) -> Result<Vec<GradcheckRow>> {
    let t = Instant::now();
    dir.ensure_root()?;
    let rows = gradcheck_suite(cfg.seed, cfg.gradcheck_samples)?;
    let mut csv = String::from("check,checked,skipped,max_rel_error,tolerance,pass\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{:.3e},{:.0e},{}\n",
            r.name,
            r.checked,
            r.skipped,
            r.max_rel_error,
            r.tolerance,
            r.passed()
        ));
    }
    dir.write_report("gradcheck.csv", &csv)?;
    record_step(dir, cfg, "gradcheck", t.elapsed().as_secs_f64())?;
    Ok(rows)
}

/// Runs every step in order: gen, both trainings, fit, eval, dump-reps,
/// retrieve, compose, compress, rank and probe.
pub fn run_all(cfg: &RunConfig, dir: &RunDir) -> Result<()> {
    gen(cfg, dir)?;
    train(cfg, dir, Method::Codir)?;
    train(cfg, dir, Method::Bxent)?;
    fit(cfg, dir)?;
    eval(cfg, dir)?;
    dump_reps(cfg, dir)?;
    retrieve(cfg, dir)?;
    compose(cfg, dir, None)?;
    compress_step(cfg, dir, cfg.k)?;
    rank(cfg, dir, cfg.rank_rows, cfg.rank_cols)?;
    if cfg.holdout_label().is_some() {
        probe_step(cfg, dir, None)?;
    }
    Ok(())
}
