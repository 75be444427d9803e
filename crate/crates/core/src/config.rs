//! Run configuration: a line-oriented `key = value` text format.
//!
//! `#` starts a comment; blank lines are ignored; absent keys take their
//! defaults; unknown keys are rejected (all of them are listed in one
//! error). [`RunConfig::to_text`] writes the effective configuration back in
//! the same format.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::synthdata::{DatasetSpec, Scene};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Codir,
    Bxent,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Codir => "codir",
            Method::Bxent => "bxent",
        }
    }
}

/// Which labels environments are drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvSource {
    /// The class labels themselves (`n_l := n_c`).
    Class,
    /// The context labels.
    Context,
}

impl EnvSource {
    pub fn name(self) -> &'static str {
        match self {
            EnvSource::Class => "class",
            EnvSource::Context => "context",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            EnvSource::Class => 0,
            EnvSource::Context => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(EnvSource::Class),
            1 => Some(EnvSource::Context),
            _ => None,
        }
    }
}

/// Context label withheld from every training signal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Holdout {
    None,
    /// The blur scene label (its index depends on `n_c`).
    Blur,
    Index(usize),
}

impl Holdout {
    pub fn resolve(self, n_c: usize) -> Option<usize> {
        match self {
            Holdout::None => None,
            Holdout::Blur => Some(Scene::Blur.label(n_c)),
            Holdout::Index(k) => Some(k),
        }
    }

    fn text(self) -> String {
        match self {
            Holdout::None => "none".into(),
            Holdout::Blur => "blur".into(),
            Holdout::Index(k) => k.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub n_c: usize,
    pub n_l: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_e: usize,
    /// Maximum labels per environment.
    pub r: usize,
    pub method: Method,
    pub env_source: EnvSource,
    pub lr: f64,
    pub rho: f64,
    pub batch: usize,
    pub epochs: usize,
    pub holdout: Holdout,
    /// Retrieval queries drawn from the test split.
    pub queries: usize,
    /// Rank kept by compression.
    pub k: usize,
    pub rank_rows: usize,
    pub rank_cols: usize,
    pub rank_samples: usize,
    pub probe_folds: usize,
    pub probe_l2: f64,
    pub gradcheck_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let d = DatasetSpec::default();
        RunConfig {
            seed: 0,
            n_c: d.n_c,
            n_l: d.n_l,
            height: d.height,
            width: d.width,
            channels: d.channels,
            n_train: d.n_train,
            n_val: d.n_val,
            n_test: d.n_test,
            n_e: 48,
            r: 8,
            method: Method::Codir,
            env_source: EnvSource::Context,
            lr: crate::net::DEFAULT_LR,
            rho: crate::fisher::DEFAULT_RHO,
            batch: 64,
            epochs: 20,
            holdout: Holdout::Blur,
            queries: 200,
            k: 5,
            rank_rows: 3,
            rank_cols: 48,
            rank_samples: 1000,
            probe_folds: 5,
            probe_l2: 1e-2,
            gradcheck_samples: 200,
        }
    }
}

const KEYS: &[&str] = &[
    "seed",
    "n_c",
    "n_l",
    "height",
    "width",
    "channels",
    "n_train",
    "n_val",
    "n_test",
    "n_e",
    "R",
    "method",
    "env_source",
    "lr",
    "rho",
    "batch",
    "epochs",
    "holdout_label",
    "queries",
    "k",
    "rank_rows",
    "rank_cols",
    "rank_samples",
    "probe_folds",
    "probe_l2",
    "gradcheck_samples",
];

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("line {line}: invalid value '{v}' for {key}")))
}

impl RunConfig {
    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            n_c: self.n_c,
            n_l: self.n_l,
            height: self.height,
            width: self.width,
            channels: self.channels,
            n_train: self.n_train,
            n_val: self.n_val,
            n_test: self.n_test,
            seed: self.seed,
        }
    }

    pub fn holdout_label(&self) -> Option<usize> {
        self.holdout.resolve(self.n_c)
    }

    /// Size of the label pool environments are drawn from.
    pub fn env_pool(&self) -> usize {
        match self.env_source {
            EnvSource::Class => self.n_c,
            EnvSource::Context => self.n_l - usize::from(self.holdout_label().is_some_and(|h| h < self.n_l)),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut unknown = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected 'key = value'")))?;
            let (key, v) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                unknown.push(key.to_string());
                continue;
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {line}: duplicate key {key}")));
            }
            match key {
                "seed" => cfg.seed = parse_num(line, key, v)?,
                "n_c" => cfg.n_c = parse_num(line, key, v)?,
                "n_l" => cfg.n_l = parse_num(line, key, v)?,
                "height" => cfg.height = parse_num(line, key, v)?,
                "width" => cfg.width = parse_num(line, key, v)?,
                "channels" => cfg.channels = parse_num(line, key, v)?,
                "n_train" => cfg.n_train = parse_num(line, key, v)?,
                "n_val" => cfg.n_val = parse_num(line, key, v)?,
                "n_test" => cfg.n_test = parse_num(line, key, v)?,
                "n_e" => cfg.n_e = parse_num(line, key, v)?,
                "R" => cfg.r = parse_num(line, key, v)?,
                "method" => {
                    cfg.method = match v {
                        "codir" => Method::Codir,
                        "bxent" => Method::Bxent,
                        _ => return Err(Error::Config(format!("line {line}: method must be codir or bxent"))),
                    }
                }
                "env_source" => {
                    cfg.env_source = match v {
                        "class" => EnvSource::Class,
                        "context" => EnvSource::Context,
                        _ => {
                            return Err(Error::Config(format!(
                                "line {line}: env_source must be class or context"
                            )))
                        }
                    }
                }
                "lr" => cfg.lr = parse_num(line, key, v)?,
                "rho" => cfg.rho = parse_num(line, key, v)?,
                "batch" => cfg.batch = parse_num(line, key, v)?,
                "epochs" => cfg.epochs = parse_num(line, key, v)?,
                "holdout_label" => {
                    cfg.holdout = match v {
                        "none" => Holdout::None,
                        "blur" => Holdout::Blur,
                        _ => Holdout::Index(parse_num(line, key, v)?),
                    }
                }
                "queries" => cfg.queries = parse_num(line, key, v)?,
                "k" => cfg.k = parse_num(line, key, v)?,
                "rank_rows" => cfg.rank_rows = parse_num(line, key, v)?,
                "rank_cols" => cfg.rank_cols = parse_num(line, key, v)?,
                "rank_samples" => cfg.rank_samples = parse_num(line, key, v)?,
                "probe_folds" => cfg.probe_folds = parse_num(line, key, v)?,
                "probe_l2" => cfg.probe_l2 = parse_num(line, key, v)?,
                "gradcheck_samples" => cfg.gradcheck_samples = parse_num(line, key, v)?,
                _ => unreachable!("key list and match arms agree"),
            }
        }
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown config keys: {}", unknown.join(", "))));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_c", self.n_c),
            ("n_l", self.n_l),
            ("n_train", self.n_train),
            ("n_val", self.n_val),
            ("n_test", self.n_test),
            ("n_e", self.n_e),
            ("R", self.r),
            ("batch", self.batch),
            ("epochs", self.epochs),
            ("queries", self.queries),
            ("k", self.k),
            ("rank_rows", self.rank_rows),
            ("rank_cols", self.rank_cols),
            ("rank_samples", self.rank_samples),
            ("gradcheck_samples", self.gradcheck_samples),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        self.dataset_spec()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) || !(self.probe_l2 >= 0.0 && self.probe_l2.is_finite()) {
            return Err(Error::Config("rho and probe_l2 must be nonnegative".into()));
        }
        if let Some(h) = self.holdout_label() {
            if h >= self.n_l {
                return Err(Error::Config(format!("holdout_label {h} outside 0..{}", self.n_l)));
            }
        }
        if self.r > self.env_pool() {
            return Err(Error::Config(format!(
                "R = {} exceeds the environment label pool of {}",
                self.r,
                self.env_pool()
            )));
        }
        if self.n_c > self.n_e {
            return Err(Error::Config("composition needs n_c <= n_e".into()));
        }
        if self.k > self.n_c || self.rank_rows > self.n_c || self.rank_cols > self.n_e {
            return Err(Error::Config("k, rank_rows or rank_cols exceed the representation shape".into()));
        }
        if self.probe_folds < 2 {
            return Err(Error::Config("probe_folds must be at least 2".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("seed", self.seed.to_string());
        kv("n_c", self.n_c.to_string());
        kv("n_l", self.n_l.to_string());
        kv("height", self.height.to_string());
        kv("width", self.width.to_string());
        kv("channels", self.channels.to_string());
        kv("n_train", self.n_train.to_string());
        kv("n_val", self.n_val.to_string());
        kv("n_test", self.n_test.to_string());
        kv("n_e", self.n_e.to_string());
        kv("R", self.r.to_string());
        kv("method", self.method.name().into());
        kv("env_source", self.env_source.name().into());
        kv("lr", format!("{:?}", self.lr));
        kv("rho", format!("{:?}", self.rho));
        kv("batch", self.batch.to_string());
        kv("epochs", self.epochs.to_string());
        kv("holdout_label", self.holdout.text());
        kv("queries", self.queries.to_string());
        kv("k", self.k.to_string());
        kv("rank_rows", self.rank_rows.to_string());
        kv("rank_cols", self.rank_cols.to_string());
        kv("rank_samples", self.rank_samples.to_string());
        kv("probe_folds", self.probe_folds.to_string());
        kv("probe_l2", format!("{:?}", self.probe_l2));
        kv("gradcheck_samples", self.gradcheck_samples.to_string());
        s
    }
}
