//! Plain-text `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are
//! comma-separated. Overrides given as `key=value` strings are applied after
//! the file, in order, so the last one wins.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::baselines::Variant;
use crate::dataset::{DEFAULT_FOLDS, DEFAULT_MIN_COUNT};
use crate::error::{Error, Result};
use crate::metrics::{buckets_from_edges, DEFAULT_BUCKET_EDGES};
use crate::model::Hyperparams;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub ratings: Option<PathBuf>,
    pub trusts: Option<PathBuf>,
    pub cache: PathBuf,
    pub output: PathBuf,
    pub min_count: usize,
    pub folds: usize,
    pub variant: Variant,
    pub hp: Hyperparams,
    /// Ranking cutoffs; empty means `[hp.top_n]`.
    pub cutoffs: Vec<usize>,
    pub bucket_edges: Vec<usize>,
    pub sweep_alpha: Vec<f64>,
    pub sweep_beta: Vec<f64>,
    pub sweep_k: Vec<usize>,
    /// Checkpoint period in epochs; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub early_stop: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            ratings: None,
            trusts: None,
            cache: PathBuf::from("dataset.cache"),
            output: PathBuf::from("out"),
            min_count: DEFAULT_MIN_COUNT,
            folds: DEFAULT_FOLDS,
            variant: Variant::Tdae,
            hp: Hyperparams::default(),
            cutoffs: Vec::new(),
            bucket_edges: DEFAULT_BUCKET_EDGES.to_vec(),
            sweep_alpha: Vec::new(),
            sweep_beta: Vec::new(),
            sweep_k: Vec::new(),
            checkpoint_every: 10,
            early_stop: false,
        }
    }
}

pub const KEYS: [&str; 25] = [
    "ratings",
    "trusts",
    "cache",
    "output",
    "min_count",
    "folds",
    "variant",
    "k",
    "alpha",
    "beta",
    "q",
    "lambda_t",
    "lambda_c",
    "lr",
    "epochs",
    "seed",
    "top_n",
    "user_embedding",
    "cutoffs",
    "bucket_edges",
    "sweep_alpha",
    "sweep_beta",
    "sweep_k",
    "checkpoint_every",
    "early_stop",
];

fn scalar<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {value:?}")))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| scalar(key, s))
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn path_or_empty(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let opt_path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "ratings" => self.ratings = opt_path(value),
            "trusts" => self.trusts = opt_path(value),
            "cache" => self.cache = PathBuf::from(value),
            "output" => self.output = PathBuf::from(value),
            "min_count" => self.min_count = scalar(key, value)?,
            "folds" => self.folds = scalar(key, value)?,
            "variant" => self.variant = value.parse()?,
            "k" => self.hp.k = scalar(key, value)?,
            "alpha" => self.hp.alpha = scalar(key, value)?,
            "beta" => self.hp.beta = scalar(key, value)?,
            "q" => self.hp.q = scalar(key, value)?,
            "lambda_t" => self.hp.lambda_t = scalar(key, value)?,
            "lambda_c" => self.hp.lambda_c = scalar(key, value)?,
            "lr" => self.hp.lr = scalar(key, value)?,
            "epochs" => self.hp.epochs = scalar(key, value)?,
            "seed" => self.hp.seed = scalar(key, value)?,
            "top_n" => self.hp.top_n = scalar(key, value)?,
            "user_embedding" => self.hp.user_embedding = scalar(key, value)?,
            "cutoffs" => self.cutoffs = list(key, value)?,
            "bucket_edges" => self.bucket_edges = list(key, value)?,
            "sweep_alpha" => self.sweep_alpha = list(key, value)?,
            "sweep_beta" => self.sweep_beta = list(key, value)?,
            "sweep_k" => self.sweep_k = list(key, value)?,
            "checkpoint_every" => self.checkpoint_every = scalar(key, value)?,
            "early_stop" => self.early_stop = scalar(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.apply_override(line)
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    /// Applies one `key=value` assignment.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("expected key=value, got {assignment:?}")))?;
        self.set(key.trim(), value)
    }

    /// Defaults, then the optional file, then each override in order.
    /// The result is validated.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_text(&text).map_err(|e| match e {
                Error::InvalidConfig(msg) => Error::InvalidConfig(format!("{}: {msg}", path.display())),
                other => other,
            })?;
        }
        for o in overrides {
            cfg.apply_override(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.min_count == 0 {
            return bad("min_count must be at least 1".into());
        }
        if !(2..=255).contains(&self.folds) {
            return bad(format!("folds must be in 2..=255, got {}", self.folds));
        }
        if self.cutoffs.contains(&0) {
            return bad("cutoffs must be at least 1".into());
        }
        if buckets_from_edges(&self.bucket_edges).is_none() {
            return bad("bucket_edges must be nonempty and strictly increasing".into());
        }
        for &a in &self.sweep_alpha {
            self.check_point(|hp| hp.alpha = a)?;
        }
        for &b in &self.sweep_beta {
            self.check_point(|hp| hp.beta = b)?;
        }
        for &k in &self.sweep_k {
            self.check_point(|hp| hp.k = k)?;
        }
        Ok(())
    }

    fn check_point(&self, edit: impl FnOnce(&mut Hyperparams)) -> Result<()> {
        let mut hp = self.hp.clone();
        edit(&mut hp);
        hp.validate()
            .map_err(|e| Error::InvalidConfig(format!("sweep grid: {e}")))
    }

    /// Effective cutoffs.
    pub fn cutoffs(&self) -> Vec<usize> {
        if self.cutoffs.is_empty() {
            vec![self.hp.top_n]
        } else {
            self.cutoffs.clone()
        }
    }

    /// Every key with its resolved value, in [`KEYS`] order.
    pub fn resolved(&self) -> Vec<(&'static str, String)> {
        let hp = &self.hp;
        let values = [
            path_or_empty(&self.ratings),
            path_or_empty(&self.trusts),
            self.cache.display().to_string(),
            self.output.display().to_string(),
            self.min_count.to_string(),
            self.folds.to_string(),
            self.variant.to_string(),
            hp.k.to_string(),
            hp.alpha.to_string(),
            hp.beta.to_string(),
            hp.q.to_string(),
            hp.lambda_t.to_string(),
            hp.lambda_c.to_string(),
            hp.lr.to_string(),
            hp.epochs.to_string(),
            hp.seed.to_string(),
            hp.top_n.to_string(),
            hp.user_embedding.to_string(),
            join(&self.cutoffs()),
            join(&self.bucket_edges),
            join(&self.sweep_alpha),
            join(&self.sweep_beta),
            join(&self.sweep_k),
            self.checkpoint_every.to_string(),
            self.early_stop.to_string(),
        ];
        KEYS.into_iter().zip(values).collect()
    }

    /// The resolved config as parseable `key=value` text.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.resolved() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// CSV header block: resolved config plus the dataset hash, each line
    /// prefixed with `# `.
    pub fn header(&self, dataset_hash: &str) -> String {
        let mut out = String::new();
        for (k, v) in self.resolved() {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(out, "# dataset_hash={dataset_hash}");
        out
    }
}
