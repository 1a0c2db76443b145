//! Experiment pipeline: preprocessing, cross-validated runs, sweeps and the
//! gradient-check suite. Every CSV written here starts with the resolved
//! config and the dataset hash as `# ` comment lines.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::baselines::{ablation_config, pop_fit, TdaeScorer, Variant};
use crate::config::ExperimentConfig;
use crate::dataset::{
    binarize_and_filter, content_hash, load_raw, materialize_split, read_cache, split_folds, write_cache,
    Dataset, DatasetStats, FoldSplit,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, mean_ci95, MetricsReport, Scorer};
use crate::model::{Hyperparams, ModelParams};
use crate::objective::{check_gradients, random_instance, GradCheck};
use crate::rng::{self, Purpose};
use crate::trainer::{train_from, EarlyStop, TrainLog, TrainOptions};

pub const METRICS_HEADER: &str = "metric,cutoff,bucket,mean,ci95";
pub const SWEEP_HEADER: &str = "param,value,metric,cutoff,mean,ci95,status";

/// Reads and filters the raw files, writes the cache and returns the stats
/// with the cache's content hash.
pub fn cmd_preprocess(cfg: &ExperimentConfig) -> Result<(DatasetStats, String)> {
    let missing = |what: &str| Error::InvalidConfig(format!("{what} path is not set"));
    let ratings = cfg.ratings.as_ref().ok_or_else(|| missing("ratings"))?;
    let trusts = cfg.trusts.as_ref().ok_or_else(|| missing("trusts"))?;
    let (raw, raw_trusts) = load_raw(ratings, trusts)?;
    let ds = binarize_and_filter(&raw, &raw_trusts, cfg.min_count)?;
    if let Some(dir) = cfg.cache.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let bytes = write_cache(&ds, &cfg.cache)?;
    Ok((ds.stats(), content_hash(&bytes)))
}

pub fn format_stats(s: &DatasetStats) -> String {
    format!(
        "{:<16}{:>12}\n{:<16}{:>12}\n{:<16}{:>12}\n{:<16}{:>12}\n{:<16}{:>12.6}\n{:<16}{:>12.6}\n",
        "users", s.users,
        "items", s.items,
        "ratings", s.ratings,
        "trusts", s.trusts,
        "rating density", s.rating_density,
        "trust density", s.trust_density,
    )
}

/// One aggregate output row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub metric: &'static str,
    pub cutoff: usize,
    pub bucket: String,
    pub mean: f64,
    pub ci95: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub fold: usize,
    /// One report per cutoff.
    pub reports: Vec<MetricsReport>,
    pub log: Option<TrainLog>,
    pub params: Option<ModelParams>,
}

impl FoldOutcome {
    pub fn map_at(&self, cutoff: usize) -> Option<f64> {
        self.reports.iter().find(|r| r.cutoff == cutoff).map(|r| r.map)
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub folds: Vec<FoldOutcome>,
    pub rows: Vec<MetricRow>,
}

impl RunOutcome {
    /// Per-fold MAP at `cutoff`.
    pub fn fold_maps(&self, cutoff: usize) -> Vec<f64> {
        self.folds.iter().filter_map(|f| f.map_at(cutoff)).collect()
    }
}

/// Seed used for training fold `fold`; the same for every variant.
pub fn fold_seed(master: u64, fold: usize) -> u64 {
    rng::derive_seed(master, Purpose::Fold, &[fold as u64])
}

/// Where a run writes per-fold artifacts.
#[derive(Clone, Debug, Default)]
pub struct Artifacts {
    pub dir: Option<PathBuf>,
    pub header: String,
    pub checkpoint_every: usize,
}

/// Trains (unless Pop) and evaluates every fold of `split`.
pub fn run_folds(
    ds: &Dataset,
    split: &FoldSplit,
    cfg: &ExperimentConfig,
    variant: Variant,
    hp: &Hyperparams,
    artifacts: &Artifacts,
) -> Result<RunOutcome> {
    let cutoffs = cfg.cutoffs();
    let mut folds = Vec::with_capacity(split.n_folds);
    for fold in 0..split.n_folds {
        let outcome = run_fold(ds, split, cfg, variant, hp, artifacts, fold, &cutoffs)
            .map_err(|e| Error::Fold { fold, source: Box::new(e) })?;
        folds.push(outcome);
    }
    let rows = aggregate(&folds, &cutoffs);
    Ok(RunOutcome { folds, rows })
}

#[allow(clippy::too_many_arguments)]
fn run_fold(
    ds: &Dataset,
    split: &FoldSplit,
    cfg: &ExperimentConfig,
    variant: Variant,
    hp: &Hyperparams,
    artifacts: &Artifacts,
    fold: usize,
    cutoffs: &[usize],
) -> Result<FoldOutcome> {
    let (train, test) = materialize_split(ds, split, fold)?;
    if !variant.is_trained() {
        let pop = pop_fit(&train);
        let reports = evaluate(&pop, &train, &test, cutoffs, &cfg.bucket_edges);
        return Ok(FoldOutcome { fold, reports, log: None, params: None });
    }

    let mut hp = ablation_config(hp, variant);
    hp.seed = fold_seed(hp.seed, fold);
    let opts = TrainOptions {
        early_stop: cfg.early_stop.then(EarlyStop::default),
        checkpoint: artifacts
            .dir
            .as_ref()
            .map(|d| (d.join(format!("model_fold{fold}.ckpt")), artifacts.checkpoint_every)),
    };
    let init = ModelParams::init(train.n_users(), train.n_items(), hp.k, hp.user_embedding, hp.seed);
    let (params, log) = train_from(&train, &hp, init, &opts)?;
    let scorer = TdaeScorer { params: &params, train: &train, alpha: hp.alpha };
    let reports = evaluate(&scorer as &dyn Scorer, &train, &test, cutoffs, &cfg.bucket_edges);

    if let Some(dir) = &artifacts.dir {
        let mut csv = artifacts.header.clone();
        let mut body = Vec::new();
        log.write_csv(&mut body).map_err(|e| Error::io(dir, e))?;
        csv.push_str(&String::from_utf8_lossy(&body));
        write_atomic(&dir.join(format!("train_fold{fold}.csv")), csv.as_bytes())?;
    }
    Ok(FoldOutcome { fold, reports, log: Some(log), params: Some(params) })
}

/// Cross-fold means and ci95 per (metric, cutoff, bucket). Overall rows use
/// bucket `all`; a bucket appears only if at least one fold populated it.
pub fn aggregate(folds: &[FoldOutcome], cutoffs: &[usize]) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for (c_idx, &cutoff) in cutoffs.iter().enumerate() {
        let reports: Vec<&MetricsReport> = folds.iter().map(|f| &f.reports[c_idx]).collect();
        for (metric, pick) in [("map", 0usize), ("ndcg", 1)] {
            let overall: Vec<f64> = reports.iter().map(|r| if pick == 0 { r.map } else { r.ndcg }).collect();
            let (mean, ci95) = mean_ci95(&overall);
            rows.push(MetricRow { metric, cutoff, bucket: "all".into(), mean, ci95 });

            let n_buckets = reports.first().map_or(0, |r| r.buckets.len());
            for b in 0..n_buckets {
                let values: Vec<f64> = reports
                    .iter()
                    .filter_map(|r| r.buckets[b].means)
                    .map(|(map, nd)| if pick == 0 { map } else { nd })
                    .collect();
                if values.is_empty() {
                    continue;
                }
                let (mean, ci95) = mean_ci95(&values);
                rows.push(MetricRow {
                    metric,
                    cutoff,
                    bucket: reports[0].buckets[b].bucket.label(),
                    mean,
                    ci95,
                });
            }
        }
    }
    rows
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_csv(header: &str, rows: &[MetricRow]) -> String {
    let mut out = String::from(header);
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.metric, r.cutoff, r.bucket, r.mean, fmt_opt(r.ci95));
    }
    out
}

pub fn format_metrics_table(rows: &[MetricRow]) -> String {
    let mut out = format!("{:<6}{:>7}  {:<12}{:>10}{:>10}\n", "metric", "cutoff", "bucket", "mean", "ci95");
    for r in rows {
        let ci = r.ci95.map(|c| format!("{c:.4}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(out, "{:<6}{:>7}  {:<12}{:>10.4}{:>10}", r.metric, r.cutoff, r.bucket, r.mean, ci);
    }
    out
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn load(cfg: &ExperimentConfig) -> Result<(Dataset, String, FoldSplit)> {
    cfg.validate()?;
    let (ds, bytes) = read_cache(&cfg.cache)?;
    let split = split_folds(&ds, cfg.folds, cfg.hp.seed)?;
    Ok((ds, content_hash(&bytes), split))
}

fn prepare_output(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output).map_err(|e| Error::io(&cfg.output, e))
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub outcome: RunOutcome,
    pub metrics_path: PathBuf,
    pub dataset_hash: String,
}

/// Runs every fold on the cached dataset and writes `metrics.csv`, one
/// `train_fold{f}.csv` and one `model_fold{f}.ckpt` per trained fold.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let (ds, hash, split) = load(cfg)?;
    prepare_output(cfg)?;
    let header = cfg.header(&hash);
    let artifacts = Artifacts {
        dir: Some(cfg.output.clone()),
        header: header.clone(),
        checkpoint_every: cfg.checkpoint_every,
    };
    let outcome = run_folds(&ds, &split, cfg, cfg.variant, &cfg.hp, &artifacts)?;
    let metrics_path = cfg.output.join("metrics.csv");
    write_atomic(&metrics_path, metrics_csv(&header, &outcome.rows).as_bytes())?;
    Ok(RunSummary { outcome, metrics_path, dataset_hash: hash })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub param: &'static str,
    pub value: String,
    pub result: std::result::Result<MetricRow, String>,
}

/// Grid points: each listed value of one parameter, the others at their
/// base values.
pub fn sweep_points(cfg: &ExperimentConfig) -> Vec<(&'static str, String, Hyperparams)> {
    let mut points = Vec::new();
    for &a in &cfg.sweep_alpha {
        points.push(("alpha", a.to_string(), Hyperparams { alpha: a, ..cfg.hp.clone() }));
    }
    for &b in &cfg.sweep_beta {
        points.push(("beta", b.to_string(), Hyperparams { beta: b, ..cfg.hp.clone() }));
    }
    for &k in &cfg.sweep_k {
        points.push(("k", k.to_string(), Hyperparams { k, ..cfg.hp.clone() }));
    }
    points
}

/// Runs each grid point on one shared fold split. A failing point is
/// recorded and the sweep continues.
pub fn sweep(ds: &Dataset, split: &FoldSplit, cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let points = sweep_points(cfg);
    if points.is_empty() {
        return Err(Error::InvalidConfig(
            "sweep grid is empty (set sweep_alpha, sweep_beta or sweep_k)".into(),
        ));
    }
    let mut rows = Vec::new();
    for (param, value, hp) in points {
        match run_folds(ds, split, cfg, cfg.variant, &hp, &Artifacts::default()) {
            Ok(outcome) => rows.extend(outcome.rows.into_iter().filter(|r| r.bucket == "all").map(|r| SweepRow {
                param,
                value: value.clone(),
                result: Ok(r),
            })),
            Err(e) => rows.push(SweepRow { param, value, result: Err(e.to_string()) }),
        }
    }
    Ok(rows)
}

pub fn sweep_csv(header: &str, rows: &[SweepRow]) -> String {
    let mut out = String::from(header);
    out.push_str(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        match &r.result {
            Ok(m) => {
                let _ = writeln!(out, "{},{},{},{},{},{},ok", r.param, r.value, m.metric, m.cutoff, m.mean, fmt_opt(m.ci95));
            }
            Err(msg) => {
                let clean = msg.replace([',', '\n'], ";");
                let _ = writeln!(out, "{},{},,,,,error: {clean}", r.param, r.value);
            }
        }
    }
    out
}

/// Runs the grid and writes `sweep.csv` into the output directory.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<(Vec<SweepRow>, PathBuf)> {
    if sweep_points(cfg).is_empty() {
        return Err(Error::InvalidConfig(
            "sweep grid is empty (set sweep_alpha, sweep_beta or sweep_k)".into(),
        ));
    }
    let (ds, hash, split) = load(cfg)?;
    prepare_output(cfg)?;
    let rows = sweep(&ds, &split, cfg)?;
    let path = cfg.output.join("sweep.csv");
    write_atomic(&path, sweep_csv(&cfg.header(&hash), &rows).as_bytes())?;
    Ok((rows, path))
}

/// Finite-difference suite sizes.
pub const GRADCHECK_USERS: usize = 8;
pub const GRADCHECK_ITEMS: usize = 12;
pub const GRADCHECK_K: usize = 4;

/// Checks analytic gradients on `instances` random problems built from the
/// configured hyperparameters (with k = 4 on 8 users and 12 items).
pub fn cmd_gradcheck(cfg: &ExperimentConfig, instances: usize) -> Result<Vec<GradCheck>> {
    let hp = Hyperparams { k: GRADCHECK_K, ..cfg.hp.clone() };
    hp.validate()?;
    (0..instances)
        .map(|i| {
            let seed = rng::derive_seed(hp.seed, Purpose::Instance, &[i as u64]);
            let (params, trace, targets) = random_instance(seed, GRADCHECK_USERS, GRADCHECK_ITEMS, &hp);
            check_gradients(&params, &hp, &trace, &targets, 1e-5, 1e-4, 1e-8)
        })
        .collect()
}
