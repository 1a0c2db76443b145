//! Per-user sampled SGD.
//!
//! Each epoch visits users in a shuffled order. For every user the trainer
//! draws fresh negatives, corrupts both input rows, runs the forward pass and
//! applies one SGD step on that user's objective. The weight-decay terms are
//! spread over the epoch with scale 1/n per step.
//!
//! Decay touches every entry of the large tensors, so it is applied lazily:
//! each row remembers the step it was last brought up to date, and untouched
//! rows are multiplied by `(1 − lr·λ·s)^Δ` the next time they are read. All
//! rows are flushed at the end of every epoch. This keeps an epoch at
//! O(k · (|O^R| + |O^T|)) work instead of O(n · k · (n + m)).

use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::model::{corrupt, forward, Hyperparams, ModelParams};
use crate::objective::{data_loss, sparse_gradients, LossBreakdown, UserTargets};
use crate::rng::{self, Purpose};
use crate::sparse::SparseInteractions;

#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStop {
    pub patience: usize,
    pub min_rel_improvement: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        EarlyStop {
            patience: 5,
            min_rel_improvement: 1e-5,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub early_stop: Option<EarlyStop>,
    /// Write a checkpoint every `every` epochs (and at termination) to `path`.
    pub checkpoint: Option<(PathBuf, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over users of the clean-input objective on observed plus freshly
    /// sampled coordinates. Decay terms use the end-of-epoch parameters.
    pub loss: LossBreakdown,
    pub wall_secs: f64,
    pub param_norm: f64,
    pub rating_encoder_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Completed,
    EarlyStopped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub initial_rating_encoder_norm: f64,
    pub epochs: Vec<EpochRecord>,
    pub stop: StopReason,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str =
        "epoch,rating_recon,trust_recon,correlative,weight_decay,map_decay,total,param_norm,wall_secs";

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for e in &self.epochs {
            let l = &e.loss;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{:.6}",
                e.epoch,
                l.rating_recon,
                l.trust_recon,
                l.correlative,
                l.weight_decay,
                l.map_decay,
                l.total,
                e.param_norm,
                e.wall_secs
            )?;
        }
        Ok(())
    }
}

/// Σ_u (|O^R_u| + |S^R_u| + |O^T_u| + |S^T_u|) · k with full-size negative sets.
pub fn per_user_cost(train: &SparseInteractions, hp: &Hyperparams) -> u64 {
    let (n, m) = (train.n_users(), train.n_items());
    (0..n)
        .map(|u| {
            let r = train.ratings_of(u).len();
            let t = train.trusts_of(u).len();
            (r + r.min(m - r) + t + t.min(n - t)) as u64
        })
        .sum::<u64>()
        * hp.k as u64
}

/// Trains from a fresh initialization.
pub fn train(train: &SparseInteractions, hp: &Hyperparams) -> Result<(ModelParams, TrainLog)> {
    let init = ModelParams::init(train.n_users(), train.n_items(), hp.k, hp.user_embedding, hp.seed);
    train_from(train, hp, init, &TrainOptions::default())
}

pub fn train_from(
    train: &SparseInteractions,
    hp: &Hyperparams,
    params: ModelParams,
    opts: &TrainOptions,
) -> Result<(ModelParams, TrainLog)> {
    hp.validate()?;
    let n = train.n_users();
    if n == 0 || train.nnz_ratings() == 0 {
        return Err(Error::EmptyDataset);
    }
    if params.n_users() != n || params.n_items() != train.n_items() || params.k() != hp.k {
        return Err(Error::InvalidHyperparams(
            "parameter shapes do not match the training data".into(),
        ));
    }

    let initial_rating_encoder_norm = params.rating_encoder.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut sgd = Sgd::new(params, hp, n);
    let mut epochs: Vec<EpochRecord> = Vec::with_capacity(hp.epochs);
    let mut stop = StopReason::Completed;
    let mut stalled = 0usize;
    for epoch in 0..hp.epochs {
        let started = clock::now();
        // The visiting order depends only on (seed, epoch).
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(hp.seed, Purpose::Shuffle, &[epoch as u64]));

        let mut sum = LossBreakdown::default();
        for &u in &order {
            let step = sgd.step_user(train, epoch, u)?;
            sum.add(hp, &step);
        }
        sgd.flush();

        let p = &sgd.params;
        let mean = sum.scaled(hp, 1.0 / n as f64).with_decay(
            hp,
            p.weight_decay_norm() / n as f64,
            p.map_norm() / n as f64,
        );
        if !mean.total.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, user: usize::MAX });
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: mean,
            wall_secs: clock::elapsed_secs(started),
            param_norm: p.frobenius_norm(),
            rating_encoder_norm: p.rating_encoder.data.iter().map(|v| v * v).sum::<f64>().sqrt(),
        };

        if let Some(rule) = &opts.early_stop {
            if let Some(prev) = epochs.last() {
                let gain = (prev.loss.total - mean.total) / prev.loss.total.abs().max(f64::MIN_POSITIVE);
                stalled = if gain < rule.min_rel_improvement { stalled + 1 } else { 0 };
            }
        }
        epochs.push(record);

        let early = opts
            .early_stop
            .as_ref()
            .is_some_and(|rule| stalled >= rule.patience);
        let last = early || epoch + 1 == hp.epochs;
        if let Some((path, every)) = &opts.checkpoint {
            if last || (*every > 0 && (epoch + 1) % every == 0) {
                checkpoint::write(path, &sgd.params, hp)?;
            }
        }
        if early {
            stop = StopReason::EarlyStopped;
            break;
        }
    }

    Ok((
        sgd.params,
        TrainLog {
            initial_rating_encoder_norm,
            epochs,
            stop,
        },
    ))
}

/// Per-row lazy multiplicative decay.
struct RowDecay {
    factor: f64,
    last: Vec<u64>,
}

impl RowDecay {
    fn new(rows: usize, factor: f64) -> Self {
        RowDecay {
            factor,
            last: vec![0; rows],
        }
    }

    /// Multiplier bringing `row` up to `now`; marks it current.
    fn catch_up(&mut self, row: usize, now: u64) -> f64 {
        let gap = now - self.last[row];
        self.last[row] = now;
        if gap == 0 || self.factor == 1.0 {
            1.0
        } else if gap <= i32::MAX as u64 {
            self.factor.powi(gap as i32)
        } else {
            self.factor.powf(gap as f64)
        }
    }
}

fn scale(values: &mut [f64], by: f64) {
    if by != 1.0 {
        values.iter_mut().for_each(|v| *v *= by);
    }
}

struct Sgd<'a> {
    params: ModelParams,
    hp: &'a Hyperparams,
    step: u64,
    /// 1 − lr·λ_T/n
    keep_t: f64,
    /// 1 − lr·λ_C/n
    keep_c: f64,
    rating_enc: RowDecay,
    trust_enc: RowDecay,
    rating_dec: RowDecay,
    trust_dec: RowDecay,
    embedding: RowDecay,
}

impl<'a> Sgd<'a> {
    fn new(params: ModelParams, hp: &'a Hyperparams, n: usize) -> Self {
        let s = 1.0 / n as f64;
        let keep_t = 1.0 - hp.lr * hp.lambda_t * s;
        let keep_c = 1.0 - hp.lr * hp.lambda_c * s;
        let m = params.n_items();
        Sgd {
            params,
            hp,
            step: 0,
            keep_t,
            keep_c,
            rating_enc: RowDecay::new(m, keep_t),
            trust_enc: RowDecay::new(n, keep_t),
            rating_dec: RowDecay::new(m, keep_t),
            trust_dec: RowDecay::new(n, keep_t),
            embedding: RowDecay::new(n, keep_t),
        }
    }

    fn catch_up_rating_encoder(&mut self, i: usize) {
        let f = self.rating_enc.catch_up(i, self.step);
        scale(self.params.rating_encoder.row_mut(i), f);
    }

    fn catch_up_trust_encoder(&mut self, v: usize) {
        let f = self.trust_enc.catch_up(v, self.step);
        scale(self.params.trust_encoder.row_mut(v), f);
    }

    fn catch_up_rating_decoder(&mut self, i: usize) {
        let f = self.rating_dec.catch_up(i, self.step);
        scale(self.params.rating_decoder.row_mut(i), f);
        self.params.rating_decoder_bias[i] *= f;
    }

    fn catch_up_trust_decoder(&mut self, v: usize) {
        let f = self.trust_dec.catch_up(v, self.step);
        scale(self.params.trust_decoder.row_mut(v), f);
        self.params.trust_decoder_bias[v] *= f;
    }

    fn catch_up_embedding(&mut self, u: usize) {
        if let Some(e) = &mut self.params.user_embedding {
            let f = self.embedding.catch_up(u, self.step);
            scale(e.row_mut(u), f);
        }
    }

    /// One SGD step on user `u`; returns the clean-input data loss measured
    /// before the step.
    fn step_user(&mut self, train: &SparseInteractions, epoch: usize, u: usize) -> Result<LossBreakdown> {
        let hp = self.hp;
        let coords = [epoch as u64, u as u64];
        let rated = train.ratings_of(u);
        let trusted = train.trusts_of(u);

        let rating_neg = train.sample_rating_negatives(u, &mut rng::stream(hp.seed, Purpose::RatingNegatives, &coords));
        let trust_neg = train.sample_trust_negatives(u, &mut rng::stream(hp.seed, Purpose::TrustNegatives, &coords));
        let mut corruption = rng::stream(hp.seed, Purpose::Corruption, &coords);
        let rating_in = corrupt(rated, hp.q, &mut corruption);
        let trust_in = corrupt(trusted, hp.q, &mut corruption);
        let targets = UserTargets::new(rated, &rating_neg, trusted, &trust_neg);

        for &i in rated {
            self.catch_up_rating_encoder(i as usize);
        }
        for &v in trusted {
            self.catch_up_trust_encoder(v as usize);
        }
        for &(i, _) in &targets.rating {
            self.catch_up_rating_decoder(i as usize);
        }
        for &(v, _) in &targets.trust {
            self.catch_up_trust_decoder(v as usize);
        }
        self.catch_up_embedding(u);

        let clean = crate::model::clean_forward(&self.params, train, u, hp.alpha);
        let loss = data_loss(&self.params, hp, &clean, &targets);
        if !loss.total.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: epoch + 1, user: u });
        }

        let trace = forward(&self.params, hp.alpha, u, rating_in, trust_in);
        let g = sparse_gradients(&self.params, hp, &trace, &targets)?;

        let lr = hp.lr;
        let (keep_t, keep_c) = (self.keep_t, self.keep_c);
        let next = self.step + 1;
        let p = &mut self.params;

        let step_rows = |values: &mut [f64], grad: &[f64], a: f64| {
            for (v, gi) in values.iter_mut().zip(grad) {
                *v = keep_t * *v - lr * a * gi;
            }
        };
        for &i in &trace.rating_input.kept {
            step_rows(p.rating_encoder.row_mut(i as usize), &g.rating_pre, trace.rating_input.scale);
            self.rating_enc.last[i as usize] = next;
        }
        for &v in &trace.trust_input.kept {
            step_rows(p.trust_encoder.row_mut(v as usize), &g.trust_pre, trace.trust_input.scale);
            self.trust_enc.last[v as usize] = next;
        }
        step_rows(&mut p.rating_encoder_bias, &g.rating_pre, 1.0);
        step_rows(&mut p.trust_encoder_bias, &g.trust_pre, 1.0);
        for &(i, e) in &g.rating_err {
            let i = i as usize;
            step_rows(p.rating_decoder.row_mut(i), &g.p, e);
            p.rating_decoder_bias[i] = keep_t * p.rating_decoder_bias[i] - lr * e;
            self.rating_dec.last[i] = next;
        }
        for &(v, e) in &g.trust_err {
            let v = v as usize;
            step_rows(p.trust_decoder.row_mut(v), &g.p, e);
            p.trust_decoder_bias[v] = keep_t * p.trust_decoder_bias[v] - lr * e;
            self.trust_dec.last[v] = next;
        }
        for (t, gi) in p.trust_to_rating.data.iter_mut().zip(&g.trust_to_rating) {
            *t = keep_c * *t - lr * gi;
        }
        for (t, gi) in p.rating_to_trust.data.iter_mut().zip(&g.rating_to_trust) {
            *t = keep_c * *t - lr * gi;
        }
        if let Some(e) = &mut p.user_embedding {
            step_rows(e.row_mut(u), &g.fused, 1.0);
            self.embedding.last[u] = next;
        }

        self.step = next;
        Ok(loss)
    }

    /// Applies all pending decay so `params` is exact.
    fn flush(&mut self) {
        for i in 0..self.params.n_items() {
            self.catch_up_rating_encoder(i);
            self.catch_up_rating_decoder(i);
        }
        for v in 0..self.params.n_users() {
            self.catch_up_trust_encoder(v);
            self.catch_up_trust_decoder(v);
            self.catch_up_embedding(v);
        }
    }
}

mod clock {
    #[cfg(not(target_arch = "wasm32"))]
    pub type Instant = std::time::Instant;
    #[cfg(target_arch = "wasm32")]
    pub type Instant = ();

    #[cfg(not(target_arch = "wasm32"))]
    pub fn now() -> Instant {
        std::time::Instant::now()
    }
    #[cfg(target_arch = "wasm32")]
    pub fn now() -> Instant {}

    #[cfg(not(target_arch = "wasm32"))]
    pub fn elapsed_secs(start: Instant) -> f64 {
        start.elapsed().as_secs_f64()
    }
    // No monotonic clock on wasm32-unknown-unknown.
    #[cfg(target_arch = "wasm32")]
    pub fn elapsed_secs(_: Instant) -> f64 {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::axpy;
    use crate::rng::{self, Purpose};
    use rand::Rng;

    /// Dense SGD epoch with per-step decay, the reference for the lazy trainer.
    fn dense_reference_epoch(
        train: &SparseInteractions,
        hp: &Hyperparams,
        params: &mut ModelParams,
        epoch: usize,
    ) -> Result<()> {
        use crate::objective::user_gradients;
        let n = train.n_users();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(hp.seed, Purpose::Shuffle, &[epoch as u64]));
        for &u in &order {
            let coords = [epoch as u64, u as u64];
            let rated = train.ratings_of(u);
            let trusted = train.trusts_of(u);
            let rn = train.sample_rating_negatives(u, &mut rng::stream(hp.seed, Purpose::RatingNegatives, &coords));
            let tn = train.sample_trust_negatives(u, &mut rng::stream(hp.seed, Purpose::TrustNegatives, &coords));
            let mut c = rng::stream(hp.seed, Purpose::Corruption, &coords);
            let ri = corrupt(rated, hp.q, &mut c);
            let ti = corrupt(trusted, hp.q, &mut c);
            let targets = UserTargets::new(rated, &rn, trusted, &tn);
            let trace = forward(params, hp.alpha, u, ri, ti);
            let g = user_gradients(params, hp, &trace, &targets, 1.0 / n as f64)?;
            for ((_, p), (_, gi)) in params.tensors_mut().into_iter().zip(g.tensors()) {
                axpy(-hp.lr, gi, p);
            }
        }
        Ok(())
    }

    fn blocks(users: usize, items: usize, seed: u64) -> SparseInteractions {
        let mut r = rng::stream(seed, Purpose::Instance, &[]);
        let mut ratings = Vec::new();
        let mut trusts = Vec::new();
        for u in 0..users {
            let g = u % 2;
            for i in 0..items {
                if i % 2 == g && r.gen_bool(0.6) {
                    ratings.push((u as u32, i as u32));
                }
            }
            for v in 0..users {
                if v != u && v % 2 == g && r.gen_bool(0.3) {
                    trusts.push((u as u32, v as u32));
                }
            }
        }
        SparseInteractions::from_pairs(users, items, &ratings, &trusts).unwrap()
    }

    #[test]
    fn cost_formula() {
        let s = SparseInteractions::from_pairs(
            3,
            100,
            &[(0, 1), (0, 2), (0, 3), (0, 4)],
            &[(0, 1), (0, 2)],
        )
        .unwrap();
        // trust domain is 3 users: |S^T| = min(2, 1) = 1
        assert_eq!(per_user_cost(&s, &Hyperparams { k: 8, ..Default::default() }), (4 + 4 + 2 + 1) * 8);

        let big = SparseInteractions::from_pairs(
            30,
            100,
            &[(0, 1), (0, 2), (0, 3), (0, 4)],
            &[(0, 1), (0, 2)],
        )
        .unwrap();
        let c8 = per_user_cost(&big, &Hyperparams { k: 8, ..Default::default() });
        assert_eq!(c8, 96);
        assert_eq!(per_user_cost(&big, &Hyperparams { k: 16, ..Default::default() }), 2 * c8);

        let empty = SparseInteractions::from_pairs(4, 10, &[], &[]).unwrap();
        assert_eq!(per_user_cost(&empty, &Hyperparams::default()), 0);
    }

    #[test]
    fn lazy_decay_matches_dense_sgd() {
        let s = blocks(12, 16, 1);
        for q in [0.0, 0.2] {
            let hp = Hyperparams { k: 4, epochs: 3, q, lambda_t: 0.5, lambda_c: 0.3, lr: 0.2, user_embedding: true, ..Default::default() };
            let init = ModelParams::init(12, 16, 4, true, 5);
            let (lazy, _) = train_from(&s, &hp, init.clone(), &TrainOptions::default()).unwrap();
            let mut dense = init;
            for e in 0..hp.epochs {
                dense_reference_epoch(&s, &hp, &mut dense, e).unwrap();
            }
            for ((name, a), (_, b)) in lazy.tensors().into_iter().zip(dense.tensors()) {
                for (x, y) in a.iter().zip(b) {
                    assert!((x - y).abs() < 1e-10, "{name}: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let s = blocks(10, 12, 2);
        let hp = Hyperparams { k: 3, epochs: 4, lr: 0.0, ..Default::default() };
        let init = ModelParams::init(10, 12, 3, false, hp.seed);
        let (out, log) = train_from(&s, &hp, init.clone(), &TrainOptions::default()).unwrap();
        assert_eq!(out, init);
        assert_eq!(log.epochs.len(), 4);
    }

    #[test]
    fn training_is_deterministic() {
        let s = blocks(20, 24, 3);
        let hp = Hyperparams { k: 4, epochs: 5, ..Default::default() };
        let (a, la) = train(&s, &hp).unwrap();
        let (b, lb) = train(&s, &hp).unwrap();
        assert_eq!(a, b);
        let losses = |l: &TrainLog| l.epochs.iter().map(|e| e.loss).collect::<Vec<_>>();
        assert_eq!(losses(&la), losses(&lb));
    }

    #[test]
    fn loss_decreases() {
        let s = blocks(40, 40, 4);
        let hp = Hyperparams { k: 6, epochs: 30, ..Default::default() };
        let (_, log) = train(&s, &hp).unwrap();
        let first = log.epochs.first().unwrap().loss.total;
        let last = log.epochs.last().unwrap().loss.total;
        assert!(last < first, "{first} -> {last}");
        assert_eq!(log.stop, StopReason::Completed);
    }

    #[test]
    fn early_stop_triggers_on_flat_loss() {
        // Every user rates half the items, so the sampled negatives are the
        // whole complement and the loss is identical across epochs.
        let ratings: Vec<(u32, u32)> = (0..10u32)
            .flat_map(|u| (0..12u32).filter(move |i| (i + u) % 2 == 0).map(move |i| (u, i)))
            .collect();
        let s = SparseInteractions::from_pairs(10, 12, &ratings, &[]).unwrap();
        let hp = Hyperparams { k: 3, epochs: 50, lr: 0.0, ..Default::default() };
        let opts = TrainOptions { early_stop: Some(EarlyStop::default()), checkpoint: None };
        let init = ModelParams::init(10, 12, 3, false, 0);
        let (_, log) = train_from(&s, &hp, init, &opts).unwrap();
        assert_eq!(log.stop, StopReason::EarlyStopped);
        assert_eq!(log.epochs.len(), 6);
    }

    #[test]
    fn checkpoints_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let s = blocks(10, 12, 6);
        let hp = Hyperparams { k: 3, epochs: 3, ..Default::default() };
        let opts = TrainOptions { early_stop: None, checkpoint: Some((path.clone(), 2)) };
        let init = ModelParams::init(10, 12, 3, false, 0);
        let (params, _) = train_from(&s, &hp, init, &opts).unwrap();
        let (loaded, loaded_hp) = checkpoint::read(&path).unwrap();
        assert_eq!(loaded, params);
        assert_eq!(loaded_hp, hp);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let s = blocks(10, 12, 7);
        let hp = Hyperparams { k: 3, ..Default::default() };
        let init = ModelParams::init(10, 13, 3, false, 0);
        assert!(train_from(&s, &hp, init, &TrainOptions::default()).is_err());
        let empty = SparseInteractions::from_pairs(3, 3, &[], &[]).unwrap();
        assert!(matches!(train(&empty, &hp), Err(Error::EmptyDataset)));
    }

    #[test]
    fn log_csv_layout() {
        let s = blocks(10, 12, 8);
        let hp = Hyperparams { k: 3, epochs: 2, ..Default::default() };
        let (_, log) = train(&s, &hp).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TrainLog::CSV_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,"));
    }
}
