//! The network: drop-out corruption, rating and trust encoders, the weighted
//! fusion layer and the two decoders.
//!
//! For user `u` with corrupted rating row `r̃` and trust row `t̃`:
//!
//! ```text
//! z_r = σ(Wᵀ r̃ + b)          z_t = σ(Vᵀ t̃ + c)
//! p   = α z_r + (1 − α) z_t
//! r̂   = σ(W′ p + b′)         t̂   = σ(V′ p + c′)
//! ```
//!
//! Inputs are binary, so encoders only touch the rows of `W` / `V` indexed by
//! surviving nonzeros, and decoders are evaluated per coordinate.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::sparse::SparseInteractions;

#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparams {
    /// Latent dimension.
    pub k: usize,
    /// Fusion weight on the rating view.
    pub alpha: f64,
    /// Weight of the correlative term.
    pub beta: f64,
    /// Drop-out probability.
    pub q: f64,
    pub lambda_t: f64,
    pub lambda_c: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Ranking cutoff N.
    pub top_n: usize,
    /// Adds a free per-user vector to the fused layer.
    pub user_embedding: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            k: 10,
            alpha: 0.8,
            beta: 0.01,
            q: 0.2,
            lambda_t: 0.01,
            lambda_c: 0.01,
            lr: 0.1,
            epochs: 50,
            seed: 1,
            top_n: 10,
            user_embedding: false,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHyperparams(msg));
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(self.alpha.is_finite() && (0.0..=1.0).contains(&self.alpha)) {
            return bad(format!("alpha must be in [0, 1], got {}", self.alpha));
        }
        if !finite_nonneg(self.beta) {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        if !(self.q.is_finite() && (0.0..1.0).contains(&self.q)) {
            return bad(format!("q must be in [0, 1), got {}", self.q));
        }
        if !finite_nonneg(self.lambda_t) || !finite_nonneg(self.lambda_c) {
            return bad("decay coefficients must be >= 0".into());
        }
        if !finite_nonneg(self.lr) {
            return bad(format!("learning rate must be >= 0, got {}", self.lr));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.top_n == 0 {
            return bad("top_n must be at least 1".into());
        }
        Ok(())
    }

    /// Survivor scale δ = 1/(1 − q).
    pub fn delta(&self) -> f64 {
        1.0 / (1.0 - self.q)
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(k: usize) -> Self {
        let mut m = Matrix::zeros(k, k);
        for i in 0..k {
            m.data[i * k + i] = 1.0;
        }
        m
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `self · x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `selfᵀ · x`
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            axpy(xr, self.row(r), &mut out);
        }
        out
    }

    fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Matrix {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect(),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a·x`
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub(crate) fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// All trainable tensors.
///
/// Encoder weights are stored one row per input coordinate (`m × k`, `n × k`),
/// decoder weights one row per output coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// W, m × k
    pub rating_encoder: Matrix,
    /// V, n × k
    pub trust_encoder: Matrix,
    /// b, length k
    pub rating_encoder_bias: Vec<f64>,
    /// c, length k
    pub trust_encoder_bias: Vec<f64>,
    /// W′, m × k
    pub rating_decoder: Matrix,
    /// b′, length m
    pub rating_decoder_bias: Vec<f64>,
    /// V′, n × k
    pub trust_decoder: Matrix,
    /// c′, length n
    pub trust_decoder_bias: Vec<f64>,
    /// θ₀, k × k: predicts z_r from z_t
    pub trust_to_rating: Matrix,
    /// θ₁, k × k: predicts z_t from z_r
    pub rating_to_trust: Matrix,
    /// Optional per-user additive vector on the fused layer, n × k.
    pub user_embedding: Option<Matrix>,
}

pub const TENSOR_NAMES: [&str; 11] = [
    "rating_encoder",
    "trust_encoder",
    "rating_encoder_bias",
    "trust_encoder_bias",
    "rating_decoder",
    "rating_decoder_bias",
    "trust_decoder",
    "trust_decoder_bias",
    "trust_to_rating",
    "rating_to_trust",
    "user_embedding",
];

impl ModelParams {
    /// Glorot-uniform weights, zero biases, identity correlative maps.
    pub fn init(n: usize, m: usize, k: usize, user_embedding: bool, seed: u64) -> Self {
        let mut r = rng::stream(seed, Purpose::Init, &[n as u64, m as u64, k as u64]);
        let rating_encoder = Matrix::glorot(m, k, &mut r);
        let trust_encoder = Matrix::glorot(n, k, &mut r);
        let rating_decoder = Matrix::glorot(m, k, &mut r);
        let trust_decoder = Matrix::glorot(n, k, &mut r);
        ModelParams {
            rating_encoder,
            trust_encoder,
            rating_encoder_bias: vec![0.0; k],
            trust_encoder_bias: vec![0.0; k],
            rating_decoder,
            rating_decoder_bias: vec![0.0; m],
            trust_decoder,
            trust_decoder_bias: vec![0.0; n],
            trust_to_rating: Matrix::identity(k),
            rating_to_trust: Matrix::identity(k),
            user_embedding: user_embedding.then(|| Matrix::zeros(n, k)),
        }
    }

    /// Same shapes, every entry zero.
    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows, m.cols);
        ModelParams {
            rating_encoder: z(&self.rating_encoder),
            trust_encoder: z(&self.trust_encoder),
            rating_encoder_bias: vec![0.0; self.k()],
            trust_encoder_bias: vec![0.0; self.k()],
            rating_decoder: z(&self.rating_decoder),
            rating_decoder_bias: vec![0.0; self.n_items()],
            trust_decoder: z(&self.trust_decoder),
            trust_decoder_bias: vec![0.0; self.n_users()],
            trust_to_rating: z(&self.trust_to_rating),
            rating_to_trust: z(&self.rating_to_trust),
            user_embedding: self.user_embedding.as_ref().map(z),
        }
    }

    pub fn n_users(&self) -> usize {
        self.trust_encoder.rows
    }

    pub fn n_items(&self) -> usize {
        self.rating_encoder.rows
    }

    pub fn k(&self) -> usize {
        self.rating_encoder.cols
    }

    /// Named flat views in checkpoint order. `user_embedding` is omitted when disabled.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut v: Vec<(&'static str, &[f64])> = vec![
            (TENSOR_NAMES[0], &self.rating_encoder.data),
            (TENSOR_NAMES[1], &self.trust_encoder.data),
            (TENSOR_NAMES[2], &self.rating_encoder_bias),
            (TENSOR_NAMES[3], &self.trust_encoder_bias),
            (TENSOR_NAMES[4], &self.rating_decoder.data),
            (TENSOR_NAMES[5], &self.rating_decoder_bias),
            (TENSOR_NAMES[6], &self.trust_decoder.data),
            (TENSOR_NAMES[7], &self.trust_decoder_bias),
            (TENSOR_NAMES[8], &self.trust_to_rating.data),
            (TENSOR_NAMES[9], &self.rating_to_trust.data),
        ];
        if let Some(e) = &self.user_embedding {
            v.push((TENSOR_NAMES[10], &e.data));
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut v: Vec<(&'static str, &mut [f64])> = vec![
            (TENSOR_NAMES[0], &mut self.rating_encoder.data),
            (TENSOR_NAMES[1], &mut self.trust_encoder.data),
            (TENSOR_NAMES[2], &mut self.rating_encoder_bias),
            (TENSOR_NAMES[3], &mut self.trust_encoder_bias),
            (TENSOR_NAMES[4], &mut self.rating_decoder.data),
            (TENSOR_NAMES[5], &mut self.rating_decoder_bias),
            (TENSOR_NAMES[6], &mut self.trust_decoder.data),
            (TENSOR_NAMES[7], &mut self.trust_decoder_bias),
            (TENSOR_NAMES[8], &mut self.trust_to_rating.data),
            (TENSOR_NAMES[9], &mut self.rating_to_trust.data),
        ];
        if let Some(e) = &mut self.user_embedding {
            v.push((TENSOR_NAMES[10], &mut e.data));
        }
        v
    }

    /// Ω: squared Frobenius norms of every weight-decayed tensor (all but θ₀, θ₁).
    pub fn weight_decay_norm(&self) -> f64 {
        self.tensors()
            .into_iter()
            .filter(|(name, _)| !is_map(name))
            .map(|(_, t)| norm_sq(t))
            .sum()
    }

    /// ‖θ₀‖² + ‖θ₁‖²
    pub fn map_norm(&self) -> f64 {
        norm_sq(&self.trust_to_rating.data) + norm_sq(&self.rating_to_trust.data)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.tensors().into_iter().map(|(_, t)| norm_sq(t)).sum::<f64>().sqrt()
    }

    /// First tensor containing a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
            .map(|(name, _)| name)
    }
}

pub(crate) fn is_map(name: &str) -> bool {
    name == TENSOR_NAMES[8] || name == TENSOR_NAMES[9]
}

pub fn init_params(n: usize, m: usize, k: usize, seed: u64) -> ModelParams {
    ModelParams::init(n, m, k, false, seed)
}

/// A binary row after drop-out: surviving coordinates, each holding `scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorruptedRow {
    pub kept: Vec<u32>,
    /// Aligned with the clean row: `true` where the coordinate survived.
    pub mask: Vec<bool>,
    pub scale: f64,
}

impl CorruptedRow {
    /// Uncorrupted row with unit values.
    pub fn clean(row: &[u32]) -> Self {
        CorruptedRow {
            kept: row.to_vec(),
            mask: vec![true; row.len()],
            scale: 1.0,
        }
    }

    /// Dense representation over `dim` coordinates.
    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        for &i in &self.kept {
            v[i as usize] = self.scale;
        }
        v
    }
}

/// Drops each nonzero of `row` with probability `q`; survivors become
/// δ = 1/(1 − q). One uniform draw is consumed per nonzero.
pub fn corrupt<R: Rng + ?Sized>(row: &[u32], q: f64, rng: &mut R) -> CorruptedRow {
    let mut kept = Vec::with_capacity(row.len());
    let mask = row
        .iter()
        .map(|&i| {
            let keep = rng.gen::<f64>() >= q;
            if keep {
                kept.push(i);
            }
            keep
        })
        .collect();
    let scale = if q == 0.0 { 1.0 } else { 1.0 / (1.0 - q) };
    CorruptedRow { kept, mask, scale }
}

fn encode_view(weights: &Matrix, bias: &[f64], input: &CorruptedRow) -> Vec<f64> {
    let mut pre = bias.to_vec();
    for &i in &input.kept {
        axpy(input.scale, weights.row(i as usize), &mut pre);
    }
    pre.into_iter().map(sigmoid).collect()
}

/// Returns `(z_r, z_t)`.
pub fn encode(params: &ModelParams, rating: &CorruptedRow, trust: &CorruptedRow) -> (Vec<f64>, Vec<f64>) {
    (
        encode_view(&params.rating_encoder, &params.rating_encoder_bias, rating),
        encode_view(&params.trust_encoder, &params.trust_encoder_bias, trust),
    )
}

pub fn fuse(z_r: &[f64], z_t: &[f64], alpha: f64) -> Vec<f64> {
    z_r.iter()
        .zip(z_t)
        .map(|(r, t)| alpha * r + (1.0 - alpha) * t)
        .collect()
}

pub fn decode_rating_at(params: &ModelParams, p: &[f64], item: usize) -> f64 {
    sigmoid(dot(params.rating_decoder.row(item), p) + params.rating_decoder_bias[item])
}

pub fn decode_trust_at(params: &ModelParams, p: &[f64], user: usize) -> f64 {
    sigmoid(dot(params.trust_decoder.row(user), p) + params.trust_decoder_bias[user])
}

/// Full reconstructions `(r̂, t̂)`.
pub fn decode(params: &ModelParams, p: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let r = (0..params.n_items()).map(|i| decode_rating_at(params, p, i)).collect();
    let t = (0..params.n_users()).map(|v| decode_trust_at(params, p, v)).collect();
    (r, t)
}

/// Hidden-layer state of one forward pass. Outputs are evaluated lazily.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub user: usize,
    pub rating_input: CorruptedRow,
    pub trust_input: CorruptedRow,
    pub z_r: Vec<f64>,
    pub z_t: Vec<f64>,
    pub p: Vec<f64>,
}

impl ForwardTrace {
    pub fn rating_output(&self, params: &ModelParams, item: usize) -> f64 {
        decode_rating_at(params, &self.p, item)
    }

    pub fn trust_output(&self, params: &ModelParams, user: usize) -> f64 {
        decode_trust_at(params, &self.p, user)
    }
}

pub fn forward(
    params: &ModelParams,
    alpha: f64,
    user: usize,
    rating_input: CorruptedRow,
    trust_input: CorruptedRow,
) -> ForwardTrace {
    let (z_r, z_t) = encode(params, &rating_input, &trust_input);
    let mut p = fuse(&z_r, &z_t, alpha);
    if let Some(e) = &params.user_embedding {
        axpy(1.0, e.row(user), &mut p);
    }
    ForwardTrace {
        user,
        rating_input,
        trust_input,
        z_r,
        z_t,
        p,
    }
}

/// Clean-input forward pass for user `u`.
pub fn clean_forward(params: &ModelParams, train: &SparseInteractions, u: usize, alpha: f64) -> ForwardTrace {
    forward(
        params,
        alpha,
        u,
        CorruptedRow::clean(train.ratings_of(u)),
        CorruptedRow::clean(train.trusts_of(u)),
    )
}

/// Scores for every item from an uncorrupted forward pass.
pub fn predict_scores(
    params: &ModelParams,
    train: &SparseInteractions,
    u: usize,
    alpha: f64,
) -> Result<Vec<f64>> {
    if u >= train.n_users() {
        return Err(Error::IndexOutOfRange {
            index: u,
            bound: train.n_users(),
        });
    }
    let trace = clean_forward(params, train, u, alpha);
    Ok((0..params.n_items())
        .map(|i| decode_rating_at(params, &trace.p, i))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn init_shapes_and_values() {
        let p = init_params(5, 7, 3, 9);
        assert_eq!((p.n_users(), p.n_items(), p.k()), (5, 7, 3));
        assert_eq!(p.rating_encoder_bias, vec![0.0; 3]);
        assert_eq!(p.trust_decoder_bias, vec![0.0; 5]);
        assert_eq!(p.trust_to_rating, Matrix::identity(3));
        assert_eq!(p.rating_to_trust, Matrix::identity(3));
        let limit = (6.0f64 / 10.0).sqrt();
        assert!(p.rating_encoder.data.iter().all(|v| v.abs() <= limit));
        assert!(p.rating_encoder.data.iter().any(|v| v.abs() > limit / 2.0));
        assert!(p.user_embedding.is_none());
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(init_params(5, 7, 3, 9), init_params(5, 7, 3, 9));
        assert_ne!(init_params(5, 7, 3, 9), init_params(5, 7, 3, 10));
    }

    #[test]
    fn no_corruption_at_q_zero() {
        let mut r = rng::stream(0, Purpose::Corruption, &[]);
        let c = corrupt(&[1, 4, 6], 0.0, &mut r);
        assert_eq!(c, CorruptedRow::clean(&[1, 4, 6]));
    }

    #[test]
    fn survivors_scaled() {
        let mut r = rng::stream(0, Purpose::Corruption, &[]);
        let row: Vec<u32> = (0..100).collect();
        let c = corrupt(&row, 0.2, &mut r);
        assert_eq!(c.scale, 1.25);
        assert_eq!(c.mask.iter().filter(|&&k| k).count(), c.kept.len());
        assert!(c.kept.len() < 100 && c.kept.len() > 50);
        let dense = c.to_dense(100);
        assert!(dense.iter().all(|&v| v == 0.0 || v == 1.25));
    }

    #[test]
    fn encoder_cases() {
        let p = init_params(4, 6, 3, 1);
        let empty = CorruptedRow::clean(&[]);
        let (z_r, z_t) = encode(&p, &empty, &empty);
        assert_eq!(z_r, vec![0.5; 3]);
        assert_eq!(z_t, vec![0.5; 3]);

        let mut q = p.clone();
        q.trust_encoder_bias = vec![1.0, -2.0, 0.0];
        let (_, z_t) = encode(&q, &empty, &empty);
        assert_eq!(z_t, q.trust_encoder_bias.iter().map(|&c| sigmoid(c)).collect::<Vec<_>>());

        let single = CorruptedRow { kept: vec![2], mask: vec![true], scale: 1.25 };
        let (z_r, _) = encode(&p, &single, &empty);
        let expect: Vec<f64> = p.rating_encoder.row(2).iter().map(|w| sigmoid(1.25 * w)).collect();
        assert_eq!(z_r, expect);
    }

    #[test]
    fn fusion_cases() {
        let zr = [0.2, 0.4];
        let zt = [0.6, 0.8];
        assert_eq!(fuse(&zr, &zt, 1.0), zr.to_vec());
        assert_eq!(fuse(&zr, &zt, 0.0), zt.to_vec());
        let p = fuse(&zr, &zt, 0.5);
        assert!((p[0] - 0.4).abs() < 1e-15 && (p[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn decoder_cases() {
        let p = init_params(4, 6, 3, 1);
        let (r, t) = decode(&p, &[0.0; 3]);
        assert_eq!(r, vec![0.5; 6]);
        assert_eq!(t, vec![0.5; 4]);
        let h = [0.3, 0.9, 0.1];
        let (r, _) = decode(&p, &h);
        for (i, ri) in r.iter().enumerate() {
            let logit: f64 = p.rating_decoder.row(i).iter().zip(&h).map(|(a, b)| a * b).sum();
            assert_eq!(*ri, sigmoid(logit + p.rating_decoder_bias[i]));
            assert!(*ri > 0.0 && *ri < 1.0);
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0).is_finite());
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }

    fn small_store() -> SparseInteractions {
        SparseInteractions::from_pairs(3, 5, &[(0, 1), (0, 3), (1, 0), (2, 4)], &[(0, 2), (1, 0)]).unwrap()
    }

    #[test]
    fn predictions_deterministic_and_bounded() {
        let s = small_store();
        let p = init_params(3, 5, 4, 2);
        let a = predict_scores(&p, &s, 0, 0.8).unwrap();
        assert_eq!(a, predict_scores(&p, &s, 0, 0.8).unwrap());
        assert!(a.iter().all(|&x| x > 0.0 && x < 1.0));
        assert!(predict_scores(&p, &s, 3, 0.8).is_err());
    }

    #[test]
    fn alpha_one_ignores_trust() {
        let s = small_store();
        let other =
            SparseInteractions::from_pairs(3, 5, &[(0, 1), (0, 3), (1, 0), (2, 4)], &[(0, 1)]).unwrap();
        let p = init_params(3, 5, 4, 2);
        assert_eq!(predict_scores(&p, &s, 0, 1.0).unwrap(), predict_scores(&p, &other, 0, 1.0).unwrap());
        assert_ne!(predict_scores(&p, &s, 0, 0.5).unwrap(), predict_scores(&p, &other, 0, 0.5).unwrap());
    }

    #[test]
    fn user_embedding_shifts_fused_layer() {
        let s = small_store();
        let mut p = ModelParams::init(3, 5, 2, true, 0);
        let base = clean_forward(&p, &s, 1, 0.8).p;
        p.user_embedding.as_mut().unwrap().row_mut(1).copy_from_slice(&[0.5, -0.25]);
        let shifted = clean_forward(&p, &s, 1, 0.8).p;
        assert!((shifted[0] - base[0] - 0.5).abs() < 1e-15);
        assert!((shifted[1] - base[1] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn hyperparam_validation() {
        assert!(Hyperparams::default().validate().is_ok());
        let bad = [
            Hyperparams { k: 0, ..Default::default() },
            Hyperparams { alpha: 1.5, ..Default::default() },
            Hyperparams { beta: -0.1, ..Default::default() },
            Hyperparams { q: 1.0, ..Default::default() },
            Hyperparams { lambda_t: f64::NAN, ..Default::default() },
            Hyperparams { lr: -1.0, ..Default::default() },
            Hyperparams { epochs: 0, ..Default::default() },
            Hyperparams { top_n: 0, ..Default::default() },
        ];
        for hp in bad {
            assert!(hp.validate().is_err(), "{hp:?}");
        }
        assert_eq!(Hyperparams { q: 0.2, ..Default::default() }.delta(), 1.25);
    }

    proptest! {
        /// Sparse accumulation agrees with a dense Wᵀx + b product.
        #[test]
        fn sparse_encoder_matches_dense(
            n in 1usize..20, m in 1usize..20, k in 1usize..6, seed in any::<u64>(),
            mask in proptest::collection::vec(any::<bool>(), 20), scale in 0.5f64..3.0,
        ) {
            let p = init_params(n, m, k, seed);
            let kept: Vec<u32> = (0..m as u32).filter(|&i| mask[i as usize]).collect();
            let row = CorruptedRow { mask: vec![true; kept.len()], kept, scale };
            let dense = row.to_dense(m);
            let (z_r, _) = encode(&p, &row, &CorruptedRow::clean(&[]));
            let pre = p.rating_encoder.tr_mul_vec(&dense);
            for c in 0..k {
                prop_assert!((z_r[c] - sigmoid(pre[c] + p.rating_encoder_bias[c])).abs() < 1e-12);
            }
        }

        #[test]
        fn fusion_monotone_in_alpha(
            zt in proptest::collection::vec(0.0f64..1.0, 4),
            gap in proptest::collection::vec(0.0f64..1.0, 4),
            a in 0.0f64..1.0, b in 0.0f64..1.0,
        ) {
            let zr: Vec<f64> = zt.iter().zip(&gap).map(|(t, g)| (t + g).min(1.0)).collect();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let p_lo = fuse(&zr, &zt, lo);
            let p_hi = fuse(&zr, &zt, hi);
            for (x, y) in p_lo.iter().zip(&p_hi) {
                prop_assert!(*y >= *x - 1e-15);
            }
        }
    }
}
