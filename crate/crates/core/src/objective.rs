//! Sampled per-user training objective and its closed-form gradients.
//!
//! For one user with trace `(z_r, z_t, p)` and target sets over observed and
//! sampled coordinates:
//!
//! ```text
//! L_u = Σ l(y_i, r̂_i) + Σ l(y_v, t̂_v)
//!     + β (‖z_r − θ₀ z_t‖² + ‖z_t − θ₁ z_r‖²)
//!     + s·λ_T/2 · Ω  +  s·λ_C/2 · (‖θ₀‖² + ‖θ₁‖²)
//! ```
//!
//! where `s` is the decay scale (1 for the full objective, 1/n when the decay
//! is spread over the n per-user steps of an epoch).

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{axpy, corrupt, dot, forward, is_map, ForwardTrace, Hyperparams, Matrix, ModelParams};
use crate::rng::{self, Purpose};
use crate::sparse::sample_complement;

/// Predictions are clamped to `[EPS, 1 − EPS]` before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// Cross-entropy of a binary target against a probability.
pub fn logistic_loss(y: f64, y_hat: f64) -> f64 {
    let p = y_hat.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
}

/// ‖z_r − θ₀ z_t‖² + ‖z_t − θ₁ z_r‖²
pub fn correlative_term(z_r: &[f64], z_t: &[f64], theta0: &Matrix, theta1: &Matrix) -> f64 {
    let (a, d) = correlative_residuals(z_r, z_t, theta0, theta1);
    dot(&a, &a) + dot(&d, &d)
}

fn correlative_residuals(
    z_r: &[f64],
    z_t: &[f64],
    theta0: &Matrix,
    theta1: &Matrix,
) -> (Vec<f64>, Vec<f64>) {
    let a = z_r.iter().zip(theta0.mul_vec(z_t)).map(|(x, y)| x - y).collect();
    let d = z_t.iter().zip(theta1.mul_vec(z_r)).map(|(x, y)| x - y).collect();
    (a, d)
}

/// Reconstruction targets for one user: `(index, label)` with label 1 on
/// observed coordinates and 0 on sampled negatives.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UserTargets {
    pub rating: Vec<(u32, f64)>,
    pub trust: Vec<(u32, f64)>,
}

impl UserTargets {
    pub fn new(
        rated: &[u32],
        rating_negatives: &[u32],
        trusted: &[u32],
        trust_negatives: &[u32],
    ) -> Self {
        let label = |pos: &[u32], neg: &[u32]| {
            pos.iter()
                .map(|&i| (i, 1.0))
                .chain(neg.iter().map(|&i| (i, 0.0)))
                .collect()
        };
        UserTargets {
            rating: label(rated, rating_negatives),
            trust: label(trusted, trust_negatives),
        }
    }

    pub fn len(&self) -> usize {
        self.rating.len() + self.trust.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub rating_recon: f64,
    pub trust_recon: f64,
    pub correlative: f64,
    /// Ω times the decay scale.
    pub weight_decay: f64,
    /// ‖θ₀‖² + ‖θ₁‖² times the decay scale.
    pub map_decay: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn assemble(hp: &Hyperparams, rating_recon: f64, trust_recon: f64, correlative: f64, weight_decay: f64, map_decay: f64) -> Self {
        LossBreakdown {
            rating_recon,
            trust_recon,
            correlative,
            weight_decay,
            map_decay,
            total: rating_recon
                + trust_recon
                + hp.beta * correlative
                + 0.5 * hp.lambda_t * weight_decay
                + 0.5 * hp.lambda_c * map_decay,
        }
    }

    /// Component-wise accumulation; `total` is recomputed from `hp`.
    pub fn add(&mut self, hp: &Hyperparams, other: &LossBreakdown) {
        *self = LossBreakdown::assemble(
            hp,
            self.rating_recon + other.rating_recon,
            self.trust_recon + other.trust_recon,
            self.correlative + other.correlative,
            self.weight_decay + other.weight_decay,
            self.map_decay + other.map_decay,
        );
    }

    pub fn scaled(&self, hp: &Hyperparams, factor: f64) -> LossBreakdown {
        LossBreakdown::assemble(
            hp,
            self.rating_recon * factor,
            self.trust_recon * factor,
            self.correlative * factor,
            self.weight_decay * factor,
            self.map_decay * factor,
        )
    }

    pub fn with_decay(&self, hp: &Hyperparams, weight_decay: f64, map_decay: f64) -> LossBreakdown {
        LossBreakdown::assemble(hp, self.rating_recon, self.trust_recon, self.correlative, weight_decay, map_decay)
    }
}

/// Reconstruction and correlative terms only (no parameter decay).
pub fn data_loss(params: &ModelParams, hp: &Hyperparams, trace: &ForwardTrace, targets: &UserTargets) -> LossBreakdown {
    let rating_recon = targets
        .rating
        .iter()
        .map(|&(i, y)| logistic_loss(y, trace.rating_output(params, i as usize)))
        .sum();
    let trust_recon = targets
        .trust
        .iter()
        .map(|&(v, y)| logistic_loss(y, trace.trust_output(params, v as usize)))
        .sum();
    let correlative = correlative_term(&trace.z_r, &trace.z_t, &params.trust_to_rating, &params.rating_to_trust);
    LossBreakdown::assemble(hp, rating_recon, trust_recon, correlative, 0.0, 0.0)
}

/// Full per-user objective with decay terms multiplied by `decay_scale`.
pub fn user_loss(
    params: &ModelParams,
    hp: &Hyperparams,
    trace: &ForwardTrace,
    targets: &UserTargets,
    decay_scale: f64,
) -> LossBreakdown {
    data_loss(params, hp, trace, targets).with_decay(
        hp,
        decay_scale * params.weight_decay_norm(),
        decay_scale * params.map_norm(),
    )
}

/// Gradient of the data terms, kept in factored form.
///
/// Every data-term gradient is low rank: encoder rows at surviving inputs all
/// receive `scale · d_pre`, and decoder rows at targets receive `err · p`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseGradients {
    /// Gradient w.r.t. the rating encoder pre-activation (= ∂b).
    pub rating_pre: Vec<f64>,
    /// Gradient w.r.t. the trust encoder pre-activation (= ∂c).
    pub trust_pre: Vec<f64>,
    /// `(item, r̂_i − y_i)` for every rating target.
    pub rating_err: Vec<(u32, f64)>,
    /// `(user, t̂_v − y_v)` for every trust target.
    pub trust_err: Vec<(u32, f64)>,
    /// The fused layer the decoder errors multiply.
    pub p: Vec<f64>,
    /// ∂p (also the user-embedding row gradient).
    pub fused: Vec<f64>,
    pub trust_to_rating: Vec<f64>,
    pub rating_to_trust: Vec<f64>,
}

impl SparseGradients {
    fn check_finite(&self) -> Result<()> {
        let named: [(&'static str, Box<dyn Iterator<Item = f64> + '_>); 6] = [
            ("rating_encoder", Box::new(self.rating_pre.iter().copied())),
            ("trust_encoder", Box::new(self.trust_pre.iter().copied())),
            ("rating_decoder", Box::new(self.rating_err.iter().map(|e| e.1))),
            ("trust_decoder", Box::new(self.trust_err.iter().map(|e| e.1))),
            ("trust_to_rating", Box::new(self.trust_to_rating.iter().copied())),
            ("rating_to_trust", Box::new(self.rating_to_trust.iter().copied())),
        ];
        for (param, mut values) in named {
            if values.any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { param });
            }
        }
        if self.fused.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { param: "user_embedding" });
        }
        Ok(())
    }
}

/// Backpropagates the data terms of the objective through one trace.
pub fn sparse_gradients(
    params: &ModelParams,
    hp: &Hyperparams,
    trace: &ForwardTrace,
    targets: &UserTargets,
) -> Result<SparseGradients> {
    let k = params.k();
    let p = &trace.p;

    // Sigmoid + cross-entropy: ∂l/∂logit = ŷ − y.
    let mut fused = vec![0.0; k];
    let rating_err: Vec<(u32, f64)> = targets
        .rating
        .iter()
        .map(|&(i, y)| {
            let e = trace.rating_output(params, i as usize) - y;
            axpy(e, params.rating_decoder.row(i as usize), &mut fused);
            (i, e)
        })
        .collect();
    let trust_err: Vec<(u32, f64)> = targets
        .trust
        .iter()
        .map(|&(v, y)| {
            let e = trace.trust_output(params, v as usize) - y;
            axpy(e, params.trust_decoder.row(v as usize), &mut fused);
            (v, e)
        })
        .collect();

    let (z_r, z_t) = (&trace.z_r, &trace.z_t);
    let theta0 = &params.trust_to_rating;
    let theta1 = &params.rating_to_trust;
    let (a, d) = correlative_residuals(z_r, z_t, theta0, theta1);
    let theta1_t_d = theta1.tr_mul_vec(&d);
    let theta0_t_a = theta0.tr_mul_vec(&a);

    let two_beta = 2.0 * hp.beta;
    let mut rating_pre = vec![0.0; k];
    let mut trust_pre = vec![0.0; k];
    for c in 0..k {
        let dz_r = hp.alpha * fused[c] + two_beta * (a[c] - theta1_t_d[c]);
        let dz_t = (1.0 - hp.alpha) * fused[c] + two_beta * (d[c] - theta0_t_a[c]);
        rating_pre[c] = dz_r * z_r[c] * (1.0 - z_r[c]);
        trust_pre[c] = dz_t * z_t[c] * (1.0 - z_t[c]);
    }

    let mut trust_to_rating = vec![0.0; k * k];
    let mut rating_to_trust = vec![0.0; k * k];
    for r in 0..k {
        for c in 0..k {
            trust_to_rating[r * k + c] = -two_beta * a[r] * z_t[c];
            rating_to_trust[r * k + c] = -two_beta * d[r] * z_r[c];
        }
    }

    let g = SparseGradients {
        rating_pre,
        trust_pre,
        rating_err,
        trust_err,
        p: p.clone(),
        fused,
        trust_to_rating,
        rating_to_trust,
    };
    g.check_finite()?;
    Ok(g)
}

/// Dense gradient container; same shapes as [`ModelParams`].
pub type Gradients = ModelParams;

/// Exact gradient of [`user_loss`] with respect to every parameter.
pub fn user_gradients(
    params: &ModelParams,
    hp: &Hyperparams,
    trace: &ForwardTrace,
    targets: &UserTargets,
    decay_scale: f64,
) -> Result<Gradients> {
    let sg = sparse_gradients(params, hp, trace, targets)?;
    let mut g = params.zeros_like();

    let rating_in = &trace.rating_input;
    for &i in &rating_in.kept {
        axpy(rating_in.scale, &sg.rating_pre, g.rating_encoder.row_mut(i as usize));
    }
    let trust_in = &trace.trust_input;
    for &v in &trust_in.kept {
        axpy(trust_in.scale, &sg.trust_pre, g.trust_encoder.row_mut(v as usize));
    }
    g.rating_encoder_bias.copy_from_slice(&sg.rating_pre);
    g.trust_encoder_bias.copy_from_slice(&sg.trust_pre);
    for &(i, e) in &sg.rating_err {
        axpy(e, &sg.p, g.rating_decoder.row_mut(i as usize));
        g.rating_decoder_bias[i as usize] += e;
    }
    for &(v, e) in &sg.trust_err {
        axpy(e, &sg.p, g.trust_decoder.row_mut(v as usize));
        g.trust_decoder_bias[v as usize] += e;
    }
    g.trust_to_rating.data.copy_from_slice(&sg.trust_to_rating);
    g.rating_to_trust.data.copy_from_slice(&sg.rating_to_trust);
    if let Some(e) = &mut g.user_embedding {
        e.row_mut(trace.user).copy_from_slice(&sg.fused);
    }

    let wd = decay_scale * hp.lambda_t;
    let md = decay_scale * hp.lambda_c;
    for ((name, grad), (_, value)) in g.tensors_mut().into_iter().zip(params.tensors()) {
        let coef = if is_map(name) { md } else { wd };
        axpy(coef, value, grad);
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { param: name });
        }
    }
    Ok(g)
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub entries: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst: Option<(&'static str, usize)>,
    pub failures: usize,
}

/// Central-difference check of [`user_gradients`] against [`user_loss`] at a
/// fixed corruption. Entries pass when the relative error is below `rel_tol`
/// or the absolute error is below `abs_tol`.
pub fn check_gradients(
    params: &ModelParams,
    hp: &Hyperparams,
    trace: &ForwardTrace,
    targets: &UserTargets,
    step: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<GradCheck> {
    let analytic = user_gradients(params, hp, trace, targets, 1.0)?;
    let loss_at = |p: &ModelParams| {
        let t = crate::model::forward(p, hp.alpha, trace.user, trace.rating_input.clone(), trace.trust_input.clone());
        user_loss(p, hp, &t, targets, 1.0).total
    };

    let mut report = GradCheck {
        entries: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        failures: 0,
    };
    let mut probe = params.clone();
    for (t_idx, (name, grad)) in analytic.tensors().into_iter().enumerate() {
        for (j, &g) in grad.iter().enumerate() {
            let orig = params.tensors()[t_idx].1[j];
            probe.tensors_mut()[t_idx].1[j] = orig + step;
            let up = loss_at(&probe);
            probe.tensors_mut()[t_idx].1[j] = orig - step;
            let down = loss_at(&probe);
            probe.tensors_mut()[t_idx].1[j] = orig;

            let numeric = (up - down) / (2.0 * step);
            let abs = (numeric - g).abs();
            let rel = abs / numeric.abs().max(g.abs()).max(f64::MIN_POSITIVE);
            report.entries += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error && abs >= abs_tol {
                report.max_rel_error = rel;
                report.worst = Some((name, j));
            }
            if rel >= rel_tol && abs >= abs_tol {
                report.failures += 1;
            }
        }
    }
    Ok(report)
}

/// A random single-user problem for gradient checking: perturbed
/// parameters, random observed rows with sampled negatives and one
/// corruption draw at `hp.q`.
pub fn random_instance(
    seed: u64,
    n: usize,
    m: usize,
    hp: &Hyperparams,
) -> (ModelParams, ForwardTrace, UserTargets) {
    let mut r = rng::stream(seed, Purpose::Instance, &[n as u64, m as u64]);
    let mut params = ModelParams::init(n, m, hp.k, hp.user_embedding, seed);
    for (_, t) in params.tensors_mut() {
        for v in t.iter_mut() {
            *v += r.gen_range(-0.3..0.3);
        }
    }
    let user = r.gen_range(0..n);
    let rated: Vec<u32> = (0..m as u32).filter(|_| r.gen_bool(0.4)).collect();
    let trusted: Vec<u32> = (0..n as u32)
        .filter(|&v| v as usize != user && r.gen_bool(0.4))
        .collect();
    let rneg = sample_complement(&rated, m, &mut r);
    let tneg = sample_complement(&trusted, n, &mut r);
    let targets = UserTargets::new(&rated, &rneg, &trusted, &tneg);
    let mut cr = rng::stream(seed, Purpose::Corruption, &[n as u64, m as u64]);
    let ri = corrupt(&rated, hp.q, &mut cr);
    let ti = corrupt(&trusted, hp.q, &mut cr);
    let trace = forward(&params, hp.alpha, user, ri, ti);
    (params, trace, targets)
}
