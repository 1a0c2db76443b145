//! Popularity baseline and the ablation variants of the full model.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::Scorer;
use crate::model::{decode_rating_at, clean_forward, Hyperparams, ModelParams};
use crate::sparse::SparseInteractions;

/// Training-positive count per item.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PopModel {
    pub item_counts: Vec<u64>,
}

pub fn pop_fit(train: &SparseInteractions) -> PopModel {
    let mut item_counts = vec![0u64; train.n_items()];
    for (_, i) in train.rating_pairs() {
        item_counts[i as usize] += 1;
    }
    PopModel { item_counts }
}

/// Counts as scores; identical for every user.
pub fn pop_scores(model: &PopModel, _user: usize) -> Vec<f64> {
    model.item_counts.iter().map(|&c| c as f64).collect()
}

impl Scorer for PopModel {
    fn scores(&self, user: usize) -> Vec<f64> {
        pop_scores(self, user)
    }
}

/// Trained auto-encoder scoring from clean inputs.
pub struct TdaeScorer<'a> {
    pub params: &'a ModelParams,
    pub train: &'a SparseInteractions,
    pub alpha: f64,
}

impl Scorer for TdaeScorer<'_> {
    fn scores(&self, user: usize) -> Vec<f64> {
        let trace = clean_forward(self.params, self.train, user, self.alpha);
        (0..self.params.n_items())
            .map(|i| decode_rating_at(self.params, &trace.p, i))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Tdae,
    /// β = 0
    Tdae0,
    /// α = 1
    RatingOnly,
    /// α = 0
    TrustOnly,
    Pop,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Tdae,
        Variant::Tdae0,
        Variant::RatingOnly,
        Variant::TrustOnly,
        Variant::Pop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tdae => "tdae",
            Variant::Tdae0 => "tdae0",
            Variant::RatingOnly => "rating_only",
            Variant::TrustOnly => "trust_only",
            Variant::Pop => "pop",
        }
    }

    pub fn is_trained(self) -> bool {
        self != Variant::Pop
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown variant {s:?} (expected tdae, tdae0, rating_only, trust_only or pop)"
                ))
            })
    }
}

/// Applies the variant's override to `base`; other fields are untouched.
/// `Tdae` and `Pop` return `base` unchanged.
pub fn ablation_config(base: &Hyperparams, variant: Variant) -> Hyperparams {
    let mut hp = base.clone();
    match variant {
        Variant::Tdae0 => hp.beta = 0.0,
        Variant::RatingOnly => hp.alpha = 1.0,
        Variant::TrustOnly => hp.alpha = 0.0,
        Variant::Tdae | Variant::Pop => {}
    }
    hp
}
