//! Trust-aware collaborative denoising auto-encoder for implicit-feedback
//! top-N recommendation.
//!
//! Two sparse binary views of each user, the items they liked and the users
//! they trust, are encoded separately, fused with weight `alpha` and decoded
//! back into both views. A correlative penalty ties the two encodings
//! together. Training is per-user SGD on observed entries plus an equal
//! number of sampled zeros.

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod rng;
pub mod sparse;
pub mod synth;
pub mod trainer;

pub use baselines::{ablation_config, pop_fit, pop_scores, PopModel, TdaeScorer, Variant};
pub use config::ExperimentConfig;
pub use dataset::{Dataset, FoldSplit};
pub use error::{Error, Result};
pub use metrics::{rank_top_n, MetricsReport, Scorer};
pub use model::{Hyperparams, ModelParams};
pub use sparse::SparseInteractions;
pub use trainer::{train, train_from, TrainLog, TrainOptions};
