//! Browser bindings for a small in-page TDAE lab on a planted-community
//! dataset. Everything runs synchronously on the main thread, so keep the
//! problem sizes modest.

use wasm_bindgen::prelude::*;

use tdae::dataset::{materialize_split, split_folds};
use tdae::metrics::evaluate;
use tdae::model::clean_forward;
use tdae::synth::{generate, SynthConfig};
use tdae::{pop_fit, train, Hyperparams, ModelParams, Scorer, SparseInteractions, TdaeScorer};

const CUTOFF: usize = 10;

#[wasm_bindgen]
pub struct Lab {
    train: SparseInteractions,
    test: SparseInteractions,
    community: Vec<usize>,
    seed: u64,
    model: Option<(ModelParams, Hyperparams)>,
}

fn map_ndcg(scorer: &dyn Scorer, train: &SparseInteractions, test: &SparseInteractions) -> Vec<f64> {
    let r = &evaluate(scorer, train, test, &[CUTOFF], &[])[0];
    vec![r.map, r.ndcg]
}

#[wasm_bindgen]
impl Lab {
    /// Builds a four-community dataset and holds out one fold of five.
    #[wasm_bindgen(constructor)]
    pub fn new(users_per_community: usize, seed: u64) -> Result<Lab, String> {
        let cfg = SynthConfig { users_per_community, ..SynthConfig::default() };
        let s = generate(&cfg, seed).map_err(|e| e.to_string())?;
        let split = split_folds(&s.dataset, 5, seed).map_err(|e| e.to_string())?;
        let (train, test) = materialize_split(&s.dataset, &split, 0).map_err(|e| e.to_string())?;
        Ok(Lab { train, test, community: s.community, seed, model: None })
    }

    pub fn n_users(&self) -> usize {
        self.train.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.train.n_items()
    }

    /// Community label per user, for grouping heatmap rows.
    pub fn communities(&self) -> Vec<u32> {
        self.community.iter().map(|&c| c as u32).collect()
    }

    /// Trains a fresh model and returns the mean loss per epoch.
    pub fn train(&mut self, alpha: f64, beta: f64, k: usize, epochs: usize) -> Result<Vec<f64>, String> {
        let hp = Hyperparams { alpha, beta, k, epochs, seed: self.seed, ..Hyperparams::default() };
        let (params, log) = train(&self.train, &hp).map_err(|e| e.to_string())?;
        self.model = Some((params, hp));
        Ok(log.epochs.iter().map(|e| e.loss.total).collect())
    }

    /// [MAP@10, NDCG@10] of the last trained model on the held-out fold.
    pub fn model_metrics(&self) -> Result<Vec<f64>, String> {
        let (params, hp) = self.model.as_ref().ok_or("train a model first")?;
        let scorer = TdaeScorer { params, train: &self.train, alpha: hp.alpha };
        Ok(map_ndcg(&scorer, &self.train, &self.test))
    }

    /// [MAP@10, NDCG@10] of the popularity ranking.
    pub fn pop_metrics(&self) -> Vec<f64> {
        map_ndcg(&pop_fit(&self.train), &self.train, &self.test)
    }

    /// MAP@10 at `points` evenly spaced alpha values in [0, 1].
    pub fn alpha_sweep(&self, points: usize, beta: f64, k: usize, epochs: usize) -> Result<Vec<f64>, String> {
        if points < 2 {
            return Err("need at least two sweep points".into());
        }
        (0..points)
            .map(|j| {
                let alpha = j as f64 / (points - 1) as f64;
                let hp = Hyperparams { alpha, beta, k, epochs, seed: self.seed, ..Hyperparams::default() };
                let (params, _) = train(&self.train, &hp).map_err(|e| e.to_string())?;
                let scorer = TdaeScorer { params: &params, train: &self.train, alpha };
                Ok(map_ndcg(&scorer, &self.train, &self.test)[0])
            })
            .collect()
    }

    /// Row-major users x k matrix of fused representations of the last model.
    pub fn fused(&self) -> Result<Vec<f64>, String> {
        let (params, hp) = self.model.as_ref().ok_or("train a model first")?;
        Ok((0..self.train.n_users())
            .flat_map(|u| clean_forward(params, &self.train, u, hp.alpha).p)
            .collect())
    }
}
