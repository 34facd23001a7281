//! Noise-rate estimation from anchor pairs.
//!
//! A small network is trained to predict the *noisy* SD label from the
//! concatenated features `[x ‖ x′]`. On a pair whose clean label is certain,
//! the noisy posterior equals the flip rate, so the held-out pair with the
//! highest `p(τ̃ = 1)` yields `η̂_S = 1 − p` and the one with the highest
//! `p(τ̃ = −1)` yields `η̂_D = p(τ̃ = 1)`.

use serde::{Deserialize, Serialize};

use crate::data::{PairDataset, PointDataset};
use crate::error::{Error, Result};
use crate::losses::sigmoid;
use crate::net::{adam_step, AdamState, Dropout, Mlp, TrainConfig};
use crate::rng::Rng;

/// Estimates are clamped to `[0, MAX_RATE]`.
pub const MAX_RATE: f64 = 0.49;

pub const MIN_ROWS: usize = 10;

/// Pair features `[x_i ‖ x_j]` with the noisy label as 1 (similar) or 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcatDataset {
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<u8>,
}

impl ConcatDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
        }
    }
}

pub fn build_concat_dataset(points: &PointDataset, pairs: &PairDataset) -> Result<ConcatDataset> {
    if pairs.is_empty() {
        return Err(Error::Data("no pairs to build a pair-classifier dataset from".into()));
    }
    pairs.check_against(points)?;
    let rows = pairs
        .pairs
        .iter()
        .map(|p| {
            let mut row = points.row(p.i).to_vec();
            row.extend_from_slice(points.row(p.j));
            row
        })
        .collect();
    let targets = pairs.pairs.iter().map(|p| u8::from(p.tau > 0)).collect();
    Ok(ConcatDataset { rows, targets })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseEstConfig {
    pub hidden: usize,
    /// Inverted dropout on the hidden layer, training only.
    pub dropout: f64,
    pub train_fraction: f64,
    /// Anchors averaged per rate; 1 is the plain argmax.
    pub top_k: usize,
    pub split_seed: u64,
    pub init_seed: u64,
    pub train: TrainConfig,
}

impl Default for NoiseEstConfig {
    fn default() -> Self {
        Self {
            hidden: 8,
            dropout: 0.2,
            train_fraction: 0.8,
            top_k: 1,
            split_seed: 0,
            init_seed: 0,
            train: TrainConfig {
                epochs: 100,
                batch_size: 64,
                // Keeps the logit flat over anchor regions, which the argmax
                // is sensitive to.
                weight_decay: 5e-3,
                ..TrainConfig::default()
            },
        }
    }
}

impl NoiseEstConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        self.train.validate()
    }
}

/// `p(τ̃ = 1 | x, x′) = σ(h([x ‖ x′]))` with one ReLU hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct PairProbModel {
    pub net: Mlp,
    pub dropout: f64,
}

impl PairProbModel {
    pub fn prob_similar(&self, row: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.net.forward(row)?))
    }
}

/// Splits the rows, then fits the pair classifier with cross-entropy and
/// Adam on the training part. Returns the model and the held-out rows.
pub fn train_pair_classifier(
    data: &ConcatDataset,
    config: &NoiseEstConfig,
) -> Result<(PairProbModel, ConcatDataset)> {
    config.validate()?;
    if data.len() < MIN_ROWS {
        return Err(Error::Data(format!(
            "need at least {MIN_ROWS} pair rows, got {}",
            data.len()
        )));
    }
    let (train_idx, test_idx) = split_indices(data.len(), config.train_fraction, config.split_seed);
    let train = data.subset(&train_idx);
    let test = data.subset(&test_idx);
    let positives = train.targets.iter().filter(|&&t| t == 1).count();
    if positives == 0 || positives == train.len() {
        return Err(Error::Training(
            "training split holds a single SD class; the pair classifier is undefined".into(),
        ));
    }

    let width = data.rows[0].len();
    let mut net = Mlp::init(&[width, config.hidden, 1], config.init_seed)?;
    let mut state = AdamState::new(&net);
    let mut grads = net.zero_gradients();
    let mut rng = Rng::new(config.train.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.train.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(config.train.batch_size) {
            grads.zero();
            let scale = 1.0 / batch.len() as f64;
            for &b in batch {
                let dropout = (config.dropout > 0.0).then_some(Dropout {
                    rate: config.dropout,
                    rng: &mut rng,
                });
                let cache = net.forward_cached(&train.rows[b], dropout)?;
                // d/dz of softplus(z) − y·z.
                let g = sigmoid(cache.score()) - f64::from(train.targets[b]);
                net.backward(&cache, scale * g, &mut grads)?;
            }
            adam_step(&mut net, &grads, &mut state, &config.train)?;
        }
        if net.params().iter().any(|v| !v.is_finite()) {
            return Err(Error::Training(format!("pair classifier diverged at epoch {epoch}")));
        }
    }
    Ok((
        PairProbModel {
            net,
            dropout: config.dropout,
        },
        test,
    ))
}

/// Deterministic shuffled split; the training part has `round(n·fraction)`
/// rows.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let n_train = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1));
    let test = order.split_off(n_train);
    (order, test)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub eta_s_hat: f64,
    pub eta_d_hat: f64,
}

/// Reads the rates off the most confident held-out pairs.
pub fn estimate_rates(model: &PairProbModel, test: &ConcatDataset, top_k: usize) -> Result<RateEstimate> {
    if test.is_empty() {
        return Err(Error::Data("held-out set is empty".into()));
    }
    let probs = test
        .rows
        .iter()
        .map(|r| model.prob_similar(r))
        .collect::<Result<Vec<f64>>>()?;
    Ok(rates_from_probabilities(&probs, top_k))
}

/// `η̂_S` = mean of `1 − p` over the `top_k` largest `p`; `η̂_D` = mean of
/// `p` over the `top_k` smallest. Both clamped to `[0, MAX_RATE]`.
pub fn rates_from_probabilities(probs: &[f64], top_k: usize) -> RateEstimate {
    let k = top_k.clamp(1, probs.len());
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let eta_s = order[..k].iter().map(|&i| 1.0 - probs[i]).sum::<f64>() / k as f64;
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(a.cmp(&b)));
    let eta_d = order[..k].iter().map(|&i| probs[i]).sum::<f64>() / k as f64;
    RateEstimate {
        eta_s_hat: eta_s.clamp(0.0, MAX_RATE),
        eta_d_hat: eta_d.clamp(0.0, MAX_RATE),
    }
}

/// Concatenate, split, train, and read the anchors.
pub fn estimate_noise_rates(
    points: &PointDataset,
    pairs: &PairDataset,
    config: &NoiseEstConfig,
) -> Result<RateEstimate> {
    let data = build_concat_dataset(points, pairs)?;
    let (model, test) = train_pair_classifier(&data, config)?;
    estimate_rates(&model, &test, config.top_k)
}
