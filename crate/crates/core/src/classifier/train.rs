//! Mini-batch training.
//!
//! Each triplet's gradient is computed on its own (optionally in parallel)
//! and the batch sum is formed in batch order, so parallel and sequential
//! runs produce identical parameters. Dropout masks come from a generator
//! keyed by epoch and position, never from a shared stream.

use std::collections::HashMap;

use log::debug;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::Masks;
use super::optim::AdamW;
use super::{LossConfig, Model};
use crate::error::{Error, Result};
use crate::seed;
use crate::triplets::Triplet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Compute per-triplet gradients on the rayon pool.
    pub parallel: bool,
    /// Stop once eval-mode training accuracy reaches this value.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 1e-3,
            dropout: 0.1,
            weight_decay: 1e-2,
            epochs: 1,
            seed: 0,
            parallel: true,
            target_accuracy: None,
        }
    }
}

impl TrainConfig {
    /// Settings used at full scale: smaller step for the larger model.
    pub fn paper_scale() -> Self {
        Self {
            learning_rate: 5e-5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.dropout) || !(self.weight_decay >= 0.0)
        {
            return Err(Error::InvalidParameter(format!("bad training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    /// Eval-mode anchor accuracy over the training triplets.
    pub accuracy: f64,
}

fn draw_masks<R: Rng>(rng: &mut R, rate: f64, len: usize) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect()
}

type TokenCache = HashMap<String, Vec<Vec<f64>>>;

fn token_cache(model: &Model, triplets: &[Triplet]) -> Result<TokenCache> {
    let mut texts: Vec<&str> = triplets
        .iter()
        .flat_map(|t| [t.anchor.as_str(), t.positive.as_str(), t.negative.as_str()])
        .collect();
    texts.sort_unstable();
    texts.dedup();
    texts
        .par_iter()
        .map(|&t| model.token_vectors(t).map(|v| (t.to_string(), v)))
        .collect()
}

/// Eval-mode accuracy of anchor predictions against the triplet labels.
fn anchor_accuracy(model: &Model, triplets: &[Triplet], cache: &TokenCache) -> f64 {
    let correct: usize = triplets
        .par_iter()
        .map(|t| {
            let p = super::network::logistic(model.logit_of(&cache[&t.anchor]));
            usize::from((p >= 0.5) == (t.anchor_label.target() == 1.0))
        })
        .sum();
    correct as f64 / triplets.len() as f64
}

/// Train `model` in place; returns metrics for each completed epoch.
pub fn train(model: &mut Model, triplets: &[Triplet], cfg: &TrainConfig, loss_cfg: &LossConfig) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if triplets.is_empty() {
        return Err(Error::InvalidParameter("no triplets to train on".into()));
    }
    let cache = token_cache(model, triplets)?;
    let mut opt = AdamW::new(model.num_params(), cfg.learning_rate, cfg.weight_decay);
    let shuffle_root = seed::derive(cfg.seed, "shuffle");
    let dropout_root = seed::derive(cfg.seed, "dropout");
    let dims = model.dims();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.shuffle(&mut seed::rng(seed::derive_index(shuffle_root, epoch as u64)));
        let epoch_root = seed::derive_index(dropout_root, epoch as u64);
        let mut loss_sum = 0.0;

        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let start = batch_idx * cfg.batch_size;
            let one = |(offset, &i): (usize, &usize)| -> Result<(f64, Vec<f64>)> {
                let t = &triplets[i];
                let seqs = [&cache[&t.anchor][..], &cache[&t.positive][..], &cache[&t.negative][..]];
                let masks = (cfg.dropout > 0.0).then(|| {
                    let mut rng = seed::rng(seed::derive_index(epoch_root, (start + offset) as u64));
                    let mut make = |len: usize| Masks {
                        tokens: (0..len).map(|_| draw_masks(&mut rng, cfg.dropout, dims.proj)).collect(),
                        head1: draw_masks(&mut rng, cfg.dropout, dims.ffn1),
                        head2: draw_masks(&mut rng, cfg.dropout, dims.ffn2),
                    };
                    [make(seqs[0].len()), make(seqs[1].len()), make(seqs[2].len())]
                });
                let mut grad = vec![0.0; model.num_params()];
                let value = model.accumulate_gradient(seqs, t.anchor_label.target(), loss_cfg, masks.as_ref(), &mut grad)?;
                Ok((value, grad))
            };
            let parts: Vec<(f64, Vec<f64>)> = if cfg.parallel {
                batch.par_iter().enumerate().map(one).collect::<Result<_>>()?
            } else {
                batch.iter().enumerate().map(one).collect::<Result<_>>()?
            };
            let mut grad = vec![0.0; model.num_params()];
            let mut batch_loss = 0.0;
            for (value, g) in &parts {
                batch_loss += value;
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                let norms = model
                    .param_norms()
                    .iter()
                    .map(|(k, v)| format!("{k}={v:.4e}"))
                    .collect::<Vec<_>>()
                    .join(", ");
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    norms,
                });
            }
            loss_sum += batch_loss;
            opt.step(model.params_mut(), &grad);
        }

        let accuracy = anchor_accuracy(model, triplets, &cache);
        let metrics = EpochMetrics {
            epoch,
            loss: loss_sum / triplets.len() as f64,
            accuracy,
        };
        debug!("epoch {} loss {:.5} acc {:.4}", epoch, metrics.loss, metrics.accuracy);
        history.push(metrics);
        if cfg.target_accuracy.is_some_and(|t| accuracy >= t) {
            break;
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ModelDims;
    use crate::embeddings::{EmbeddingSpec, HashedNgramConfig};
    use crate::label::Label;

    fn model() -> Model {
        let spec = EmbeddingSpec::Hashed(HashedNgramConfig {
            dim: 16,
            ..HashedNgramConfig::default()
        });
        let dims = ModelDims {
            input: 16,
            proj: 8,
            hidden: 6,
            layers: 1,
            ffn1: 8,
            ffn2: 4,
        };
        Model::new(dims, spec, 5).unwrap()
    }

    fn data() -> Vec<Triplet> {
        (0..24)
            .map(|i| {
                let lookup = i % 2 == 0;
                Triplet {
                    anchor: if lookup { format!("zip code {i}") } else { format!("ideas for trips {i}") },
                    positive: if lookup { "zip code".into() } else { "ideas for trips".into() },
                    negative: if lookup { "ideas for trips".into() } else { "zip code".into() },
                    anchor_label: if lookup { Label::Lookup } else { Label::Exploratory },
                }
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut m = model();
        let before = m.params().to_vec();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 2,
            batch_size: 5,
            ..TrainConfig::default()
        };
        train(&mut m, &data(), &cfg, &LossConfig::default()).unwrap();
        assert_eq!(m.params(), &before[..]);
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 7,
            ..TrainConfig::default()
        };
        let mut a = model();
        let mut b = model();
        let ha = train(&mut a, &data(), &cfg, &LossConfig::default()).unwrap();
        let hb = train(&mut b, &data(), &TrainConfig { parallel: false, ..cfg }, &LossConfig::default()).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(ha, hb);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert!(train(&mut model(), &[], &TrainConfig::default(), &LossConfig::default()).is_err());
    }
}
