//! Text-only specificity classifier.
//!
//! Query tokens (whitespace split) are embedded by the configured provider,
//! projected, and encoded by a bidirectional GRU stack; a small tanh head
//! turns the encoding into the probability that the query is Lookup.

mod checkpoint;
pub mod loss;
pub mod network;
pub mod optim;
mod train;

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::embeddings::{EmbeddingProvider, EmbeddingSpec};
use crate::error::{Error, Result};
use crate::label::Label;
use crate::seed;

pub use loss::{loss, loss_grad, LossConfig, LossGrad};
pub use network::ModelDims;
pub use train::{train, EpochMetrics, TrainConfig};

use network::{Layout, Masks};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub probability: f64,
    pub label: Label,
}

/// Distances and anchor logit for one triplet, in eval mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletTerms {
    pub d_ap: f64,
    pub d_an: f64,
    pub logit: f64,
}

#[derive(Clone)]
pub struct Model {
    layout: Layout,
    params: Vec<f64>,
    seed: u64,
    embedding: EmbeddingSpec,
    provider: Arc<dyn EmbeddingProvider>,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("dims", &self.layout.dims)
            .field("params", &self.params.len())
            .field("seed", &self.seed)
            .field("embedding", &self.embedding.to_string())
            .finish()
    }
}

impl Model {
    /// Randomly initialized model.
    pub fn new(dims: ModelDims, embedding: EmbeddingSpec, seed_value: u64) -> Result<Self> {
        let provider = embedding.build()?;
        Self::with_provider(dims, embedding, provider, seed_value)
    }

    pub fn with_provider(
        dims: ModelDims,
        embedding: EmbeddingSpec,
        provider: Arc<dyn EmbeddingProvider>,
        seed_value: u64,
    ) -> Result<Self> {
        if !dims.is_valid() {
            return Err(Error::InvalidParameter(format!("bad model dims {dims:?}")));
        }
        if dims.input != provider.dim() {
            return Err(Error::InvalidParameter(format!(
                "model input width {} differs from embedding dim {}",
                dims.input,
                provider.dim()
            )));
        }
        let layout = Layout::new(dims);
        let mut params = vec![0.0; layout.total];
        let mut rng = seed::rng(seed::derive(seed_value, "init"));
        for (start, len, bound) in layout.init_ranges() {
            for p in &mut params[start..start + len] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        Ok(Self {
            layout,
            params,
            seed: seed_value,
            embedding,
            provider,
        })
    }

    pub(crate) fn from_parts(
        dims: ModelDims,
        params: Vec<f64>,
        seed_value: u64,
        embedding: EmbeddingSpec,
        provider: Arc<dyn EmbeddingProvider>,
    ) -> Result<Self> {
        let layout = Layout::new(dims);
        if params.len() != layout.total {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.total,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(Self {
            layout,
            params,
            seed: seed_value,
            embedding,
            provider,
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.layout.dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn embedding(&self) -> &EmbeddingSpec {
        &self.embedding
    }

    pub fn provider(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.provider
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// L2 norm of every parameter tensor group, for diagnostics.
    pub fn param_norms(&self) -> Vec<(String, f64)> {
        let l = &self.layout;
        let norm = |a: usize, b: usize| self.params[a..b].iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut out = vec![("projection".to_string(), norm(l.proj_w, l.proj_b + l.dims.proj))];
        for (i, layer) in l.gru.iter().enumerate() {
            let start = layer[0].w_ih;
            let end = layer[1].b_hh + 3 * l.dims.hidden;
            out.push((format!("gru{i}"), norm(start, end)));
        }
        out.push(("head".to_string(), norm(l.w1, l.total)));
        out
    }

    pub fn token_vectors(&self, text: &str) -> Result<Vec<Vec<f64>>> {
        let tokens: Vec<Vec<f64>> = text
            .split_whitespace()
            .map(|t| self.provider.embed(t))
            .collect::<Result<_>>()?;
        if tokens.is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(tokens)
    }

    /// Eval-mode encoding, length `2 * hidden`.
    pub fn encode(&self, text: &str) -> Result<Vec<f64>> {
        let tokens = self.token_vectors(text)?;
        Ok(network::encode_forward(&self.layout, &self.params, &tokens, None).encoding)
    }

    fn logit_of(&self, tokens: &[Vec<f64>]) -> f64 {
        let enc = network::encode_forward(&self.layout, &self.params, tokens, None).encoding;
        network::head_forward(&self.layout, &self.params, &enc, None).logit
    }

    pub fn logit(&self, text: &str) -> Result<f64> {
        Ok(self.logit_of(&self.token_vectors(text)?))
    }

    pub fn predict(&self, text: &str) -> Result<Prediction> {
        let probability = network::logistic(self.logit(text)?);
        Ok(Prediction {
            probability,
            label: if probability >= 0.5 { Label::Lookup } else { Label::Exploratory },
        })
    }

    /// Parallel prediction, results in input order.
    pub fn predict_batch<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Result<Vec<Prediction>> {
        texts.par_iter().map(|t| self.predict(t.as_ref())).collect()
    }

    pub fn triplet_terms(&self, a: &str, p: &str, n: &str) -> Result<TripletTerms> {
        let ea = self.encode(a)?;
        let ep = self.encode(p)?;
        let en = self.encode(n)?;
        Ok(TripletTerms {
            d_ap: loss::squared_distance(&ea, &ep),
            d_an: loss::squared_distance(&ea, &en),
            logit: network::head_forward(&self.layout, &self.params, &ea, None).logit,
        })
    }

    /// Eval-mode loss of one triplet.
    pub fn triplet_loss(&self, a: &str, p: &str, n: &str, target: f64, cfg: &LossConfig) -> Result<f64> {
        let ea = self.encode(a)?;
        let ep = self.encode(p)?;
        let en = self.encode(n)?;
        let logit = network::head_forward(&self.layout, &self.params, &ea, None).logit;
        loss(&ea, &ep, &en, network::logistic(logit), target, cfg)
    }

    /// Eval-mode loss and its gradient with respect to every parameter.
    pub fn triplet_gradient(&self, a: &str, p: &str, n: &str, target: f64, cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let value = self.accumulate_gradient(
            [&self.token_vectors(a)?, &self.token_vectors(p)?, &self.token_vectors(n)?],
            target,
            cfg,
            None,
            &mut grad,
        )?;
        Ok((value, grad))
    }

    /// Adds one triplet's gradient into `grad`; returns the loss value and
    /// the anchor logit.
    pub(crate) fn accumulate_gradient(
        &self,
        seqs: [&[Vec<f64>]; 3],
        target: f64,
        cfg: &LossConfig,
        masks: Option<&[Masks; 3]>,
        grad: &mut [f64],
    ) -> Result<f64> {
        let l = &self.layout;
        let p = &self.params;
        let caches: Vec<network::EncoderCache> = (0..3)
            .map(|i| network::encode_forward(l, p, seqs[i], masks.map(|m| m[i].tokens.as_slice())))
            .collect();
        let head_masks = masks.map(|m| (m[0].head1.as_slice(), m[0].head2.as_slice()));
        let head = network::head_forward(l, p, &caches[0].encoding, head_masks);
        let lg = loss_grad(
            &caches[0].encoding,
            &caches[1].encoding,
            &caches[2].encoding,
            head.logit,
            target,
            cfg,
        )?;
        let mut d_a = network::head_backward(l, p, grad, &head, lg.d_logit);
        d_a.iter_mut().zip(&lg.d_a).for_each(|(x, y)| *x += y);
        network::encode_backward(l, p, grad, &caches[0], &d_a);
        if lg.d_p.iter().chain(&lg.d_n).any(|&x| x != 0.0) {
            network::encode_backward(l, p, grad, &caches[1], &lg.d_p);
            network::encode_backward(l, p, grad, &caches[2], &lg.d_n);
        }
        Ok(lg.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::HashedNgramConfig;

    fn tiny(seed_value: u64) -> Model {
        let spec = EmbeddingSpec::Hashed(HashedNgramConfig {
            dim: 8,
            ..HashedNgramConfig::default()
        });
        let dims = ModelDims {
            input: 8,
            proj: 4,
            hidden: 3,
            layers: 2,
            ffn1: 4,
            ffn2: 3,
        };
        Model::new(dims, spec, seed_value).unwrap()
    }

    #[test]
    fn encode_is_deterministic_with_expected_width() {
        let m = tiny(1);
        let a = m.encode("normal blood oxygen level").unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a, m.encode("normal blood oxygen level").unwrap());
        assert!(matches!(m.encode("   "), Err(Error::EmptyText)));
    }

    #[test]
    fn probability_in_open_interval() {
        let m = tiny(2);
        for q in ["a", "how to bake bread", "x y z w v u"] {
            let p = m.predict(q).unwrap();
            assert!(p.probability > 0.0 && p.probability < 1.0);
            assert_eq!(p, m.predict(q).unwrap());
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = LossConfig::default();
        let mut m = tiny(3);
        let (a, p, n) = ("lemon cake recipe", "lemon cake", "garden tools shop");
        let (_, grad) = m.triplet_gradient(a, p, n, 1.0, &cfg).unwrap();
        let h = 1e-4;
        let mut num = vec![0.0; grad.len()];
        for i in 0..grad.len() {
            let orig = m.params[i];
            m.params[i] = orig + h;
            let up = m.triplet_loss(a, p, n, 1.0, &cfg).unwrap();
            m.params[i] = orig - h;
            let down = m.triplet_loss(a, p, n, 1.0, &cfg).unwrap();
            m.params[i] = orig;
            num[i] = (up - down) / (2.0 * h);
        }
        let diff: f64 = grad.iter().zip(&num).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let scale: f64 = grad.iter().map(|x| x * x).sum::<f64>().sqrt() + num.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(diff / scale < 1e-6, "relative error {}", diff / scale);
    }
}
