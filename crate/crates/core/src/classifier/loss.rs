//! Triplet-augmented classification loss.
//!
//! ```text
//! L = eta * max(d(a, p) - d(a, n) + mu, 0) + (1 - eta) * BCE(p_hat, y)
//! ```
//!
//! with `d` the squared Euclidean distance between encodings and `p_hat`
//! the anchor's predicted Lookup probability.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub margin: f64,
    pub eta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { margin: 0.01, eta: 0.5 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) || !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidParameter(format!(
                "need margin >= 0 and eta in [0, 1], got {} and {}",
                self.margin, self.eta
            )));
        }
        Ok(())
    }
}

pub fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

pub fn bce(prob: f64, target: f64) -> f64 {
    let p = clamp_prob(prob);
    -target * p.ln() - (1.0 - target) * (1.0 - p).ln()
}

/// Loss value for one triplet.
pub fn loss(a: &[f64], p: &[f64], n: &[f64], prob: f64, target: f64, cfg: &LossConfig) -> Result<f64> {
    if a.len() != p.len() || a.len() != n.len() {
        return Err(Error::InvalidParameter("encodings differ in length".into()));
    }
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    if !finite(a) || !finite(p) || !finite(n) {
        return Err(Error::NonFinite("triplet encoding"));
    }
    if !prob.is_finite() || !target.is_finite() {
        return Err(Error::NonFinite("anchor probability"));
    }
    let hinge = (squared_distance(a, p) - squared_distance(a, n) + cfg.margin).max(0.0);
    Ok(cfg.eta * hinge + (1.0 - cfg.eta) * bce(prob, target))
}

/// Loss value and its gradients with respect to the three encodings and the
/// anchor logit. The hinge contributes nothing at its kink, and the BCE
/// contributes nothing where the probability clamp is active.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub d_a: Vec<f64>,
    pub d_p: Vec<f64>,
    pub d_n: Vec<f64>,
    pub d_logit: f64,
}

pub fn loss_grad(a: &[f64], p: &[f64], n: &[f64], logit: f64, target: f64, cfg: &LossConfig) -> Result<LossGrad> {
    let prob = super::network::logistic(logit);
    let value = loss(a, p, n, prob, target, cfg)?;
    let hinge = squared_distance(a, p) - squared_distance(a, n) + cfg.margin;
    let dim = a.len();
    let (mut d_a, mut d_p, mut d_n) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    if hinge > 0.0 {
        let s = 2.0 * cfg.eta;
        for k in 0..dim {
            d_a[k] = s * (n[k] - p[k]);
            d_p[k] = s * (p[k] - a[k]);
            d_n[k] = s * (a[k] - n[k]);
        }
    }
    let clamped = !(PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&prob);
    let d_logit = if clamped { 0.0 } else { (1.0 - cfg.eta) * (prob - target) };
    Ok(LossGrad {
        value,
        d_a,
        d_p,
        d_n,
        d_logit,
    })
}
