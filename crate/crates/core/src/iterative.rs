//! Self-training on pseudo labels.
//!
//! Plain iterative training trains on a random `alpha` share of the samples,
//! relabels every sample with the new model's predictions, and keeps the model
//! that best agrees with the labels it was judged against. The semi-greedy
//! variant additionally takes a `beta` share of the labels from the best
//! model seen so far instead of the latest one.
//!
//! Accuracy inside the loop is measured against the current labels; held-out
//! accuracy against true labels is recorded alongside when a held-out set is
//! given.

use std::io::Write;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::classifier::{self, LossConfig, Model, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::metrics::{self, PositiveClass};
use crate::label::Label;
use crate::seed;
use crate::triplets::Triplet;

/// Something that can be warm-start trained on labeled triplets and can
/// label anchors.
pub trait Learner {
    type State: Clone;
    fn fit(&self, state: &mut Self::State, samples: &[Triplet], seed: u64) -> Result<()>;
    fn predict(&self, state: &Self::State, texts: &[&str]) -> Result<Vec<Label>>;
}

/// The recurrent classifier as a [`Learner`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ClassifierLearner {
    pub train: TrainConfig,
    pub loss: LossConfig,
}

impl Learner for ClassifierLearner {
    type State = Model;

    fn fit(&self, state: &mut Model, samples: &[Triplet], seed_value: u64) -> Result<()> {
        let cfg = TrainConfig {
            seed: seed_value,
            ..self.train
        };
        classifier::train(state, samples, &cfg, &self.loss).map(|_| ())
    }

    fn predict(&self, state: &Model, texts: &[&str]) -> Result<Vec<Label>> {
        Ok(state.predict_batch(texts)?.into_iter().map(|p| p.label).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterConfig {
    pub iterations: usize,
    pub alpha: f64,
    /// Share of labels taken from the best model; 0 disables it.
    pub beta: f64,
    pub seed: u64,
}

impl Default for IterConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            alpha: 0.8,
            beta: 0.6,
            seed: 0,
        }
    }
}

impl IterConfig {
    fn validate(&self, n: usize) -> Result<()> {
        if self.iterations == 0 || !(self.alpha > 0.0 && self.alpha < 1.0) || !(0.0..1.0).contains(&self.beta) {
            return Err(Error::InvalidParameter(format!(
                "need T >= 1, alpha in (0, 1), beta in [0, 1); got {self:?}"
            )));
        }
        if (n as f64) * self.alpha < 1.0 {
            return Err(Error::InvalidParameter(format!(
                "{n} samples too few for alpha {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Texts with true labels, used only for reporting.
#[derive(Debug, Clone, Copy)]
pub struct HeldOut<'a> {
    pub texts: &'a [String],
    pub labels: &'a [Label],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    /// 1-based iteration.
    pub iter: usize,
    /// Agreement with the labels the iteration started from.
    pub train_acc: f64,
    pub acc_best: f64,
    pub heldout_acc: Option<f64>,
    pub heldout_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct IterOutcome<S> {
    pub best: S,
    /// 0 when no iteration beat the initial model.
    pub best_iter: usize,
    pub initial_accuracy: f64,
    pub history: Vec<IterRecord>,
    /// Sample labels after each iteration.
    pub trajectory: Vec<Vec<Label>>,
}

/// Trainer failure with the best state reached before it.
#[derive(Debug)]
pub struct IterFailure<S> {
    pub error: Error,
    pub partial: IterOutcome<S>,
}

impl<S> From<IterFailure<S>> for Error {
    fn from(f: IterFailure<S>) -> Self {
        f.error
    }
}

fn accuracy(a: &[Label], b: &[Label]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len().max(1) as f64
}

fn relabel(samples: &[Triplet], labels: &[Label], idx: &[usize]) -> Vec<Triplet> {
    idx.iter()
        .map(|&i| Triplet {
            anchor_label: labels[i],
            ..samples[i].clone()
        })
        .collect()
}

/// Plain iterative training; equal to [`sgit`] with `beta = 0`.
pub fn iterative_train<L: Learner>(
    learner: &L,
    initial: L::State,
    samples: &[Triplet],
    cfg: &IterConfig,
    heldout: Option<HeldOut>,
) -> std::result::Result<IterOutcome<L::State>, IterFailure<L::State>> {
    sgit(learner, initial, samples, &IterConfig { beta: 0.0, ..*cfg }, heldout)
}

/// Semi-greedy iterative training.
pub fn sgit<L: Learner>(
    learner: &L,
    initial: L::State,
    samples: &[Triplet],
    cfg: &IterConfig,
    heldout: Option<HeldOut>,
) -> std::result::Result<IterOutcome<L::State>, IterFailure<L::State>> {
    let n = samples.len();
    let anchors: Vec<&str> = samples.iter().map(|t| t.anchor.as_str()).collect();
    let mut labels: Vec<Label> = samples.iter().map(|t| t.anchor_label).collect();
    let mut outcome = IterOutcome {
        best: initial.clone(),
        best_iter: 0,
        initial_accuracy: 0.0,
        history: Vec::new(),
        trajectory: Vec::new(),
    };
    let fail = |error: Error, partial: IterOutcome<L::State>| IterFailure { error, partial };
    if let Err(e) = cfg.validate(n) {
        return Err(fail(e, outcome));
    }
    let initial_pred = match learner.predict(&initial, &anchors) {
        Ok(p) => p,
        Err(e) => return Err(fail(e, outcome)),
    };
    let mut acc_best = accuracy(&labels, &initial_pred);
    outcome.initial_accuracy = acc_best;
    let mut best_labels = labels.clone();

    let alpha_root = seed::derive(cfg.seed, "alpha");
    let beta_root = seed::derive(cfg.seed, "beta");
    let train_root = seed::derive(cfg.seed, "train");
    let n_train = (cfg.alpha * n as f64).floor() as usize;
    let n_best = (cfg.beta * n as f64).floor() as usize;
    let mut state = initial;

    for t in 0..cfg.iterations {
        let mut temp = labels.clone();
        if n_best > 0 {
            let mut rng = seed::rng(seed::derive_index(beta_root, t as u64));
            for i in index::sample(&mut rng, n, n_best) {
                temp[i] = best_labels[i];
            }
        }
        let mut rng = seed::rng(seed::derive_index(alpha_root, t as u64));
        let mut chosen = index::sample(&mut rng, n, n_train).into_vec();
        chosen.sort_unstable();
        let batch = relabel(samples, &temp, &chosen);

        if let Err(e) = learner.fit(&mut state, &batch, seed::derive_index(train_root, t as u64)) {
            return Err(fail(e, outcome));
        }
        let pred = match learner.predict(&state, &anchors) {
            Ok(p) => p,
            Err(e) => return Err(fail(e, outcome)),
        };
        let acc = accuracy(&labels, &pred);
        if acc > acc_best {
            acc_best = acc;
            outcome.best = state.clone();
            outcome.best_iter = t + 1;
            best_labels = pred.clone();
        }
        let (heldout_acc, heldout_f1) = match heldout {
            Some(h) => {
                let texts: Vec<&str> = h.texts.iter().map(String::as_str).collect();
                match learner.predict(&state, &texts) {
                    Ok(p) => {
                        let m = metrics::evaluate(&p, h.labels, PositiveClass::Exploratory).expect("aligned held-out set");
                        (Some(m.accuracy), Some(m.f1))
                    }
                    Err(e) => return Err(fail(e, outcome)),
                }
            }
            None => (None, None),
        };
        outcome.history.push(IterRecord {
            iter: t + 1,
            train_acc: acc,
            acc_best,
            heldout_acc,
            heldout_f1,
        });
        labels = pred;
        outcome.trajectory.push(labels.clone());
    }
    Ok(outcome)
}

/// `iter,train_acc,heldout_acc,f1`; empty fields when no held-out set was given.
pub fn write_history_csv<W: Write>(out: &mut W, history: &[IterRecord]) -> Result<()> {
    writeln!(out, "iter,train_acc,heldout_acc,f1")?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in history {
        writeln!(out, "{},{:.6},{},{}", r.iter, r.train_acc, opt(r.heldout_acc), opt(r.heldout_f1))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::RefCell;

    /// Predicts Lookup for anchors whose trained-on label set was mostly
    /// Lookup; records the sizes it was fit on.
    struct Majority {
        sizes: RefCell<Vec<usize>>,
    }

    impl Learner for Majority {
        type State = Option<Label>;

        fn fit(&self, state: &mut Option<Label>, samples: &[Triplet], _seed: u64) -> Result<()> {
            self.sizes.borrow_mut().push(samples.len());
            let lookups = samples.iter().filter(|t| t.anchor_label == Label::Lookup).count();
            *state = Some(if 2 * lookups >= samples.len() { Label::Lookup } else { Label::Exploratory });
            Ok(())
        }

        fn predict(&self, state: &Option<Label>, texts: &[&str]) -> Result<Vec<Label>> {
            Ok(texts.iter().map(|_| state.unwrap_or(Label::Exploratory)).collect())
        }
    }

    fn samples(n: usize) -> Vec<Triplet> {
        (0..n)
            .map(|i| Triplet {
                anchor: format!("q{i}"),
                positive: "p".into(),
                negative: "n".into(),
                anchor_label: if i % 3 == 0 { Label::Exploratory } else { Label::Lookup },
            })
            .collect()
    }

    #[test]
    fn sample_size_is_floor_alpha_n() {
        let learner = Majority {
            sizes: RefCell::new(Vec::new()),
        };
        let cfg = IterConfig {
            iterations: 3,
            ..IterConfig::default()
        };
        iterative_train(&learner, None, &samples(100), &cfg, None).unwrap();
        assert_eq!(*learner.sizes.borrow(), vec![80, 80, 80]);
    }

    #[test]
    fn beta_zero_matches_plain_iteration() {
        let learner = Majority {
            sizes: RefCell::new(Vec::new()),
        };
        let cfg = IterConfig {
            iterations: 4,
            beta: 0.0,
            seed: 9,
            ..IterConfig::default()
        };
        let a = iterative_train(&learner, None, &samples(30), &cfg, None).unwrap();
        let b = sgit(&learner, None, &samples(30), &cfg, None).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.best, b.best);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn best_accuracy_never_drops() {
        let learner = Majority {
            sizes: RefCell::new(Vec::new()),
        };
        let out = sgit(&learner, None, &samples(50), &IterConfig::default(), None).unwrap();
        assert!(out.history.windows(2).all(|w| w[1].acc_best >= w[0].acc_best));
        assert!(out.history[0].acc_best >= out.initial_accuracy);
    }

    #[test]
    fn failure_keeps_partial_outcome() {
        struct Flaky;
        impl Learner for Flaky {
            type State = u32;
            fn fit(&self, state: &mut u32, _: &[Triplet], _: u64) -> Result<()> {
                *state += 1;
                if *state == 3 {
                    return Err(Error::NonFinite("test"));
                }
                Ok(())
            }
            fn predict(&self, state: &u32, texts: &[&str]) -> Result<Vec<Label>> {
                let l = if *state == 1 { Label::Lookup } else { Label::Exploratory };
                Ok(texts.iter().map(|_| l).collect())
            }
        }
        let err = sgit(&Flaky, 0, &samples(10), &IterConfig::default(), None).unwrap_err();
        assert_eq!(err.partial.history.len(), 2);
        assert_eq!(err.partial.best, 1);
    }

    #[test]
    fn history_csv_header() {
        let mut buf = Vec::new();
        write_history_csv(
            &mut buf,
            &[IterRecord {
                iter: 1,
                train_acc: 0.5,
                acc_best: 0.5,
                heldout_acc: None,
                heldout_f1: None,
            }],
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iter,train_acc,heldout_acc,f1\n1,0.500000,,\n");
    }
}
