//! Accuracy, F1 and confusion matrices for binary specificity labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;

/// Which label F1 treats as positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PositiveClass {
    #[default]
    Exploratory,
    Lookup,
    /// Unweighted mean of both per-class F1 scores.
    Macro,
}

impl std::str::FromStr for PositiveClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exploratory" => Ok(Self::Exploratory),
            "lookup" => Ok(Self::Lookup),
            "macro" => Ok(Self::Macro),
            other => Err(Error::InvalidParameter(format!("unknown F1 averaging {other:?}"))),
        }
    }
}

/// Counts or fractions with Exploratory as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub tn: f64,
}

impl ConfusionMatrix {
    pub fn from_labels(pred: &[Label], truth: &[Label]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::LengthMismatch {
                left: pred.len(),
                right: truth.len(),
            });
        }
        let mut m = Self::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p, t) {
                (Label::Exploratory, Label::Exploratory) => m.tp += 1.0,
                (Label::Exploratory, Label::Lookup) => m.fp += 1.0,
                (Label::Lookup, Label::Exploratory) => m.fn_ += 1.0,
                (Label::Lookup, Label::Lookup) => m.tn += 1.0,
            }
        }
        Ok(m)
    }

    /// From fractions or percentages; any common scale works.
    pub fn from_fractions(tp: f64, fp: f64, fn_: f64, tn: f64) -> Result<Self> {
        let m = Self { tp, fp, fn_, tn };
        if [tp, fp, fn_, tn].iter().any(|v| !v.is_finite() || *v < 0.0) || m.total() <= 0.0 {
            return Err(Error::InvalidParameter(format!("bad confusion entries {m:?}")));
        }
        Ok(m)
    }

    pub fn total(&self) -> f64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn normalized(&self) -> Self {
        let t = self.total();
        Self {
            tp: self.tp / t,
            fp: self.fp / t,
            fn_: self.fn_ / t,
            tn: self.tn / t,
        }
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) / self.total()
    }

    fn f1_of(tp: f64, fp: f64, fn_: f64) -> f64 {
        let denom = 2.0 * tp + fp + fn_;
        if denom == 0.0 {
            // No positives predicted or present: nothing was missed.
            1.0
        } else {
            2.0 * tp / denom
        }
    }

    pub fn f1(&self, positive: PositiveClass) -> f64 {
        let exploratory = Self::f1_of(self.tp, self.fp, self.fn_);
        let lookup = Self::f1_of(self.tn, self.fn_, self.fp);
        match positive {
            PositiveClass::Exploratory => exploratory,
            PositiveClass::Lookup => lookup,
            PositiveClass::Macro => 0.5 * (exploratory + lookup),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1: f64,
    pub confusion: ConfusionMatrix,
}

pub fn evaluate(pred: &[Label], truth: &[Label], positive: PositiveClass) -> Result<Metrics> {
    let confusion = ConfusionMatrix::from_labels(pred, truth)?;
    if confusion.total() == 0.0 {
        return Err(Error::InvalidParameter("no labels to evaluate".into()));
    }
    Ok(Metrics {
        accuracy: confusion.accuracy(),
        f1: confusion.f1(positive),
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::*;

    #[test]
    fn perfect_predictions() {
        let x = [Lookup, Exploratory, Exploratory];
        let m = evaluate(&x, &x, PositiveClass::Exploratory).unwrap();
        assert_eq!((m.accuracy, m.f1), (1.0, 1.0));
        assert_eq!(m.confusion.f1(PositiveClass::Macro), 1.0);
    }

    #[test]
    fn hand_counted_matrix() {
        let pred = [Exploratory, Exploratory, Lookup, Lookup, Lookup];
        let truth = [Exploratory, Lookup, Exploratory, Lookup, Lookup];
        let m = evaluate(&pred, &truth, PositiveClass::Exploratory).unwrap();
        assert_eq!(m.confusion, ConfusionMatrix { tp: 1.0, fp: 1.0, fn_: 1.0, tn: 2.0 });
        assert!((m.accuracy - 0.6).abs() < 1e-15);
        assert!((m.f1 - 0.5).abs() < 1e-15);
        assert!((m.confusion.f1(PositiveClass::Lookup) - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn mismatched_lengths() {
        assert!(matches!(
            evaluate(&[Lookup], &[], PositiveClass::Exploratory),
            Err(Error::LengthMismatch { left: 1, right: 0 })
        ));
    }

    #[test]
    fn fractions_normalize_to_one() {
        let m = ConfusionMatrix::from_fractions(39.07, 7.62, 11.26, 42.05).unwrap().normalized();
        assert!((m.total() - 1.0).abs() < 1e-12);
    }
}
