//! Specificity label taxonomy.
//!
//! A Lookup query has a single answerable intent; an Exploratory query admits
//! several interpretations or several answers. The heuristic also produces
//! `Ambiguous` when the evidence sits between its two thresholds.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Binary specificity label used for training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Exploratory,
    Lookup,
}

impl Label {
    /// Numeric target: Lookup = 1, Exploratory = 0.
    pub fn target(self) -> f64 {
        match self {
            Label::Lookup => 1.0,
            Label::Exploratory => 0.0,
        }
    }

    pub fn from_target(bit: u8) -> Option<Self> {
        match bit {
            1 => Some(Label::Lookup),
            0 => Some(Label::Exploratory),
            _ => None,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Label::Lookup => Label::Exploratory,
            Label::Exploratory => Label::Lookup,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Lookup => "lookup",
            Label::Exploratory => "exploratory",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lookup" | "l" | "1" => Ok(Label::Lookup),
            "exploratory" | "e" | "0" => Ok(Label::Exploratory),
            other => Err(Error::InvalidParameter(format!("unknown label {other:?}"))),
        }
    }
}

/// Heuristic outcome including the undecided band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Lookup,
    Exploratory,
    Ambiguous,
}

impl LabelKind {
    pub fn definite(self) -> Option<Label> {
        match self {
            LabelKind::Lookup => Some(Label::Lookup),
            LabelKind::Exploratory => Some(Label::Exploratory),
            LabelKind::Ambiguous => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LabelKind::Lookup => "lookup",
            LabelKind::Exploratory => "exploratory",
            LabelKind::Ambiguous => "ambiguous",
        }
    }
}

impl From<Label> for LabelKind {
    fn from(label: Label) -> Self {
        match label {
            Label::Lookup => LabelKind::Lookup,
            Label::Exploratory => LabelKind::Exploratory,
        }
    }
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ambiguous" => Ok(LabelKind::Ambiguous),
            other => other.parse::<Label>().map(LabelKind::from),
        }
    }
}
