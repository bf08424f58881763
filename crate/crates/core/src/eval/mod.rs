//! Evaluation metrics, distribution statistics and the synthetic corpus.

pub mod metrics;
pub mod stats;
pub mod synth;

pub use metrics::{evaluate, ConfusionMatrix, Metrics, PositiveClass};
pub use stats::{distribution_stats, DistributionStats, Feature};
pub use synth::{generate_synthetic, SyntheticCorpus, SyntheticCorpusConfig, SyntheticQuery, UrlProfile};
