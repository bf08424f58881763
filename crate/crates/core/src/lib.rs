//! Query specificity from click logs.
//!
//! Labels search queries as Lookup (one answerable intent) or Exploratory
//! (several intents or answers). A graph heuristic over the click log produces
//! labels for head queries; a small recurrent classifier trained on those
//! labels with a triplet-augmented loss then predicts from text alone.
//!
//! Stages, in pipeline order:
//!
//! - [`querylog`]: ingest and aggregate the click log
//! - [`bipartite`]: query-URL graph and truncated hitting times
//! - [`qqgraph`]: query-query graph, clustering, max-product relation scores
//! - [`related`]: per-anchor related-query sets
//! - [`patterns`]: ordered word pattern mining
//! - [`heuristic`]: pattern graph, k-core density, labels
//! - [`triplets`]: triplet construction for training
//! - [`classifier`]: the network, loss, optimizer and checkpoints
//! - [`iterative`]: pseudo-label self-training loops
//! - [`eval`]: metrics, synthetic corpora, distribution statistics
//! - [`pipeline`]: checkpointed end-to-end runs

pub mod bipartite;
pub mod classifier;
pub mod embeddings;
pub mod eval;
pub mod error;
pub mod heuristic;
pub mod iterative;
pub mod label;
pub mod patterns;
pub mod pipeline;
pub mod qqgraph;
pub mod querylog;
pub mod related;
pub mod seed;
pub mod triplets;

pub use error::{Error, Result};
pub use label::{Label, LabelKind};
