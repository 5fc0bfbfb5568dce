//! Semi-supervised metric learning via self-training.
//!
//! The toolkit trains a small embedding network with a batch-all triplet
//! margin loss on a handful of labeled examples, then repeatedly
//! pseudo-labels the most confident unlabeled examples and retrains on the
//! expanded set. Confidence is either 1-NN distance in embedding space or,
//! alternatively, the score of a label-propagation pass (local and global
//! consistency, "LLGC") over the embedding graph.
//!
//! Modules:
//! - [`data`]: IDX/CSV dataset loading, synthetic generators, balanced splits
//! - [`net`]: the embedding network (forward, reverse-mode gradients, Adam,
//!   gradient checking, checkpoints)
//! - [`triplet`]: triplet mining, margin loss and its gradient
//! - [`embedknn`]: embedding extraction, pairwise distances, 1-NN prediction,
//!   distance-ranked selection
//! - [`llgc`]: affinity graph, symmetric normalization, label propagation and
//!   its closed-form solution
//! - [`selftrain`]: the two self-training meta-loops plus supervised baselines
//! - [`config`] / [`runner`]: config-file driven experiment execution

pub mod config;
pub mod data;
pub mod embedknn;
mod error;
pub mod llgc;
pub mod net;
pub mod runner;
pub mod scatter;
pub mod seeds;
pub mod selftrain;
pub mod triplet;

pub use error::{Error, Result};
