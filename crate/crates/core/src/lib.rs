//! Weakly-supervised text classification toolkit.
//!
//! Turns minimal seed information (class label names, a few keywords per
//! class, or a handful of labeled documents) into a trained neural text
//! classifier. The pipeline: build a corpus vocabulary, embed words on the
//! unit sphere, expand the seeds into per-class keyword sets, fit a von
//! Mises-Fisher distribution per class, generate pseudo documents from a
//! background/class mixture, pre-train a classifier with a KL-divergence
//! loss against soft labels, then iteratively self-train on the real
//! unlabeled documents until class assignments stabilize.

pub mod alias;
pub mod classifier;
pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod pseudogen;
pub mod seed;
pub mod selftrain;
pub mod vmf;

pub use corpus::{Corpus, Document, Vocabulary};
pub use embedding::EmbeddingMatrix;
pub use vmf::VmfDistribution;
