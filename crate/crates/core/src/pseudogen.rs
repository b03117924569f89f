//! Pseudo-document generation: sample a document vector from each class
//! distribution, mix the class word distribution with the corpus background,
//! and draw bag-of-words documents with soft labels.

use std::collections::HashSet;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alias::AliasTable;
use crate::corpus::{BackgroundDistribution, Vocabulary};
use crate::embedding::{dot, nearest_words, EmbeddingMatrix};
use crate::vmf::VmfDistribution;

#[derive(Debug, Error)]
pub enum PseudogenError {
    #[error("alpha = {alpha} is outside the permitted range ({range})")]
    InvalidAlpha { alpha: f64, range: &'static str },
    #[error("beta (documents per class) must be at least 1")]
    InvalidBeta,
    #[error("gamma = {gamma} must be between 1 and the vocabulary size {vocab}")]
    InvalidGamma { gamma: usize, vocab: usize },
    #[error("doc_length must be at least 1")]
    InvalidDocLength,
    #[error("at least 2 class distributions are required, got {0}")]
    TooFewClasses(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Background mixture weight.
    pub alpha: f64,
    /// Pseudo documents generated per class.
    pub beta: usize,
    /// Size of the class-specific vocabulary V_d.
    pub gamma: usize,
    /// Tokens per pseudo document. Pipelines default this to the corpus
    /// mean document length clamped to [10, 500].
    pub doc_length: usize,
    pub rng_seed: u64,
    /// Permits the degenerate alpha endpoints 0 and 1 for parameter
    /// studies; normal runs require 0 < alpha < 1.
    pub param_study: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            alpha: 0.2,
            beta: 500,
            gamma: 50,
            doc_length: 50,
            rng_seed: 42,
            param_study: false,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self, vocab_size: usize) -> Result<(), PseudogenError> {
        let alpha_ok = if self.param_study {
            (0.0..=1.0).contains(&self.alpha)
        } else {
            self.alpha > 0.0 && self.alpha < 1.0
        };
        if !alpha_ok {
            return Err(PseudogenError::InvalidAlpha {
                alpha: self.alpha,
                range: if self.param_study {
                    "[0, 1] in parameter-study mode"
                } else {
                    "(0, 1)"
                },
            });
        }
        if self.beta < 1 {
            return Err(PseudogenError::InvalidBeta);
        }
        if self.gamma < 1 || self.gamma > vocab_size {
            return Err(PseudogenError::InvalidGamma {
                gamma: self.gamma,
                vocab: vocab_size,
            });
        }
        if self.doc_length < 1 {
            return Err(PseudogenError::InvalidDocLength);
        }
        Ok(())
    }
}

/// A generated bag-of-words document with its soft class label.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoDocument {
    pub tokens: Vec<usize>,
    pub class_of_origin: usize,
    pub pseudo_label: Vec<f64>,
}

/// Mixture word distribution for one document vector: every word carries
/// alpha times its background probability, and the gamma nearest words
/// additionally share (1 - alpha) according to a softmax of their dot
/// products with the document vector.
pub fn word_distribution(
    doc_vector: &[f64],
    embeddings: &EmbeddingMatrix,
    vocab: &Vocabulary,
    background: &BackgroundDistribution,
    alpha: f64,
    gamma: usize,
) -> Vec<f64> {
    assert!((0.0..=1.0).contains(&alpha));
    assert!(gamma >= 1 && gamma <= vocab.len());

    let top = nearest_words(embeddings, vocab, doc_vector, gamma, &HashSet::new());
    let logits: Vec<f64> = top
        .iter()
        .map(|&w| dot(embeddings.row(w), doc_vector))
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let denom: f64 = exps.iter().sum();

    let mut probs: Vec<f64> = background.probs.iter().map(|&pb| alpha * pb).collect();
    for (&w, &e) in top.iter().zip(&exps) {
        probs[w] += (1.0 - alpha) * e / denom;
    }
    probs
}

/// Soft label for a document generated from class `j`: the background
/// fraction alpha is split evenly over all m classes.
pub fn pseudo_label(j: usize, alpha: f64, m: usize) -> Vec<f64> {
    assert!(j < m && (0.0..=1.0).contains(&alpha));
    let share = alpha / m as f64;
    let mut label = vec![share; m];
    // Remainder form, not (1 - alpha) + share: it keeps the decimal
    // defaults bit-exact (alpha 0.2, m 4 gives literally 0.85 and 0.05).
    label[j] = 1.0 - (m - 1) as f64 * share;
    label
}

/// Generate one pseudo document: draw a document vector from the class
/// distribution, build its mixture distribution once, then sample
/// `doc_length` tokens i.i.d. from it.
#[allow(clippy::too_many_arguments)]
pub fn generate_document<R: Rng + ?Sized>(
    class_dist: &VmfDistribution,
    class: usize,
    num_classes: usize,
    config: &GeneratorConfig,
    embeddings: &EmbeddingMatrix,
    vocab: &Vocabulary,
    background: &BackgroundDistribution,
    rng: &mut R,
) -> PseudoDocument {
    let doc_vector = class_dist.sample_one(rng);
    let probs = word_distribution(
        &doc_vector,
        embeddings,
        vocab,
        background,
        config.alpha,
        config.gamma,
    );
    let table = AliasTable::new(&probs);
    let tokens = (0..config.doc_length).map(|_| table.sample(rng)).collect();
    PseudoDocument {
        tokens,
        class_of_origin: class,
        pseudo_label: pseudo_label(class, config.alpha, num_classes),
    }
}

/// Generate beta documents per class, class-major. Each class draws from
/// its own generator stream derived from the master seed, so per-class
/// output is independent of the other classes and the whole run is
/// deterministic.
pub fn generate_all(
    class_dists: &[VmfDistribution],
    config: &GeneratorConfig,
    embeddings: &EmbeddingMatrix,
    vocab: &Vocabulary,
    background: &BackgroundDistribution,
) -> Result<Vec<PseudoDocument>, PseudogenError> {
    let m = class_dists.len();
    if m < 2 {
        return Err(PseudogenError::TooFewClasses(m));
    }
    config.validate(vocab.len())?;

    let mut out = Vec::with_capacity(m * config.beta);
    for (j, dist) in class_dists.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        rng.set_stream(j as u64 + 1);
        for _ in 0..config.beta {
            out.push(generate_document(
                dist, j, m, config, embeddings, vocab, background, &mut rng,
            ));
        }
    }
    Ok(out)
}

/// Write documents as "class<TAB>space-joined tokens", tokens spelled out
/// as vocabulary words.
pub fn export_tsv<W: Write>(
    out: &mut W,
    docs: &[PseudoDocument],
    vocab: &Vocabulary,
) -> std::io::Result<()> {
    for doc in docs {
        write!(out, "{}\t", doc.class_of_origin)?;
        for (i, &w) in doc.tokens.iter().enumerate() {
            if i > 0 {
                write!(out, " ")?;
            }
            write!(out, "{}", vocab.word(w))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Write one JSON object per document holding its class and soft label.
pub fn export_labels_jsonl<W: Write>(out: &mut W, docs: &[PseudoDocument]) -> std::io::Result<()> {
    for doc in docs {
        let line = serde_json::json!({
            "class_of_origin": doc.class_of_origin,
            "pseudo_label": doc.pseudo_label,
        });
        writeln!(out, "{}", line)?;
    }
    Ok(())
}
