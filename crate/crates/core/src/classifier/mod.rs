//! Probabilistic document classifiers trained on KL divergence against soft
//! targets: a word-CNN and a bag-of-embeddings baseline behind one trait.

mod bag;
mod cnn;

pub use bag::BagOfEmbeddings;
pub use cnn::{WordCnn, DEFAULT_FILTERS, DEFAULT_WINDOW_SIZES};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("cannot classify an empty document")]
    EmptyDocument,
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("snapshot does not match this model: {0}")]
    SnapshotMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub momentum: f64,
    pub rng_seed: u64,
    /// With this off (the default), embedding rows receive no gradient.
    pub fine_tune_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 256,
            epochs: 5,
            momentum: 0.9,
            rng_seed: 42,
            fine_tune_embeddings: false,
        }
    }
}

/// Documents paired with soft target rows. Docs are borrowed token slices;
/// target rows must be probability vectors of the model's class count.
#[derive(Debug, Clone)]
pub struct SoftDataset<'a> {
    pub docs: Vec<&'a [usize]>,
    pub targets: Vec<Vec<f64>>,
}

impl<'a> SoftDataset<'a> {
    pub fn new(docs: Vec<&'a [usize]>, targets: Vec<Vec<f64>>) -> Self {
        assert_eq!(docs.len(), targets.len());
        SoftDataset { docs, targets }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

/// Serialized model state: flat parameter vector plus enough shape and
/// provenance information to refuse a mismatched restore.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub kind: String,
    pub vocab_hash: String,
    pub num_classes: usize,
    pub dim: usize,
    /// CNN window sizes; empty for models without convolutions.
    pub window_sizes: Vec<usize>,
    /// CNN filters per window; 0 for models without convolutions.
    pub filters: usize,
    pub params: Vec<f64>,
    pub velocity: Vec<f64>,
    pub train_calls: u64,
}

pub trait Classifier {
    fn num_classes(&self) -> usize;

    /// Class probability vector for one document (strictly positive,
    /// sums to 1).
    fn predict_proba(&self, doc: &[usize]) -> Result<Vec<f64>, ClassifierError>;

    /// One shuffled pass over the dataset; returns mean per-example loss.
    fn train_epoch(&mut self, data: &SoftDataset, config: &TrainConfig)
        -> Result<f64, ClassifierError>;

    /// Exactly `batches` mini-batch updates, reshuffling whenever the
    /// dataset is exhausted; returns mean per-example loss over the
    /// examples seen.
    fn train_minibatches(
        &mut self,
        data: &SoftDataset,
        config: &TrainConfig,
        batches: usize,
    ) -> Result<f64, ClassifierError>;

    fn snapshot(&self) -> ModelSnapshot;

    fn restore(&mut self, snapshot: &ModelSnapshot) -> Result<(), ClassifierError>;
}

/// KL divergence summed over all rows: sum_ij l_ij ln(l_ij / y_ij), with
/// zero target entries contributing zero.
pub fn kl_loss<A: AsRef<[f64]>, B: AsRef<[f64]>>(targets: &[A], predictions: &[B]) -> f64 {
    assert_eq!(targets.len(), predictions.len());
    let mut total = 0.0;
    for (l_row, y_row) in targets.iter().zip(predictions) {
        total += kl_row(l_row.as_ref(), y_row.as_ref());
    }
    total
}

pub(crate) fn kl_row(l: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(l.len(), y.len());
    l.iter()
        .zip(y)
        .filter(|(&l_j, _)| l_j > 0.0)
        .map(|(&l_j, &y_j)| l_j * (l_j / y_j).ln())
        .sum()
}

/// Index of the row maximum; ties break to the lowest class index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub probs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// Row-wise forward passes, fanned out across documents. Each row is an
/// independent computation so the result is identical for any thread count.
pub fn predict_batch<C: Classifier + Sync>(
    model: &C,
    docs: &[&[usize]],
) -> Result<Predictions, ClassifierError> {
    let probs: Vec<Vec<f64>> = docs
        .par_iter()
        .map(|doc| model.predict_proba(doc))
        .collect::<Result<_, _>>()?;
    let labels = probs.iter().map(|row| argmax(row)).collect();
    Ok(Predictions { probs, labels })
}

pub(crate) fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for x in logits.iter_mut() {
        *x = (*x - max).exp();
        denom += *x;
    }
    for x in logits.iter_mut() {
        *x /= denom;
    }
}

/// Gradient plumbing shared by the concrete models: accumulate summed
/// loss/gradients over a batch, then apply one SGD-with-momentum step.
pub(crate) trait GradientModel {
    fn shuffle_rng(&mut self) -> &mut ChaCha8Rng;

    /// Summed (not mean) loss and parameter gradients over the batch.
    fn accumulate_batch(
        &self,
        docs: &[&[usize]],
        targets: &[&[f64]],
        fine_tune: bool,
    ) -> Result<(f64, Vec<f64>), ClassifierError>;

    /// v = momentum v - lr g/n; params += v. `fine_tune` widens the update
    /// to the embedding block.
    fn apply_update(&mut self, grads: &[f64], batch_n: usize, config: &TrainConfig);

    fn bump_train_calls(&mut self);
}

pub(crate) fn sgd_step(
    params: &mut [f64],
    velocity: &mut [f64],
    grads: &[f64],
    batch_n: usize,
    config: &TrainConfig,
    start: usize,
) {
    let scale = 1.0 / batch_n as f64;
    for i in start..params.len() {
        velocity[i] = config.momentum * velocity[i] - config.learning_rate * grads[i] * scale;
        params[i] += velocity[i];
    }
}

fn batch_refs<'d>(
    data: &'d SoftDataset,
    index: &[usize],
) -> (Vec<&'d [usize]>, Vec<&'d [f64]>) {
    let docs = index.iter().map(|&i| data.docs[i]).collect();
    let targets = index.iter().map(|&i| data.targets[i].as_slice()).collect();
    (docs, targets)
}

pub(crate) fn train_epoch_impl<M: GradientModel>(
    model: &mut M,
    data: &SoftDataset,
    config: &TrainConfig,
) -> Result<f64, ClassifierError> {
    if data.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    assert!(config.batch_size >= 1 && config.learning_rate >= 0.0);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(model.shuffle_rng());

    let mut loss_sum = 0.0;
    for batch in order.chunks(config.batch_size) {
        let (docs, targets) = batch_refs(data, batch);
        let (loss, grads) = model.accumulate_batch(&docs, &targets, config.fine_tune_embeddings)?;
        model.apply_update(&grads, batch.len(), config);
        loss_sum += loss;
    }
    model.bump_train_calls();
    Ok(loss_sum / data.len() as f64)
}

pub(crate) fn train_minibatches_impl<M: GradientModel>(
    model: &mut M,
    data: &SoftDataset,
    config: &TrainConfig,
    batches: usize,
) -> Result<f64, ClassifierError> {
    if data.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    assert!(config.batch_size >= 1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(model.shuffle_rng());
    let mut cursor = 0usize;

    let mut loss_sum = 0.0;
    let mut seen = 0usize;
    for _ in 0..batches {
        if cursor >= order.len() {
            order.shuffle(model.shuffle_rng());
            cursor = 0;
        }
        let end = (cursor + config.batch_size).min(order.len());
        let batch = &order[cursor..end];
        cursor = end;

        let (docs, targets) = batch_refs(data, batch);
        let (loss, grads) = model.accumulate_batch(&docs, &targets, config.fine_tune_embeddings)?;
        model.apply_update(&grads, batch.len(), config);
        loss_sum += loss;
        seen += batch.len();
    }
    model.bump_train_calls();
    Ok(loss_sum / seen as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kl_identity_is_zero() {
        let rows = vec![vec![0.3, 0.7], vec![0.5, 0.5]];
        assert_eq!(kl_loss(&rows, &rows), 0.0);
    }

    #[test]
    fn kl_one_hot_against_uniform_is_ln_two() {
        let l = vec![vec![1.0, 0.0]];
        let y = vec![vec![0.5, 0.5]];
        assert!((kl_loss(&l, &y) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn kl_matches_direct_summation() {
        let l: Vec<Vec<f64>> = vec![
            vec![0.1, 0.2, 0.3, 0.4],
            vec![0.25, 0.25, 0.25, 0.25],
            vec![0.7, 0.1, 0.1, 0.1],
        ];
        let y = vec![
            vec![0.4, 0.3, 0.2, 0.1],
            vec![0.1, 0.2, 0.3, 0.4],
            vec![0.25, 0.25, 0.25, 0.25],
        ];
        // Independent route: scalar loop without the helper.
        let mut expected = 0.0f64;
        for i in 0..3 {
            for j in 0..4 {
                if l[i][j] > 0.0 {
                    expected += l[i][j] * (l[i][j] / y[i][j]).ln();
                }
            }
        }
        assert!((kl_loss(&l, &y) - expected).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
        assert_eq!(argmax(&[0.1, 0.2, 0.7]), 2);
    }

    fn normalize_row(mut row: Vec<f64>) -> Vec<f64> {
        let s: f64 = row.iter().sum();
        for x in row.iter_mut() {
            *x /= s;
        }
        row
    }

    proptest! {
        // Gibbs' inequality: KL >= 0 with equality only at identical rows.
        #[test]
        fn kl_nonnegative(
            a in prop::collection::vec(0.01f64..1.0, 4),
            b in prop::collection::vec(0.01f64..1.0, 4),
        ) {
            let l = normalize_row(a);
            let y = normalize_row(b);
            let loss = kl_loss(&[l.clone()], &[y.clone()]);
            prop_assert!(loss >= -1e-12);
            let differs = l.iter().zip(&y).any(|(x, z)| (x - z).abs() > 1e-9);
            if differs {
                prop_assert!(loss > 0.0);
            }
        }
    }
}
