//! Bag-of-embeddings baseline: mean token embedding into a dense softmax.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    kl_row, sgd_step, softmax_in_place, train_epoch_impl, train_minibatches_impl, Classifier,
    ClassifierError, GradientModel, ModelSnapshot, SoftDataset, TrainConfig,
};
use crate::embedding::EmbeddingMatrix;

pub struct BagOfEmbeddings {
    dim: usize,
    vocab_size: usize,
    num_classes: usize,
    vocab_hash: String,
    // Flat layout: [embedding table V*p] [dense weights m*p] [dense biases m]
    params: Vec<f64>,
    velocity: Vec<f64>,
    dense_w_off: usize,
    dense_b_off: usize,
    rng: ChaCha8Rng,
    train_calls: u64,
}

impl BagOfEmbeddings {
    pub fn new(
        embeddings: &EmbeddingMatrix,
        vocab_hash: String,
        num_classes: usize,
        rng_seed: u64,
    ) -> Self {
        assert!(num_classes >= 1);
        let dim = embeddings.dim();
        let vocab_size = embeddings.rows();
        let emb_len = vocab_size * dim;
        let dense_w_off = emb_len;
        let dense_b_off = emb_len + num_classes * dim;

        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut params = vec![0.0f64; dense_b_off + num_classes];
        params[..emb_len].copy_from_slice(embeddings.data());
        let limit = (6.0 / (dim + num_classes) as f64).sqrt();
        for w in &mut params[dense_w_off..dense_b_off] {
            *w = rng.random_range(-limit..limit);
        }

        BagOfEmbeddings {
            dim,
            vocab_size,
            num_classes,
            vocab_hash,
            velocity: vec![0.0; params.len()],
            params,
            dense_w_off,
            dense_b_off,
            rng,
            train_calls: 0,
        }
    }

    /// Token counts in ascending token order. Accumulating the mean in
    /// this canonical order makes the forward pass bitwise
    /// permutation-invariant.
    fn sorted_counts(doc: &[usize]) -> Vec<(usize, usize)> {
        let mut sorted = doc.to_vec();
        sorted.sort_unstable();
        let mut counts: Vec<(usize, usize)> = Vec::new();
        for t in sorted {
            match counts.last_mut() {
                Some((prev, n)) if *prev == t => *n += 1,
                _ => counts.push((t, 1)),
            }
        }
        counts
    }

    fn mean_embedding(&self, doc: &[usize]) -> Vec<f64> {
        debug_assert!(doc.iter().all(|&t| t < self.vocab_size));
        let p = self.dim;
        let mut mean = vec![0.0f64; p];
        for (t, n) in Self::sorted_counts(doc) {
            let row = &self.params[t * p..(t + 1) * p];
            let w = n as f64;
            for (m, e) in mean.iter_mut().zip(row) {
                *m += w * e;
            }
        }
        let inv = 1.0 / doc.len() as f64;
        for m in &mut mean {
            *m *= inv;
        }
        mean
    }

    fn logits(&self, mean: &[f64]) -> Vec<f64> {
        (0..self.num_classes)
            .map(|c| {
                let row = self.dense_w_off + c * self.dim;
                let mut z = self.params[self.dense_b_off + c];
                for (w, x) in self.params[row..row + self.dim].iter().zip(mean) {
                    z += w * x;
                }
                z
            })
            .collect()
    }
}

impl GradientModel for BagOfEmbeddings {
    fn shuffle_rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn accumulate_batch(
        &self,
        docs: &[&[usize]],
        targets: &[&[f64]],
        fine_tune: bool,
    ) -> Result<(f64, Vec<f64>), ClassifierError> {
        let m = self.num_classes;
        let p = self.dim;
        let mut grads = vec![0.0f64; self.params.len()];
        let mut loss = 0.0;

        for (doc, target) in docs.iter().zip(targets) {
            if doc.is_empty() {
                return Err(ClassifierError::EmptyDocument);
            }
            debug_assert_eq!(target.len(), m);
            let mean = self.mean_embedding(doc);
            let mut y = self.logits(&mean);
            softmax_in_place(&mut y);
            loss += kl_row(target, &y);

            let mut g_mean = vec![0.0f64; p];
            for c in 0..m {
                let d = y[c] - target[c];
                grads[self.dense_b_off + c] += d;
                let row = self.dense_w_off + c * p;
                for q in 0..p {
                    grads[row + q] += d * mean[q];
                    g_mean[q] += d * self.params[row + q];
                }
            }
            if fine_tune {
                let inv = 1.0 / doc.len() as f64;
                for (t, n) in Self::sorted_counts(doc) {
                    let w = n as f64 * inv;
                    for q in 0..p {
                        grads[t * p + q] += w * g_mean[q];
                    }
                }
            }
        }
        Ok((loss, grads))
    }

    fn apply_update(&mut self, grads: &[f64], batch_n: usize, config: &TrainConfig) {
        let start = if config.fine_tune_embeddings {
            0
        } else {
            self.dense_w_off
        };
        sgd_step(
            &mut self.params,
            &mut self.velocity,
            grads,
            batch_n,
            config,
            start,
        );
    }

    fn bump_train_calls(&mut self) {
        self.train_calls += 1;
    }
}

impl Classifier for BagOfEmbeddings {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict_proba(&self, doc: &[usize]) -> Result<Vec<f64>, ClassifierError> {
        if doc.is_empty() {
            return Err(ClassifierError::EmptyDocument);
        }
        let mean = self.mean_embedding(doc);
        let mut y = self.logits(&mean);
        softmax_in_place(&mut y);
        Ok(y)
    }

    fn train_epoch(
        &mut self,
        data: &SoftDataset,
        config: &TrainConfig,
    ) -> Result<f64, ClassifierError> {
        train_epoch_impl(self, data, config)
    }

    fn train_minibatches(
        &mut self,
        data: &SoftDataset,
        config: &TrainConfig,
        batches: usize,
    ) -> Result<f64, ClassifierError> {
        train_minibatches_impl(self, data, config, batches)
    }

    fn snapshot(&self) -> ModelSnapshot {
        ModelSnapshot {
            kind: "bag_of_embeddings".to_string(),
            vocab_hash: self.vocab_hash.clone(),
            num_classes: self.num_classes,
            dim: self.dim,
            window_sizes: Vec::new(),
            filters: 0,
            params: self.params.clone(),
            velocity: self.velocity.clone(),
            train_calls: self.train_calls,
        }
    }

    fn restore(&mut self, snapshot: &ModelSnapshot) -> Result<(), ClassifierError> {
        if snapshot.kind != "bag_of_embeddings" {
            return Err(ClassifierError::SnapshotMismatch(format!(
                "kind {:?} is not a bag_of_embeddings",
                snapshot.kind
            )));
        }
        if snapshot.vocab_hash != self.vocab_hash {
            return Err(ClassifierError::SnapshotMismatch(
                "vocabulary hash differs".to_string(),
            ));
        }
        if snapshot.num_classes != self.num_classes
            || snapshot.dim != self.dim
            || snapshot.params.len() != self.params.len()
        {
            return Err(ClassifierError::SnapshotMismatch(
                "model shape differs".to_string(),
            ));
        }
        self.params.copy_from_slice(&snapshot.params);
        self.velocity.copy_from_slice(&snapshot.velocity);
        self.train_calls = snapshot.train_calls;
        Ok(())
    }
}
