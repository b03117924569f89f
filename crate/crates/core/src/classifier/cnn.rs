//! Word-level CNN: per-window convolutions, relu, max-over-time pooling,
//! dense softmax output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    kl_row, sgd_step, softmax_in_place, train_epoch_impl, train_minibatches_impl, Classifier,
    ClassifierError, GradientModel, ModelSnapshot, SoftDataset, TrainConfig,
};
use crate::embedding::EmbeddingMatrix;

pub const DEFAULT_WINDOW_SIZES: [usize; 4] = [2, 3, 4, 5];
pub const DEFAULT_FILTERS: usize = 20;

pub struct WordCnn {
    dim: usize,
    vocab_size: usize,
    window_sizes: Vec<usize>,
    filters: usize,
    num_classes: usize,
    vocab_hash: String,
    // Flat parameter layout:
    //   [embedding table V*p]
    //   per window k: [conv weights F*h_k*p] [conv biases F]
    //   [dense weights m*(|H|*F)] [dense biases m]
    params: Vec<f64>,
    velocity: Vec<f64>,
    conv_w_off: Vec<usize>,
    conv_b_off: Vec<usize>,
    dense_w_off: usize,
    dense_b_off: usize,
    feature_len: usize,
    rng: ChaCha8Rng,
    train_calls: u64,
}

impl WordCnn {
    /// Build a CNN over a frozen copy of `embeddings`. Conv and dense
    /// weights are Glorot-uniform, biases zero, all drawn from `rng_seed`.
    pub fn new(
        embeddings: &EmbeddingMatrix,
        vocab_hash: String,
        window_sizes: &[usize],
        filters: usize,
        num_classes: usize,
        rng_seed: u64,
    ) -> Self {
        assert!(!window_sizes.is_empty() && filters >= 1 && num_classes >= 1);
        assert!(window_sizes.iter().all(|&h| h >= 1));
        let dim = embeddings.dim();
        let vocab_size = embeddings.rows();
        let feature_len = window_sizes.len() * filters;

        let emb_len = vocab_size * dim;
        let mut conv_w_off = Vec::with_capacity(window_sizes.len());
        let mut conv_b_off = Vec::with_capacity(window_sizes.len());
        let mut cursor = emb_len;
        for &h in window_sizes {
            conv_w_off.push(cursor);
            cursor += filters * h * dim;
            conv_b_off.push(cursor);
            cursor += filters;
        }
        let dense_w_off = cursor;
        cursor += num_classes * feature_len;
        let dense_b_off = cursor;
        cursor += num_classes;

        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut params = vec![0.0f64; cursor];
        params[..emb_len].copy_from_slice(embeddings.data());
        for (k, &h) in window_sizes.iter().enumerate() {
            let limit = (6.0 / (h * dim + filters) as f64).sqrt();
            for w in &mut params[conv_w_off[k]..conv_b_off[k]] {
                *w = rng.random_range(-limit..limit);
            }
        }
        let limit = (6.0 / (feature_len + num_classes) as f64).sqrt();
        for w in &mut params[dense_w_off..dense_b_off] {
            *w = rng.random_range(-limit..limit);
        }

        WordCnn {
            dim,
            vocab_size,
            window_sizes: window_sizes.to_vec(),
            filters,
            num_classes,
            vocab_hash,
            velocity: vec![0.0; params.len()],
            params,
            conv_w_off,
            conv_b_off,
            dense_w_off,
            dense_b_off,
            feature_len,
            rng,
            train_calls: 0,
        }
    }

    fn emb_len(&self) -> usize {
        self.vocab_size * self.dim
    }

    /// Pooled feature vector plus, per feature, the winning window start
    /// and its pre-relu value (the backward pass needs both).
    fn features(&self, doc: &[usize]) -> (Vec<f64>, Vec<(usize, f64)>) {
        debug_assert!(!doc.is_empty());
        debug_assert!(doc.iter().all(|&t| t < self.vocab_size));
        let p = self.dim;
        let len = doc.len();
        let mut feats = vec![0.0; self.feature_len];
        let mut pool = vec![(0usize, 0.0f64); self.feature_len];
        let mut window = vec![0.0f64; self.window_sizes.iter().max().unwrap() * p];

        for (k, &h) in self.window_sizes.iter().enumerate() {
            // Documents shorter than the window are right-padded with
            // virtual zero vectors; every window start touches at least
            // one real token.
            let padded = len.max(h);
            let span = h * p;
            let mut best_c = vec![f64::NEG_INFINITY; self.filters];
            let mut best = vec![(0usize, 0.0f64); self.filters];
            for i in 0..=(padded - h) {
                for j in 0..h {
                    let dst = &mut window[j * p..(j + 1) * p];
                    if i + j < len {
                        let t = doc[i + j];
                        dst.copy_from_slice(&self.params[t * p..(t + 1) * p]);
                    } else {
                        dst.fill(0.0);
                    }
                }
                for f in 0..self.filters {
                    let w_off = self.conv_w_off[k] + f * span;
                    let mut z = self.params[self.conv_b_off[k] + f];
                    for (wq, xq) in self.params[w_off..w_off + span].iter().zip(&window[..span])
                    {
                        z += wq * xq;
                    }
                    let c = z.max(0.0);
                    if c > best_c[f] {
                        best_c[f] = c;
                        best[f] = (i, z);
                    }
                }
            }
            for f in 0..self.filters {
                let q = k * self.filters + f;
                feats[q] = best_c[f];
                pool[q] = best[f];
            }
        }
        (feats, pool)
    }

    fn logits(&self, feats: &[f64]) -> Vec<f64> {
        (0..self.num_classes)
            .map(|c| {
                let row = self.dense_w_off + c * self.feature_len;
                let mut z = self.params[self.dense_b_off + c];
                for (w, x) in self.params[row..row + self.feature_len].iter().zip(feats) {
                    z += w * x;
                }
                z
            })
            .collect()
    }

    #[cfg(test)]
    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
}

impl GradientModel for WordCnn {
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
            let (feats, pool) = self.features(doc);
            let mut y = self.logits(&feats);
            softmax_in_place(&mut y);
            loss += kl_row(target, &y);

            // KL through softmax: d loss / d logit_c = y_c - l_c.
            let mut g_feat = vec![0.0f64; self.feature_len];
            for c in 0..m {
                let d = y[c] - target[c];
                grads[self.dense_b_off + c] += d;
                let row = self.dense_w_off + c * self.feature_len;
                for q in 0..self.feature_len {
                    grads[row + q] += d * feats[q];
                    g_feat[q] += d * self.params[row + q];
                }
            }

            // Only the argmax window of each feature receives gradient,
            // and only when its pre-relu value was positive.
            for (k, &h) in self.window_sizes.iter().enumerate() {
                let span = h * p;
                for f in 0..self.filters {
                    let q = k * self.filters + f;
                    let (pos, pre) = pool[q];
                    if pre <= 0.0 {
                        continue;
                    }
                    let g = g_feat[q];
                    if g == 0.0 {
                        continue;
                    }
                    grads[self.conv_b_off[k] + f] += g;
                    let w_off = self.conv_w_off[k] + f * span;
                    for j in 0..h {
                        if pos + j >= doc.len() {
                            break;
                        }
                        let e_off = doc[pos + j] * p;
                        for qq in 0..p {
                            grads[w_off + j * p + qq] += g * self.params[e_off + qq];
                        }
                        if fine_tune {
                            for qq in 0..p {
                                grads[e_off + qq] += g * self.params[w_off + j * p + qq];
                            }
                        }
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
            self.emb_len()
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

impl Classifier for WordCnn {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict_proba(&self, doc: &[usize]) -> Result<Vec<f64>, ClassifierError> {
        if doc.is_empty() {
            return Err(ClassifierError::EmptyDocument);
        }
        let (feats, _) = self.features(doc);
        let mut y = self.logits(&feats);
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
            kind: "word_cnn".to_string(),
            vocab_hash: self.vocab_hash.clone(),
            num_classes: self.num_classes,
            dim: self.dim,
            window_sizes: self.window_sizes.clone(),
            filters: self.filters,
            params: self.params.clone(),
            velocity: self.velocity.clone(),
            train_calls: self.train_calls,
        }
    }

    fn restore(&mut self, snapshot: &ModelSnapshot) -> Result<(), ClassifierError> {
        if snapshot.kind != "word_cnn" {
            return Err(ClassifierError::SnapshotMismatch(format!(
                "kind {:?} is not a word_cnn",
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
            || snapshot.window_sizes != self.window_sizes
            || snapshot.filters != self.filters
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
