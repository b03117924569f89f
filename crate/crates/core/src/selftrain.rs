//! Pre-training on pseudo documents and iterative self-training on the
//! real corpus.
//!
//! Self-training alternates two phases: recompute sharpened targets from
//! the model's own predictions, then train a fixed number of mini-batches
//! toward those frozen targets. The run stops once fewer than delta
//! percent of documents change their argmax between checkpoints.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{
    kl_loss, predict_batch, Classifier, ClassifierError, SoftDataset, TrainConfig,
};
use crate::corpus::Corpus;
use crate::eval::{self, EvalError};
use crate::pseudogen::PseudoDocument;

#[derive(Debug, Error)]
pub enum SelfTrainError {
    /// A class received zero total probability mass across the corpus, so
    /// the target formula has no defined value for it.
    #[error("class {0} received zero total probability mass")]
    DegenerateFrequency(usize),
    #[error("labeling lengths differ: {prev} vs {new}")]
    LengthMismatch { prev: usize, new: usize },
    #[error("no pseudo documents to pre-train on")]
    NoPseudoDocuments,
    #[error("corpus has no documents")]
    EmptyCorpus,
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelfTrainConfig {
    /// Stopping threshold in percent: the loop ends once the fraction of
    /// documents whose argmax changed drops below delta / 100.
    pub delta: f64,
    /// Mini-batches trained between target recomputations.
    pub update_interval: usize,
    /// Safety cap on target recomputations.
    pub max_iterations: usize,
    pub pretrain_epochs: usize,
    /// Recorded in artifacts; ordering randomness lives in the model.
    pub rng_seed: u64,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        SelfTrainConfig {
            delta: 0.1,
            update_interval: 50,
            max_iterations: 100,
            pretrain_epochs: 5,
            rng_seed: 42,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: usize,
    /// Fraction of documents whose argmax changed since the previous
    /// checkpoint; 0.0 at the baseline checkpoint.
    pub change_fraction: f64,
    /// Mean per-document KL from the targets being trained toward to the
    /// current predictions.
    pub mean_kl_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub micro_f1: Option<f64>,
}

/// Checkpoint trace of one self-training run. The first checkpoint is the
/// pre-trained model's own assignments, before any self-training batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelfTrainReport {
    pub checkpoints: Vec<Checkpoint>,
}

impl SelfTrainReport {
    pub fn final_checkpoint(&self) -> &Checkpoint {
        self.checkpoints.last().expect("report is never empty")
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for checkpoint in &self.checkpoints {
            serde_json::to_writer(&mut *out, checkpoint)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Sharpened targets: l_ij = (y_ij^2 / f_j) / sum_j' (y_ij'^2 / f_j')
/// where f_j is the soft frequency sum_i y_ij over the whole matrix.
pub fn self_train_targets(predictions: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, SelfTrainError> {
    assert!(!predictions.is_empty(), "need at least one prediction row");
    let m = predictions[0].len();
    let mut freq = vec![0.0f64; m];
    for row in predictions {
        debug_assert_eq!(row.len(), m);
        for (f, y) in freq.iter_mut().zip(row) {
            *f += y;
        }
    }
    for (j, &f) in freq.iter().enumerate() {
        if f < 1e-12 {
            return Err(SelfTrainError::DegenerateFrequency(j));
        }
    }
    Ok(predictions
        .iter()
        .map(|row| {
            let mut target: Vec<f64> = row.iter().zip(&freq).map(|(y, f)| y * y / f).collect();
            let norm: f64 = target.iter().sum();
            for v in &mut target {
                *v /= norm;
            }
            target
        })
        .collect())
}

/// Fraction of positions whose label differs.
pub fn assignment_change_fraction(prev: &[usize], new: &[usize]) -> Result<f64, SelfTrainError> {
    if prev.len() != new.len() {
        return Err(SelfTrainError::LengthMismatch {
            prev: prev.len(),
            new: new.len(),
        });
    }
    if prev.is_empty() {
        return Ok(0.0);
    }
    let changed = prev.iter().zip(new).filter(|(a, b)| a != b).count();
    Ok(changed as f64 / prev.len() as f64)
}

/// Union of pseudo documents (soft labels) and real labeled documents
/// (one-hot), as one training set.
pub fn pretrain_dataset<'a>(
    pseudo_docs: &'a [PseudoDocument],
    labeled_docs: &[(&'a [usize], usize)],
    num_classes: usize,
) -> SoftDataset<'a> {
    let mut docs = Vec::with_capacity(pseudo_docs.len() + labeled_docs.len());
    let mut targets = Vec::with_capacity(pseudo_docs.len() + labeled_docs.len());
    for pd in pseudo_docs {
        debug_assert_eq!(pd.pseudo_label.len(), num_classes);
        docs.push(pd.tokens.as_slice());
        targets.push(pd.pseudo_label.clone());
    }
    for &(tokens, class) in labeled_docs {
        assert!(class < num_classes);
        docs.push(tokens);
        let mut row = vec![0.0; num_classes];
        row[class] = 1.0;
        targets.push(row);
    }
    SoftDataset::new(docs, targets)
}

/// Train `config.epochs` epochs over the pseudo/labeled union. Returns
/// the mean per-example loss of each epoch.
pub fn pretrain<C: Classifier>(
    model: &mut C,
    pseudo_docs: &[PseudoDocument],
    labeled_docs: &[(&[usize], usize)],
    config: &TrainConfig,
) -> Result<Vec<f64>, SelfTrainError> {
    if pseudo_docs.is_empty() {
        return Err(SelfTrainError::NoPseudoDocuments);
    }
    let data = pretrain_dataset(pseudo_docs, labeled_docs, model.num_classes());
    let mut losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        losses.push(model.train_epoch(&data, config)?);
    }
    Ok(losses)
}

fn lock_rows(targets: &mut [Vec<f64>], locked: &[(usize, usize)]) {
    for &(index, class) in locked {
        let row = &mut targets[index];
        assert!(class < row.len());
        row.fill(0.0);
        row[class] = 1.0;
    }
}

/// Iterative self-training. `locked_labels` pins (document index, class)
/// pairs to one-hot targets at every recomputation; pass the supervised
/// documents here when supervision is labeled docs, empty otherwise.
///
/// Checkpoint 0 records the pre-trained model's own assignments. Each
/// later checkpoint follows `update_interval` mini-batches and compares
/// assignments against the previous checkpoint; the run stops when the
/// changed fraction falls below delta percent (strictly) or after
/// `max_iterations` training rounds.
pub fn self_train<C: Classifier + Sync>(
    model: &mut C,
    corpus: &Corpus,
    locked_labels: &[(usize, usize)],
    train_config: &TrainConfig,
    config: &SelfTrainConfig,
) -> Result<SelfTrainReport, SelfTrainError> {
    assert!(config.delta > 0.0, "delta must be positive");
    assert!(config.update_interval >= 1);
    if corpus.documents.is_empty() {
        return Err(SelfTrainError::EmptyCorpus);
    }
    let n = corpus.num_documents();
    let docs: Vec<&[usize]> = corpus
        .documents
        .iter()
        .map(|d| d.tokens.as_slice())
        .collect();
    for &(index, _) in locked_labels {
        assert!(index < n, "locked index {index} out of range");
    }
    let gold = corpus.gold_labels();
    let eval_m = model.num_classes().max(corpus.label_names.len());
    let threshold = config.delta / 100.0;

    let scores = |labels: &[usize]| -> Result<(Option<f64>, Option<f64>), SelfTrainError> {
        match &gold {
            Some(g) => {
                let cm = eval::confusion(g, labels, eval_m)?;
                Ok((Some(eval::macro_f1(&cm)?), Some(eval::micro_f1(&cm)?)))
            }
            None => Ok((None, None)),
        }
    };

    let preds = predict_batch(model, &docs)?;
    let mut targets = self_train_targets(&preds.probs)?;
    lock_rows(&mut targets, locked_labels);
    let (macro_f1, micro_f1) = scores(&preds.labels)?;
    let mut checkpoints = vec![Checkpoint {
        iteration: 0,
        change_fraction: 0.0,
        mean_kl_loss: kl_loss(&targets, &preds.probs) / n as f64,
        macro_f1,
        micro_f1,
    }];
    let mut prev_labels = preds.labels;

    for iteration in 1..=config.max_iterations {
        let data = SoftDataset::new(docs.clone(), targets.clone());
        model.train_minibatches(&data, train_config, config.update_interval)?;

        let preds = predict_batch(model, &docs)?;
        let fraction = assignment_change_fraction(&prev_labels, &preds.labels)?;
        let (macro_f1, micro_f1) = scores(&preds.labels)?;
        checkpoints.push(Checkpoint {
            iteration,
            change_fraction: fraction,
            mean_kl_loss: kl_loss(&targets, &preds.probs) / n as f64,
            macro_f1,
            micro_f1,
        });
        prev_labels = preds.labels;
        if fraction < threshold {
            break;
        }
        targets = self_train_targets(&preds.probs)?;
        lock_rows(&mut targets, locked_labels);
    }

    Ok(SelfTrainReport { checkpoints })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{argmax, BagOfEmbeddings};
    use crate::corpus::Document;
    use crate::embedding::EmbeddingMatrix;
    use crate::pseudogen::pseudo_label;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn targets_match_hand_computed_rationals() {
        let y = vec![vec![0.9, 0.1], vec![0.6, 0.4]];
        let l = self_train_targets(&y).unwrap();
        // f = [1.5, 0.5]; row 0: (0.54, 0.02)/0.56; row 1: (0.24, 0.32)/0.56.
        let expected = [
            [27.0 / 28.0, 1.0 / 28.0],
            [3.0 / 7.0, 4.0 / 7.0],
        ];
        for (row, exp) in l.iter().zip(&expected) {
            for (a, b) in row.iter().zip(exp) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_class_targets_are_degenerate_ones() {
        let y = vec![vec![1.0]; 4];
        for row in self_train_targets(&y).unwrap() {
            assert_eq!(row, vec![1.0]);
        }
    }

    #[test]
    fn permuting_rows_permutes_targets() {
        // Dyadic entries keep the soft frequencies exact under any
        // summation order, so the comparison can be bitwise.
        let y = vec![
            vec![0.5, 0.25, 0.25],
            vec![0.25, 0.625, 0.125],
            vec![0.125, 0.125, 0.75],
        ];
        let l = self_train_targets(&y).unwrap();
        let y_perm = vec![y[2].clone(), y[0].clone(), y[1].clone()];
        let l_perm = self_train_targets(&y_perm).unwrap();
        assert_eq!(l_perm[0], l[2]);
        assert_eq!(l_perm[1], l[0]);
        assert_eq!(l_perm[2], l[1]);
    }

    #[test]
    fn zero_mass_class_is_degenerate() {
        let y = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        assert!(matches!(
            self_train_targets(&y),
            Err(SelfTrainError::DegenerateFrequency(1))
        ));
    }

    proptest! {
        #[test]
        fn target_rows_are_stochastic_and_sharpened(
            raw in proptest::collection::vec(
                proptest::collection::vec(0.05f64..1.0, 3),
                1..8,
            )
        ) {
            let y: Vec<Vec<f64>> = raw
                .iter()
                .map(|row| {
                    let s: f64 = row.iter().sum();
                    row.iter().map(|v| v / s).collect()
                })
                .collect();
            let mut freq = vec![0.0f64; 3];
            for row in &y {
                for (f, v) in freq.iter_mut().zip(row) {
                    *f += v;
                }
            }
            let l = self_train_targets(&y).unwrap();
            for (lrow, yrow) in l.iter().zip(&y) {
                let sum: f64 = lrow.iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
                for j in 0..3 {
                    for k in 0..3 {
                        if yrow[j] > yrow[k] && freq[j] <= freq[k] {
                            prop_assert!(
                                lrow[j] / lrow[k] > yrow[j] / yrow[k],
                                "sharpening violated at ({}, {})", j, k
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn change_fraction_counts_flips() {
        assert_eq!(assignment_change_fraction(&[1, 0, 2], &[1, 0, 2]).unwrap(), 0.0);
        assert_eq!(assignment_change_fraction(&[0, 1], &[1, 0]).unwrap(), 1.0);
        let prev: Vec<usize> = vec![0; 1000];
        let mut new = prev.clone();
        new[10] = 1;
        new[500] = 1;
        new[999] = 1;
        assert_eq!(assignment_change_fraction(&prev, &new).unwrap(), 0.003);
        assert!(matches!(
            assignment_change_fraction(&[0], &[0, 1]),
            Err(SelfTrainError::LengthMismatch { prev: 1, new: 2 })
        ));
    }

    #[test]
    fn locked_rows_become_one_hot() {
        let mut targets = vec![vec![0.5, 0.5], vec![0.9, 0.1], vec![0.2, 0.8]];
        lock_rows(&mut targets, &[(0, 1), (2, 0)]);
        assert_eq!(targets[0], vec![0.0, 1.0]);
        assert_eq!(targets[1], vec![0.9, 0.1]);
        assert_eq!(targets[2], vec![1.0, 0.0]);
    }

    /// Two linearly separable classes: tokens 0-2 point toward +e1,
    /// tokens 3-5 toward -e1.
    fn polar_embeddings() -> EmbeddingMatrix {
        let mut data = vec![0.0; 6 * 2];
        for t in 0..6 {
            data[t * 2] = if t < 3 { 1.0 } else { -1.0 };
            data[t * 2 + 1] = if t % 2 == 0 { 0.2 } else { -0.2 };
        }
        EmbeddingMatrix::from_raw(2, data)
    }

    fn polar_pseudo_docs(per_class: usize, seed: u64) -> Vec<PseudoDocument> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut docs = Vec::new();
        for class in 0..2 {
            let base = if class == 0 { 0 } else { 3 };
            for _ in 0..per_class {
                docs.push(PseudoDocument {
                    tokens: (0..8).map(|_| base + rng.random_range(0..3)).collect(),
                    class_of_origin: class,
                    pseudo_label: pseudo_label(class, 0.2, 2),
                });
            }
        }
        docs
    }

    fn polar_corpus(per_class: usize, seed: u64) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut documents = Vec::new();
        for i in 0..per_class * 2 {
            let class = i % 2;
            let base = if class == 0 { 0 } else { 3 };
            documents.push(Document {
                id: i,
                tokens: (0..8).map(|_| base + rng.random_range(0..3)).collect(),
                gold_label: Some(class),
            });
        }
        let words: Vec<String> = (0..6).map(|t| format!("w{t}")).collect();
        let counts = vec![10u64; 6];
        Corpus {
            vocabulary: crate::corpus::Vocabulary::from_parts(words, counts),
            documents,
            label_names: vec!["neg".into(), "pos".into()],
            dropped_documents: 0,
        }
    }

    fn pretrained_model(seed: u64) -> (BagOfEmbeddings, Vec<PseudoDocument>) {
        let mut model = BagOfEmbeddings::new(&polar_embeddings(), "h".to_string(), 2, seed);
        let pseudo = polar_pseudo_docs(50, seed);
        let config = TrainConfig {
            learning_rate: 0.5,
            batch_size: 16,
            epochs: 5,
            ..TrainConfig::default()
        };
        pretrain(&mut model, &pseudo, &[], &config).unwrap();
        (model, pseudo)
    }

    #[test]
    fn pretrain_dataset_counts_pseudo_plus_labeled_union() {
        let pseudo: Vec<PseudoDocument> = (0..4)
            .flat_map(|class| {
                (0..500).map(move |_| PseudoDocument {
                    tokens: vec![class],
                    class_of_origin: class,
                    pseudo_label: pseudo_label(class, 0.2, 4),
                })
            })
            .collect();
        assert_eq!(pretrain_dataset(&pseudo, &[], 4).len(), 2000);

        let real: Vec<Vec<usize>> = (0..40).map(|i| vec![i % 4]).collect();
        let labeled: Vec<(&[usize], usize)> =
            real.iter().map(|t| (t.as_slice(), t[0])).collect();
        let data = pretrain_dataset(&pseudo, &labeled, 4);
        assert_eq!(data.len(), 2040);
        // Labeled rows are appended one-hot.
        assert_eq!(data.targets[2000], vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pretrain_reaches_high_accuracy_on_separable_task() {
        let (model, pseudo) = pretrained_model(11);
        let correct = pseudo
            .iter()
            .filter(|pd| {
                argmax(&model.predict_proba(&pd.tokens).unwrap()) == pd.class_of_origin
            })
            .count();
        let accuracy = correct as f64 / pseudo.len() as f64;
        assert!(accuracy >= 0.95, "accuracy {accuracy}");
    }

    #[test]
    fn pretrain_requires_pseudo_documents() {
        let mut model = BagOfEmbeddings::new(&polar_embeddings(), "h".to_string(), 2, 0);
        assert!(matches!(
            pretrain(&mut model, &[], &[], &TrainConfig::default()),
            Err(SelfTrainError::NoPseudoDocuments)
        ));
    }

    #[test]
    fn zero_learning_rate_terminates_at_fixed_point() {
        let (mut model, _) = pretrained_model(12);
        let corpus = polar_corpus(30, 12);
        let frozen = TrainConfig {
            learning_rate: 0.0,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let report = self_train(
            &mut model,
            &corpus,
            &[],
            &frozen,
            &SelfTrainConfig::default(),
        )
        .unwrap();
        assert_eq!(report.checkpoints.len(), 2);
        assert_eq!(report.checkpoints[1].change_fraction, 0.0);
        assert_eq!(report.checkpoints[1].iteration, 1);
    }

    #[test]
    fn delta_of_one_hundred_stops_at_first_comparison() {
        let (mut model, _) = pretrained_model(13);
        let corpus = polar_corpus(30, 13);
        let config = SelfTrainConfig {
            delta: 100.0,
            ..SelfTrainConfig::default()
        };
        let tc = TrainConfig {
            learning_rate: 0.1,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let report = self_train(&mut model, &corpus, &[], &tc, &config).unwrap();
        // Baseline checkpoint plus one comparison: any fraction below 1.0
        // passes a 100 percent threshold.
        assert_eq!(report.checkpoints.len(), 2);
        assert!(report.checkpoints[1].change_fraction < 1.0);
    }

    #[test]
    fn max_iterations_caps_the_loop() {
        let (mut base, _) = pretrained_model(14);
        let corpus = polar_corpus(30, 14);
        let tc = TrainConfig {
            learning_rate: 0.1,
            batch_size: 16,
            ..TrainConfig::default()
        };

        let snap = base.snapshot();
        let zero = SelfTrainConfig {
            max_iterations: 0,
            ..SelfTrainConfig::default()
        };
        let report = self_train(&mut base, &corpus, &[], &tc, &zero).unwrap();
        assert_eq!(report.checkpoints.len(), 1);
        assert_eq!(report.checkpoints[0].iteration, 0);
        assert_eq!(report.checkpoints[0].change_fraction, 0.0);

        base.restore(&snap).unwrap();
        let capped = SelfTrainConfig {
            max_iterations: 3,
            delta: 1e-12,
            ..SelfTrainConfig::default()
        };
        let report = self_train(&mut base, &corpus, &[], &tc, &capped).unwrap();
        assert!(report.checkpoints.len() <= 4);
        assert!(report.final_checkpoint().iteration <= 3);
    }

    #[test]
    fn self_training_preserves_separable_accuracy() {
        let (mut model, _) = pretrained_model(15);
        let corpus = polar_corpus(40, 15);
        let docs: Vec<&[usize]> = corpus
            .documents
            .iter()
            .map(|d| d.tokens.as_slice())
            .collect();
        let gold = corpus.gold_labels().unwrap();

        let before = predict_batch(&model, &docs).unwrap();
        let cm = eval::confusion(&gold, &before.labels, 2).unwrap();
        let micro_before = eval::micro_f1(&cm).unwrap();

        let tc = TrainConfig {
            learning_rate: 0.1,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let report = self_train(
            &mut model,
            &corpus,
            &[],
            &tc,
            &SelfTrainConfig::default(),
        )
        .unwrap();

        let after = predict_batch(&model, &docs).unwrap();
        let cm = eval::confusion(&gold, &after.labels, 2).unwrap();
        let micro_after = eval::micro_f1(&cm).unwrap();
        assert!(
            micro_after >= micro_before - 0.02,
            "micro fell from {micro_before} to {micro_after}"
        );
        // Gold labels exist, so every checkpoint carries F1 numbers.
        for c in &report.checkpoints {
            assert_eq!(c.micro_f1.is_some(), true);
            assert!(c.change_fraction >= 0.0 && c.change_fraction <= 1.0);
        }
    }

    #[test]
    fn runs_are_bit_reproducible() {
        let run = || {
            let (mut model, _) = pretrained_model(16);
            let corpus = polar_corpus(25, 16);
            let tc = TrainConfig {
                learning_rate: 0.1,
                batch_size: 8,
                ..TrainConfig::default()
            };
            let report = self_train(
                &mut model,
                &corpus,
                &[],
                &tc,
                &SelfTrainConfig::default(),
            )
            .unwrap();
            let fractions: Vec<f64> = report
                .checkpoints
                .iter()
                .map(|c| c.change_fraction)
                .collect();
            (fractions, model.snapshot().params)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn report_serializes_one_checkpoint_per_line() {
        let report = SelfTrainReport {
            checkpoints: vec![
                Checkpoint {
                    iteration: 0,
                    change_fraction: 0.0,
                    mean_kl_loss: 0.5,
                    macro_f1: None,
                    micro_f1: None,
                },
                Checkpoint {
                    iteration: 1,
                    change_fraction: 0.25,
                    mean_kl_loss: 0.25,
                    macro_f1: Some(0.9),
                    micro_f1: Some(0.92),
                },
            ],
        };
        let mut buf = Vec::new();
        report.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        // Absent F1 keys are omitted entirely, not serialized as null.
        assert!(!lines[0].contains("macro_f1"));
        let parsed: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(parsed["iteration"], 1);
        assert_eq!(parsed["micro_f1"], 0.92);
    }
}
