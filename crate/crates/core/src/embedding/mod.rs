//! The shared semantic space: unit-norm word vectors in R^p, either trained
//! with Skip-Gram on the corpus or loaded from a word2vec text file.

mod skipgram;

pub use skipgram::{train_skipgram, SkipGramConfig};

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::Vocabulary;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("vocabulary has {0} words; at least 2 are required")]
    VocabularyTooSmall(usize),
    #[error("malformed header: expected \"<rows> <dim>\"")]
    MalformedHeader,
    #[error("line {line}: expected {expected} vector components, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major matrix of unit-norm word vectors; row w is the embedding of
/// vocabulary index w.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    /// Wrap raw row-major data and normalize every row to unit length.
    /// Rows with (near-)zero norm are replaced by the first basis vector.
    pub fn from_raw(dim: usize, mut data: Vec<f64>) -> Self {
        assert!(dim >= 1 && data.len() % dim == 0);
        for row in data.chunks_mut(dim) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                row.fill(0.0);
                row[0] = 1.0;
            } else {
                for x in row.iter_mut() {
                    *x /= norm;
                }
            }
        }
        EmbeddingMatrix { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, w: usize) -> &[f64] {
        &self.data[w * self.dim..(w + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Normalize `v` in place to unit Euclidean length. No-op on zero vectors.
pub fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// Top-k vocabulary indices by dot product with `query` (cosine order on
/// the unit sphere), skipping `exclude`. Ties break lexicographically.
pub fn nearest_words(
    embeddings: &EmbeddingMatrix,
    vocab: &Vocabulary,
    query: &[f64],
    k: usize,
    exclude: &HashSet<usize>,
) -> Vec<usize> {
    debug_assert_eq!(query.len(), embeddings.dim());
    let mut scored: Vec<(usize, f64)> = (0..embeddings.rows())
        .filter(|w| !exclude.contains(w))
        .map(|w| (w, dot(embeddings.row(w), query)))
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| vocab.word(a.0).cmp(vocab.word(b.0)))
    });
    scored.truncate(k);
    scored.into_iter().map(|(w, _)| w).collect()
}

/// Statistics from [`parse_word2vec_text`].
#[derive(Debug, Clone, Default)]
pub struct LoadStats {
    /// Vocabulary words absent from the file, assigned random unit vectors.
    pub missing_words: usize,
    /// File words not in the vocabulary, skipped.
    pub skipped_words: usize,
}

/// Parse word2vec text format: a "V p" header line, then one
/// "word v1 ... vp" line per word. Only vocabulary words are kept; missing
/// vocabulary words get small seeded random vectors. All rows end up
/// unit-norm.
pub fn parse_word2vec_text(
    content: &str,
    vocab: &Vocabulary,
    fill_seed: u64,
) -> Result<(EmbeddingMatrix, LoadStats), EmbeddingError> {
    let mut lines = content.lines().enumerate();
    let (_, header) = lines.next().ok_or(EmbeddingError::MalformedHeader)?;
    let mut parts = header.split(' ');
    let _rows: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or(EmbeddingError::MalformedHeader)?;
    let dim: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or(EmbeddingError::MalformedHeader)?;
    if parts.next().is_some() || dim == 0 {
        return Err(EmbeddingError::MalformedHeader);
    }

    let v = vocab.len();
    let mut data = vec![0.0f64; v * dim];
    let mut filled = vec![false; v];
    let mut stats = LoadStats::default();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let word = fields.next().ok_or(EmbeddingError::DimensionMismatch {
            line: i + 1,
            expected: dim + 1,
            found: 0,
        })?;
        let mut values = Vec::with_capacity(dim);
        for f in fields {
            let x: f64 = f.parse().map_err(|_| EmbeddingError::DimensionMismatch {
                line: i + 1,
                expected: dim,
                found: values.len(),
            })?;
            values.push(x);
        }
        if values.len() != dim {
            return Err(EmbeddingError::DimensionMismatch {
                line: i + 1,
                expected: dim,
                found: values.len(),
            });
        }
        match vocab.index_of(word) {
            Some(w) => {
                data[w * dim..(w + 1) * dim].copy_from_slice(&values);
                filled[w] = true;
            }
            None => stats.skipped_words += 1,
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(fill_seed);
    let half = 0.5 / dim as f64;
    for w in 0..v {
        if !filled[w] {
            stats.missing_words += 1;
            for x in &mut data[w * dim..(w + 1) * dim] {
                *x = rng.random_range(-half..half);
            }
        }
    }

    Ok((EmbeddingMatrix::from_raw(dim, data), stats))
}

/// Load embeddings from a word2vec text file (see [`parse_word2vec_text`]).
pub fn load_embeddings(
    path: &Path,
    vocab: &Vocabulary,
    fill_seed: u64,
) -> Result<(EmbeddingMatrix, LoadStats), EmbeddingError> {
    let content = std::fs::read_to_string(path)?;
    parse_word2vec_text(&content, vocab, fill_seed)
}

/// Serialize to word2vec text format with 6 decimal places per component.
pub fn write_word2vec_text<W: Write>(
    out: &mut W,
    embeddings: &EmbeddingMatrix,
    vocab: &Vocabulary,
) -> std::io::Result<()> {
    writeln!(out, "{} {}", embeddings.rows(), embeddings.dim())?;
    for w in 0..embeddings.rows() {
        write!(out, "{}", vocab.word(w))?;
        for x in embeddings.row(w) {
            write!(out, " {:.6}", x)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_corpus;
    use proptest::prelude::*;

    fn toy_vocab(words: &[&str]) -> Vocabulary {
        // One line repeating each word once keeps all words at min_count 1.
        let line = words.join(" ");
        build_corpus(vec![(line, None::<String>)], 1)
            .unwrap()
            .vocabulary
    }

    #[test]
    fn parse_simple_file() {
        let vocab = toy_vocab(&["ant", "bee"]);
        let content = "2 3\nant 1.0 0.0 0.0\nbee 0.0 2.0 0.0\n";
        let (emb, stats) = parse_word2vec_text(content, &vocab, 0).unwrap();
        assert_eq!(emb.rows(), 2);
        assert_eq!(emb.dim(), 3);
        assert_eq!(stats.missing_words, 0);
        for w in 0..2 {
            let norm: f64 = emb.row(w).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn dimension_mismatch_detected() {
        let vocab = toy_vocab(&["ant", "bee"]);
        let content = "2 3\nant 1.0 0.0 0.0\nbee 0.0 2.0\n";
        assert!(matches!(
            parse_word2vec_text(content, &vocab, 0),
            Err(EmbeddingError::DimensionMismatch { line: 3, .. })
        ));
    }

    #[test]
    fn malformed_header_detected() {
        let vocab = toy_vocab(&["ant"]);
        assert!(matches!(
            parse_word2vec_text("not a header\n", &vocab, 0),
            Err(EmbeddingError::MalformedHeader)
        ));
    }

    #[test]
    fn three_four_five_normalization() {
        let vocab = toy_vocab(&["ant"]);
        let content = "1 2\nant 3.0 4.0\n";
        let (emb, _) = parse_word2vec_text(content, &vocab, 0).unwrap();
        assert!((emb.row(0)[0] - 0.6).abs() < 1e-12);
        assert!((emb.row(0)[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn missing_vocab_words_get_random_unit_rows() {
        let vocab = toy_vocab(&["ant", "bee", "cow"]);
        let content = "1 4\nant 1 0 0 0\n";
        let (emb, stats) = parse_word2vec_text(content, &vocab, 9).unwrap();
        assert_eq!(stats.missing_words, 2);
        for w in 0..3 {
            let norm: f64 = emb.row(w).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn roundtrip_self_is_nearest() {
        let vocab = toy_vocab(&["ant", "bee", "cow", "dog"]);
        let content = "4 3\nant 1 0.2 0\nbee 0 1 -0.4\ncow -1 0.3 0.2\ndog 0.1 -1 0.5\n";
        let (emb, _) = parse_word2vec_text(content, &vocab, 0).unwrap();
        let mut buf = Vec::new();
        write_word2vec_text(&mut buf, &emb, &vocab).unwrap();
        let (emb2, _) =
            parse_word2vec_text(std::str::from_utf8(&buf).unwrap(), &vocab, 0).unwrap();
        for w in 0..vocab.len() {
            let hit = nearest_words(&emb2, &vocab, emb2.row(w), 1, &HashSet::new());
            assert_eq!(hit, vec![w]);
        }
    }

    #[test]
    fn nearest_exhaustion_returns_all_sorted() {
        let vocab = toy_vocab(&["ant", "bee", "cow"]);
        let content = "3 2\nant 1 0\nbee 0 1\ncow -1 0\n";
        let (emb, _) = parse_word2vec_text(content, &vocab, 0).unwrap();
        let query = [1.0, 0.0];
        let all = nearest_words(&emb, &vocab, &query, 10, &HashSet::new());
        assert_eq!(all.len(), 3);
        assert_eq!(all[0], vocab.index_of("ant").unwrap());
        assert_eq!(all[2], vocab.index_of("cow").unwrap());
    }

    #[test]
    fn nearest_matches_brute_force_on_random_matrix() {
        let vocab = toy_vocab(&[
            "apple", "berry", "cedar", "delta", "ember", "fjord", "grape", "holly", "ivory",
            "jolly",
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dim = 6;
        let data: Vec<f64> = (0..vocab.len() * dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let emb = EmbeddingMatrix::from_raw(dim, data);
        let mut query: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalize(&mut query);

        // Brute-force oracle: full dot-product sort, same tie rule.
        let mut oracle: Vec<usize> = (0..vocab.len()).collect();
        oracle.sort_by(|&a, &b| {
            dot(emb.row(b), &query)
                .partial_cmp(&dot(emb.row(a), &query))
                .unwrap()
                .then_with(|| vocab.word(a).cmp(vocab.word(b)))
        });

        let got = nearest_words(&emb, &vocab, &query, 4, &HashSet::new());
        assert_eq!(got, oracle[..4].to_vec());
    }

    proptest! {
        // On unit vectors, dot-product order and cosine order coincide.
        #[test]
        fn dot_order_equals_cosine_order(
            a in prop::collection::vec(-1.0f64..1.0, 4),
            b in prop::collection::vec(-1.0f64..1.0, 4),
            q in prop::collection::vec(-1.0f64..1.0, 4),
        ) {
            let mut a = a;
            let mut b = b;
            let mut q = q;
            normalize(&mut a);
            normalize(&mut b);
            normalize(&mut q);
            prop_assume!(a.iter().any(|&x| x != 0.0));
            prop_assume!(b.iter().any(|&x| x != 0.0));
            prop_assume!(q.iter().any(|&x| x != 0.0));
            let cos = |u: &[f64], v: &[f64]| {
                dot(u, v)
                    / (dot(u, u).sqrt() * dot(v, v).sqrt())
            };
            let by_dot = dot(&a, &q).partial_cmp(&dot(&b, &q)).unwrap();
            let by_cos = cos(&a, &q).partial_cmp(&cos(&b, &q)).unwrap();
            // Equal dots may compare Equal vs Less/Greater under cosine
            // rounding; only require agreement on strict orderings.
            if by_dot != std::cmp::Ordering::Equal && by_cos != std::cmp::Ordering::Equal {
                prop_assert_eq!(by_dot, by_cos);
            }
        }
    }
}
