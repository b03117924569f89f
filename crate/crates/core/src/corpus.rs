//! Corpus ingestion: tokenization, vocabulary construction, background
//! unigram distribution and tf-idf statistics.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no document survived tokenization and min-count filtering")]
    AllDocumentsEmpty,
    #[error("document subset is empty")]
    EmptySubset,
    #[error("malformed labeled line {line}: expected \"label<TAB>text\"")]
    MalformedLabeledLine { line: usize },
}

/// One tokenized document. `tokens` are indices into the corpus vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: usize,
    pub tokens: Vec<usize>,
    /// Gold class index, present only for labeled corpora (evaluation only).
    pub gold_label: Option<usize>,
}

/// Dense word <-> index maps plus corpus frequencies.
///
/// Indices are 0..V-1, ordered by descending corpus frequency with
/// lexicographic tie-break, so vocabulary construction is deterministic.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    words: Vec<String>,
    index_of: HashMap<String, usize>,
    counts: Vec<u64>,
    total_tokens: u64,
}

impl Vocabulary {
    /// Assemble from parallel word/count lists already in canonical order
    /// (descending count, lexicographic tie-break).
    pub fn from_parts(words: Vec<String>, counts: Vec<u64>) -> Self {
        assert_eq!(words.len(), counts.len());
        let index_of = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        let total_tokens = counts.iter().sum();
        Vocabulary {
            words,
            index_of,
            counts,
            total_tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index_of.get(word).copied()
    }

    pub fn count(&self, index: usize) -> u64 {
        self.counts[index]
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }
}

/// Per-word unigram probability over the whole corpus.
#[derive(Debug, Clone)]
pub struct BackgroundDistribution {
    pub probs: Vec<f64>,
}

/// Per-word document frequencies and idf = ln(n / doc_freq).
#[derive(Debug, Clone)]
pub struct TfIdfIndex {
    pub doc_freq: Vec<usize>,
    pub idf: Vec<f64>,
}

/// A tokenized corpus together with its vocabulary.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub vocabulary: Vocabulary,
    /// Distinct gold label strings in lexicographic order; `gold_label`
    /// indices point into this list.
    pub label_names: Vec<String>,
    /// Documents dropped because no token survived filtering.
    pub dropped_documents: usize,
}

impl Corpus {
    pub fn num_documents(&self) -> usize {
        self.documents.len()
    }

    /// Mean document length in tokens, rounded to the nearest integer.
    pub fn mean_document_length(&self) -> usize {
        if self.documents.is_empty() {
            return 0;
        }
        let total: usize = self.documents.iter().map(|d| d.tokens.len()).sum();
        ((total as f64) / (self.documents.len() as f64)).round() as usize
    }

    pub fn gold_labels(&self) -> Option<Vec<usize>> {
        self.documents.iter().map(|d| d.gold_label).collect()
    }
}

/// Lowercase and split on runs of non-alphanumeric characters. Digits are
/// kept; empty input yields an empty sequence.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Build a corpus from `(text, optional label)` lines.
///
/// Words occurring fewer than `min_count` times are filtered out; documents
/// that become empty are dropped and counted in `dropped_documents`.
pub fn build_corpus<I, S>(lines: I, min_count: u64) -> Result<Corpus, CorpusError>
where
    I: IntoIterator<Item = (S, Option<S>)>,
    S: AsRef<str>,
{
    let mut raw_docs: Vec<(Vec<String>, Option<String>)> = Vec::new();
    let mut freq: HashMap<String, u64> = HashMap::new();
    for (text, label) in lines {
        let tokens = tokenize(text.as_ref());
        for t in &tokens {
            *freq.entry(t.clone()).or_insert(0) += 1;
        }
        raw_docs.push((tokens, label.map(|l| l.as_ref().to_owned())));
    }

    // Deterministic vocabulary order: frequency desc, then word asc.
    let mut kept: Vec<(String, u64)> = freq
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut index_of = HashMap::with_capacity(kept.len());
    let mut words = Vec::with_capacity(kept.len());
    let mut counts = Vec::with_capacity(kept.len());
    for (i, (w, c)) in kept.into_iter().enumerate() {
        index_of.insert(w.clone(), i);
        words.push(w);
        counts.push(c);
    }

    let mut label_names: Vec<String> = raw_docs
        .iter()
        .filter_map(|(_, l)| l.clone())
        .collect();
    label_names.sort();
    label_names.dedup();
    let label_index: HashMap<&str, usize> = label_names
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    let mut documents = Vec::new();
    let mut dropped = 0usize;
    let mut total_tokens = 0u64;
    for (tokens, label) in &raw_docs {
        let ids: Vec<usize> = tokens
            .iter()
            .filter_map(|t| index_of.get(t.as_str()).copied())
            .collect();
        if ids.is_empty() {
            dropped += 1;
            continue;
        }
        total_tokens += ids.len() as u64;
        documents.push(Document {
            id: documents.len(),
            tokens: ids,
            gold_label: label.as_deref().map(|l| label_index[l]),
        });
    }
    if documents.is_empty() {
        return Err(CorpusError::AllDocumentsEmpty);
    }

    // counts were tallied before empty documents were dropped; dropped
    // documents contain only out-of-vocabulary tokens so in-vocabulary
    // counts are unaffected and total_tokens still equals their sum.
    debug_assert_eq!(total_tokens, counts.iter().sum::<u64>());

    Ok(Corpus {
        documents,
        vocabulary: Vocabulary {
            words,
            index_of,
            counts,
            total_tokens,
        },
        label_names,
        dropped_documents: dropped,
    })
}

/// Parse corpus file content: one document per line. With `labeled` set,
/// each line is "label<TAB>text".
pub fn parse_corpus_text(
    content: &str,
    labeled: bool,
    min_count: u64,
) -> Result<Corpus, CorpusError> {
    let mut lines: Vec<(String, Option<String>)> = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if labeled {
            let (label, text) = line
                .split_once('\t')
                .ok_or(CorpusError::MalformedLabeledLine { line: i + 1 })?;
            lines.push((text.to_owned(), Some(label.trim().to_owned())));
        } else {
            lines.push((line.to_owned(), None));
        }
    }
    build_corpus(lines, min_count)
}

/// FNV-1a fingerprint of the vocabulary (words in index order). Model
/// checkpoints embed this to refuse loading against a different vocabulary.
pub fn vocabulary_hash(vocab: &Vocabulary) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut mix = |byte: u8| {
        h ^= byte as u64;
        h = h.wrapping_mul(0x100000001b3);
    };
    for w in vocab.words() {
        for b in w.as_bytes() {
            mix(*b);
        }
        mix(b'\n');
    }
    format!("{:016x}", h)
}

/// p_B(w) = count(w) / total corpus tokens.
pub fn background_distribution(corpus: &Corpus) -> BackgroundDistribution {
    let total = corpus.vocabulary.total_tokens() as f64;
    BackgroundDistribution {
        probs: corpus
            .vocabulary
            .counts
            .iter()
            .map(|&c| c as f64 / total)
            .collect(),
    }
}

/// Document frequencies and idf(w) = ln(n / doc_freq(w)) over the corpus.
pub fn tfidf_index(corpus: &Corpus) -> TfIdfIndex {
    let v = corpus.vocabulary.len();
    let n = corpus.documents.len() as f64;
    let mut doc_freq = vec![0usize; v];
    let mut seen = vec![usize::MAX; v];
    for (di, doc) in corpus.documents.iter().enumerate() {
        for &t in &doc.tokens {
            if seen[t] != di {
                seen[t] = di;
                doc_freq[t] += 1;
            }
        }
    }
    let idf = doc_freq
        .iter()
        .map(|&df| if df == 0 { 0.0 } else { (n / df as f64).ln() })
        .collect();
    TfIdfIndex { doc_freq, idf }
}

/// The `t` vocabulary indices with the highest average tf-idf weight over
/// `docs`, where tf is within-document relative frequency. Ties break by
/// lexicographic word order. Returns fewer than `t` words only when the
/// subset's vocabulary is smaller than `t`.
pub fn tfidf_keywords(
    corpus: &Corpus,
    docs: &[&Document],
    index: &TfIdfIndex,
    t: usize,
) -> Result<Vec<usize>, CorpusError> {
    if docs.is_empty() {
        return Err(CorpusError::EmptySubset);
    }
    // Accumulate in document-id order so the caller's ordering of the
    // subset cannot leak into floating-point tie-breaks.
    let mut docs: Vec<&Document> = docs.to_vec();
    docs.sort_by_key(|d| d.id);
    let v = corpus.vocabulary.len();
    let mut score = vec![0.0f64; v];
    let mut present = vec![false; v];
    let mut tf = vec![0.0f64; v];
    for doc in &docs {
        for x in tf.iter_mut() {
            *x = 0.0;
        }
        let len = doc.tokens.len() as f64;
        for &w in &doc.tokens {
            tf[w] += 1.0;
            present[w] = true;
        }
        for (w, &f) in tf.iter().enumerate() {
            if f > 0.0 {
                score[w] += (f / len) * index.idf[w];
            }
        }
    }
    let n_docs = docs.len() as f64;
    let mut ranked: Vec<usize> = (0..v).filter(|&w| present[w]).collect();
    ranked.sort_by(|&a, &b| {
        let sa = score[a] / n_docs;
        let sb = score[b] / n_docs;
        sb.partial_cmp(&sa)
            .unwrap()
            .then_with(|| corpus.vocabulary.word(a).cmp(corpus.vocabulary.word(b)))
    });
    ranked.truncate(t);
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_lowercases_and_splits() {
        assert_eq!(tokenize("The Cat, cat!"), vec!["the", "cat", "cat"]);
        assert_eq!(tokenize(""), Vec::<String>::new());
        assert_eq!(tokenize("a1-b2"), vec!["a1", "b2"]);
    }

    #[test]
    fn build_filters_by_min_count() {
        let corpus = build_corpus(
            vec![("a a b", None::<&str>), ("a c", None)],
            2,
        )
        .unwrap();
        assert_eq!(corpus.vocabulary.len(), 1);
        assert_eq!(corpus.vocabulary.word(0), "a");
        assert_eq!(corpus.documents.len(), 2);
        assert_eq!(corpus.documents[0].tokens, vec![0, 0]);
        assert_eq!(corpus.documents[1].tokens, vec![0]);
    }

    #[test]
    fn build_identity_case() {
        let corpus = build_corpus(vec![("x", None::<&str>)], 1).unwrap();
        assert_eq!(corpus.vocabulary.len(), 1);
        assert_eq!(corpus.documents.len(), 1);
    }

    #[test]
    fn build_rejects_fully_filtered_input() {
        let err = build_corpus(vec![("a b c", None::<&str>)], 5).unwrap_err();
        assert!(matches!(err, CorpusError::AllDocumentsEmpty));
    }

    #[test]
    fn build_drops_emptied_documents() {
        let corpus = build_corpus(
            vec![("a a a a a", None::<&str>), ("zzz", None)],
            2,
        )
        .unwrap();
        assert_eq!(corpus.dropped_documents, 1);
        assert_eq!(corpus.documents.len(), 1);
    }

    #[test]
    fn synthetic_total_tokens_matches_one_pass_counter() {
        // 1000 lines over a 50-word vocabulary; oracle is an independent
        // one-pass token counter over the raw lines.
        let mut lines = Vec::new();
        let mut expected_total = 0u64;
        for i in 0..1000usize {
            let mut words = Vec::new();
            for j in 0..(3 + i % 7) {
                words.push(format!("w{}", (i * 13 + j * 29) % 50));
            }
            expected_total += words.len() as u64;
            lines.push((words.join(" "), None::<String>));
        }
        let corpus = build_corpus(lines, 1).unwrap();
        assert_eq!(corpus.vocabulary.len(), 50);
        assert_eq!(corpus.vocabulary.total_tokens(), expected_total);
    }

    #[test]
    fn background_simple_ratios() {
        let corpus = build_corpus(vec![("a a b", None::<&str>)], 1).unwrap();
        let bg = background_distribution(&corpus);
        let a = corpus.vocabulary.index_of("a").unwrap();
        let b = corpus.vocabulary.index_of("b").unwrap();
        assert!((bg.probs[a] - 2.0 / 3.0).abs() < 1e-15);
        assert!((bg.probs[b] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn background_single_word() {
        let corpus = build_corpus(vec![("w w", None::<&str>)], 1).unwrap();
        let bg = background_distribution(&corpus);
        assert_eq!(bg.probs, vec![1.0]);
    }

    #[test]
    fn tfidf_two_doc_hand_oracle() {
        // doc0 = "a a b", doc1 = "a c": idf(a)=ln(1)=0, idf(b)=idf(c)=ln(2).
        // Over subset {doc0}: score(a) = (2/3)*0 = 0, score(b) = (1/3)*ln 2.
        let corpus = build_corpus(
            vec![("a a b", None::<&str>), ("a c", None)],
            1,
        )
        .unwrap();
        let index = tfidf_index(&corpus);
        let doc0 = &corpus.documents[0];
        let top = tfidf_keywords(&corpus, &[doc0], &index, 2).unwrap();
        let b = corpus.vocabulary.index_of("b").unwrap();
        let a = corpus.vocabulary.index_of("a").unwrap();
        assert_eq!(top, vec![b, a]);
        // Independent arithmetic for the winning score.
        let expected_b = (1.0 / 3.0) * (2.0f64).ln();
        let n = 2.0f64;
        let df_b = index.doc_freq[b] as f64;
        assert!(((n / df_b).ln() * (1.0 / 3.0) - expected_b).abs() < 1e-15);
    }

    #[test]
    fn tfidf_single_word_subset() {
        let corpus = build_corpus(
            vec![("solo solo", None::<&str>), ("other words", None)],
            1,
        )
        .unwrap();
        let index = tfidf_index(&corpus);
        let doc0 = &corpus.documents[0];
        let top = tfidf_keywords(&corpus, &[doc0], &index, 10).unwrap();
        assert_eq!(top, vec![corpus.vocabulary.index_of("solo").unwrap()]);
    }

    #[test]
    fn tfidf_empty_subset_errors() {
        let corpus = build_corpus(vec![("a b", None::<&str>)], 1).unwrap();
        let index = tfidf_index(&corpus);
        assert!(matches!(
            tfidf_keywords(&corpus, &[], &index, 3),
            Err(CorpusError::EmptySubset)
        ));
    }

    #[test]
    fn labeled_lines_parse_and_map_sorted() {
        let corpus =
            parse_corpus_text("beta\tx y\nalpha\ty z\n", true, 1).unwrap();
        assert_eq!(corpus.label_names, vec!["alpha", "beta"]);
        assert_eq!(corpus.documents[0].gold_label, Some(1));
        assert_eq!(corpus.documents[1].gold_label, Some(0));
    }

    fn arb_corpus_lines() -> impl Strategy<Value = Vec<String>> {
        // Random lines over a small closed vocabulary.
        let word = prop_oneof![
            Just("ant"),
            Just("bee"),
            Just("cow"),
            Just("dog"),
            Just("elk"),
            Just("fox"),
        ];
        prop::collection::vec(
            prop::collection::vec(word, 1..12).prop_map(|ws| ws.join(" ")),
            1..20,
        )
    }

    proptest! {
        #[test]
        fn background_sums_to_one(lines in arb_corpus_lines()) {
            let corpus = build_corpus(
                lines.into_iter().map(|l| (l, None::<String>)),
                1,
            ).unwrap();
            let bg = background_distribution(&corpus);
            let sum: f64 = bg.probs.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(bg.probs.iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn tokenize_idempotent(s in "\\PC{0,60}") {
            let once = tokenize(&s);
            let twice = tokenize(&once.join(" "));
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn token_indices_always_valid(lines in arb_corpus_lines()) {
            let corpus = build_corpus(
                lines.into_iter().map(|l| (l, None::<String>)),
                2,
            );
            if let Ok(corpus) = corpus {
                let v = corpus.vocabulary.len();
                for doc in &corpus.documents {
                    prop_assert!(!doc.tokens.is_empty());
                    prop_assert!(doc.tokens.iter().all(|&t| t < v));
                }
            }
        }

        #[test]
        fn tfidf_invariant_under_subset_order(lines in arb_corpus_lines(), t in 1usize..6) {
            let corpus = build_corpus(
                lines.into_iter().map(|l| (l, None::<String>)),
                1,
            ).unwrap();
            let index = tfidf_index(&corpus);
            let forward: Vec<&Document> = corpus.documents.iter().collect();
            let mut reversed = forward.clone();
            reversed.reverse();
            let a = tfidf_keywords(&corpus, &forward, &index, t).unwrap();
            let b = tfidf_keywords(&corpus, &reversed, &index, t).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
