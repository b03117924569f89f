//! Seed expansion: turn weak supervision (label names, keyword lists, or a
//! handful of labeled documents) into a per-class set of keyword vectors.

use std::collections::{BTreeMap, HashMap, HashSet};

use thiserror::Error;

use crate::corpus::{tfidf_keywords, tokenize, Corpus, CorpusError, TfIdfIndex};
use crate::embedding::{normalize, EmbeddingMatrix};

/// Floor for the expansion count when the supervision source does not pin
/// one down (keyword and labeled-doc routes).
pub const DEFAULT_T_FLOOR: usize = 10;

#[derive(Debug, Error)]
pub enum SeedError {
    #[error("class {0}: label name has no in-vocabulary word")]
    NameOutOfVocabulary(usize),
    #[error("no expansion size yields disjoint keyword sets; classes share a nearest neighbor")]
    NoDisjointExpansion,
    #[error("class {0}: every seed keyword is out of vocabulary")]
    AllSeedsOutOfVocabulary(usize),
    #[error("labeled document id {0:?} does not exist in the corpus")]
    UnknownDocumentId(String),
    #[error("at least 2 classes are required, got {0}")]
    TooFewClasses(usize),
    #[error("class {0}: supervision list is empty")]
    EmptyClassList(usize),
    #[error("supervision line {0} is malformed")]
    MalformedSupervision(usize),
    #[error("class indices must cover 0..m with no gaps")]
    NonContiguousClassIndices,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// The weak supervision source: exactly one of the three forms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Supervision {
    /// One surface name per class.
    LabelNames(Vec<String>),
    /// A few seed keywords per class.
    Keywords(Vec<Vec<String>>),
    /// A few labeled document ids per class.
    LabeledDocs(Vec<Vec<String>>),
}

impl Supervision {
    pub fn num_classes(&self) -> usize {
        match self {
            Supervision::LabelNames(v) => v.len(),
            Supervision::Keywords(v) => v.len(),
            Supervision::LabeledDocs(v) => v.len(),
        }
    }

    fn validate(&self) -> Result<(), SeedError> {
        let m = self.num_classes();
        if m < 2 {
            return Err(SeedError::TooFewClasses(m));
        }
        let empty_at = match self {
            Supervision::LabelNames(v) => v.iter().position(|s| s.trim().is_empty()),
            Supervision::Keywords(v) => v.iter().position(|l| l.is_empty()),
            Supervision::LabeledDocs(v) => v.iter().position(|l| l.is_empty()),
        };
        match empty_at {
            Some(j) => Err(SeedError::EmptyClassList(j)),
            None => Ok(()),
        }
    }
}

/// Per-class expanded keyword sets, as vocabulary indices in rank order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassKeywords {
    pub classes: Vec<Vec<usize>>,
    /// Expansion count actually applied per class.
    pub t_used: usize,
}

impl ClassKeywords {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Unit keyword vectors for class `j`, ready for distribution fitting.
    pub fn class_vectors<'a>(&self, embeddings: &'a EmbeddingMatrix, j: usize) -> Vec<&'a [f64]> {
        self.classes[j].iter().map(|&w| embeddings.row(w)).collect()
    }
}

/// Parse label-name supervision: one name per line, line order = class index.
pub fn parse_label_names(content: &str) -> Result<Supervision, SeedError> {
    let names: Vec<String> = content
        .lines()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty())
        .map(|l| l.to_string())
        .collect();
    let sup = Supervision::LabelNames(names);
    sup.validate()?;
    Ok(sup)
}

fn parse_indexed_lines<F>(content: &str, mut parse_rest: F) -> Result<Vec<Vec<String>>, SeedError>
where
    F: FnMut(&str) -> Option<Vec<String>>,
{
    let mut per_class: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (index, rest) = line
            .split_once('\t')
            .ok_or(SeedError::MalformedSupervision(i + 1))?;
        let class: usize = index
            .trim()
            .parse()
            .map_err(|_| SeedError::MalformedSupervision(i + 1))?;
        let items = parse_rest(rest).ok_or(SeedError::MalformedSupervision(i + 1))?;
        per_class.entry(class).or_default().extend(items);
    }
    let m = per_class.len();
    if per_class.keys().enumerate().any(|(i, &k)| i != k) {
        return Err(SeedError::NonContiguousClassIndices);
    }
    Ok((0..m).map(|j| per_class.remove(&j).unwrap()).collect())
}

/// Parse keyword supervision: per line "class_index<TAB>w1,w2,w3".
pub fn parse_keywords(content: &str) -> Result<Supervision, SeedError> {
    let lists = parse_indexed_lines(content, |rest| {
        let words: Vec<String> = rest
            .split(',')
            .map(|w| w.trim().to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        if words.is_empty() {
            None
        } else {
            Some(words)
        }
    })?;
    let sup = Supervision::Keywords(lists);
    sup.validate()?;
    Ok(sup)
}

/// Parse labeled-doc supervision: per line "class_index<TAB>doc_id".
pub fn parse_labeled_docs(content: &str) -> Result<Supervision, SeedError> {
    let lists = parse_indexed_lines(content, |rest| {
        let id = rest.trim();
        if id.is_empty() {
            None
        } else {
            Some(vec![id.to_string()])
        }
    })?;
    let sup = Supervision::LabeledDocs(lists);
    sup.validate()?;
    Ok(sup)
}

/// Full similarity ranking of the vocabulary for one query vector:
/// dot product descending, ties lexicographic.
fn full_ranking(embeddings: &EmbeddingMatrix, corpus: &Corpus, query: &[f64]) -> Vec<usize> {
    crate::embedding::nearest_words(
        embeddings,
        &corpus.vocabulary,
        query,
        corpus.vocabulary.len(),
        &HashSet::new(),
    )
}

/// Largest t at which the per-class top-t prefixes are pairwise disjoint.
/// None when even t = 1 collides. Scans upward and stops at the first
/// collision, so the cost is bounded by the vocabulary size.
fn largest_disjoint_t(rankings: &[Vec<usize>]) -> Option<usize> {
    let v = rankings[0].len();
    let mut owner: Vec<Option<usize>> = vec![None; v];
    for t in 1..=v {
        for (class, ranking) in rankings.iter().enumerate() {
            let w = ranking[t - 1];
            match owner[w] {
                None => owner[w] = Some(class),
                Some(o) if o == class => unreachable!("rankings repeat a word"),
                Some(_) => return if t == 1 { None } else { Some(t - 1) },
            }
        }
    }
    // Unreachable for m >= 2: complete rankings must eventually collide.
    Some(v / rankings.len())
}

/// Normalized mean of the vectors of `words`.
fn mean_query(embeddings: &EmbeddingMatrix, words: &[usize]) -> Vec<f64> {
    let mut q = vec![0.0; embeddings.dim()];
    for &w in words {
        for (a, b) in q.iter_mut().zip(embeddings.row(w)) {
            *a += b;
        }
    }
    normalize(&mut q);
    q
}

/// Expand label names: each class is queried by its name vector (multi-word
/// names use the normalized mean of their in-vocabulary tokens) and t is the
/// largest count keeping all per-class top-t sets pairwise disjoint.
pub fn expand_label_names(
    corpus: &Corpus,
    embeddings: &EmbeddingMatrix,
    names: &[String],
) -> Result<ClassKeywords, SeedError> {
    Supervision::LabelNames(names.to_vec()).validate()?;
    let vocab = &corpus.vocabulary;

    let mut rankings = Vec::with_capacity(names.len());
    for (j, name) in names.iter().enumerate() {
        let words: Vec<usize> = tokenize(name)
            .into_iter()
            .filter_map(|w| vocab.index_of(&w))
            .collect();
        if words.is_empty() {
            return Err(SeedError::NameOutOfVocabulary(j));
        }
        let query = mean_query(embeddings, &words);
        rankings.push(full_ranking(embeddings, corpus, &query));
    }

    let t = largest_disjoint_t(&rankings).ok_or(SeedError::NoDisjointExpansion)?;
    let classes = rankings
        .into_iter()
        .map(|r| r[..t].to_vec())
        .collect::<Vec<_>>();
    Ok(ClassKeywords { classes, t_used: t })
}

/// Rank the vocabulary for one class by mean similarity to its seeds, with
/// the seeds themselves pinned to the front in their given order.
fn seed_priority_ranking(
    embeddings: &EmbeddingMatrix,
    corpus: &Corpus,
    seeds: &[usize],
) -> Vec<usize> {
    let query = mean_query(embeddings, seeds);
    let seed_set: HashSet<usize> = seeds.iter().copied().collect();
    let mut out: Vec<usize> = Vec::with_capacity(corpus.vocabulary.len());
    let mut seen = HashSet::new();
    for &s in seeds {
        if seen.insert(s) {
            out.push(s);
        }
    }
    for w in full_ranking(embeddings, corpus, &query) {
        if !seed_set.contains(&w) {
            out.push(w);
        }
    }
    out
}

/// Shared default-t rule for supervision kinds that leave t unset: the
/// disjointness scan over the class query rankings, floored at
/// [`DEFAULT_T_FLOOR`], capped by the vocabulary size.
fn default_t(corpus: &Corpus, embeddings: &EmbeddingMatrix, queries: &[Vec<f64>]) -> usize {
    let rankings: Vec<Vec<usize>> = queries
        .iter()
        .map(|q| full_ranking(embeddings, corpus, q))
        .collect();
    let found = largest_disjoint_t(&rankings).unwrap_or(1);
    found.max(DEFAULT_T_FLOOR).min(corpus.vocabulary.len())
}

/// Expand seed keywords: every vocabulary word is scored by its mean dot
/// product with the class seeds; the top t are returned with the surviving
/// seeds always included (counted within t). Out-of-vocabulary seeds are
/// dropped and reported in the warnings list.
pub fn expand_keywords(
    corpus: &Corpus,
    embeddings: &EmbeddingMatrix,
    keyword_lists: &[Vec<String>],
    t: Option<usize>,
) -> Result<(ClassKeywords, Vec<String>), SeedError> {
    Supervision::Keywords(keyword_lists.to_vec()).validate()?;
    let vocab = &corpus.vocabulary;

    let mut warnings = Vec::new();
    let mut surviving: Vec<Vec<usize>> = Vec::with_capacity(keyword_lists.len());
    for (j, list) in keyword_lists.iter().enumerate() {
        let mut seeds = Vec::new();
        for word in list {
            match vocab.index_of(word) {
                Some(w) => seeds.push(w),
                None => warnings.push(format!(
                    "class {}: seed keyword {:?} not in vocabulary, dropped",
                    j, word
                )),
            }
        }
        if seeds.is_empty() {
            return Err(SeedError::AllSeedsOutOfVocabulary(j));
        }
        surviving.push(seeds);
    }

    let t = match t {
        Some(t) => t.min(vocab.len()),
        None => {
            let queries: Vec<Vec<f64>> = surviving
                .iter()
                .map(|s| mean_query(embeddings, s))
                .collect();
            default_t(corpus, embeddings, &queries)
        }
    };

    let classes = surviving
        .iter()
        .map(|seeds| {
            let mut r = seed_priority_ranking(embeddings, corpus, seeds);
            r.truncate(t);
            r
        })
        .collect();
    Ok((ClassKeywords { classes, t_used: t }, warnings))
}

/// Expand labeled documents: per class, extract the top-t tf-idf keywords
/// from its documents.
pub fn expand_labeled_docs(
    labeled_docs: &[Vec<String>],
    corpus: &Corpus,
    tfidf: &TfIdfIndex,
    embeddings: &EmbeddingMatrix,
    t: Option<usize>,
) -> Result<ClassKeywords, SeedError> {
    Supervision::LabeledDocs(labeled_docs.to_vec()).validate()?;

    let by_id: HashMap<usize, &crate::corpus::Document> =
        corpus.documents.iter().map(|d| (d.id, d)).collect();
    let mut class_docs = Vec::with_capacity(labeled_docs.len());
    for ids in labeled_docs {
        let mut docs = Vec::with_capacity(ids.len());
        for id in ids {
            let doc = id
                .parse::<usize>()
                .ok()
                .and_then(|key| by_id.get(&key))
                .ok_or_else(|| SeedError::UnknownDocumentId(id.clone()))?;
            docs.push(*doc);
        }
        class_docs.push(docs);
    }

    let t = match t {
        Some(t) => t.min(corpus.vocabulary.len()),
        None => {
            // Provisional tf-idf keywords stand in for seed words when
            // asking the disjointness rule for a default t.
            let mut queries = Vec::with_capacity(class_docs.len());
            for docs in &class_docs {
                let provisional = tfidf_keywords(corpus, docs, tfidf, DEFAULT_T_FLOOR)?;
                queries.push(mean_query(embeddings, &provisional));
            }
            default_t(corpus, embeddings, &queries)
        }
    };

    let mut classes = Vec::with_capacity(class_docs.len());
    for docs in &class_docs {
        classes.push(tfidf_keywords(corpus, docs, tfidf, t)?);
    }
    Ok(ClassKeywords { classes, t_used: t })
}

/// Dispatch on the supervision form. Returns the expanded keyword sets plus
/// any warnings (only the keywords route produces them today).
pub fn expand(
    corpus: &Corpus,
    embeddings: &EmbeddingMatrix,
    tfidf: &TfIdfIndex,
    supervision: &Supervision,
    t: Option<usize>,
) -> Result<(ClassKeywords, Vec<String>), SeedError> {
    match supervision {
        Supervision::LabelNames(names) => {
            let ck = expand_label_names(corpus, embeddings, names)?;
            Ok((ck, Vec::new()))
        }
        Supervision::Keywords(lists) => expand_keywords(corpus, embeddings, lists, t),
        Supervision::LabeledDocs(ids) => {
            let ck = expand_labeled_docs(ids, corpus, tfidf, embeddings, t)?;
            Ok((ck, Vec::new()))
        }
    }
}
