//! Pipeline configuration: one TOML file covering every stage. Module
//! configs keep their library defaults, so a config holding nothing but
//! the corpus and supervision paths runs the reference parameter set.

use std::path::{Path, PathBuf};

use seedclass::classifier::TrainConfig;
use seedclass::embedding::SkipGramConfig;
use seedclass::pseudogen::GeneratorConfig;
use seedclass::selftrain::SelfTrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    #[default]
    WordCnn,
    BagOfEmbeddings,
}

impl ClassifierKind {
    /// The `kind` string the matching model writes into its snapshots.
    pub fn snapshot_kind(self) -> &'static str {
        match self {
            ClassifierKind::WordCnn => "word_cnn",
            ClassifierKind::BagOfEmbeddings => "bag_of_embeddings",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    #[default]
    Plain,
    /// One "label<TAB>text" line per document.
    Labeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisionKind {
    LabelNames,
    Keywords,
    Docs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    #[default]
    Train,
    Load,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSection {
    pub path: PathBuf,
    #[serde(default)]
    pub format: CorpusFormat,
    /// Words occurring fewer times than this are dropped from the
    /// vocabulary.
    #[serde(default = "default_min_count")]
    pub min_count: u64,
}

fn default_min_count() -> u64 {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionSection {
    pub kind: SupervisionKind,
    pub path: PathBuf,
    /// Override for the per-class expansion size t; when absent each
    /// supervision form picks its own default.
    #[serde(default)]
    pub expansion_t: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSection {
    pub source: EmbeddingSource,
    /// word2vec text file; required exactly when `source` is "load".
    pub path: Option<PathBuf>,
    pub skipgram: SkipGramConfig,
}

/// Generator settings. Mirrors [`GeneratorConfig`] except `doc_length`,
/// which falls back to the corpus mean document length clamped to
/// [10, 500] when omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSection {
    pub alpha: f64,
    pub beta: usize,
    pub gamma: usize,
    pub doc_length: Option<usize>,
    pub rng_seed: u64,
    pub param_study: bool,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let base = GeneratorConfig::default();
        GeneratorSection {
            alpha: base.alpha,
            beta: base.beta,
            gamma: base.gamma,
            doc_length: None,
            rng_seed: base.rng_seed,
            param_study: base.param_study,
        }
    }
}

impl GeneratorSection {
    pub fn to_core(&self, mean_document_length: usize) -> GeneratorConfig {
        GeneratorConfig {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            doc_length: self
                .doc_length
                .unwrap_or_else(|| mean_document_length.clamp(10, 500)),
            rng_seed: self.rng_seed,
            param_study: self.param_study,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default = "default_master_seed")]
    pub master_seed: u64,
    /// Run directory for all artifacts; relative paths resolve against
    /// the config file's directory.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub classifier: ClassifierKind,
    pub corpus: CorpusSection,
    pub supervision: SupervisionSection,
    #[serde(default)]
    pub embedding: EmbeddingSection,
    #[serde(default)]
    pub generator: GeneratorSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub selftrain: SelfTrainConfig,
}

fn default_master_seed() -> u64 {
    42
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text)
            .map_err(|e| CliError::validation(format!("config parse error: {e}")))
    }

    /// Returns the parsed config together with the raw file bytes (the
    /// manifest records their hash).
    pub fn from_path(path: &Path) -> Result<(Self, String), CliError> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            CliError::validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        Ok((Self::parse(&raw)?, raw))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    /// Resolve a possibly relative path against the config file's
    /// directory.
    pub fn resolve(base: &Path, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            base.join(path)
        }
    }

    /// Structural checks that need no corpus: referenced files exist and
    /// scalar settings are in range. Violations exit with code 1 before
    /// any compute starts.
    pub fn validate(&self, base: &Path) -> Result<(), CliError> {
        let must_exist = |label: &str, path: &Path| -> Result<(), CliError> {
            let full = Self::resolve(base, path);
            if full.is_file() {
                Ok(())
            } else {
                Err(CliError::validation(format!(
                    "{label} {} does not exist",
                    full.display()
                )))
            }
        };
        must_exist("corpus file", &self.corpus.path)?;
        must_exist("supervision file", &self.supervision.path)?;
        match (self.embedding.source, &self.embedding.path) {
            (EmbeddingSource::Load, Some(path)) => must_exist("embedding file", path)?,
            (EmbeddingSource::Load, None) => {
                return Err(CliError::validation(
                    "embedding.source is \"load\" but embedding.path is not set",
                ))
            }
            (EmbeddingSource::Train, Some(_)) => {
                return Err(CliError::validation(
                    "embedding.path is set but embedding.source is \"train\"; pick one",
                ))
            }
            (EmbeddingSource::Train, None) => {}
        }
        if self.corpus.min_count == 0 {
            return Err(CliError::validation("corpus.min_count must be at least 1"));
        }
        if self.supervision.expansion_t == Some(0) {
            return Err(CliError::validation(
                "supervision.expansion_t must be at least 1",
            ));
        }
        let g = &self.generator;
        if !(0.0..=1.0).contains(&g.alpha) {
            return Err(CliError::validation("generator.alpha must lie in [0, 1]"));
        }
        if !g.param_study && !(g.alpha > 0.0 && g.alpha < 1.0) {
            return Err(CliError::validation(
                "generator.alpha endpoints 0 and 1 need generator.param_study = true",
            ));
        }
        if g.beta == 0 {
            return Err(CliError::validation("generator.beta must be at least 1"));
        }
        if g.gamma == 0 {
            return Err(CliError::validation("generator.gamma must be at least 1"));
        }
        if g.doc_length == Some(0) {
            return Err(CliError::validation(
                "generator.doc_length must be at least 1",
            ));
        }
        if !(self.train.learning_rate > 0.0) {
            return Err(CliError::validation(
                "train.learning_rate must be positive",
            ));
        }
        if self.train.batch_size == 0 {
            return Err(CliError::validation("train.batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.train.momentum) {
            return Err(CliError::validation("train.momentum must lie in [0, 1)"));
        }
        if !(self.selftrain.delta > 0.0) {
            return Err(CliError::validation("selftrain.delta must be positive"));
        }
        if self.selftrain.update_interval == 0 {
            return Err(CliError::validation(
                "selftrain.update_interval must be at least 1",
            ));
        }
        Ok(())
    }
}
