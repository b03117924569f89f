//! Stage orchestration. Every stage reads its inputs from disk and writes
//! its artifacts back, so single stages can be re-run or inspected in
//! isolation and a full pipeline run is exactly the stages in sequence;
//! the two entry points cannot drift apart numerically.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use seedclass::classifier::{
    predict_batch, BagOfEmbeddings, Classifier, ModelSnapshot, TrainConfig, WordCnn,
    DEFAULT_FILTERS, DEFAULT_WINDOW_SIZES,
};
use seedclass::corpus::{
    background_distribution, parse_corpus_text, tfidf_index, vocabulary_hash, Corpus,
};
use seedclass::embedding::{load_embeddings, train_skipgram, write_word2vec_text, EmbeddingMatrix};
use seedclass::eval::{confusion, metrics_report};
use seedclass::pseudogen::{export_labels_jsonl, export_tsv, generate_all, PseudoDocument};
use seedclass::seed::{self, Supervision};
use seedclass::selftrain::{self, SelfTrainConfig};
use seedclass::vmf::VmfDistribution;
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, derive_seed, file_sha256, sha256_hex, Manifest, StageRecord};
use crate::config::{
    ClassifierKind, CorpusFormat, EmbeddingSource, PipelineConfig, SupervisionKind,
};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Embed,
    Seeds,
    Vmf,
    Generate,
    Pretrain,
    Selftrain,
    Eval,
}

impl Stage {
    pub fn parse(name: &str) -> Option<Stage> {
        match name {
            "embed" => Some(Stage::Embed),
            "seeds" => Some(Stage::Seeds),
            "vmf" => Some(Stage::Vmf),
            "generate" => Some(Stage::Generate),
            "pretrain" => Some(Stage::Pretrain),
            "selftrain" => Some(Stage::Selftrain),
            "eval" => Some(Stage::Eval),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Embed => "embed",
            Stage::Seeds => "seeds",
            Stage::Vmf => "vmf",
            Stage::Generate => "generate",
            Stage::Pretrain => "pretrain",
            Stage::Selftrain => "selftrain",
            Stage::Eval => "eval",
        }
    }

    /// Bumped when a stage's artifact format or algorithm changes.
    fn version(self) -> u32 {
        1
    }
}

pub struct RunOptions {
    pub config_path: PathBuf,
    /// Replaces the config's master seed; per-stage seeds are then derived
    /// from it instead of read from the config sections.
    pub seed_override: Option<u64>,
    /// Keep the pseudo-document files after a full pipeline run.
    pub dump_pseudo: bool,
}

/// Checkpoint container: the config that produced the model, the master
/// seed, and the full parameter snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    master_seed: u64,
    classifier: ClassifierKind,
    train: TrainConfig,
    selftrain: SelfTrainConfig,
    snapshot: ModelSnapshot,
}

#[derive(Debug, Serialize, Deserialize)]
struct VmfFile {
    format_version: u32,
    master_seed: u64,
    classes: Vec<VmfClassRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VmfClassRecord {
    class: usize,
    kappa: f64,
    mu: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct PseudoLabelRow {
    class_of_origin: usize,
    pseudo_label: Vec<f64>,
}

/// One resolved run: parsed config, directories, and per-stage seeds.
pub struct Run {
    config: PipelineConfig,
    base: PathBuf,
    out: PathBuf,
    config_sha256: String,
    master_seed: u64,
    seed_embed: u64,
    seed_fill: u64,
    seed_generate: u64,
    seed_train: u64,
    seed_selftrain: u64,
    dump_pseudo: bool,
}

impl Run {
    pub fn prepare(options: &RunOptions) -> Result<Run, CliError> {
        let (config, raw) = PipelineConfig::from_path(&options.config_path)?;
        let base = options
            .config_path
            .parent()
            .unwrap_or(Path::new("."))
            .to_path_buf();
        config.validate(&base)?;

        let master_seed = options.seed_override.unwrap_or(config.master_seed);
        let (seed_embed, seed_generate, seed_train, seed_selftrain) = match options.seed_override
        {
            Some(master) => (
                derive_seed(master, "embed"),
                derive_seed(master, "generate"),
                derive_seed(master, "train"),
                derive_seed(master, "selftrain"),
            ),
            None => (
                config.embedding.skipgram.rng_seed,
                config.generator.rng_seed,
                config.train.rng_seed,
                config.selftrain.rng_seed,
            ),
        };
        let seed_fill = derive_seed(master_seed, "embed_fill");

        let out = PipelineConfig::resolve(&base, &config.output_dir);
        fs::create_dir_all(&out)?;
        Ok(Run {
            config_sha256: sha256_hex(raw.as_bytes()),
            config,
            base,
            out,
            master_seed,
            seed_embed,
            seed_fill,
            seed_generate,
            seed_train,
            seed_selftrain,
            dump_pseudo: options.dump_pseudo,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn run_stage(&self, stage: Stage) -> Result<(), CliError> {
        match stage {
            Stage::Embed => self.stage_embed(),
            Stage::Seeds => self.stage_seeds(),
            Stage::Vmf => self.stage_vmf(),
            Stage::Generate => self.stage_generate(),
            Stage::Pretrain => self.stage_pretrain(),
            Stage::Selftrain => self.stage_selftrain(),
            Stage::Eval => self.stage_eval(),
        }
    }

    pub fn run_pipeline(&self) -> Result<(), CliError> {
        self.stage_embed()?;
        self.stage_seeds()?;
        self.stage_vmf()?;
        self.stage_generate()?;
        self.stage_pretrain()?;
        self.stage_selftrain()?;
        if self.config.corpus.format == CorpusFormat::Labeled {
            self.stage_eval()?;
        }
        if !self.dump_pseudo {
            // Pseudo documents are reproducible bulk; keep them only on
            // request. The manifest still records their hashes.
            let _ = fs::remove_file(self.artifact(artifacts::PSEUDO_DOCS));
            let _ = fs::remove_file(self.artifact(artifacts::PSEUDO_LABELS));
        }
        Ok(())
    }

    fn require(&self, stage: Stage, name: &str) -> Result<PathBuf, CliError> {
        let path = self.artifact(name);
        if path.is_file() {
            Ok(path)
        } else {
            Err(CliError::MissingArtifact {
                stage: stage.name(),
                path,
            })
        }
    }

    fn corpus_path(&self) -> PathBuf {
        PipelineConfig::resolve(&self.base, &self.config.corpus.path)
    }

    fn supervision_path(&self) -> PathBuf {
        PipelineConfig::resolve(&self.base, &self.config.supervision.path)
    }

    fn load_corpus(&self, stage: Stage) -> Result<Corpus, CliError> {
        let text = fs::read_to_string(self.corpus_path())?;
        parse_corpus_text(
            &text,
            self.config.corpus.format == CorpusFormat::Labeled,
            self.config.corpus.min_count,
        )
        .map_err(|e| CliError::stage(stage.name(), e))
    }

    fn load_embedding_artifact(
        &self,
        stage: Stage,
        corpus: &Corpus,
    ) -> Result<(EmbeddingMatrix, PathBuf), CliError> {
        let path = self.require(stage, artifacts::EMBEDDINGS)?;
        let (embeddings, stats) = load_embeddings(&path, &corpus.vocabulary, self.seed_fill)
            .map_err(|e| CliError::stage(stage.name(), e))?;
        if stats.missing_words > 0 {
            // Only happens when the artifact predates a corpus change.
            eprintln!(
                "warning: {} vocabulary words missing from {}; filled with random unit vectors",
                stats.missing_words,
                path.display()
            );
        }
        Ok((embeddings, path))
    }

    fn supervision(&self, stage: Stage) -> Result<Supervision, CliError> {
        let text = fs::read_to_string(self.supervision_path())?;
        let parsed = match self.config.supervision.kind {
            SupervisionKind::LabelNames => seed::parse_label_names(&text),
            SupervisionKind::Keywords => seed::parse_keywords(&text),
            SupervisionKind::Docs => seed::parse_labeled_docs(&text),
        };
        parsed.map_err(|e| CliError::stage(stage.name(), e))
    }

    /// (document index, class) pairs for DOCS supervision; empty for the
    /// other forms.
    fn locked_labels(&self, stage: Stage, corpus: &Corpus) -> Result<Vec<(usize, usize)>, CliError> {
        if self.config.supervision.kind != SupervisionKind::Docs {
            return Ok(Vec::new());
        }
        let Supervision::LabeledDocs(classes) = self.supervision(stage)? else {
            unreachable!("docs supervision parses to LabeledDocs");
        };
        let mut locked = Vec::new();
        for (class, ids) in classes.iter().enumerate() {
            for id in ids {
                let index: usize = id.parse().map_err(|_| {
                    CliError::stage(
                        stage.name(),
                        format!("labeled doc id {id:?} is not an integer"),
                    )
                })?;
                let doc = corpus
                    .documents
                    .get(index)
                    .filter(|d| d.id == index)
                    .ok_or_else(|| {
                        CliError::stage(
                            stage.name(),
                            format!("labeled doc id {index} is not in the corpus"),
                        )
                    })?;
                locked.push((doc.id, class));
            }
        }
        Ok(locked)
    }

    fn record_stage(
        &self,
        stage: Stage,
        seed: u64,
        inputs: &[&Path],
        outputs: &[&str],
    ) -> Result<(), CliError> {
        let manifest_path = self.artifact(artifacts::MANIFEST);
        let mut manifest =
            Manifest::load_or_new(&manifest_path, self.master_seed, &self.config_sha256);
        let mut input_hashes = BTreeMap::new();
        for path in inputs {
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            input_hashes.insert(name, file_sha256(path)?);
        }
        let mut output_hashes = BTreeMap::new();
        for name in outputs {
            output_hashes.insert(name.to_string(), file_sha256(&self.artifact(name))?);
        }
        manifest.stages.insert(
            stage.name().to_string(),
            StageRecord {
                version: stage.version(),
                seed,
                inputs: input_hashes,
                outputs: output_hashes,
            },
        );
        manifest.save(&manifest_path)?;
        Ok(())
    }

    fn stage_embed(&self) -> Result<(), CliError> {
        let stage = Stage::Embed;
        let corpus = self.load_corpus(stage)?;
        if corpus.dropped_documents > 0 {
            eprintln!(
                "warning: dropped {} documents emptied by frequency filtering",
                corpus.dropped_documents
            );
        }
        let corpus_path = self.corpus_path();
        let mut inputs = vec![corpus_path.as_path()];

        let external_path;
        let embeddings = match self.config.embedding.source {
            EmbeddingSource::Train => {
                let mut skipgram = self.config.embedding.skipgram.clone();
                skipgram.rng_seed = self.seed_embed;
                train_skipgram(&corpus, &skipgram).map_err(|e| CliError::stage(stage.name(), e))?
            }
            EmbeddingSource::Load => {
                let path = self
                    .config
                    .embedding
                    .path
                    .as_ref()
                    .expect("validated: load source has a path");
                external_path = PipelineConfig::resolve(&self.base, path);
                inputs.push(external_path.as_path());
                let (embeddings, stats) =
                    load_embeddings(&external_path, &corpus.vocabulary, self.seed_fill)
                        .map_err(|e| CliError::stage(stage.name(), e))?;
                if stats.missing_words > 0 || stats.skipped_words > 0 {
                    eprintln!(
                        "warning: embedding file covers the vocabulary incompletely: \
                         {} words filled randomly, {} file rows skipped",
                        stats.missing_words, stats.skipped_words
                    );
                }
                embeddings
            }
        };

        let file = fs::File::create(self.artifact(artifacts::EMBEDDINGS))?;
        let mut writer = BufWriter::new(file);
        write_word2vec_text(&mut writer, &embeddings, &corpus.vocabulary)?;
        writer.flush()?;
        self.record_stage(stage, self.seed_embed, &inputs, &[artifacts::EMBEDDINGS])
    }

    fn stage_seeds(&self) -> Result<(), CliError> {
        let stage = Stage::Seeds;
        let corpus = self.load_corpus(stage)?;
        let (embeddings, embeddings_path) = self.load_embedding_artifact(stage, &corpus)?;
        let supervision = self.supervision(stage)?;
        let tfidf = tfidf_index(&corpus);
        let (keywords, warnings) = seed::expand(
            &corpus,
            &embeddings,
            &tfidf,
            &supervision,
            self.config.supervision.expansion_t,
        )
        .map_err(|e| CliError::stage(stage.name(), e))?;
        for warning in &warnings {
            eprintln!("warning: {warning}");
        }

        let mut text = String::new();
        for (j, class) in keywords.classes.iter().enumerate() {
            let words: Vec<&str> = class.iter().map(|&w| corpus.vocabulary.word(w)).collect();
            text.push_str(&format!("{j}\t{}\n", words.join(",")));
        }
        fs::write(self.artifact(artifacts::KEYWORDS), text)?;

        let corpus_path = self.corpus_path();
        let supervision_path = self.supervision_path();
        self.record_stage(
            stage,
            self.master_seed,
            &[
                corpus_path.as_path(),
                supervision_path.as_path(),
                embeddings_path.as_path(),
            ],
            &[artifacts::KEYWORDS],
        )
    }

    fn stage_vmf(&self) -> Result<(), CliError> {
        let stage = Stage::Vmf;
        let corpus = self.load_corpus(stage)?;
        let (embeddings, embeddings_path) = self.load_embedding_artifact(stage, &corpus)?;
        let keywords_path = self.require(stage, artifacts::KEYWORDS)?;
        let text = fs::read_to_string(&keywords_path)?;
        let lists = match seed::parse_keywords(&text)
            .map_err(|e| CliError::stage(stage.name(), e))?
        {
            Supervision::Keywords(lists) => lists,
            _ => unreachable!("parse_keywords returns Keywords"),
        };

        let mut classes = Vec::with_capacity(lists.len());
        for (j, words) in lists.iter().enumerate() {
            let mut vectors = Vec::with_capacity(words.len());
            for word in words {
                let w = corpus.vocabulary.index_of(word).ok_or_else(|| {
                    CliError::stage(
                        stage.name(),
                        format!("class {j}: keyword {word:?} is not in the vocabulary"),
                    )
                })?;
                vectors.push(embeddings.row(w));
            }
            let dist = VmfDistribution::estimate(&vectors)
                .map_err(|e| CliError::stage(stage.name(), format!("class {j}: {e}")))?;
            classes.push(VmfClassRecord {
                class: j,
                kappa: dist.kappa(),
                mu: dist.mu().to_vec(),
            });
        }

        let file = VmfFile {
            format_version: 1,
            master_seed: self.master_seed,
            classes,
        };
        let mut json = serde_json::to_string_pretty(&file).expect("vmf file serializes");
        json.push('\n');
        fs::write(self.artifact(artifacts::VMF), json)?;
        self.record_stage(
            stage,
            self.master_seed,
            &[embeddings_path.as_path(), keywords_path.as_path()],
            &[artifacts::VMF],
        )
    }

    fn stage_generate(&self) -> Result<(), CliError> {
        let stage = Stage::Generate;
        let corpus = self.load_corpus(stage)?;
        let (embeddings, embeddings_path) = self.load_embedding_artifact(stage, &corpus)?;
        let vmf_path = self.require(stage, artifacts::VMF)?;
        let file: VmfFile = serde_json::from_str(&fs::read_to_string(&vmf_path)?)
            .map_err(|e| {
                CliError::stage(
                    stage.name(),
                    format!("cannot parse {}: {e}", vmf_path.display()),
                )
            })?;

        let mut dists = Vec::with_capacity(file.classes.len());
        for (j, record) in file.classes.iter().enumerate() {
            if record.class != j {
                return Err(CliError::stage(
                    stage.name(),
                    format!("vmf class records out of order at position {j}"),
                ));
            }
            if record.mu.len() != embeddings.dim() {
                return Err(CliError::stage(
                    stage.name(),
                    format!(
                        "class {j}: mean direction has {} dims, embeddings have {}",
                        record.mu.len(),
                        embeddings.dim()
                    ),
                ));
            }
            if !record.kappa.is_finite()
                || record.kappa < 0.0
                || record.mu.iter().all(|&x| x == 0.0)
            {
                return Err(CliError::stage(
                    stage.name(),
                    format!("class {j}: degenerate vmf parameters"),
                ));
            }
            dists.push(VmfDistribution::new(record.mu.clone(), record.kappa));
        }

        let mut generator = self
            .config
            .generator
            .to_core(corpus.mean_document_length());
        generator.rng_seed = self.seed_generate;
        let background = background_distribution(&corpus);
        let docs = generate_all(&dists, &generator, &embeddings, &corpus.vocabulary, &background)
            .map_err(|e| CliError::stage(stage.name(), e))?;

        let mut writer = BufWriter::new(fs::File::create(self.artifact(artifacts::PSEUDO_DOCS))?);
        export_tsv(&mut writer, &docs, &corpus.vocabulary)?;
        writer.flush()?;
        let mut writer =
            BufWriter::new(fs::File::create(self.artifact(artifacts::PSEUDO_LABELS))?);
        export_labels_jsonl(&mut writer, &docs)?;
        writer.flush()?;

        self.record_stage(
            stage,
            self.seed_generate,
            &[embeddings_path.as_path(), vmf_path.as_path()],
            &[artifacts::PSEUDO_DOCS, artifacts::PSEUDO_LABELS],
        )
    }

    fn stage_pretrain(&self) -> Result<(), CliError> {
        let stage = Stage::Pretrain;
        let corpus = self.load_corpus(stage)?;
        let (embeddings, embeddings_path) = self.load_embedding_artifact(stage, &corpus)?;
        let docs_path = self.require(stage, artifacts::PSEUDO_DOCS)?;
        let labels_path = self.require(stage, artifacts::PSEUDO_LABELS)?;
        let pseudo = read_pseudo_documents(&docs_path, &labels_path, &corpus)?;
        if pseudo.is_empty() {
            return Err(CliError::stage(stage.name(), "no pseudo documents"));
        }
        let num_classes = pseudo[0].pseudo_label.len();

        let locked = self.locked_labels(stage, &corpus)?;
        let labeled: Vec<(&[usize], usize)> = locked
            .iter()
            .map(|&(index, class)| (corpus.documents[index].tokens.as_slice(), class))
            .collect();
        for &(_, class) in &labeled {
            if class >= num_classes {
                return Err(CliError::stage(
                    stage.name(),
                    format!("labeled class {class} exceeds the {num_classes} pseudo-label classes"),
                ));
            }
        }

        let hash = vocabulary_hash(&corpus.vocabulary);
        let mut train = self.config.train.clone();
        train.rng_seed = self.seed_train;
        train.epochs = self.config.selftrain.pretrain_epochs;
        match self.config.classifier {
            ClassifierKind::WordCnn => self.pretrain_model(
                stage,
                WordCnn::new(
                    &embeddings,
                    hash,
                    &DEFAULT_WINDOW_SIZES,
                    DEFAULT_FILTERS,
                    num_classes,
                    self.seed_train,
                ),
                &pseudo,
                &labeled,
                &train,
            )?,
            ClassifierKind::BagOfEmbeddings => self.pretrain_model(
                stage,
                BagOfEmbeddings::new(&embeddings, hash, num_classes, self.seed_train),
                &pseudo,
                &labeled,
                &train,
            )?,
        }

        let mut inputs: Vec<&Path> = vec![
            embeddings_path.as_path(),
            docs_path.as_path(),
            labels_path.as_path(),
        ];
        let supervision_path = self.supervision_path();
        let corpus_path = self.corpus_path();
        if self.config.supervision.kind == SupervisionKind::Docs {
            inputs.push(supervision_path.as_path());
            inputs.push(corpus_path.as_path());
        }
        self.record_stage(stage, self.seed_train, &inputs, &[artifacts::PRETRAINED])
    }

    fn pretrain_model<C: Classifier>(
        &self,
        stage: Stage,
        mut model: C,
        pseudo: &[PseudoDocument],
        labeled: &[(&[usize], usize)],
        train: &TrainConfig,
    ) -> Result<(), CliError> {
        let losses = selftrain::pretrain(&mut model, pseudo, labeled, train)
            .map_err(|e| CliError::stage(stage.name(), e))?;
        for (epoch, loss) in losses.iter().enumerate() {
            eprintln!("pretrain epoch {}: mean loss {loss:.6}", epoch + 1);
        }
        self.write_checkpoint(artifacts::PRETRAINED, train, model.snapshot())
    }

    fn stage_selftrain(&self) -> Result<(), CliError> {
        let stage = Stage::Selftrain;
        let checkpoint_path = self.require(stage, artifacts::PRETRAINED)?;
        let corpus = self.load_corpus(stage)?;
        let (embeddings, embeddings_path) = self.load_embedding_artifact(stage, &corpus)?;
        let checkpoint: CheckpointFile =
            serde_json::from_str(&fs::read_to_string(&checkpoint_path)?).map_err(|e| {
                CliError::stage(
                    stage.name(),
                    format!("cannot parse {}: {e}", checkpoint_path.display()),
                )
            })?;
        let expected = self.config.classifier.snapshot_kind();
        if checkpoint.snapshot.kind != expected {
            return Err(CliError::stage(
                stage.name(),
                format!(
                    "checkpoint holds a {} model but the config selects {expected}",
                    checkpoint.snapshot.kind
                ),
            ));
        }

        let locked = self.locked_labels(stage, &corpus)?;
        let mut train = self.config.train.clone();
        train.rng_seed = self.seed_train;
        let mut selftrain_config = self.config.selftrain.clone();
        selftrain_config.rng_seed = self.seed_selftrain;
        let hash = vocabulary_hash(&corpus.vocabulary);
        let snapshot = &checkpoint.snapshot;
        match self.config.classifier {
            ClassifierKind::WordCnn => {
                if snapshot.window_sizes.is_empty() || snapshot.filters == 0 {
                    return Err(CliError::stage(stage.name(), "corrupt word_cnn checkpoint"));
                }
                self.selftrain_model(
                    stage,
                    WordCnn::new(
                        &embeddings,
                        hash,
                        &snapshot.window_sizes,
                        snapshot.filters,
                        snapshot.num_classes,
                        self.seed_train,
                    ),
                    snapshot,
                    &corpus,
                    &locked,
                    &train,
                    &selftrain_config,
                )?
            }
            ClassifierKind::BagOfEmbeddings => self.selftrain_model(
                stage,
                BagOfEmbeddings::new(&embeddings, hash, snapshot.num_classes, self.seed_train),
                snapshot,
                &corpus,
                &locked,
                &train,
                &selftrain_config,
            )?,
        }

        let corpus_path = self.corpus_path();
        let supervision_path = self.supervision_path();
        let mut inputs: Vec<&Path> = vec![
            checkpoint_path.as_path(),
            embeddings_path.as_path(),
            corpus_path.as_path(),
        ];
        if self.config.supervision.kind == SupervisionKind::Docs {
            inputs.push(supervision_path.as_path());
        }
        self.record_stage(
            stage,
            self.seed_selftrain,
            &inputs,
            &[artifacts::FINAL, artifacts::REPORT, artifacts::PREDICTIONS],
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn selftrain_model<C: Classifier + Sync>(
        &self,
        stage: Stage,
        mut model: C,
        snapshot: &ModelSnapshot,
        corpus: &Corpus,
        locked: &[(usize, usize)],
        train: &TrainConfig,
        selftrain_config: &SelfTrainConfig,
    ) -> Result<(), CliError> {
        model
            .restore(snapshot)
            .map_err(|e| CliError::stage(stage.name(), e))?;
        let report = selftrain::self_train(&mut model, corpus, locked, train, selftrain_config)
            .map_err(|e| CliError::stage(stage.name(), e))?;
        for checkpoint in &report.checkpoints {
            eprintln!(
                "self-train iteration {}: changed {:.4}, mean loss {:.6}",
                checkpoint.iteration, checkpoint.change_fraction, checkpoint.mean_kl_loss
            );
        }

        let mut writer = BufWriter::new(fs::File::create(self.artifact(artifacts::REPORT))?);
        report.write_jsonl(&mut writer)?;
        writer.flush()?;

        self.write_checkpoint(artifacts::FINAL, train, model.snapshot())?;

        let docs: Vec<&[usize]> = corpus
            .documents
            .iter()
            .map(|d| d.tokens.as_slice())
            .collect();
        let predictions =
            predict_batch(&model, &docs).map_err(|e| CliError::stage(stage.name(), e))?;
        let mut writer = BufWriter::new(fs::File::create(self.artifact(artifacts::PREDICTIONS))?);
        for (doc, (row, label)) in corpus
            .documents
            .iter()
            .zip(predictions.probs.iter().zip(&predictions.labels))
        {
            write!(writer, "{}\t{}\t", doc.id, label)?;
            for (k, p) in row.iter().enumerate() {
                if k > 0 {
                    writer.write_all(b",")?;
                }
                // Shortest round-trip float text keeps the file bit-faithful.
                write!(writer, "{p:?}")?;
            }
            writeln!(writer)?;
        }
        writer.flush()?;
        Ok(())
    }

    fn write_checkpoint(
        &self,
        name: &str,
        train: &TrainConfig,
        snapshot: ModelSnapshot,
    ) -> Result<(), CliError> {
        let file = CheckpointFile {
            format_version: 1,
            master_seed: self.master_seed,
            classifier: self.config.classifier,
            train: train.clone(),
            selftrain: self.config.selftrain.clone(),
            snapshot,
        };
        let writer = BufWriter::new(fs::File::create(self.artifact(name))?);
        serde_json::to_writer(writer, &file).map_err(|e| CliError::stage("checkpoint", e))?;
        Ok(())
    }

    fn stage_eval(&self) -> Result<(), CliError> {
        let stage = Stage::Eval;
        let predictions_path = self.require(stage, artifacts::PREDICTIONS)?;
        let corpus = self.load_corpus(stage)?;
        let gold = corpus.gold_labels().ok_or_else(|| {
            CliError::validation("eval needs gold labels; corpus.format must be \"labeled\"")
        })?;

        let text = fs::read_to_string(&predictions_path)?;
        let mut predicted = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split('\t');
            let id: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| {
                    CliError::stage(stage.name(), format!("line {}: malformed doc id", i + 1))
                })?;
            let label: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| {
                    CliError::stage(stage.name(), format!("line {}: malformed label", i + 1))
                })?;
            if id != i {
                return Err(CliError::stage(
                    stage.name(),
                    format!("line {}: doc ids must be dense and ordered", i + 1),
                ));
            }
            predicted.push(label);
        }
        if predicted.len() != gold.len() {
            return Err(CliError::stage(
                stage.name(),
                format!(
                    "{} predictions for {} documents",
                    predicted.len(),
                    gold.len()
                ),
            ));
        }

        let num_classes = corpus
            .label_names
            .len()
            .max(predicted.iter().copied().max().map_or(0, |x| x + 1));
        let cm = confusion(&gold, &predicted, num_classes)
            .map_err(|e| CliError::stage(stage.name(), e))?;
        let report = metrics_report(&cm).map_err(|e| CliError::stage(stage.name(), e))?;
        let mut json = serde_json::to_string_pretty(&report).expect("metrics serialize");
        json.push('\n');
        fs::write(self.artifact(artifacts::METRICS), json)?;
        // Tolerate a downstream pipe that closed before the summary line.
        let _ = writeln!(
            std::io::stdout(),
            "macro_f1 {:.6}  micro_f1 {:.6}",
            report.macro_f1, report.micro_f1
        );

        let corpus_path = self.corpus_path();
        self.record_stage(
            stage,
            self.master_seed,
            &[predictions_path.as_path(), corpus_path.as_path()],
            &[artifacts::METRICS],
        )
    }
}

/// Rebuild pseudo documents from their two export files. Tokens are
/// spelled as vocabulary words in the TSV; the JSONL rows carry the soft
/// labels, which round-trip bit-exactly through JSON.
fn read_pseudo_documents(
    docs_path: &Path,
    labels_path: &Path,
    corpus: &Corpus,
) -> Result<Vec<PseudoDocument>, CliError> {
    let stage = Stage::Pretrain.name();
    let docs_text = fs::read_to_string(docs_path)?;
    let labels_text = fs::read_to_string(labels_path)?;
    let doc_lines: Vec<&str> = docs_text.lines().collect();
    let label_lines: Vec<&str> = labels_text.lines().collect();
    if doc_lines.len() != label_lines.len() {
        return Err(CliError::stage(
            stage,
            format!(
                "{} pseudo documents but {} label rows",
                doc_lines.len(),
                label_lines.len()
            ),
        ));
    }

    let mut out = Vec::with_capacity(doc_lines.len());
    let mut width = 0usize;
    for (i, (doc_line, label_line)) in doc_lines.iter().zip(&label_lines).enumerate() {
        let (class_text, words) = doc_line.split_once('\t').ok_or_else(|| {
            CliError::stage(stage, format!("pseudo doc line {} lacks a tab", i + 1))
        })?;
        let class: usize = class_text.trim().parse().map_err(|_| {
            CliError::stage(stage, format!("pseudo doc line {}: malformed class", i + 1))
        })?;
        let mut tokens = Vec::new();
        for word in words.split(' ').filter(|w| !w.is_empty()) {
            let w = corpus.vocabulary.index_of(word).ok_or_else(|| {
                CliError::stage(
                    stage,
                    format!("pseudo doc line {}: word {word:?} is not in the vocabulary", i + 1),
                )
            })?;
            tokens.push(w);
        }
        let row: PseudoLabelRow = serde_json::from_str(label_line).map_err(|e| {
            CliError::stage(stage, format!("pseudo label line {}: {e}", i + 1))
        })?;
        if row.class_of_origin != class {
            return Err(CliError::stage(
                stage,
                format!("pseudo line {}: class mismatch between docs and labels", i + 1),
            ));
        }
        if i == 0 {
            width = row.pseudo_label.len();
        } else if row.pseudo_label.len() != width {
            return Err(CliError::stage(
                stage,
                format!("pseudo label line {}: inconsistent label width", i + 1),
            ));
        }
        out.push(PseudoDocument {
            tokens,
            class_of_origin: class,
            pseudo_label: row.pseudo_label,
        });
    }
    Ok(out)
}
