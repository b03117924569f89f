//! Bundled synthetic corpus generator: three classes with disjoint 60-word
//! topical vocabularies over a 200-word shared background, separable by
//! construction. Emits the corpus plus ready-made supervision files for
//! all three supervision forms and a starter pipeline config.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{
    CorpusFormat, CorpusSection, PipelineConfig, SupervisionKind, SupervisionSection,
};

/// Class names double as label strings and as the first topical word of
/// each class, so LABEL_NAMES supervision is in-vocabulary. Their
/// lexicographic order matches their class indices, which is how labeled
/// corpora assign gold indices.
pub const CLASS_NAMES: [&str; 3] = ["alpha", "beta", "gamma"];
pub const TOPICAL_WORDS_PER_CLASS: usize = 60;
pub const BACKGROUND_WORDS: usize = 200;

/// Probability that a token comes from the class vocabulary rather than
/// the shared background.
const TOPICAL_PROB: f64 = 0.6;
const MIN_DOC_LEN: usize = 30;
const MAX_DOC_LEN: usize = 70;
/// Document ids exported per class for DOCS supervision.
const EXPORTED_DOCS_PER_CLASS: usize = 10;

pub struct SynthOptions {
    pub out_dir: PathBuf,
    pub docs_per_class: usize,
    pub seed: u64,
}

fn topical_vocabulary(name: &str) -> Vec<String> {
    let mut words = Vec::with_capacity(TOPICAL_WORDS_PER_CLASS);
    words.push(name.to_string());
    for i in 1..TOPICAL_WORDS_PER_CLASS {
        words.push(format!("{name}{i:02}"));
    }
    words
}

/// Write corpus.txt, keywords.txt, names.txt, docs.txt, and config.toml
/// into the output directory.
pub fn generate(options: &SynthOptions) -> io::Result<()> {
    assert!(options.docs_per_class >= 1);
    fs::create_dir_all(&options.out_dir)?;

    let topical: Vec<Vec<String>> = CLASS_NAMES.iter().map(|n| topical_vocabulary(n)).collect();
    let background: Vec<String> = (0..BACKGROUND_WORDS).map(|i| format!("bg{i:03}")).collect();

    // Classes are interleaved round-robin, so document id `i` belongs to
    // class `i % 3` and any prefix of the corpus stays balanced.
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let total = CLASS_NAMES.len() * options.docs_per_class;
    let mut corpus = String::new();
    for i in 0..total {
        let class = i % CLASS_NAMES.len();
        corpus.push_str(CLASS_NAMES[class]);
        corpus.push('\t');
        let len = rng.random_range(MIN_DOC_LEN..=MAX_DOC_LEN);
        for t in 0..len {
            if t > 0 {
                corpus.push(' ');
            }
            let word = if rng.random::<f64>() < TOPICAL_PROB {
                &topical[class][rng.random_range(0..TOPICAL_WORDS_PER_CLASS)]
            } else {
                &background[rng.random_range(0..BACKGROUND_WORDS)]
            };
            corpus.push_str(word);
        }
        corpus.push('\n');
    }
    fs::write(options.out_dir.join("corpus.txt"), corpus)?;

    let mut keywords = String::new();
    for (j, words) in topical.iter().enumerate() {
        let _ = writeln!(keywords, "{j}\t{},{},{}", words[0], words[1], words[2]);
    }
    fs::write(options.out_dir.join("keywords.txt"), keywords)?;

    let mut names = CLASS_NAMES.join("\n");
    names.push('\n');
    fs::write(options.out_dir.join("names.txt"), names)?;

    let mut docs = String::new();
    for j in 0..CLASS_NAMES.len() {
        for k in 0..EXPORTED_DOCS_PER_CLASS.min(options.docs_per_class) {
            let _ = writeln!(docs, "{j}\t{}", j + k * CLASS_NAMES.len());
        }
    }
    fs::write(options.out_dir.join("docs.txt"), docs)?;

    let config = PipelineConfig {
        master_seed: options.seed,
        output_dir: PathBuf::from("run"),
        classifier: Default::default(),
        corpus: CorpusSection {
            path: PathBuf::from("corpus.txt"),
            format: CorpusFormat::Labeled,
            min_count: 5,
        },
        supervision: SupervisionSection {
            kind: SupervisionKind::Keywords,
            path: PathBuf::from("keywords.txt"),
            expansion_t: None,
        },
        embedding: Default::default(),
        generator: Default::default(),
        train: Default::default(),
        selftrain: Default::default(),
    };
    fs::write(options.out_dir.join("config.toml"), config.to_toml())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn options(dir: &str, docs_per_class: usize, seed: u64) -> SynthOptions {
        let out_dir = std::env::temp_dir().join(dir);
        SynthOptions {
            out_dir,
            docs_per_class,
            seed,
        }
    }

    #[test]
    fn corpus_is_labeled_balanced_and_topical() {
        let opts = options("seedclass-synth-test", 20, 9);
        generate(&opts).unwrap();
        let text = fs::read_to_string(opts.out_dir.join("corpus.txt")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 60);

        let mut per_class = [0usize; 3];
        for (i, line) in lines.iter().enumerate() {
            let (label, body) = line.split_once('\t').unwrap();
            let class = CLASS_NAMES.iter().position(|&n| n == label).unwrap();
            assert_eq!(class, i % 3);
            per_class[class] += 1;
            let tokens: Vec<&str> = body.split(' ').collect();
            assert!((MIN_DOC_LEN..=MAX_DOC_LEN).contains(&tokens.len()));
            // Topical tokens must come from the line's own class.
            for token in tokens {
                if !token.starts_with("bg") {
                    assert!(
                        token.starts_with(CLASS_NAMES[class]),
                        "token {token} leaked into class {class}"
                    );
                }
            }
        }
        assert_eq!(per_class, [20, 20, 20]);
    }

    #[test]
    fn topical_vocabularies_are_disjoint() {
        let all: Vec<String> = CLASS_NAMES
            .iter()
            .flat_map(|n| topical_vocabulary(n))
            .collect();
        let unique: HashSet<&String> = all.iter().collect();
        assert_eq!(unique.len(), 3 * TOPICAL_WORDS_PER_CLASS);
        assert!(all.iter().all(|w| !w.starts_with("bg")));
    }

    #[test]
    fn supervision_files_agree_with_class_order() {
        let opts = options("seedclass-synth-supervision", 12, 4);
        generate(&opts).unwrap();
        let keywords = fs::read_to_string(opts.out_dir.join("keywords.txt")).unwrap();
        assert_eq!(keywords, "0\talpha,alpha01,alpha02\n1\tbeta,beta01,beta02\n2\tgamma,gamma01,gamma02\n");
        let names = fs::read_to_string(opts.out_dir.join("names.txt")).unwrap();
        assert_eq!(names, "alpha\nbeta\ngamma\n");
        let docs = fs::read_to_string(opts.out_dir.join("docs.txt")).unwrap();
        assert!(docs.starts_with("0\t0\n0\t3\n"));
        assert!(docs.contains("\n1\t1\n"));
        assert_eq!(docs.lines().count(), 30);
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let a = options("seedclass-synth-det-a", 8, 11);
        let b = options("seedclass-synth-det-b", 8, 11);
        let c = options("seedclass-synth-det-c", 8, 12);
        generate(&a).unwrap();
        generate(&b).unwrap();
        generate(&c).unwrap();
        let read = |o: &SynthOptions| fs::read(o.out_dir.join("corpus.txt")).unwrap();
        assert_eq!(read(&a), read(&b));
        assert_ne!(read(&a), read(&c));
    }
}
