//! Artifact names, content hashing, per-stage seed derivation, and the
//! run manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const EMBEDDINGS: &str = "embeddings.txt";
pub const KEYWORDS: &str = "keywords.tsv";
pub const VMF: &str = "vmf.json";
pub const PSEUDO_DOCS: &str = "pseudo_docs.tsv";
pub const PSEUDO_LABELS: &str = "pseudo_labels.jsonl";
pub const PRETRAINED: &str = "pretrained.json";
pub const FINAL: &str = "final.json";
pub const REPORT: &str = "selftrain_report.jsonl";
pub const PREDICTIONS: &str = "predictions.tsv";
pub const METRICS: &str = "metrics.json";
pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for byte in digest {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

pub fn file_sha256(path: &Path) -> io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Stable per-stage seed: the first eight little-endian bytes of
/// sha256(label || master). Distinct labels give independent streams from
/// one master seed.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(label.as_bytes());
    hasher.update(master.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub version: u32,
    pub seed: u64,
    /// Consumed file name -> sha256 of its content.
    pub inputs: BTreeMap<String, String>,
    /// Produced artifact name -> sha256 of its content.
    pub outputs: BTreeMap<String, String>,
}

/// Run ledger: the master seed plus per-stage versions, seeds, and input
/// hashes, enough to reproduce the run. Deliberately carries no
/// timestamps, so identical reruns write identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    pub master_seed: u64,
    pub config_sha256: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn new(master_seed: u64, config_sha256: String) -> Self {
        Manifest {
            format_version: 1,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed,
            config_sha256,
            stages: BTreeMap::new(),
        }
    }

    /// Reload the manifest at `path` when it belongs to the same config
    /// and master seed; any mismatch means the old stage records describe
    /// a different run, so start fresh.
    pub fn load_or_new(path: &Path, master_seed: u64, config_sha256: &str) -> Self {
        if let Ok(text) = fs::read_to_string(path) {
            if let Ok(manifest) = serde_json::from_str::<Manifest>(&text) {
                if manifest.master_seed == master_seed
                    && manifest.config_sha256 == config_sha256
                {
                    return manifest;
                }
            }
        }
        Manifest::new(master_seed, config_sha256.to_string())
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text)
    }
}
