//! JSON-lines manifests of audio/transcript pairs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fsio;
use crate::synth::ClipRef;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path} line {line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path} line {line}: duplicate id {id:?}")]
    DuplicateId {
        path: String,
        line: usize,
        id: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Mac,
}

/// One audio/transcript pair. `audio` is relative to the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub audio: String,
    pub text: String,
    pub source: Source,
    #[serde(default)]
    pub provenance: String,
}

/// Full lineage of a synthesized pair; `ManifestRecord::provenance` is the
/// SHA-256 of this record's JSON line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub id: String,
    pub text: String,
    pub meta_ids: Vec<u32>,
    pub clips: Vec<ClipRef>,
}

impl ProvenanceRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("provenance serializes")
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_line().as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    /// Directory that relative audio paths are resolved against.
    pub base: PathBuf,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let records: Vec<ManifestRecord> = parse_lines(&text, path)?;
        let mut seen = std::collections::HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if !seen.insert(r.id.as_str()) {
                return Err(ManifestError::DuplicateId {
                    path: path.display().to_string(),
                    line: i + 1,
                    id: r.id.clone(),
                });
            }
        }
        Ok(Manifest {
            records,
            base: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn audio_path(&self, record: &ManifestRecord) -> PathBuf {
        self.base.join(&record.audio)
    }
}

/// Parses JSON lines, skipping blank ones. Line numbers in errors are
/// 1-based file lines.
pub fn parse_lines<T: serde::de::DeserializeOwned>(
    text: &str,
    path: &Path,
) -> Result<Vec<T>, ManifestError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| ManifestError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                source,
            })
        })
        .collect()
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), ManifestError> {
    fsio::write_atomic(path, to_jsonl(records).as_bytes()).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })
}
