//! The clip database: every aligned audio clip of every meta audio, with the
//! alignment score and the utterance it came from.
//!
//! On disk a database is a directory:
//!
//! ```text
//! meta.hash     hex SHA-256 of the meta-audio set file
//! db.meta       version, sample_rate, labels, meta_hash as key=value lines
//! index.tsv     meta_id  utt_id  start  end  log_score  energy  clipfile
//! clips/        <meta_id>_<ordinal>.wav, mono 16-bit PCM
//! ```
//!
//! Records of one meta id keep insertion order; the ordinal in the clip file
//! name is the record's position in that order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::align::{segmentation_to_samples, viterbi_segment, AlignError, EmissionMatrix};
use crate::audio::{self, WavError, Waveform};
use crate::fsio;
use crate::lexicon::{MetaAudioSet, MetaId, MetaSequence, MetaSetHash};
use crate::synth::energy;

pub const DB_VERSION: u32 = 1;
const ENERGY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ClipDbError {
    #[error("meta id {id} out of range for a set of {k} labels")]
    IdOutOfRange { id: MetaId, k: usize },
    #[error("utterance {utt_id:?}: sample rate {found} Hz, database uses {expected} Hz")]
    SampleRateMismatch {
        utt_id: String,
        expected: u32,
        found: u32,
    },
    #[error(
        "utterance {utt_id:?}: emissions were produced for meta set {found}, expected {expected}"
    )]
    HashMismatch {
        utt_id: String,
        expected: MetaSetHash,
        found: MetaSetHash,
    },
    #[error("utterance {utt_id:?}: emissions have {found} labels, meta set has {expected}")]
    LabelCountMismatch {
        utt_id: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid utterance id {0:?}: must be non-empty without tabs or newlines")]
    InvalidUttId(String),
    #[error("clip [{start}, {end}) is empty")]
    EmptyClip { start: usize, end: usize },
    #[error("{0}: missing index.tsv")]
    MissingIndex(String),
    #[error("db.meta line {line}: {reason}")]
    BadMeta { line: usize, reason: String },
    #[error("database version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("meta-set hash mismatch: database has {found}, expected {expected}")]
    MetaHashMismatch {
        expected: MetaSetHash,
        found: MetaSetHash,
    },
    #[error("index.tsv line {line}: {reason}")]
    CorruptIndex { line: usize, reason: String },
    #[error("{0} exists and is not a clip database")]
    NotADatabase(String),
    #[error("clip {path}: {source}")]
    Clip {
        path: String,
        #[source]
        source: WavError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ClipDbError + '_ {
    move |source| ClipDbError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One aligned clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub meta_id: MetaId,
    pub utt_id: String,
    /// Sample range `[start, end)` inside the source utterance.
    pub start: usize,
    pub end: usize,
    pub log_score: f64,
    /// L2 norm of the clip samples.
    pub energy: f64,
    pub clip: Waveform,
}

impl ClipRecord {
    pub fn new(
        meta_id: MetaId,
        utt_id: impl Into<String>,
        start: usize,
        log_score: f64,
        clip: Waveform,
    ) -> Result<Self, ClipDbError> {
        let end = start + clip.len();
        if end <= start {
            return Err(ClipDbError::EmptyClip { start, end });
        }
        Ok(ClipRecord {
            meta_id,
            utt_id: utt_id.into(),
            start,
            end,
            log_score,
            energy: energy(&clip),
            clip,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.clip.sample_rate()
    }

    pub fn len(&self) -> usize {
        self.clip.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clip.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DbStats {
    pub counts: Vec<usize>,
    pub total_clips: usize,
    pub total_seconds: f64,
    /// Fraction of meta ids with at least one clip.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipDatabase {
    meta_hash: MetaSetHash,
    sample_rate: u32,
    index: Vec<Vec<ClipRecord>>,
}

impl ClipDatabase {
    pub fn new(meta_hash: MetaSetHash, labels: usize, sample_rate: u32) -> Self {
        ClipDatabase {
            meta_hash,
            sample_rate,
            index: vec![Vec::new(); labels],
        }
    }

    pub fn meta_hash(&self) -> MetaSetHash {
        self.meta_hash
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Size `K` of the meta-audio set.
    pub fn labels(&self) -> usize {
        self.index.len()
    }

    pub fn insert(&mut self, record: ClipRecord) -> Result<usize, ClipDbError> {
        let k = self.labels();
        if record.meta_id as usize >= k {
            return Err(ClipDbError::IdOutOfRange {
                id: record.meta_id,
                k,
            });
        }
        if record.sample_rate() != self.sample_rate {
            return Err(ClipDbError::SampleRateMismatch {
                expected: self.sample_rate,
                found: record.sample_rate(),
                utt_id: record.utt_id,
            });
        }
        if record.utt_id.is_empty() || record.utt_id.contains(['\t', '\n', '\r']) {
            return Err(ClipDbError::InvalidUttId(record.utt_id));
        }
        let list = &mut self.index[record.meta_id as usize];
        list.push(record);
        Ok(list.len() - 1)
    }

    /// All records for `meta_id`, in insertion order.
    pub fn query(&self, meta_id: MetaId) -> Result<&[ClipRecord], ClipDbError> {
        self.index
            .get(meta_id as usize)
            .map(Vec::as_slice)
            .ok_or(ClipDbError::IdOutOfRange {
                id: meta_id,
                k: self.labels(),
            })
    }

    pub fn count(&self, meta_id: MetaId) -> usize {
        self.index.get(meta_id as usize).map_or(0, Vec::len)
    }

    /// Ids in `seq` without any clip, sorted and deduplicated.
    pub fn uncovered(&self, seq: &MetaSequence) -> Vec<MetaId> {
        let mut missing: Vec<MetaId> = seq
            .ids()
            .iter()
            .copied()
            .filter(|&id| self.count(id) == 0)
            .collect();
        missing.sort_unstable();
        missing.dedup();
        missing
    }

    pub fn records(&self) -> impl Iterator<Item = (usize, &ClipRecord)> {
        self.index.iter().flat_map(|list| list.iter().enumerate())
    }

    pub fn stats(&self) -> DbStats {
        let counts: Vec<usize> = self.index.iter().map(Vec::len).collect();
        let total_clips = counts.iter().sum();
        let samples: usize = self.records().map(|(_, r)| r.len()).sum();
        let covered = counts.iter().filter(|&&c| c > 0).count();
        DbStats {
            total_clips,
            total_seconds: samples as f64 / self.sample_rate as f64,
            coverage: if counts.is_empty() {
                0.0
            } else {
                covered as f64 / counts.len() as f64
            },
            counts,
        }
    }

    pub fn clip_file_name(meta_id: MetaId, ordinal: usize) -> String {
        format!("{meta_id}_{ordinal}.wav")
    }

    /// Writes the database to `dir`. The tree is staged in a sibling
    /// temporary directory and renamed into place; an existing database at
    /// `dir` is replaced, any other non-empty directory is refused.
    pub fn persist(&self, dir: &Path) -> Result<(), ClipDbError> {
        if dir.exists() {
            let mut entries = std::fs::read_dir(dir).map_err(io_err(dir))?;
            if entries.next().is_some() && !dir.join("db.meta").exists() {
                return Err(ClipDbError::NotADatabase(dir.display().to_string()));
            }
        }
        let parent = match dir.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&parent).map_err(io_err(&parent))?;
        let staging = tempfile::Builder::new()
            .prefix(".clipdb-")
            .tempdir_in(&parent)
            .map_err(io_err(&parent))?;
        self.write_tree(staging.path())?;
        if dir.exists() {
            std::fs::remove_dir_all(dir).map_err(io_err(dir))?;
        }
        let staged = staging.keep();
        std::fs::rename(&staged, dir).map_err(io_err(dir))?;
        Ok(())
    }

    fn write_tree(&self, root: &Path) -> Result<(), ClipDbError> {
        let clips = root.join("clips");
        std::fs::create_dir_all(&clips).map_err(io_err(&clips))?;
        let hex = self.meta_hash.to_hex();
        let write = |name: &str, body: String| {
            let p = root.join(name);
            fsio::write_atomic(&p, body.as_bytes()).map_err(io_err(&p))
        };
        write("meta.hash", format!("{hex}\n"))?;
        write(
            "db.meta",
            format!(
                "version={DB_VERSION}\nsample_rate={}\nlabels={}\nmeta_hash={hex}\n",
                self.sample_rate,
                self.labels()
            ),
        )?;
        let mut index = String::new();
        for (ordinal, r) in self.records() {
            let file = Self::clip_file_name(r.meta_id, ordinal);
            writeln!(
                index,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.meta_id, r.utt_id, r.start, r.end, r.log_score, r.energy, file
            )
            .unwrap();
            let path = clips.join(&file);
            audio::write_wav(&path, &r.clip).map_err(|source| ClipDbError::Clip {
                path: path.display().to_string(),
                source,
            })?;
        }
        write("index.tsv", index)
    }

    /// Reads a database written by [`persist`](Self::persist). When
    /// `expected` is given the stored meta-set hash must equal it.
    pub fn load(dir: &Path, expected: Option<&MetaSetHash>) -> Result<Self, ClipDbError> {
        let index_path = dir.join("index.tsv");
        if !index_path.is_file() {
            return Err(ClipDbError::MissingIndex(dir.display().to_string()));
        }
        let meta = parse_db_meta(&read_text(&dir.join("db.meta"))?)?;
        let hash_text = read_text(&dir.join("meta.hash"))?;
        let file_hash = MetaSetHash::from_hex(&hash_text).ok_or_else(|| ClipDbError::BadMeta {
            line: 1,
            reason: "meta.hash is not a hex SHA-256".into(),
        })?;
        if file_hash != meta.hash {
            return Err(ClipDbError::MetaHashMismatch {
                expected: meta.hash,
                found: file_hash,
            });
        }
        if let Some(expected) = expected {
            if *expected != file_hash {
                return Err(ClipDbError::MetaHashMismatch {
                    expected: *expected,
                    found: file_hash,
                });
            }
        }

        let mut db = ClipDatabase::new(file_hash, meta.labels, meta.sample_rate);
        let text = read_text(&index_path)?;
        for (lineno, line) in text.lines().enumerate() {
            let lineno = lineno + 1;
            if line.is_empty() {
                continue;
            }
            let row = parse_index_line(line, db.labels()).map_err(|reason| {
                ClipDbError::CorruptIndex {
                    line: lineno,
                    reason,
                }
            })?;
            let ordinal = db.count(row.meta_id);
            let corrupt = |reason: String| ClipDbError::CorruptIndex {
                line: lineno,
                reason,
            };
            if row.file != Self::clip_file_name(row.meta_id, ordinal) {
                return Err(corrupt(format!(
                    "clip file {:?} out of order, expected {:?}",
                    row.file,
                    Self::clip_file_name(row.meta_id, ordinal)
                )));
            }
            let clip_path = dir.join("clips").join(&row.file);
            let clip =
                audio::read_wav(&clip_path).map_err(|e| corrupt(format!("{}: {e}", row.file)))?;
            if clip.len() != row.end - row.start {
                return Err(corrupt(format!(
                    "clip has {} samples, range [{}, {}) needs {}",
                    clip.len(),
                    row.start,
                    row.end,
                    row.end - row.start
                )));
            }
            let actual = energy(&clip);
            if (actual - row.energy).abs()
                > ENERGY_TOLERANCE * row.energy.abs().max(f64::MIN_POSITIVE)
            {
                return Err(corrupt(format!(
                    "stored energy {} does not match clip energy {actual}",
                    row.energy
                )));
            }
            let record = ClipRecord {
                meta_id: row.meta_id,
                utt_id: row.utt_id,
                start: row.start,
                end: row.end,
                log_score: row.log_score,
                energy: row.energy,
                clip,
            };
            db.insert(record).map_err(|e| corrupt(e.to_string()))?;
        }
        Ok(db)
    }
}

fn read_text(path: &Path) -> Result<String, ClipDbError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

struct DbMeta {
    sample_rate: u32,
    labels: usize,
    hash: MetaSetHash,
}

fn parse_db_meta(text: &str) -> Result<DbMeta, ClipDbError> {
    let mut fields = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ClipDbError::BadMeta {
            line: lineno + 1,
            reason: "expected key=value".into(),
        })?;
        fields.insert(k.trim().to_string(), (lineno + 1, v.trim().to_string()));
    }
    let get = |key: &str| {
        fields.get(key).ok_or_else(|| ClipDbError::BadMeta {
            line: 0,
            reason: format!("missing {key}"),
        })
    };
    let num = |key: &str| -> Result<u64, ClipDbError> {
        let (line, v) = get(key)?;
        v.parse().map_err(|_| ClipDbError::BadMeta {
            line: *line,
            reason: format!("{key} is not a number"),
        })
    };
    let version = num("version")? as u32;
    if version != DB_VERSION {
        return Err(ClipDbError::VersionMismatch {
            expected: DB_VERSION,
            found: version,
        });
    }
    let (line, hex) = get("meta_hash")?;
    let hash = MetaSetHash::from_hex(hex).ok_or_else(|| ClipDbError::BadMeta {
        line: *line,
        reason: "meta_hash is not a hex SHA-256".into(),
    })?;
    let sample_rate = num("sample_rate")? as u32;
    if sample_rate == 0 {
        return Err(ClipDbError::BadMeta {
            line: get("sample_rate")?.0,
            reason: "sample_rate must be positive".into(),
        });
    }
    Ok(DbMeta {
        sample_rate,
        labels: num("labels")? as usize,
        hash,
    })
}

struct IndexRow {
    meta_id: MetaId,
    utt_id: String,
    start: usize,
    end: usize,
    log_score: f64,
    energy: f64,
    file: String,
}

fn parse_index_line(line: &str, labels: usize) -> Result<IndexRow, String> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 7 {
        return Err(format!(
            "expected 7 tab-separated columns, found {}",
            cols.len()
        ));
    }
    fn field<T: std::str::FromStr>(v: &str, name: &str) -> Result<T, String> {
        v.parse().map_err(|_| format!("bad {name} {v:?}"))
    }
    let meta_id: MetaId = field(cols[0], "meta_id")?;
    if meta_id as usize >= labels {
        return Err(format!(
            "meta_id {meta_id} out of range for {labels} labels"
        ));
    }
    let start: usize = field(cols[2], "start")?;
    let end: usize = field(cols[3], "end")?;
    if end <= start {
        return Err(format!("empty range [{start}, {end})"));
    }
    let log_score: f64 = field(cols[4], "log_score")?;
    let energy: f64 = field(cols[5], "energy")?;
    if log_score.is_nan() || log_score > 0.0 {
        return Err(format!("bad log_score {log_score}"));
    }
    if !energy.is_finite() || energy < 0.0 {
        return Err(format!("bad energy {energy}"));
    }
    if cols[1].is_empty() {
        return Err("empty utt_id".into());
    }
    Ok(IndexRow {
        meta_id,
        utt_id: cols[1].to_string(),
        start,
        end,
        log_score,
        energy,
        file: cols[6].to_string(),
    })
}

/// One aligned training utterance.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub utt_id: String,
    pub waveform: Waveform,
    pub sequence: MetaSequence,
    pub emissions: EmissionMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildConfig {
    pub sample_rate: u32,
    pub min_seg_frames: usize,
    pub min_clip_samples: usize,
    /// Clips whose segment log-score is below this are not stored.
    pub score_floor: f64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            sample_rate: 16000,
            min_seg_frames: 1,
            min_clip_samples: 80,
            score_floor: f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedUtterance {
    pub utt_id: String,
    pub reason: String,
}

/// What happened to every utterance and segment during a build.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildReport {
    pub aligned: usize,
    pub skipped: Vec<SkippedUtterance>,
    /// Segments produced by alignment, before any filtering.
    pub segments: usize,
    pub dropped_empty: usize,
    pub dropped_short: usize,
    pub dropped_low_score: usize,
    pub stored: usize,
}

impl BuildReport {
    pub fn dropped(&self) -> usize {
        self.dropped_empty + self.dropped_short + self.dropped_low_score
    }
}

struct Candidate {
    meta_id: MetaId,
    start: usize,
    end: usize,
    log_score: f64,
}

fn check_utterance(
    set: &MetaAudioSet,
    cfg: &BuildConfig,
    u: &Utterance,
) -> Result<(), ClipDbError> {
    for found in [u.waveform.sample_rate(), u.emissions.sample_rate()] {
        if found != cfg.sample_rate {
            return Err(ClipDbError::SampleRateMismatch {
                utt_id: u.utt_id.clone(),
                expected: cfg.sample_rate,
                found,
            });
        }
    }
    if let Some(found) = u.emissions.meta_hash() {
        if found != set.hash() {
            return Err(ClipDbError::HashMismatch {
                utt_id: u.utt_id.clone(),
                expected: set.hash(),
                found,
            });
        }
    }
    if u.emissions.labels() != set.len() {
        return Err(ClipDbError::LabelCountMismatch {
            utt_id: u.utt_id.clone(),
            expected: set.len(),
            found: u.emissions.labels(),
        });
    }
    if u.utt_id.is_empty() || u.utt_id.contains(['\t', '\n', '\r']) {
        return Err(ClipDbError::InvalidUttId(u.utt_id.clone()));
    }
    Ok(())
}

fn align_utterance(u: &Utterance, min_seg_frames: usize) -> Result<Vec<Candidate>, AlignError> {
    let path = viterbi_segment(&u.emissions, &u.sequence, min_seg_frames)?;
    let spans = segmentation_to_samples(
        &path.segmentation,
        u.emissions.frame_hop(),
        u.waveform.len(),
    );
    Ok(spans
        .iter()
        .zip(u.sequence.ids())
        .zip(path.segmentation.segment_scores())
        .map(|((span, &meta_id), &log_score)| Candidate {
            meta_id,
            start: span.start,
            end: span.end,
            log_score,
        })
        .collect())
}

/// Force-aligns every utterance and stores all resulting clips.
///
/// Configuration problems (sample rate, meta-set hash, label count) are
/// fatal. Utterances that cannot be aligned are skipped and reported.
pub fn build_database(
    set: &MetaAudioSet,
    corpus: &[Utterance],
    cfg: &BuildConfig,
) -> Result<(ClipDatabase, BuildReport), ClipDbError> {
    for u in corpus {
        check_utterance(set, cfg, u)?;
    }
    let aligned: Vec<Result<Vec<Candidate>, AlignError>> = corpus
        .par_iter()
        .map(|u| align_utterance(u, cfg.min_seg_frames))
        .collect();

    let mut db = ClipDatabase::new(set.hash(), set.len(), cfg.sample_rate);
    let mut report = BuildReport::default();
    for (u, result) in corpus.iter().zip(aligned) {
        let candidates = match result {
            Ok(c) => c,
            Err(e) => {
                report.skipped.push(SkippedUtterance {
                    utt_id: u.utt_id.clone(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        report.aligned += 1;
        for c in candidates {
            report.segments += 1;
            if c.end <= c.start {
                report.dropped_empty += 1;
            } else if c.end - c.start < cfg.min_clip_samples {
                report.dropped_short += 1;
            } else if c.log_score < cfg.score_floor {
                report.dropped_low_score += 1;
            } else {
                let clip = u.waveform.slice(c.start, c.end);
                db.insert(ClipRecord::new(
                    c.meta_id,
                    u.utt_id.clone(),
                    c.start,
                    c.log_score,
                    clip,
                )?)?;
                report.stored += 1;
            }
        }
    }
    Ok((db, report))
}
