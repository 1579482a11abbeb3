//! Two-stage sampling of new audio/transcript pairs.
//!
//! A transcript is drawn from the empirical distribution of a text-only
//! corpus, mapped to its meta-audio sequence, and realized by picking one
//! stored clip per meta audio. Every draw comes from a ChaCha8 stream whose
//! key is the SHA-256 of the master seed and a stream label, so a seed fixes
//! the whole output independent of thread scheduling.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio::{self, WavError};
use crate::clipdb::{ClipDatabase, ClipRecord};
use crate::lexicon::{Lexicon, MetaSequence, OovPolicy};
use crate::manifest::{self, ManifestError, ManifestRecord, ProvenanceRecord, Source};
use crate::synth::{synthesize_utterance, SynthError};

/// Resampling attempts per output slot before the slot is given up.
pub const RETRY_CAP: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("text corpus is empty after removing {excluded} excluded transcript(s)")]
    EmptyDistribution { excluded: usize },
    #[error("no candidate clips to select from")]
    NoCandidates,
    #[error("temperature must be finite and positive, got {0}")]
    BadTemperature(f64),
    #[error("unknown selection policy {0:?} (expected uniform, best or weighted)")]
    UnknownPolicy(String),
}

/// Empirical distribution over distinct transcripts.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalTextDist {
    counts: IndexMap<String, u64>,
    cumulative: Vec<u64>,
    total: u64,
    excluded: usize,
}

impl EmpiricalTextDist {
    /// Counts trimmed, non-empty transcripts; any transcript equal (after
    /// trimming) to an exclusion is dropped.
    pub fn build<S: AsRef<str>, E: AsRef<str>>(
        texts: &[S],
        exclusions: &[E],
    ) -> Result<Self, SamplerError> {
        let excluded_set: std::collections::HashSet<&str> =
            exclusions.iter().map(|e| e.as_ref().trim()).collect();
        let mut counts: IndexMap<String, u64> = IndexMap::new();
        let mut excluded = 0;
        for t in texts {
            let t = t.as_ref().trim();
            if t.is_empty() {
                continue;
            }
            if excluded_set.contains(t) {
                excluded += 1;
                continue;
            }
            *counts.entry(t.to_string()).or_insert(0) += 1;
        }
        if counts.is_empty() {
            return Err(SamplerError::EmptyDistribution { excluded });
        }
        let mut total = 0;
        let cumulative = counts
            .values()
            .map(|&c| {
                total += c;
                total
            })
            .collect();
        Ok(EmpiricalTextDist {
            counts,
            cumulative,
            total,
            excluded,
        })
    }

    /// Number of transcripts counted, `N`.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Transcripts dropped by the exclusion list.
    pub fn excluded(&self) -> usize {
        self.excluded
    }

    pub fn support(&self) -> impl Iterator<Item = (&str, f64)> {
        self.counts
            .iter()
            .map(move |(t, &c)| (t.as_str(), c as f64 / self.total as f64))
    }

    pub fn probability(&self, text: &str) -> f64 {
        self.counts
            .get(text.trim())
            .map_or(0.0, |&c| c as f64 / self.total as f64)
    }

    pub fn distinct(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Draws one transcript with probability proportional to its count.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &str {
        let u = rng.random_range(0..self.total);
        let idx = self.cumulative.partition_point(|&c| c <= u);
        self.counts.get_index(idx).expect("u < total").0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SelectionPolicy {
    /// Every candidate equally likely.
    #[default]
    Uniform,
    /// Highest log-score, ties to the earliest record.
    Best,
    /// Probability proportional to `exp(log_score / temperature)`.
    Weighted { temperature: f64 },
}

impl SelectionPolicy {
    pub fn weighted(temperature: f64) -> Result<Self, SamplerError> {
        if temperature.is_finite() && temperature > 0.0 {
            Ok(SelectionPolicy::Weighted { temperature })
        } else {
            Err(SamplerError::BadTemperature(temperature))
        }
    }

    pub fn parse(name: &str, temperature: f64) -> Result<Self, SamplerError> {
        match name {
            "uniform" => Ok(SelectionPolicy::Uniform),
            "best" => Ok(SelectionPolicy::Best),
            "weighted" => Self::weighted(temperature),
            other => Err(SamplerError::UnknownPolicy(other.to_string())),
        }
    }
}

/// Picks one candidate and returns its ordinal.
pub fn select_clip<R: Rng + ?Sized>(
    candidates: &[ClipRecord],
    policy: &SelectionPolicy,
    rng: &mut R,
) -> Result<usize, SamplerError> {
    if candidates.is_empty() {
        return Err(SamplerError::NoCandidates);
    }
    let uniform = |rng: &mut R| rng.random_range(0..candidates.len() as u64) as usize;
    Ok(match *policy {
        SelectionPolicy::Uniform => uniform(rng),
        SelectionPolicy::Best => {
            let mut best = 0;
            for (i, c) in candidates.iter().enumerate().skip(1) {
                if c.log_score > candidates[best].log_score {
                    best = i;
                }
            }
            best
        }
        SelectionPolicy::Weighted { temperature } => {
            let max = candidates
                .iter()
                .map(|c| c.log_score)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                uniform(rng)
            } else {
                let weights = candidates
                    .iter()
                    .map(|c| ((c.log_score - max) / temperature).exp());
                WeightedIndex::new(weights)
                    .expect("the maximum has weight 1")
                    .sample(rng)
            }
        }
    })
}

/// Master seed from which independent, reproducible streams are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeededRng {
    master: u64,
}

impl SeededRng {
    pub fn new(master: u64) -> Self {
        SeededRng { master }
    }

    pub fn from_entropy() -> Self {
        SeededRng {
            master: rand::random(),
        }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    fn stream(&self, tag: &[u8], ordinal: u64) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(tag);
        h.update(self.master.to_le_bytes());
        h.update(ordinal.to_le_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    /// The stream transcript draws are taken from.
    pub fn sampling_stream(&self) -> ChaCha8Rng {
        self.stream(b"transcripts", 0)
    }

    /// The stream clip selection for output slot `ordinal` uses.
    pub fn utterance_stream(&self, ordinal: u64) -> ChaCha8Rng {
        self.stream(b"utterance", ordinal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingMode {
    /// `count` draws with replacement.
    #[default]
    WithReplacement,
    /// Each distinct transcript exactly once, in first-appearance order.
    EachOnce,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub count: usize,
    pub mode: SamplingMode,
    pub policy: SelectionPolicy,
    pub oov_policy: OovPolicy,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            count: 0,
            mode: SamplingMode::default(),
            policy: SelectionPolicy::default(),
            oov_policy: OovPolicy::Error,
            seed: 0,
        }
    }
}

/// An output slot that produced no pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotFailure {
    pub slot: usize,
    pub attempts: usize,
    pub last_text: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusReport {
    pub records: Vec<ManifestRecord>,
    pub provenance: Vec<ProvenanceRecord>,
    pub failures: Vec<SlotFailure>,
    pub clamped: usize,
    pub total_samples: usize,
    pub sample_rate: u32,
}

impl CorpusReport {
    pub fn total_seconds(&self) -> f64 {
        self.total_samples as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{path}: {source}")]
    Wav {
        path: String,
        #[source]
        source: WavError,
    },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const PROVENANCE_FILE: &str = "provenance.jsonl";
pub const WAV_DIR: &str = "wav";

struct Slot {
    slot: usize,
    text: String,
    sequence: MetaSequence,
}

fn resolve(
    db: &ClipDatabase,
    lexicon: &Lexicon,
    text: &str,
    oov: OovPolicy,
) -> Result<MetaSequence, String> {
    let seq = lexicon
        .map_transcript(text, oov)
        .map_err(|e| e.to_string())?
        .sequence;
    let missing = db.uncovered(&seq);
    if missing.is_empty() {
        Ok(seq)
    } else {
        Err(SynthError::Uncovered(missing).to_string())
    }
}

fn draw_slots(
    db: &ClipDatabase,
    lexicon: &Lexicon,
    dist: &EmpiricalTextDist,
    cfg: &CorpusConfig,
    seed: &SeededRng,
) -> (Vec<Slot>, Vec<SlotFailure>) {
    let mut slots = Vec::new();
    let mut failures = Vec::new();
    match cfg.mode {
        SamplingMode::EachOnce => {
            for (slot, text) in dist.distinct().enumerate() {
                match resolve(db, lexicon, text, cfg.oov_policy) {
                    Ok(sequence) => slots.push(Slot {
                        slot,
                        text: text.to_string(),
                        sequence,
                    }),
                    Err(reason) => failures.push(SlotFailure {
                        slot,
                        attempts: 1,
                        last_text: text.to_string(),
                        reason,
                    }),
                }
            }
        }
        SamplingMode::WithReplacement => {
            let mut rng = seed.sampling_stream();
            'slots: for slot in 0..cfg.count {
                let mut last = (String::new(), String::new());
                for _ in 0..RETRY_CAP {
                    let text = dist.sample(&mut rng);
                    match resolve(db, lexicon, text, cfg.oov_policy) {
                        Ok(sequence) => {
                            slots.push(Slot {
                                slot,
                                text: text.to_string(),
                                sequence,
                            });
                            continue 'slots;
                        }
                        Err(reason) => last = (text.to_string(), reason),
                    }
                }
                failures.push(SlotFailure {
                    slot,
                    attempts: RETRY_CAP,
                    last_text: last.0,
                    reason: last.1,
                });
            }
        }
    }
    (slots, failures)
}

pub fn synth_id(slot: usize) -> String {
    format!("mac-{slot:06}")
}

/// Samples transcripts, synthesizes audio for each and writes
/// `manifest.jsonl`, `provenance.jsonl` and `wav/<id>.wav` under `out_dir`.
///
/// Slots whose draws stay unmappable or uncovered for [`RETRY_CAP`]
/// attempts are reported in `failures`; the remaining pairs are still
/// written.
pub fn generate_corpus(
    db: &ClipDatabase,
    lexicon: &Lexicon,
    dist: &EmpiricalTextDist,
    cfg: &CorpusConfig,
    out_dir: &Path,
) -> Result<CorpusReport, CorpusError> {
    let seed = SeededRng::new(cfg.seed);
    let (slots, failures) = draw_slots(db, lexicon, dist, cfg, &seed);

    let wav_dir = out_dir.join(WAV_DIR);
    let results: Vec<Result<(ManifestRecord, ProvenanceRecord, usize, usize), CorpusError>> = slots
        .par_iter()
        .map(|s| {
            let mut rng = seed.utterance_stream(s.slot as u64);
            let out = synthesize_utterance(db, &s.sequence, &cfg.policy, &mut rng)?;
            let id = synth_id(s.slot);
            let file = format!("{id}.wav");
            let path: PathBuf = wav_dir.join(&file);
            audio::write_wav(&path, &out.waveform).map_err(|source| CorpusError::Wav {
                path: path.display().to_string(),
                source,
            })?;
            let prov = ProvenanceRecord {
                id: id.clone(),
                text: s.text.clone(),
                meta_ids: s.sequence.ids().to_vec(),
                clips: out.provenance,
            };
            let record = ManifestRecord {
                id,
                audio: format!("{WAV_DIR}/{file}"),
                text: s.text.clone(),
                source: Source::Mac,
                provenance: prov.digest(),
            };
            Ok((record, prov, out.clamped, out.waveform.len()))
        })
        .collect();

    let mut report = CorpusReport {
        records: Vec::with_capacity(results.len()),
        provenance: Vec::with_capacity(results.len()),
        failures,
        clamped: 0,
        total_samples: 0,
        sample_rate: db.sample_rate(),
    };
    for r in results {
        let (record, prov, clamped, samples) = r?;
        report.records.push(record);
        report.provenance.push(prov);
        report.clamped += clamped;
        report.total_samples += samples;
    }
    std::fs::create_dir_all(out_dir).map_err(|source| ManifestError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    manifest::write_jsonl(&out_dir.join(PROVENANCE_FILE), &report.provenance)?;
    manifest::write_jsonl(&out_dir.join(MANIFEST_FILE), &report.records)?;
    Ok(report)
}
