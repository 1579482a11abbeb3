use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::align::mace::{self, DecodeOptions, MaceError};
use crate::align::{forward_logprob, segmentation_to_samples, viterbi_segment, AlignError};
use crate::audio;
use crate::clipdb::{build_database, BuildConfig, ClipDatabase, Utterance};
use crate::lexicon::{MetaAudioSet, MetaSequence};
use crate::manifest::{Manifest, ManifestRecord};
use crate::sampler::{
    generate_corpus, CorpusConfig, EmpiricalTextDist, SamplingMode, SeededRng, MANIFEST_FILE,
    PROVENANCE_FILE, WAV_DIR,
};

use super::{
    load_lexicon, load_meta_set, read_lines, require_dir, PipelineConfig, PipelineError, Report,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkipEntry {
    pub utt_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildDbReport {
    pub db: String,
    pub utterances: usize,
    pub aligned: usize,
    pub skipped: Vec<SkipEntry>,
    pub segments: usize,
    pub dropped_empty: usize,
    pub dropped_short: usize,
    pub dropped_low_score: usize,
    pub stored: usize,
    pub coverage: f64,
    pub total_seconds: f64,
}

impl fmt::Display for BuildDbReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "utterances: {}", self.utterances)?;
        writeln!(f, "aligned: {}", self.aligned)?;
        writeln!(f, "skipped: {}", self.skipped.len())?;
        for s in &self.skipped {
            writeln!(f, "  {}: {}", s.utt_id, s.reason)?;
        }
        writeln!(f, "segments: {}", self.segments)?;
        writeln!(
            f,
            "dropped: empty {}, short {}, low score {}",
            self.dropped_empty, self.dropped_short, self.dropped_low_score
        )?;
        writeln!(f, "clips stored: {}", self.stored)?;
        writeln!(f, "clip seconds: {:.3}", self.total_seconds)?;
        writeln!(f, "coverage: {:.4}", self.coverage)?;
        write!(f, "database: {}", self.db)
    }
}

impl Report for BuildDbReport {}

enum Loaded {
    Ready(Utterance),
    Skip(String),
}

fn load_utterance(
    manifest: &Manifest,
    record: &ManifestRecord,
    set: &MetaAudioSet,
    lexicon: &crate::lexicon::Lexicon,
    cfg: &PipelineConfig,
    emissions_dir: &Path,
) -> Result<Loaded, PipelineError> {
    let mace_path = emissions_dir.join(format!("{}.mace", record.id));
    if !mace_path.is_file() {
        return Ok(Loaded::Skip(format!(
            "missing emissions file {}",
            mace_path.display()
        )));
    }
    let hash = set.hash();
    let emissions = match mace::read(
        &mace_path,
        DecodeOptions {
            expected_hash: Some(&hash),
            renormalize: false,
        },
    ) {
        Ok(em) => em,
        Err(source @ MaceError::HashMismatch { .. }) => {
            return Err(PipelineError::Mace {
                path: mace_path.display().to_string(),
                source,
            })
        }
        Err(e) => return Ok(Loaded::Skip(format!("{}: {e}", mace_path.display()))),
    };
    let wav_path = manifest.audio_path(record);
    let waveform = match audio::read_wav(&wav_path) {
        Ok(w) => w,
        Err(e) => return Ok(Loaded::Skip(format!("{}: {e}", wav_path.display()))),
    };
    let sequence = match lexicon.map_transcript(&record.text, cfg.oov.unwrap_or_default()) {
        Ok(m) => m.sequence,
        Err(e) => return Ok(Loaded::Skip(format!("transcript: {e}"))),
    };
    Ok(Loaded::Ready(Utterance {
        utt_id: record.id.clone(),
        waveform,
        sequence,
        emissions,
    }))
}

/// Aligns a real corpus and persists the clip database.
///
/// Utterances without a readable `<emissions>/<id>.mace`, audio file or
/// mappable transcript are skipped. Storing no clips at all is an error and
/// leaves the database directory untouched.
pub fn build_db(cfg: &PipelineConfig) -> Result<BuildDbReport, PipelineError> {
    let set = load_meta_set(cfg)?;
    let lexicon = load_lexicon(cfg, &set)?;
    let manifest_path = PipelineConfig::require(&cfg.manifest, "manifest")?;
    if !manifest_path.is_file() {
        return Err(PipelineError::input(
            manifest_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "manifest not found"),
        ));
    }
    let manifest = Manifest::read(manifest_path)?;
    let emissions_dir = PipelineConfig::require(&cfg.emissions, "emissions")?;
    require_dir(emissions_dir)?;
    let db_dir = PipelineConfig::require(&cfg.db, "db")?;
    let build_cfg = BuildConfig {
        sample_rate: cfg.sample_rate()?,
        min_seg_frames: cfg.min_seg_frames()?,
        min_clip_samples: cfg
            .min_clip_samples
            .unwrap_or(BuildConfig::default().min_clip_samples),
        score_floor: cfg.score_floor.unwrap_or(f64::NEG_INFINITY),
    };

    let loaded = manifest
        .records
        .par_iter()
        .map(|r| load_utterance(&manifest, r, &set, &lexicon, cfg, emissions_dir))
        .collect::<Result<Vec<_>, _>>()?;
    let mut reasons: HashMap<String, String> = HashMap::new();
    let mut utterances = Vec::new();
    for (record, l) in manifest.records.iter().zip(loaded) {
        match l {
            Loaded::Ready(u) => utterances.push(u),
            Loaded::Skip(reason) => {
                reasons.insert(record.id.clone(), reason);
            }
        }
    }

    let (db, report) = build_database(&set, &utterances, &build_cfg)?;
    for s in report.skipped.iter() {
        reasons.insert(s.utt_id.clone(), s.reason.clone());
    }
    let skipped = manifest
        .records
        .iter()
        .filter_map(|r| {
            reasons.remove(&r.id).map(|reason| SkipEntry {
                utt_id: r.id.clone(),
                reason,
            })
        })
        .collect();
    if report.stored == 0 {
        return Err(PipelineError::NoClipsStored);
    }
    db.persist(db_dir)?;
    let stats = db.stats();
    Ok(BuildDbReport {
        db: db_dir.display().to_string(),
        utterances: manifest.records.len(),
        aligned: report.aligned,
        skipped,
        segments: report.segments,
        dropped_empty: report.dropped_empty,
        dropped_short: report.dropped_short,
        dropped_low_score: report.dropped_low_score,
        stored: report.stored,
        coverage: stats.coverage,
        total_seconds: stats.total_seconds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotFailureEntry {
    pub slot: usize,
    pub attempts: usize,
    pub text: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthReport {
    pub out: String,
    pub seed: u64,
    pub seed_from_entropy: bool,
    pub requested: usize,
    pub produced: usize,
    pub failures: Vec<SlotFailureEntry>,
    pub excluded_texts: usize,
    pub db_coverage: f64,
    pub text_coverage: f64,
    pub clamped_samples: usize,
    pub total_seconds: f64,
}

impl fmt::Display for SynthReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.seed_from_entropy {
            writeln!(
                f,
                "seed: {} (drawn from entropy; pass --seed {} to reproduce)",
                self.seed, self.seed
            )?;
        } else {
            writeln!(f, "seed: {}", self.seed)?;
        }
        writeln!(f, "pairs: {} of {}", self.produced, self.requested)?;
        writeln!(f, "excluded transcripts: {}", self.excluded_texts)?;
        writeln!(f, "database coverage: {:.4}", self.db_coverage)?;
        writeln!(f, "transcript coverage: {:.4}", self.text_coverage)?;
        writeln!(f, "clamped samples: {}", self.clamped_samples)?;
        writeln!(f, "total seconds: {:.3}", self.total_seconds)?;
        if !self.failures.is_empty() {
            writeln!(f, "failed slots: {}", self.failures.len())?;
            for x in &self.failures {
                writeln!(
                    f,
                    "  slot {} after {} attempt(s), last {:?}: {}",
                    x.slot, x.attempts, x.text, x.reason
                )?;
            }
        }
        write!(f, "output: {}", self.out)
    }
}

impl Report for SynthReport {
    fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            2
        }
    }
}

fn prepare_out_dir(out: &Path, force: bool) -> Result<(), PipelineError> {
    if out.exists() && !out.is_dir() {
        return Err(PipelineError::Config(format!(
            "{} is not a directory",
            out.display()
        )));
    }
    let non_empty = out.is_dir()
        && std::fs::read_dir(out)
            .map_err(|e| PipelineError::input(out, e))?
            .next()
            .is_some();
    if non_empty {
        if !force {
            return Err(PipelineError::OutDirNotEmpty(out.display().to_string()));
        }
        for name in [MANIFEST_FILE, PROVENANCE_FILE] {
            let p = out.join(name);
            if p.is_file() {
                std::fs::remove_file(&p).map_err(|e| PipelineError::input(&p, e))?;
            }
        }
        let wav = out.join(WAV_DIR);
        if wav.is_dir() {
            std::fs::remove_dir_all(&wav).map_err(|e| PipelineError::input(&wav, e))?;
        }
    }
    std::fs::create_dir_all(out.join(WAV_DIR)).map_err(|e| PipelineError::input(out, e))
}

/// Samples transcripts and synthesizes a corpus from a clip database.
///
/// With `force`, an existing output directory loses only its manifest,
/// provenance file and `wav/` directory.
pub fn synth(cfg: &PipelineConfig, force: bool) -> Result<SynthReport, PipelineError> {
    let set = load_meta_set(cfg)?;
    let lexicon = load_lexicon(cfg, &set)?;
    let db_dir = PipelineConfig::require(&cfg.db, "db")?;
    require_dir(db_dir)?;
    let texts = read_lines(PipelineConfig::require(&cfg.texts, "texts")?)?;
    let exclusions = match &cfg.exclude {
        Some(p) => read_lines(p)?,
        None => Vec::new(),
    };
    let out = PipelineConfig::require(&cfg.out, "out")?;
    let each_once = cfg.each_once.unwrap_or(false);
    let count = match (cfg.count, each_once) {
        (Some(c), _) => c,
        (None, true) => 0,
        (None, false) => return Err(PipelineError::Missing("count")),
    };
    let policy = cfg.selection_policy()?;
    let db = ClipDatabase::load(db_dir, Some(&set.hash()))?;
    let dist = EmpiricalTextDist::build(&texts, &exclusions).map_err(PipelineError::Sampler)?;
    prepare_out_dir(out, force)?;

    let (seed, seed_from_entropy) = match cfg.seed {
        Some(s) => (s, false),
        None => (SeededRng::from_entropy().master(), true),
    };
    let corpus_cfg = CorpusConfig {
        count,
        mode: if each_once {
            SamplingMode::EachOnce
        } else {
            SamplingMode::WithReplacement
        },
        policy,
        oov_policy: cfg.oov.unwrap_or_default(),
        seed,
    };
    let report = generate_corpus(&db, &lexicon, &dist, &corpus_cfg, out)?;
    let support: Vec<&str> = dist.distinct().collect();
    Ok(SynthReport {
        out: out.display().to_string(),
        seed,
        seed_from_entropy,
        requested: if each_once { dist.len() } else { count },
        produced: report.records.len(),
        failures: report
            .failures
            .into_iter()
            .map(|f| SlotFailureEntry {
                slot: f.slot,
                attempts: f.attempts,
                text: f.last_text,
                reason: f.reason,
            })
            .collect(),
        excluded_texts: dist.excluded(),
        db_coverage: db.stats().coverage,
        text_coverage: lexicon.coverage_report(&support).mappable_fraction(),
        clamped_samples: report.clamped,
        total_seconds: report.total_samples as f64 / report.sample_rate as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelCount {
    pub id: u32,
    pub label: Option<String>,
    pub clips: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub meta_hash: String,
    pub sample_rate: u32,
    pub labels: Vec<LabelCount>,
    pub total_clips: usize,
    pub total_seconds: f64,
    pub coverage: f64,
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "meta set: {}", self.meta_hash)?;
        writeln!(f, "sample rate: {}", self.sample_rate)?;
        for l in &self.labels {
            match &l.label {
                Some(name) => writeln!(f, "  {:>4} {:<12} {}", l.id, name, l.clips)?,
                None => writeln!(f, "  {:>4} {}", l.id, l.clips)?,
            }
        }
        writeln!(f, "clips: {}", self.total_clips)?;
        writeln!(f, "clip seconds: {:.3}", self.total_seconds)?;
        write!(f, "coverage: {:.4}", self.coverage)
    }
}

impl Report for StatsReport {}

/// Per-label clip counts of a stored database. With a meta set configured
/// the database must match it and labels are printed by name.
pub fn stats(cfg: &PipelineConfig) -> Result<StatsReport, PipelineError> {
    let db_dir = PipelineConfig::require(&cfg.db, "db")?;
    require_dir(db_dir)?;
    let set = match cfg.meta_set {
        Some(_) => Some(load_meta_set(cfg)?),
        None => None,
    };
    let db = ClipDatabase::load(db_dir, set.as_ref().map(|s| s.hash()).as_ref())?;
    let stats = db.stats();
    Ok(StatsReport {
        meta_hash: db.meta_hash().to_hex(),
        sample_rate: db.sample_rate(),
        labels: stats
            .counts
            .iter()
            .enumerate()
            .map(|(id, &clips)| LabelCount {
                id: id as u32,
                label: set
                    .as_ref()
                    .and_then(|s| s.label(id as u32))
                    .map(str::to_string),
                clips,
            })
            .collect(),
        total_clips: stats.total_clips,
        total_seconds: stats.total_seconds,
        coverage: stats.coverage,
    })
}

/// One utterance to align, given either as meta-audio labels or as a
/// transcript mapped through the lexicon.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlignRequest {
    pub mace: PathBuf,
    pub labels: Option<String>,
    pub text: Option<String>,
    /// Treat the stored values as logits and normalize each frame.
    pub logits: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentReport {
    pub label: String,
    pub frames: (usize, usize),
    pub samples: (usize, usize),
    pub log_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignReport {
    pub frames: usize,
    pub labels: Vec<String>,
    pub log_marginal: f64,
    pub log_viterbi: f64,
    pub boundaries: Option<Vec<usize>>,
    pub segments: Vec<SegmentReport>,
}

impl fmt::Display for AlignReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "frames: {}", self.frames)?;
        writeln!(f, "sequence: {}", self.labels.join(" "))?;
        writeln!(f, "log marginal: {}", self.log_marginal)?;
        writeln!(f, "log viterbi: {}", self.log_viterbi)?;
        match &self.boundaries {
            Some(b) => {
                let b: Vec<String> = b.iter().map(usize::to_string).collect();
                write!(f, "boundaries: {}", b.join(" "))?;
            }
            None => write!(
                f,
                "boundaries: none (no segmentation has non-zero probability)"
            )?,
        }
        for s in &self.segments {
            write!(
                f,
                "\n  {:<12} frames [{}, {})  samples [{}, {})  log-score {}",
                s.label, s.frames.0, s.frames.1, s.samples.0, s.samples.1, s.log_score
            )?;
        }
        Ok(())
    }
}

impl Report for AlignReport {}

/// Marginal and best-path scores plus boundaries for one emission file.
pub fn align(cfg: &PipelineConfig, req: &AlignRequest) -> Result<AlignReport, PipelineError> {
    let set = load_meta_set(cfg)?;
    let seq: MetaSequence = match (&req.labels, &req.text) {
        (Some(labels), None) => {
            set.sequence_from_labels(labels)
                .map_err(|source| PipelineError::Lexicon {
                    path: "--labels".into(),
                    source,
                })?
        }
        (None, Some(text)) => {
            let lexicon = load_lexicon(cfg, &set)?;
            lexicon
                .map_transcript(text, cfg.oov.unwrap_or_default())
                .map_err(|source| PipelineError::Lexicon {
                    path: "--text".into(),
                    source,
                })?
                .sequence
        }
        _ => {
            return Err(PipelineError::Config(
                "give exactly one of --labels or --text".into(),
            ))
        }
    };
    if !req.mace.is_file() {
        return Err(PipelineError::input(
            &req.mace,
            std::io::Error::new(std::io::ErrorKind::NotFound, "emission file not found"),
        ));
    }
    let hash = set.hash();
    let em = mace::read(
        &req.mace,
        DecodeOptions {
            expected_hash: Some(&hash),
            renormalize: req.logits,
        },
    )
    .map_err(|source| PipelineError::Mace {
        path: req.mace.display().to_string(),
        source,
    })?;
    let min_seg = cfg.min_seg_frames()?;
    let log_marginal = forward_logprob(&em, &seq, min_seg)?;
    let labels: Vec<String> = seq
        .ids()
        .iter()
        .map(|&id| set.label(id).unwrap_or("?").to_string())
        .collect();
    let (log_viterbi, boundaries, segments) = match viterbi_segment(&em, &seq, min_seg) {
        Ok(path) => {
            let spans = segmentation_to_samples(
                &path.segmentation,
                em.frame_hop(),
                em.frames() * em.frame_hop() as usize,
            );
            let segments = (0..path.segmentation.len())
                .map(|i| SegmentReport {
                    label: labels[i].clone(),
                    frames: path.segmentation.segment(i),
                    samples: (spans[i].start, spans[i].end),
                    log_score: path.segmentation.segment_scores()[i],
                })
                .collect();
            (
                path.log_score,
                Some(path.segmentation.boundaries().to_vec()),
                segments,
            )
        }
        Err(AlignError::NoViablePath) => (f64::NEG_INFINITY, None, Vec::new()),
        Err(e) => return Err(e.into()),
    };
    Ok(AlignReport {
        frames: em.frames(),
        labels,
        log_marginal,
        log_viterbi,
        boundaries,
        segments,
    })
}
