//! Command implementations behind the `mac-forge` binary.
//!
//! Each command takes a resolved [`PipelineConfig`] and returns a report
//! that renders either as line-oriented text or as one JSON object. Errors
//! carry an exit code: 1 for usage and configuration problems, 2 for bad
//! input data.

mod commands;
mod config;
mod mix;

use std::path::Path;

use thiserror::Error;

use crate::align::mace::MaceError;
use crate::align::AlignError;
use crate::audio::WavError;
use crate::clipdb::ClipDbError;
use crate::lexicon::{Lexicon, LexiconError, MergeRules, MetaAudioSet};
use crate::manifest::ManifestError;
use crate::sampler::{CorpusError, SamplerError};

pub use commands::{
    align, build_db, stats, synth, AlignReport, AlignRequest, BuildDbReport, LabelCount,
    SegmentReport, SkipEntry, SlotFailureEntry, StatsReport, SynthReport,
};
pub use config::{parse_oov, PipelineConfig};
pub use mix::{mix, mix_prefix, MixReport};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "MAC_FORGE_THREADS";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Config(String),
    #[error("missing required setting --{0}")]
    Missing(&'static str),
    #[error("{path}: {source}")]
    Input {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} is not empty; pass --force to replace earlier output")]
    OutDirNotEmpty(String),
    #[error("{path}: {source}")]
    Lexicon {
        path: String,
        #[source]
        source: LexiconError,
    },
    #[error("{path}: {source}")]
    Wav {
        path: String,
        #[source]
        source: WavError,
    },
    #[error("{path}: {source}")]
    Mace {
        path: String,
        #[source]
        source: MaceError,
    },
    #[error(transparent)]
    ClipDb(#[from] ClipDbError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Sampler(SamplerError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error("id {0:?} appears in both manifests")]
    DuplicateId(String),
    #[error("no clips were stored; refusing to write an empty database")]
    NoClipsStored,
}

impl PipelineError {
    pub(crate) fn input(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Input {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::Missing(_)
            | PipelineError::Input { .. }
            | PipelineError::OutDirNotEmpty(_) => 1,
            _ => 2,
        }
    }
}

/// Output of a command.
pub trait Report: serde::Serialize + std::fmt::Display {
    /// Non-zero when the command finished but its result is incomplete.
    fn exit_code(&self) -> i32 {
        0
    }

    fn render(&self, json: bool) -> String {
        if json {
            serde_json::to_string(self).expect("report serializes")
        } else {
            self.to_string()
        }
    }
}

/// Applies [`THREADS_ENV`] to the global rayon pool.
pub fn configure_threads() -> Result<(), PipelineError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            PipelineError::Config(format!(
                "{THREADS_ENV} must be a positive integer, got {value:?}"
            ))
        })?;
    // fails only if the pool was already built, in which case keep it
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

pub(crate) fn read_text(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|e| PipelineError::input(path, e))
}

pub(crate) fn read_lines(path: &Path) -> Result<Vec<String>, PipelineError> {
    Ok(read_text(path)?.lines().map(str::to_string).collect())
}

fn lexicon_err(path: &Path) -> impl FnOnce(LexiconError) -> PipelineError + '_ {
    move |source| PipelineError::Lexicon {
        path: path.display().to_string(),
        source,
    }
}

pub(crate) fn load_meta_set(cfg: &PipelineConfig) -> Result<MetaAudioSet, PipelineError> {
    let path = PipelineConfig::require(&cfg.meta_set, "meta-set")?;
    MetaAudioSet::parse(&read_text(path)?).map_err(lexicon_err(path))
}

pub(crate) fn load_lexicon(
    cfg: &PipelineConfig,
    set: &MetaAudioSet,
) -> Result<Lexicon, PipelineError> {
    let rules = match &cfg.merge_rules {
        Some(path) => MergeRules::parse(&read_text(path)?, set).map_err(lexicon_err(path))?,
        None => MergeRules::default(),
    };
    let path = PipelineConfig::require(&cfg.lexicon, "lexicon")?;
    Lexicon::parse(&read_text(path)?, set, &rules).map_err(lexicon_err(path))
}

pub(crate) fn require_dir(path: &Path) -> Result<(), PipelineError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(PipelineError::input(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "directory not found"),
        ))
    }
}
