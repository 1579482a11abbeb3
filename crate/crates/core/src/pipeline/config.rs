//! Layered configuration: command-line flags over an optional `key=value`
//! file.
//!
//! Config-file keys are the long flag names (`meta-set`, `min-seg-frames`,
//! ...). Relative paths in a config file resolve against the file's
//! directory.

use std::path::{Path, PathBuf};

use crate::lexicon::OovPolicy;
use crate::sampler::{SamplerError, SelectionPolicy};

use super::PipelineError;

/// Every setting a command may need. `None` means unset at this layer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineConfig {
    pub meta_set: Option<PathBuf>,
    pub merge_rules: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub emissions: Option<PathBuf>,
    pub db: Option<PathBuf>,
    pub texts: Option<PathBuf>,
    pub exclude: Option<PathBuf>,
    pub synth_manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub sample_rate: Option<u32>,
    pub min_seg_frames: Option<usize>,
    pub min_clip_samples: Option<usize>,
    pub score_floor: Option<f64>,
    pub oov: Option<OovPolicy>,
    pub policy: Option<String>,
    pub temperature: Option<f64>,
    pub seed: Option<u64>,
    pub count: Option<usize>,
    pub each_once: Option<bool>,
    pub ratio: Option<f64>,
}

fn parse_value<T: std::str::FromStr>(
    key: &str,
    value: &str,
    line: usize,
) -> Result<T, PipelineError> {
    value
        .parse()
        .map_err(|_| PipelineError::Config(format!("line {line}: bad value {value:?} for {key}")))
}

pub fn parse_oov(value: &str) -> Result<OovPolicy, PipelineError> {
    match value {
        "error" => Ok(OovPolicy::Error),
        "skip" => Ok(OovPolicy::Skip),
        other => Err(PipelineError::Config(format!(
            "unknown oov policy {other:?} (expected error or skip)"
        ))),
    }
}

fn parse_bool(value: &str) -> Option<bool> {
    match value {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

macro_rules! overlay {
    ($top:expr, $base:expr, $($field:ident),+) => {
        PipelineConfig { $($field: $top.$field.or($base.$field)),+ }
    };
}

impl PipelineConfig {
    /// Parses a config file; `base` is the directory relative paths resolve
    /// against.
    pub fn parse_file(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut cfg = PipelineConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("line {line}: expected key=value")))?;
            let (key, value) = (key.trim(), value.trim());
            let path = || Some(base.join(value));
            match key {
                "meta-set" => cfg.meta_set = path(),
                "merge-rules" => cfg.merge_rules = path(),
                "lexicon" => cfg.lexicon = path(),
                "manifest" => cfg.manifest = path(),
                "emissions" => cfg.emissions = path(),
                "db" => cfg.db = path(),
                "texts" => cfg.texts = path(),
                "exclude" => cfg.exclude = path(),
                "synth-manifest" => cfg.synth_manifest = path(),
                "out" => cfg.out = path(),
                "sample-rate" => cfg.sample_rate = Some(parse_value(key, value, line)?),
                "min-seg-frames" => cfg.min_seg_frames = Some(parse_value(key, value, line)?),
                "min-clip-samples" => cfg.min_clip_samples = Some(parse_value(key, value, line)?),
                "score-floor" => cfg.score_floor = Some(parse_value(key, value, line)?),
                "oov" => cfg.oov = Some(parse_oov(value)?),
                "policy" => cfg.policy = Some(value.to_string()),
                "temperature" => cfg.temperature = Some(parse_value(key, value, line)?),
                "seed" => cfg.seed = Some(parse_value(key, value, line)?),
                "count" => cfg.count = Some(parse_value(key, value, line)?),
                "each-once" => {
                    cfg.each_once = Some(parse_bool(value).ok_or_else(|| {
                        PipelineError::Config(format!("line {line}: bad value {value:?} for {key}"))
                    })?)
                }
                "ratio" => cfg.ratio = Some(parse_value(key, value, line)?),
                other => {
                    return Err(PipelineError::Config(format!(
                        "line {line}: unknown key {other:?}"
                    )))
                }
            }
        }
        Ok(cfg)
    }

    pub fn read_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::input(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse_file(&text, base).map_err(|e| match e {
            PipelineError::Config(msg) => {
                PipelineError::Config(format!("{}: {msg}", path.display()))
            }
            other => other,
        })
    }

    /// Settings from `self` win; unset ones fall back to `base`.
    pub fn over(self, base: PipelineConfig) -> PipelineConfig {
        overlay!(
            self,
            base,
            meta_set,
            merge_rules,
            lexicon,
            manifest,
            emissions,
            db,
            texts,
            exclude,
            synth_manifest,
            out,
            sample_rate,
            min_seg_frames,
            min_clip_samples,
            score_floor,
            oov,
            policy,
            temperature,
            seed,
            count,
            each_once,
            ratio
        )
    }

    pub(crate) fn require<'a, T>(
        value: &'a Option<T>,
        key: &'static str,
    ) -> Result<&'a T, PipelineError> {
        value.as_ref().ok_or(PipelineError::Missing(key))
    }

    pub fn sample_rate(&self) -> Result<u32, PipelineError> {
        match self.sample_rate.unwrap_or(16000) {
            0 => Err(PipelineError::Config("sample-rate must be positive".into())),
            r => Ok(r),
        }
    }

    pub fn min_seg_frames(&self) -> Result<usize, PipelineError> {
        match self.min_seg_frames.unwrap_or(1) {
            0 => Err(PipelineError::Config(
                "min-seg-frames must be at least 1".into(),
            )),
            d => Ok(d),
        }
    }

    pub fn selection_policy(&self) -> Result<SelectionPolicy, PipelineError> {
        let name = self.policy.as_deref().unwrap_or("uniform");
        SelectionPolicy::parse(name, self.temperature.unwrap_or(1.0)).map_err(|e| match e {
            SamplerError::BadTemperature(_) | SamplerError::UnknownPolicy(_) => {
                PipelineError::Config(e.to_string())
            }
            other => PipelineError::Sampler(other),
        })
    }

    pub fn ratio(&self) -> Result<f64, PipelineError> {
        let r = self.ratio.unwrap_or(0.5);
        if (0.0..=1.0).contains(&r) {
            Ok(r)
        } else {
            Err(PipelineError::Config(format!(
                "ratio must lie in [0, 1], got {r}"
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_and_relative_paths() {
        let cfg = PipelineConfig::parse_file(
            "# toy\nmeta-set = meta.txt\nseed=7\npolicy = weighted\ntemperature=0.5\neach-once=yes\n",
            Path::new("/data/toy"),
        )
        .unwrap();
        assert_eq!(cfg.meta_set, Some(PathBuf::from("/data/toy/meta.txt")));
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.each_once, Some(true));
        assert_eq!(
            cfg.selection_policy().unwrap(),
            SelectionPolicy::Weighted { temperature: 0.5 }
        );
    }

    #[test]
    fn flags_win() {
        let file = PipelineConfig {
            seed: Some(1),
            count: Some(5),
            ..Default::default()
        };
        let flags = PipelineConfig {
            seed: Some(2),
            ..Default::default()
        };
        let cfg = flags.over(file);
        assert_eq!((cfg.seed, cfg.count), (Some(2), Some(5)));
    }

    #[test]
    fn bad_lines_are_config_errors() {
        for text in ["nonsense\n", "colour=red\n", "seed=abc\n", "oov=maybe\n"] {
            let e = PipelineConfig::parse_file(text, Path::new(".")).unwrap_err();
            assert_eq!(e.exit_code(), 1, "{text}");
        }
    }

    #[test]
    fn ratio_and_rate_bounds() {
        let mut cfg = PipelineConfig::default();
        assert_eq!(cfg.ratio().unwrap(), 0.5);
        assert_eq!(cfg.sample_rate().unwrap(), 16000);
        cfg.ratio = Some(1.5);
        assert!(cfg.ratio().is_err());
        cfg.sample_rate = Some(0);
        assert!(cfg.sample_rate().is_err());
        cfg.policy = Some("weighted".into());
        cfg.temperature = Some(0.0);
        assert_eq!(cfg.selection_policy().unwrap_err().exit_code(), 1);
    }
}
