use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::audio;
use crate::manifest::{self, Manifest, ManifestRecord};

use super::{PipelineConfig, PipelineError, Report};

/// Relative tolerance when deciding that the synthetic pool is too small.
const SHORTFALL_TOLERANCE: f64 = 1e-9;

/// Chooses how many leading synthetic utterances to keep so that their
/// share of the total duration is as close as possible to `ratio`.
///
/// Returns the prefix length and whether the target was out of reach (in
/// which case every synthetic utterance is kept). Ties go to the shorter
/// prefix.
pub fn mix_prefix(synth_secs: &[f64], real_secs: f64, ratio: f64) -> (usize, bool) {
    if ratio <= 0.0 {
        return (0, false);
    }
    if ratio >= 1.0 {
        return (synth_secs.len(), real_secs > 0.0);
    }
    let target = ratio * real_secs / (1.0 - ratio);
    let available: f64 = synth_secs.iter().sum();
    if available < target * (1.0 - SHORTFALL_TOLERANCE) {
        return (synth_secs.len(), true);
    }
    let (mut best, mut best_err, mut acc) = (0, target, 0.0);
    for (i, d) in synth_secs.iter().enumerate() {
        acc += d;
        let err = (acc - target).abs();
        if err < best_err {
            best = i + 1;
            best_err = err;
        }
    }
    (best, false)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixReport {
    pub out: String,
    pub real: usize,
    pub real_seconds: f64,
    pub synth_available: usize,
    pub synth_included: usize,
    pub synth_seconds: f64,
    pub target_ratio: f64,
    pub achieved_ratio: f64,
    pub warning: Option<String>,
}

impl fmt::Display for MixReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "real: {} utterances, {:.3} s",
            self.real, self.real_seconds
        )?;
        writeln!(
            f,
            "synthetic: {} of {} utterances, {:.3} s",
            self.synth_included, self.synth_available, self.synth_seconds
        )?;
        writeln!(
            f,
            "synthetic share: {:.4} (target {:.4})",
            self.achieved_ratio, self.target_ratio
        )?;
        if let Some(w) = &self.warning {
            writeln!(f, "warning: {w}")?;
        }
        write!(f, "output: {}", self.out)
    }
}

impl Report for MixReport {}

fn durations(m: &Manifest) -> Result<Vec<f64>, PipelineError> {
    m.records
        .iter()
        .map(|r| {
            let path = m.audio_path(r);
            let (samples, rate) = audio::wav_info(&path).map_err(|source| PipelineError::Wav {
                path: path.display().to_string(),
                source,
            })?;
            Ok(samples as f64 / rate as f64)
        })
        .collect()
}

fn absolute(path: &Path) -> Result<PathBuf, PipelineError> {
    std::path::absolute(path).map_err(|e| PipelineError::input(path, e))
}

fn rebase(
    m: &Manifest,
    r: &ManifestRecord,
    out_dir: &Path,
) -> Result<ManifestRecord, PipelineError> {
    let audio = absolute(&m.audio_path(r))?;
    let rel = pathdiff::diff_paths(&audio, out_dir).unwrap_or(audio);
    Ok(ManifestRecord {
        audio: rel.to_string_lossy().into_owned(),
        ..r.clone()
    })
}

/// Writes a manifest with every real record followed by the prefix of
/// synthetic records chosen by [`mix_prefix`]. Audio paths are rewritten
/// relative to the output manifest; no audio is copied.
pub fn mix(cfg: &PipelineConfig) -> Result<MixReport, PipelineError> {
    let ratio = cfg.ratio()?;
    let real_path = PipelineConfig::require(&cfg.manifest, "manifest")?;
    let synth_path = PipelineConfig::require(&cfg.synth_manifest, "synth-manifest")?;
    let out = PipelineConfig::require(&cfg.out, "out")?;
    for p in [real_path, synth_path] {
        if !p.is_file() {
            return Err(PipelineError::input(
                p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "manifest not found"),
            ));
        }
    }
    let real = Manifest::read(real_path)?;
    let synth = Manifest::read(synth_path)?;
    let real_ids: HashSet<&str> = real.records.iter().map(|r| r.id.as_str()).collect();
    if let Some(dup) = synth
        .records
        .iter()
        .find(|r| real_ids.contains(r.id.as_str()))
    {
        return Err(PipelineError::DuplicateId(dup.id.clone()));
    }

    let real_secs: f64 = durations(&real)?.iter().sum();
    let synth_durs = durations(&synth)?;
    let (k, short) = mix_prefix(&synth_durs, real_secs, ratio);
    let synth_secs: f64 = synth_durs[..k].iter().sum();

    let out_abs = absolute(out)?;
    let out_dir = out_abs.parent().unwrap_or(Path::new("/"));
    std::fs::create_dir_all(out_dir).map_err(|e| PipelineError::input(out_dir, e))?;
    let mut records = Vec::with_capacity(real.records.len() + k);
    for r in &real.records {
        records.push(rebase(&real, r, out_dir)?);
    }
    for r in &synth.records[..k] {
        records.push(rebase(&synth, r, out_dir)?);
    }
    manifest::write_jsonl(out, &records)?;

    let total = real_secs + synth_secs;
    Ok(MixReport {
        out: out.display().to_string(),
        real: real.records.len(),
        real_seconds: real_secs,
        synth_available: synth.records.len(),
        synth_included: k,
        synth_seconds: synth_secs,
        target_ratio: ratio,
        achieved_ratio: if total > 0.0 { synth_secs / total } else { 0.0 },
        warning: short.then(|| {
            format!(
                "synthetic audio ({:.3} s) is too short for ratio {ratio}; all of it was included",
                synth_durs.iter().sum::<f64>()
            )
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closest_prefix() {
        // real 100 s, synth 300 s in 10 s pieces, ratio 0.5 -> 100 s
        let synth = vec![10.0; 30];
        assert_eq!(mix_prefix(&synth, 100.0, 0.5), (10, false));
        assert_eq!(mix_prefix(&synth, 100.0, 0.0), (0, false));
        assert_eq!(mix_prefix(&synth, 100.0, 0.9), (30, true));
        assert_eq!(mix_prefix(&synth, 100.0, 1.0), (30, true));
        assert_eq!(mix_prefix(&synth, 0.0, 1.0), (30, false));
    }

    #[test]
    fn ties_go_to_shorter_prefix() {
        // target 5 s sits halfway between 0 and 10
        assert_eq!(mix_prefix(&[10.0, 10.0], 5.0, 0.5), (0, false));
        assert_eq!(mix_prefix(&[4.0, 2.0], 5.0, 0.5), (1, false));
    }

    #[test]
    fn ratio_error_within_one_utterance() {
        let synth = [1.3, 0.7, 2.2, 0.4, 1.9, 3.1, 0.8];
        for ratio in [0.05, 0.2, 0.35, 0.5, 0.6] {
            let real = 4.0;
            let (k, short) = mix_prefix(&synth, real, ratio);
            assert!(!short);
            let s: f64 = synth[..k].iter().sum();
            let target = ratio * real / (1.0 - ratio);
            let longest = synth.iter().cloned().fold(0.0, f64::max);
            assert!((s - target).abs() <= longest, "{ratio}");
        }
    }
}
