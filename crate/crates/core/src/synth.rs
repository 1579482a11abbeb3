//! Energy normalization and concatenation of selected clips.
//!
//! The clips chosen for one utterance are rescaled so that each has the
//! mean L2 norm `E` of the set, `x -> x / ||x|| * E`, then joined end to end
//! with no crossfade. Silent clips (norm below [`SILENCE_EPS`]) take no part
//! in the mean and pass through unscaled.

use rand::Rng;
use thiserror::Error;

use crate::audio::{Waveform, PCM_MAX, PCM_MIN};
use crate::clipdb::ClipDatabase;
use crate::lexicon::{MetaId, MetaSequence};
use crate::sampler::{select_clip, SamplerError, SelectionPolicy};

/// Norms below this count as silence.
pub const SILENCE_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("no clips given")]
    EmptyClipSet,
    #[error("clip {index} has sample rate {found} Hz, expected {expected} Hz")]
    SampleRateMismatch {
        index: usize,
        expected: u32,
        found: u32,
    },
    #[error("no clips stored for meta ids {0:?}")]
    Uncovered(Vec<MetaId>),
    #[error("meta id {id} out of range for {k} labels")]
    IdOutOfRange { id: MetaId, k: usize },
    #[error(transparent)]
    Select(#[from] SamplerError),
}

/// L2 norm of the samples, accumulated in `f64`.
pub fn energy(clip: &Waveform) -> f64 {
    clip.samples().iter().map(|s| s * s).sum::<f64>().sqrt()
}

/// Mean norm over non-silent clips; `0.0` if every clip is silent.
pub fn mean_energy(clips: &[Waveform]) -> Result<f64, SynthError> {
    if clips.is_empty() {
        return Err(SynthError::EmptyClipSet);
    }
    Ok(mean_of_norms(clips.iter().map(energy)))
}

fn mean_of_norms(norms: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = norms
        .filter(|&e| e >= SILENCE_EPS)
        .fold((0.0, 0usize), |(s, n), e| (s + e, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub clips: Vec<Waveform>,
    /// The common target norm `E`.
    pub target: f64,
    /// Samples that left the 16-bit range after scaling and were clamped.
    pub clamped: usize,
}

/// Scales every non-silent clip to the set's mean norm.
pub fn normalize_clips(clips: &[Waveform]) -> Normalized {
    let norms: Vec<f64> = clips.iter().map(energy).collect();
    let target = mean_of_norms(norms.iter().copied());
    let mut clamped = 0;
    let clips = clips
        .iter()
        .zip(&norms)
        .map(|(clip, &norm)| {
            let mut out = clip.clone();
            if norm >= SILENCE_EPS {
                let gain = target / norm;
                for s in out.samples_mut() {
                    let v = *s * gain;
                    *s = v.clamp(PCM_MIN, PCM_MAX);
                    if *s != v {
                        clamped += 1;
                    }
                }
            }
            out
        })
        .collect();
    Normalized {
        clips,
        target,
        clamped,
    }
}

/// Joins clips in order. All clips must share one sample rate.
pub fn concatenate(clips: &[Waveform]) -> Result<Waveform, SynthError> {
    let first = clips.first().ok_or(SynthError::EmptyClipSet)?;
    let rate = first.sample_rate();
    let mut samples = Vec::with_capacity(clips.iter().map(Waveform::len).sum());
    for (index, clip) in clips.iter().enumerate() {
        if clip.sample_rate() != rate {
            return Err(SynthError::SampleRateMismatch {
                index,
                expected: rate,
                found: clip.sample_rate(),
            });
        }
        samples.extend_from_slice(clip.samples());
    }
    Ok(Waveform::new(samples, rate).expect("rate taken from a valid waveform"))
}

/// Which stored clip realized one element of a synthesized utterance.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ClipRef {
    pub meta_id: MetaId,
    pub utt_id: String,
    pub ordinal: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesized {
    pub waveform: Waveform,
    pub provenance: Vec<ClipRef>,
    pub clamped: usize,
}

/// Picks one clip per meta id, normalizes the picks and concatenates them.
pub fn synthesize_utterance<R: Rng + ?Sized>(
    db: &ClipDatabase,
    seq: &MetaSequence,
    policy: &SelectionPolicy,
    rng: &mut R,
) -> Result<Synthesized, SynthError> {
    if let Some(&id) = seq.ids().iter().find(|&&id| id as usize >= db.labels()) {
        return Err(SynthError::IdOutOfRange { id, k: db.labels() });
    }
    let missing = db.uncovered(seq);
    if !missing.is_empty() {
        return Err(SynthError::Uncovered(missing));
    }
    let mut picks = Vec::with_capacity(seq.len());
    let mut provenance = Vec::with_capacity(seq.len());
    for &id in seq.ids() {
        let candidates = db.query(id).expect("id range checked above");
        let ordinal = select_clip(candidates, policy, rng)?;
        let record = &candidates[ordinal];
        provenance.push(ClipRef {
            meta_id: id,
            utt_id: record.utt_id.clone(),
            ordinal,
            samples: record.len(),
        });
        picks.push(record.clip.clone());
    }
    let normalized = normalize_clips(&picks);
    let waveform = concatenate(&normalized.clips)?;
    Ok(Synthesized {
        waveform,
        provenance,
        clamped: normalized.clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clipdb::ClipRecord;
    use crate::lexicon::MetaSetHash;
    use crate::sampler::SeededRng;
    use proptest::prelude::*;

    fn wave(samples: &[f64]) -> Waveform {
        Waveform::new(samples.to_vec(), 16000).unwrap()
    }

    #[test]
    fn energy_examples() {
        assert_eq!(energy(&wave(&[3.0, 4.0])), 5.0);
        assert_eq!(energy(&wave(&[0.0, 0.0, 0.0])), 0.0);
        assert_eq!(energy(&wave(&[-2.0])), 2.0);
    }

    #[test]
    fn mean_energy_examples() {
        assert_eq!(
            mean_energy(&[wave(&[3.0, 4.0]), wave(&[1.0])]).unwrap(),
            3.0
        );
        assert_eq!(mean_energy(&[wave(&[7.0])]).unwrap(), 7.0);
        assert_eq!(
            mean_energy(&[wave(&[3.0, 4.0]), wave(&[0.0, 0.0])]).unwrap(),
            5.0
        );
        assert_eq!(mean_energy(&[wave(&[0.0])]).unwrap(), 0.0);
        assert_eq!(mean_energy(&[]), Err(SynthError::EmptyClipSet));
    }

    #[test]
    fn two_clip_worked_example() {
        let out = normalize_clips(&[wave(&[3.0, 4.0]), wave(&[0.0, 1.0])]);
        assert_eq!(out.target, 3.0);
        let a = out.clips[0].samples();
        let b = out.clips[1].samples();
        assert!((a[0] - 1.8).abs() < 1e-12 && (a[1] - 2.4).abs() < 1e-12);
        assert_eq!(b, [0.0, 3.0]);
        assert!((energy(&out.clips[0]) - 3.0).abs() < 1e-12);
        assert!((energy(&out.clips[1]) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_clip_is_unchanged() {
        let w = wave(&[100.0, -50.0, 7.0]);
        let out = normalize_clips(std::slice::from_ref(&w));
        assert_eq!(out.clips[0], w);
    }

    #[test]
    fn silent_clip_passes_through() {
        let out = normalize_clips(&[wave(&[3.0, 4.0]), wave(&[0.0, 0.0]), wave(&[1.0])]);
        assert_eq!(out.target, 3.0);
        assert_eq!(out.clips[1].samples(), [0.0, 0.0]);
    }

    #[test]
    fn loud_scaling_is_clamped_and_counted() {
        // target is about 1e5, so the single-sample clip overshoots
        let out = normalize_clips(&[wave(&[20000.0; 100]), wave(&[1.0, 0.0, 0.0])]);
        assert_eq!(out.clamped, 1);
        assert!(out
            .clips
            .iter()
            .flat_map(|c| c.samples())
            .all(|&s| (PCM_MIN..=PCM_MAX).contains(&s)));
    }

    #[test]
    fn concatenate_examples() {
        let a = wave(&vec![1.0; 320]);
        let b = wave(&vec![2.0; 480]);
        let joined = concatenate(&[a.clone(), b]).unwrap();
        assert_eq!(joined.len(), 800);
        assert_eq!(joined.samples()[319], 1.0);
        assert_eq!(joined.samples()[320], 2.0);
        assert_eq!(concatenate(std::slice::from_ref(&a)).unwrap(), a);
        let c = Waveform::new(vec![0.0; 10], 8000).unwrap();
        assert!(matches!(
            concatenate(&[a, c]),
            Err(SynthError::SampleRateMismatch { index: 1, .. })
        ));
    }

    fn db_with(clips: &[(MetaId, &[i16], f64)]) -> ClipDatabase {
        let mut db = ClipDatabase::new(MetaSetHash::of_bytes(b"t"), 8, 16000);
        for (i, &(id, pcm, score)) in clips.iter().enumerate() {
            let w = Waveform::from_pcm(pcm, 16000).unwrap();
            db.insert(ClipRecord::new(id, format!("u{i}"), 0, score, w).unwrap())
                .unwrap();
        }
        db
    }

    #[test]
    fn single_candidates_are_policy_independent() {
        let db = db_with(&[(0, &[100, 200], -1.0), (1, &[-300, 50, 10], -2.0)]);
        let seq = MetaSequence::new(vec![0, 1]).unwrap();
        let mut outputs = Vec::new();
        for policy in [
            SelectionPolicy::Uniform,
            SelectionPolicy::Best,
            SelectionPolicy::weighted(0.5).unwrap(),
        ] {
            for seed in [1, 2] {
                let mut rng = SeededRng::new(seed).utterance_stream(0);
                outputs.push(synthesize_utterance(&db, &seq, &policy, &mut rng).unwrap());
            }
        }
        assert!(outputs.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(outputs[0].waveform.len(), 5);
        assert_eq!(outputs[0].provenance[1].utt_id, "u1");
    }

    #[test]
    fn uncovered_ids_are_listed() {
        let db = db_with(&[(0, &[1], -1.0)]);
        let seq = MetaSequence::new(vec![0, 7, 3, 7]).unwrap();
        let mut rng = SeededRng::new(0).utterance_stream(0);
        assert_eq!(
            synthesize_utterance(&db, &seq, &SelectionPolicy::Uniform, &mut rng),
            Err(SynthError::Uncovered(vec![3, 7]))
        );
    }

    #[test]
    fn seeded_uniform_selection_is_reproducible() {
        let db = db_with(&[
            (0, &[10, 20], -1.0),
            (0, &[30, 40, 50], -1.0),
            (0, &[60], -1.0),
            (1, &[5, 5], -1.0),
            (1, &[7], -1.0),
        ]);
        let seq = MetaSequence::new(vec![0, 1, 0, 1, 0]).unwrap();
        let run = |seed| {
            let mut rng = SeededRng::new(seed).utterance_stream(3);
            synthesize_utterance(&db, &seq, &SelectionPolicy::Uniform, &mut rng).unwrap()
        };
        assert_eq!(run(42), run(42));
    }

    fn clip_sets() -> impl Strategy<Value = Vec<Waveform>> {
        proptest::collection::vec(proptest::collection::vec(-3000i16..3000, 1..200), 1..8).prop_map(
            |sets| {
                sets.iter()
                    .map(|pcm| Waveform::from_pcm(pcm, 16000).unwrap())
                    .collect()
            },
        )
    }

    proptest! {
        #[test]
        fn every_clip_reaches_the_mean(clips in clip_sets()) {
            let out = normalize_clips(&clips);
            prop_assume!(out.clamped == 0);
            for (orig, scaled) in clips.iter().zip(&out.clips) {
                if energy(orig) >= SILENCE_EPS {
                    prop_assert!((energy(scaled) - out.target).abs() <= 1e-6 * out.target);
                }
            }
        }

        #[test]
        fn mean_is_a_fixed_point(clips in clip_sets()) {
            let before = mean_energy(&clips).unwrap();
            let out = normalize_clips(&clips);
            let after = mean_energy(&out.clips).unwrap();
            prop_assert!((after - before).abs() <= 1e-6 * before.max(SILENCE_EPS));
        }

        #[test]
        fn normalization_is_idempotent(clips in clip_sets()) {
            let once = normalize_clips(&clips);
            let twice = normalize_clips(&once.clips);
            for (a, b) in once.clips.iter().zip(&twice.clips) {
                for (x, y) in a.samples().iter().zip(b.samples()) {
                    prop_assert!((x - y).abs() <= 1.0);
                }
                for (x, y) in a.to_pcm().iter().zip(b.to_pcm()) {
                    prop_assert!((*x as i32 - y as i32).abs() <= 1);
                }
            }
        }

        #[test]
        fn concatenation_adds_lengths(clips in clip_sets()) {
            let joined = concatenate(&clips).unwrap();
            prop_assert_eq!(joined.len(), clips.iter().map(Waveform::len).sum::<usize>());
        }
    }
}
