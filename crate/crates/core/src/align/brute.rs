//! Explicit enumeration of segmentations, used as an oracle for the dynamic
//! programs on small inputs.

use super::{check_inputs, log_sum_exp, score_boundaries, AlignError, EmissionMatrix};
use crate::lexicon::MetaSequence;

/// Largest number of segmentations [`brute_force_logprob`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// Number of ways to split `frames` into `segments` slices of at least
/// `min_seg_frames` frames: `C(frames - segments*min + segments - 1, segments - 1)`.
/// Saturates at `u128::MAX`.
pub fn count_segmentations(frames: usize, segments: usize, min_seg_frames: usize) -> u128 {
    if segments == 0 || min_seg_frames == 0 {
        return 0;
    }
    let need = segments * min_seg_frames;
    if frames < need {
        return 0;
    }
    let slack = (frames - need) as u128;
    let k = (segments - 1) as u128;
    // C(slack + k, k)
    let mut acc: u128 = 1;
    for i in 1..=k {
        acc = match acc.checked_mul(slack + i) {
            Some(v) => v / i,
            None => return u128::MAX,
        };
    }
    acc
}

/// Calls `visit` with every admissible boundary vector `(0, ..., frames)`,
/// in lexicographic order.
pub fn for_each_segmentation<F: FnMut(&[usize])>(
    frames: usize,
    segments: usize,
    min_seg_frames: usize,
    mut visit: F,
) {
    if segments == 0 || min_seg_frames == 0 || frames < segments * min_seg_frames {
        return;
    }
    let mut bounds = vec![0; segments + 1];
    bounds[segments] = frames;
    fill(&mut bounds, 1, frames, segments, min_seg_frames, &mut visit);
}

fn fill<F: FnMut(&[usize])>(
    bounds: &mut [usize],
    pos: usize,
    frames: usize,
    segments: usize,
    min: usize,
    visit: &mut F,
) {
    if pos == segments {
        if frames - bounds[pos - 1] >= min {
            visit(bounds);
        }
        return;
    }
    let lo = bounds[pos - 1] + min;
    let hi = frames - (segments - pos) * min;
    for b in lo..=hi {
        bounds[pos] = b;
        fill(bounds, pos + 1, frames, segments, min, visit);
    }
}

/// Log-marginal by summing every segmentation's probability explicitly.
pub fn brute_force_logprob(
    em: &EmissionMatrix,
    seq: &MetaSequence,
    min_seg_frames: usize,
) -> Result<f64, AlignError> {
    check_inputs(em, seq, min_seg_frames)?;
    let count = count_segmentations(em.frames(), seq.len(), min_seg_frames);
    if count > BRUTE_FORCE_LIMIT {
        return Err(AlignError::TooManySegmentations {
            count,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut scores = Vec::with_capacity(count as usize);
    for_each_segmentation(em.frames(), seq.len(), min_seg_frames, |b| {
        scores.push(score_boundaries(em, seq, b));
    });
    Ok(log_sum_exp(scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::forward_logprob;

    #[test]
    fn counts_match_enumeration() {
        for frames in 1..=9 {
            for segments in 1..=4 {
                for min in 1..=3 {
                    let mut n = 0u128;
                    for_each_segmentation(frames, segments, min, |_| n += 1);
                    assert_eq!(n, count_segmentations(frames, segments, min));
                }
            }
        }
    }

    #[test]
    fn worked_instance_agrees_with_forward() {
        let logp = [0.9, 0.1, 0.6, 0.4, 0.2, 0.8]
            .iter()
            .map(|p: &f64| p.ln())
            .collect();
        let em = EmissionMatrix::new(3, 2, logp, 160, 16000).unwrap();
        let s = MetaSequence::new(vec![0, 1]).unwrap();
        let brute = brute_force_logprob(&em, &s, 1).unwrap();
        assert!((brute - 0.72f64.ln()).abs() < 1e-12);
        assert!((brute - forward_logprob(&em, &s, 1).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn single_slice_is_exact() {
        let em = EmissionMatrix::new(2, 1, vec![0.9f64.ln(), 0.5f64.ln()], 160, 16000).unwrap();
        let s = MetaSequence::new(vec![0]).unwrap();
        assert_eq!(
            brute_force_logprob(&em, &s, 1).unwrap(),
            forward_logprob(&em, &s, 1).unwrap()
        );
    }

    #[test]
    fn guard_refuses_large_instances() {
        let em = EmissionMatrix::new(30, 1, vec![-0.1; 30], 160, 16000).unwrap();
        let s = MetaSequence::new(vec![0; 10]).unwrap();
        assert_eq!(
            brute_force_logprob(&em, &s, 1),
            Err(AlignError::TooManySegmentations {
                count: 10_015_005,
                limit: BRUTE_FORCE_LIMIT
            })
        );
    }
}
