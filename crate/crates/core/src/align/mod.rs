//! Monotone segmentation of frame-level emissions against a meta-audio
//! sequence.
//!
//! A segmentation splits `T` frames into `n` contiguous, non-empty slices,
//! one per element of the sequence, each at least `min_seg_frames` long. A
//! slice scores the product of its frames' posteriors for its label.
//! [`forward_logprob`] sums those products over every segmentation,
//! [`viterbi_segment`] finds the single best one, and
//! [`brute_force_logprob`] enumerates them explicitly for small inputs.
//!
//! Both dynamic programs run over `n * min_seg_frames` states: segment `i`
//! is expanded into a chain of duration sub-states whose last element
//! self-loops, so the cost is `O(T * n * min_seg_frames)`.

mod brute;
pub mod mace;

pub use brute::{
    brute_force_logprob, count_segmentations, for_each_segmentation, BRUTE_FORCE_LIMIT,
};

use thiserror::Error;

use crate::lexicon::{MetaSequence, MetaSetHash};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("{frames} frames cannot hold {segments} segments of at least {min_seg_frames} frames")]
    Infeasible {
        frames: usize,
        segments: usize,
        min_seg_frames: usize,
    },
    #[error("meta id {id} out of range for {labels} emission labels")]
    IdOutOfRange { id: u32, labels: usize },
    #[error("min_seg_frames must be at least 1")]
    ZeroMinSegment,
    #[error("every segmentation has zero probability")]
    NoViablePath,
    #[error("brute force refused: {count} segmentations exceed the limit of {limit}")]
    TooManySegmentations { count: u128, limit: u128 },
    #[error("emission matrix needs at least one frame and one label")]
    EmptyMatrix,
    #[error("expected {expected} emission values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("emission at frame {frame}, label {label} is {value}; log-posteriors must be <= 0")]
    InvalidEntry {
        frame: usize,
        label: usize,
        value: f64,
    },
}

/// Per-frame natural-log posteriors over the meta-audio labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionMatrix {
    frames: usize,
    labels: usize,
    logp: Vec<f64>,
    frame_hop: u32,
    sample_rate: u32,
    normalized: bool,
    meta_hash: Option<MetaSetHash>,
}

impl EmissionMatrix {
    /// `logp` is row-major, `frames * labels` long. Entries must be `<= 0`
    /// (`-inf` allowed).
    pub fn new(
        frames: usize,
        labels: usize,
        logp: Vec<f64>,
        frame_hop: u32,
        sample_rate: u32,
    ) -> Result<Self, AlignError> {
        let em = Self::unchecked(frames, labels, logp, frame_hop, sample_rate)?;
        em.validate()?;
        Ok(em)
    }

    /// Builds a matrix from unnormalized scores (e.g. logits) by applying a
    /// log-softmax to every row.
    pub fn from_logits(
        frames: usize,
        labels: usize,
        logits: Vec<f64>,
        frame_hop: u32,
        sample_rate: u32,
    ) -> Result<Self, AlignError> {
        let mut em = Self::unchecked(frames, labels, logits, frame_hop, sample_rate)?;
        em.renormalize();
        em.validate()?;
        Ok(em)
    }

    fn unchecked(
        frames: usize,
        labels: usize,
        logp: Vec<f64>,
        frame_hop: u32,
        sample_rate: u32,
    ) -> Result<Self, AlignError> {
        if frames == 0 || labels == 0 {
            return Err(AlignError::EmptyMatrix);
        }
        if logp.len() != frames * labels {
            return Err(AlignError::ShapeMismatch {
                expected: frames * labels,
                actual: logp.len(),
            });
        }
        Ok(EmissionMatrix {
            frames,
            labels,
            logp,
            frame_hop,
            sample_rate,
            normalized: false,
            meta_hash: None,
        })
    }

    fn validate(&self) -> Result<(), AlignError> {
        for (i, &v) in self.logp.iter().enumerate() {
            if v.is_nan() || v > 0.0 {
                return Err(AlignError::InvalidEntry {
                    frame: i / self.labels,
                    label: i % self.labels,
                    value: v,
                });
            }
        }
        Ok(())
    }

    fn renormalize(&mut self) {
        let labels = self.labels;
        for row in self.logp.chunks_mut(labels) {
            let lse = log_sum_exp(row.iter().copied());
            if lse.is_finite() {
                for v in row.iter_mut() {
                    *v = (*v - lse).min(0.0);
                }
            }
        }
        self.normalized = true;
    }

    pub fn with_meta_hash(mut self, hash: MetaSetHash) -> Self {
        self.meta_hash = Some(hash);
        self
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn frame_hop(&self) -> u32 {
        self.frame_hop
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Whether rows were log-softmax renormalized on construction.
    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn meta_hash(&self) -> Option<MetaSetHash> {
        self.meta_hash
    }

    #[inline]
    pub fn logp(&self, frame: usize, label: usize) -> f64 {
        self.logp[frame * self.labels + label]
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.logp[frame * self.labels..(frame + 1) * self.labels]
    }

    pub fn values(&self) -> &[f64] {
        &self.logp
    }
}

/// Segment boundaries `s_1 = 0 < s_2 < ... < s_{n+1} = T` with per-segment
/// log-scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    boundaries: Vec<usize>,
    scores: Vec<f64>,
}

impl Segmentation {
    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    /// Sum of frame log-posteriors inside each segment.
    pub fn segment_scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Frame range `[start, end)` of segment `i`.
    pub fn segment(&self, i: usize) -> (usize, usize) {
        (self.boundaries[i], self.boundaries[i + 1])
    }
}

/// Best segmentation plus its total log-score.
#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiPath {
    pub segmentation: Segmentation,
    /// Frame log-posteriors along the path, summed in time order.
    pub log_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentScore {
    pub log_marginal: f64,
    pub log_viterbi: f64,
}

/// `log(exp(a) + exp(b))` without overflow; `-inf` is the identity.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn check_inputs(
    em: &EmissionMatrix,
    seq: &MetaSequence,
    min_seg_frames: usize,
) -> Result<(), AlignError> {
    if min_seg_frames == 0 {
        return Err(AlignError::ZeroMinSegment);
    }
    if let Some(&id) = seq.ids().iter().find(|&&id| id as usize >= em.labels()) {
        return Err(AlignError::IdOutOfRange {
            id,
            labels: em.labels(),
        });
    }
    if em.frames() < seq.len() * min_seg_frames {
        return Err(AlignError::Infeasible {
            frames: em.frames(),
            segments: seq.len(),
            min_seg_frames,
        });
    }
    Ok(())
}

/// Log of the total probability of `seq` summed over every admissible
/// segmentation. Returns `-inf` when every segmentation is impossible.
pub fn forward_logprob(
    em: &EmissionMatrix,
    seq: &MetaSequence,
    min_seg_frames: usize,
) -> Result<f64, AlignError> {
    check_inputs(em, seq, min_seg_frames)?;
    let ids = seq.ids();
    let d = min_seg_frames;
    let n = ids.len();
    let states = n * d;
    let last = d - 1;

    let mut prev = vec![f64::NEG_INFINITY; states];
    let mut cur = vec![f64::NEG_INFINITY; states];
    prev[0] = em.logp(0, ids[0] as usize);
    for t in 1..em.frames() {
        for (i, &id) in ids.iter().enumerate() {
            let emit = em.logp(t, id as usize);
            let base = i * d;
            for j in 0..d {
                let mut acc = if j > 0 {
                    prev[base + j - 1]
                } else if i > 0 {
                    prev[base - 1]
                } else {
                    f64::NEG_INFINITY
                };
                if j == last {
                    acc = log_add_exp(acc, prev[base + last]);
                }
                cur[base + j] = acc + emit;
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[states - 1])
}

/// The highest-scoring segmentation.
///
/// Among equally scored segmentations the one whose boundaries are latest,
/// compared from the final boundary backwards, is returned.
pub fn viterbi_segment(
    em: &EmissionMatrix,
    seq: &MetaSequence,
    min_seg_frames: usize,
) -> Result<ViterbiPath, AlignError> {
    check_inputs(em, seq, min_seg_frames)?;
    let ids = seq.ids();
    let d = min_seg_frames;
    let n = ids.len();
    let frames = em.frames();
    let states = n * d;
    let last = d - 1;

    // stayed[t * n + i]: the last sub-state of segment i at frame t was
    // reached by its self-loop rather than by advancing.
    let mut stayed = vec![false; frames * n];
    let mut prev = vec![f64::NEG_INFINITY; states];
    let mut cur = vec![f64::NEG_INFINITY; states];
    prev[0] = em.logp(0, ids[0] as usize);
    for t in 1..frames {
        for i in 0..n {
            let emit = em.logp(t, ids[i] as usize);
            let base = i * d;
            for j in 0..d {
                let advance = if j > 0 {
                    prev[base + j - 1]
                } else if i > 0 {
                    prev[base - 1]
                } else {
                    f64::NEG_INFINITY
                };
                let best = if j == last {
                    let stay = prev[base + last];
                    // ties go to advancing, i.e. the later boundary
                    if stay > advance {
                        stayed[t * n + i] = true;
                        stay
                    } else {
                        advance
                    }
                } else {
                    advance
                };
                cur[base + j] = best + emit;
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let log_score = prev[states - 1];
    if log_score == f64::NEG_INFINITY {
        return Err(AlignError::NoViablePath);
    }

    let mut boundaries = vec![0; n + 1];
    boundaries[n] = frames;
    let (mut i, mut j) = (n - 1, last);
    for t in (1..frames).rev() {
        if j == last && stayed[t * n + i] {
            continue;
        }
        if j > 0 {
            j -= 1;
        } else {
            boundaries[i] = t;
            i -= 1;
            j = last;
        }
    }
    debug_assert!(i == 0 && j == 0);

    let scores = segment_scores(em, ids, &boundaries);
    Ok(ViterbiPath {
        segmentation: Segmentation { boundaries, scores },
        log_score,
    })
}

fn segment_scores(em: &EmissionMatrix, ids: &[u32], boundaries: &[usize]) -> Vec<f64> {
    ids.iter()
        .enumerate()
        .map(|(i, &id)| {
            (boundaries[i]..boundaries[i + 1])
                .map(|t| em.logp(t, id as usize))
                .fold(0.0, |acc, v| acc + v)
        })
        .collect()
}

/// Total log-score of fixed boundaries, summed frame by frame in time order.
pub fn score_boundaries(em: &EmissionMatrix, seq: &MetaSequence, boundaries: &[usize]) -> f64 {
    let ids = seq.ids();
    let mut total = 0.0;
    for (i, &id) in ids.iter().enumerate() {
        for t in boundaries[i]..boundaries[i + 1] {
            total += em.logp(t, id as usize);
        }
    }
    total
}

/// Both the marginal and the best-path score.
pub fn alignment_score(
    em: &EmissionMatrix,
    seq: &MetaSequence,
    min_seg_frames: usize,
) -> Result<AlignmentScore, AlignError> {
    let log_marginal = forward_logprob(em, seq, min_seg_frames)?;
    let log_viterbi = match viterbi_segment(em, seq, min_seg_frames) {
        Ok(path) => path.log_score,
        Err(AlignError::NoViablePath) => f64::NEG_INFINITY,
        Err(e) => return Err(e),
    };
    Ok(AlignmentScore {
        log_marginal,
        log_viterbi,
    })
}

/// Sample range `[start, end)` of one segment inside its utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleSpan {
    pub start: usize,
    pub end: usize,
}

impl SampleSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    /// Zero-length after clamping to the utterance; such clips are dropped.
    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Converts frame boundaries to sample ranges, clamped to the utterance
/// length.
pub fn segmentation_to_samples(
    seg: &Segmentation,
    frame_hop: u32,
    utterance_samples: usize,
) -> Vec<SampleSpan> {
    let hop = frame_hop as usize;
    seg.boundaries
        .windows(2)
        .map(|w| {
            let start = (w[0] * hop).min(utterance_samples);
            let end = (w[1] * hop).min(utterance_samples);
            SampleSpan { start, end }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(super) fn matrix(rows: &[&[f64]]) -> EmissionMatrix {
        let labels = rows[0].len();
        let logp = rows.iter().flat_map(|r| r.iter().map(|p| p.ln())).collect();
        EmissionMatrix::new(rows.len(), labels, logp, 160, 16000).unwrap()
    }

    fn seq(ids: &[u32]) -> MetaSequence {
        MetaSequence::new(ids.to_vec()).unwrap()
    }

    // p1(A)=0.9, p2(A)=0.6, p2(B)=0.4, p3(B)=0.8; unused cells arbitrary
    fn worked_instance() -> EmissionMatrix {
        matrix(&[&[0.9, 0.1], &[0.6, 0.4], &[0.2, 0.8]])
    }

    #[test]
    fn single_segment_marginal() {
        let em = matrix(&[&[0.9], &[0.5]]);
        let lp = forward_logprob(&em, &seq(&[0]), 1).unwrap();
        assert!((lp - 0.45f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn worked_two_segment_marginal() {
        // A|BB = 0.9*0.4*0.8 = 0.288, AA|B = 0.9*0.6*0.8 = 0.432
        let lp = forward_logprob(&worked_instance(), &seq(&[0, 1]), 1).unwrap();
        assert!((lp - 0.72f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn infeasible_lengths() {
        let em = matrix(&[&[0.5, 0.3, 0.2], &[0.5, 0.3, 0.2]]);
        assert_eq!(
            forward_logprob(&em, &seq(&[0, 1, 2]), 1),
            Err(AlignError::Infeasible {
                frames: 2,
                segments: 3,
                min_seg_frames: 1
            })
        );
        assert!(matches!(
            viterbi_segment(&worked_instance(), &seq(&[0, 1]), 2),
            Err(AlignError::Infeasible { .. })
        ));
    }

    #[test]
    fn id_out_of_range() {
        assert_eq!(
            forward_logprob(&worked_instance(), &seq(&[0, 5]), 1),
            Err(AlignError::IdOutOfRange { id: 5, labels: 2 })
        );
    }

    #[test]
    fn worked_viterbi_picks_longer_first_segment() {
        let path = viterbi_segment(&worked_instance(), &seq(&[0, 1]), 1).unwrap();
        assert_eq!(path.segmentation.boundaries(), [0, 2, 3]);
        assert!((path.log_score - 0.432f64.ln()).abs() < 1e-12);
        assert_eq!(path.segmentation.segment(0), (0, 2));
        assert_eq!(path.segmentation.segment(1), (2, 3));
    }

    #[test]
    fn forced_one_frame_segments() {
        let em = matrix(&[&[0.5, 0.2, 0.3], &[0.1, 0.6, 0.3], &[0.3, 0.3, 0.4]]);
        let path = viterbi_segment(&em, &seq(&[2, 0, 1]), 1).unwrap();
        assert_eq!(path.segmentation.boundaries(), [0, 1, 2, 3]);
    }

    #[test]
    fn uniform_tie_breaks_to_later_boundary() {
        let em = matrix(&[&[0.5, 0.5], &[0.5, 0.5], &[0.5, 0.5]]);
        let path = viterbi_segment(&em, &seq(&[0, 1]), 1).unwrap();
        assert_eq!(path.segmentation.boundaries(), [0, 2, 3]);
    }

    #[test]
    fn min_segment_duration_is_respected() {
        let em = matrix(&[&[0.9, 0.1], &[0.1, 0.9], &[0.1, 0.9], &[0.1, 0.9]]);
        let path = viterbi_segment(&em, &seq(&[0, 1]), 2).unwrap();
        assert_eq!(path.segmentation.boundaries(), [0, 2, 4]);
        let free = viterbi_segment(&em, &seq(&[0, 1]), 1).unwrap();
        assert_eq!(free.segmentation.boundaries(), [0, 1, 4]);
    }

    #[test]
    fn impossible_paths() {
        let em = EmissionMatrix::new(
            2,
            2,
            vec![f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY, 0.0],
            160,
            16000,
        )
        .unwrap();
        assert_eq!(
            forward_logprob(&em, &seq(&[0]), 1).unwrap(),
            f64::NEG_INFINITY
        );
        assert_eq!(
            viterbi_segment(&em, &seq(&[0]), 1),
            Err(AlignError::NoViablePath)
        );
        let s = alignment_score(&em, &seq(&[0]), 1).unwrap();
        assert_eq!(s.log_viterbi, f64::NEG_INFINITY);
    }

    #[test]
    fn rejects_positive_entries_unless_renormalized() {
        assert!(matches!(
            EmissionMatrix::new(1, 2, vec![0.5, -1.0], 160, 16000),
            Err(AlignError::InvalidEntry {
                frame: 0,
                label: 0,
                ..
            })
        ));
        let em = EmissionMatrix::from_logits(1, 2, vec![2.0, 2.0], 160, 16000).unwrap();
        assert!(em.normalized());
        assert!((em.logp(0, 0) - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sample_ranges() {
        let seg = Segmentation {
            boundaries: vec![0, 2, 3],
            scores: vec![0.0, 0.0],
        };
        assert_eq!(
            segmentation_to_samples(&seg, 160, 480),
            [
                SampleSpan { start: 0, end: 320 },
                SampleSpan {
                    start: 320,
                    end: 480
                }
            ]
        );
        let one = Segmentation {
            boundaries: vec![0, 1],
            scores: vec![0.0],
        };
        assert_eq!(
            segmentation_to_samples(&one, 160, 100),
            [SampleSpan { start: 0, end: 100 }]
        );
        let spans = segmentation_to_samples(&seg, 160, 300);
        assert!(spans[1].is_empty());
    }

    #[test]
    fn log_add_exp_handles_infinities() {
        assert_eq!(
            log_add_exp(f64::NEG_INFINITY, f64::NEG_INFINITY),
            f64::NEG_INFINITY
        );
        assert_eq!(log_add_exp(f64::NEG_INFINITY, -1.0), -1.0);
        assert!((log_add_exp(0.5f64.ln(), 0.25f64.ln()) - 0.75f64.ln()).abs() < 1e-15);
    }

    fn instance() -> impl Strategy<Value = (EmissionMatrix, MetaSequence, usize)> {
        (1usize..=4, 1usize..=2, 2usize..=4).prop_flat_map(|(n, d, k)| {
            let min_t = n * d;
            (min_t..=10usize.max(min_t)).prop_flat_map(move |t| {
                (
                    proptest::collection::vec(-3.0f64..0.0, t * k),
                    proptest::collection::vec(0u32..k as u32, n),
                )
                    .prop_map(move |(logp, ids)| {
                        (
                            EmissionMatrix::new(t, k, logp, 160, 16000).unwrap(),
                            MetaSequence::new(ids).unwrap(),
                            d,
                        )
                    })
            })
        })
    }

    proptest! {
        #[test]
        fn forward_matches_brute_force((em, s, d) in instance()) {
            let fwd = forward_logprob(&em, &s, d).unwrap();
            let brute = brute_force_logprob(&em, &s, d).unwrap();
            prop_assert!((fwd - brute).abs() <= 1e-9, "{} vs {}", fwd, brute);
        }

        #[test]
        fn viterbi_is_a_lower_bound((em, s, d) in instance()) {
            let path = viterbi_segment(&em, &s, d).unwrap();
            let fwd = forward_logprob(&em, &s, d).unwrap();
            prop_assert!(path.log_score <= fwd);
            let count = count_segmentations(em.frames(), s.len(), d);
            prop_assert_eq!(path.log_score == fwd, count == 1);
        }

        #[test]
        fn viterbi_rescoring_is_exact((em, s, d) in instance()) {
            let path = viterbi_segment(&em, &s, d).unwrap();
            let b = path.segmentation.boundaries();
            prop_assert_eq!(score_boundaries(&em, &s, b), path.log_score);
            prop_assert_eq!(b.len(), s.len() + 1);
            prop_assert!(b.windows(2).all(|w| w[1] - w[0] >= d));
        }

        #[test]
        fn viterbi_matches_enumeration_with_tie_rule((em, s, d) in instance()) {
            // brute-force argmax, preferring lexicographically larger
            // boundaries read from the back
            let mut best: Option<(f64, Vec<usize>)> = None;
            for_each_segmentation(em.frames(), s.len(), d, |b| {
                let score = score_boundaries(&em, &s, b);
                let better = match &best {
                    None => true,
                    Some((bs, bb)) => score > *bs
                        || (score == *bs && b.iter().rev().cmp(bb.iter().rev()).is_gt()),
                };
                if better {
                    best = Some((score, b.to_vec()));
                }
            });
            let (score, boundaries) = best.unwrap();
            let path = viterbi_segment(&em, &s, d).unwrap();
            prop_assert_eq!(path.log_score, score);
            prop_assert_eq!(path.segmentation.boundaries(), boundaries.as_slice());
        }

        #[test]
        fn appending_certain_final_frame_never_hurts((em, s, d) in instance()) {
            let before = viterbi_segment(&em, &s, d).unwrap().log_score;
            let last = *s.ids().last().unwrap() as usize;
            let mut logp = em.values().to_vec();
            logp.extend((0..em.labels()).map(|k| if k == last { 0.0 } else { f64::NEG_INFINITY }));
            let longer = EmissionMatrix::new(em.frames() + 1, em.labels(), logp, 160, 16000).unwrap();
            let after = viterbi_segment(&longer, &s, d).unwrap().log_score;
            prop_assert!(after >= before);
        }
    }
}
