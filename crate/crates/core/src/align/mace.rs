//! `.mace` emission files.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size    | field                                   |
//! |--------|---------|-----------------------------------------|
//! | 0      | 4       | magic `MACE`                            |
//! | 4      | 2       | version (`1`)                           |
//! | 6      | 4       | frames `T`                              |
//! | 10     | 4       | labels `K`                              |
//! | 14     | 4       | frame hop in samples                    |
//! | 18     | 4       | sample rate in Hz                       |
//! | 22     | 32      | SHA-256 of the meta-audio set file      |
//! | 54     | 4·T·K   | `f32` natural-log posteriors, row-major |

use std::path::Path;

use thiserror::Error;

use super::{AlignError, EmissionMatrix};
use crate::lexicon::MetaSetHash;

pub const MAGIC: &[u8; 4] = b"MACE";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 4 * 4 + 32;

#[derive(Debug, Error)]
pub enum MaceError {
    #[error("not a .mace file (bad magic {0:02x?})")]
    BadMagic([u8; 4]),
    #[error("unsupported .mace version {0}")]
    UnsupportedVersion(u16),
    #[error("meta-set hash mismatch: file has {found}, expected {expected}")]
    HashMismatch {
        expected: MetaSetHash,
        found: MetaSetHash,
    },
    #[error("truncated .mace file: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{0} trailing bytes after .mace payload")]
    TrailingBytes(usize),
    #[error("invalid emissions: {0}")]
    Invalid(#[from] AlignError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Options applied while decoding.
#[derive(Debug, Clone, Copy, Default)]
pub struct DecodeOptions<'a> {
    /// Reject files produced against a different meta-audio set.
    pub expected_hash: Option<&'a MetaSetHash>,
    /// Apply a log-softmax per row (for models that emit logits).
    pub renormalize: bool,
}

pub fn encode(em: &EmissionMatrix, hash: &MetaSetHash) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * em.values().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        em.frames() as u32,
        em.labels() as u32,
        em.frame_hop(),
        em.sample_rate(),
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&hash.0);
    for &v in em.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn decode(bytes: &[u8], opts: DecodeOptions<'_>) -> Result<EmissionMatrix, MaceError> {
    if bytes.len() < 4 {
        return Err(MaceError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(MaceError::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(MaceError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(MaceError::UnsupportedVersion(version));
    }
    let frames = u32_at(bytes, 6) as usize;
    let labels = u32_at(bytes, 10) as usize;
    let frame_hop = u32_at(bytes, 14);
    let sample_rate = u32_at(bytes, 18);
    let found = MetaSetHash(bytes[22..54].try_into().unwrap());
    if let Some(expected) = opts.expected_hash {
        if *expected != found {
            return Err(MaceError::HashMismatch {
                expected: *expected,
                found,
            });
        }
    }
    let expected_len = frames
        .checked_mul(labels)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .unwrap_or(usize::MAX);
    if bytes.len() < expected_len {
        return Err(MaceError::Truncated {
            expected: expected_len,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected_len {
        return Err(MaceError::TrailingBytes(bytes.len() - expected_len));
    }
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let em = if opts.renormalize {
        EmissionMatrix::from_logits(frames, labels, values, frame_hop, sample_rate)?
    } else {
        EmissionMatrix::new(frames, labels, values, frame_hop, sample_rate)?
    };
    Ok(em.with_meta_hash(found))
}

pub fn read(path: &Path, opts: DecodeOptions<'_>) -> Result<EmissionMatrix, MaceError> {
    let bytes = std::fs::read(path).map_err(|source| MaceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (EmissionMatrix, MetaSetHash) {
        let em = EmissionMatrix::new(
            2,
            3,
            vec![-0.5, -1.0, -2.0, 0.0, -0.25, f64::NEG_INFINITY],
            160,
            16000,
        )
        .unwrap();
        (em, MetaSetHash::of_bytes(b"a\nb\nc\n"))
    }

    #[test]
    fn round_trip() {
        let (em, hash) = sample();
        let bytes = encode(&em, &hash);
        assert_eq!(bytes.len(), HEADER_LEN + 2 * 3 * 4);
        let back = decode(
            &bytes,
            DecodeOptions {
                expected_hash: Some(&hash),
                renormalize: false,
            },
        )
        .unwrap();
        assert_eq!(back.values(), em.values());
        assert_eq!(back.meta_hash(), Some(hash));
        assert_eq!((back.frame_hop(), back.sample_rate()), (160, 16000));
    }

    #[test]
    fn error_classes() {
        let (em, hash) = sample();
        let bytes = encode(&em, &hash);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode(&bad, DecodeOptions::default()),
            Err(MaceError::BadMagic(_))
        ));

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(
            decode(&bad, DecodeOptions::default()),
            Err(MaceError::UnsupportedVersion(2))
        ));

        let other = MetaSetHash::of_bytes(b"x\n");
        assert!(matches!(
            decode(
                &bytes,
                DecodeOptions {
                    expected_hash: Some(&other),
                    renormalize: false
                }
            ),
            Err(MaceError::HashMismatch { .. })
        ));

        assert!(matches!(
            decode(&bytes[..bytes.len() - 1], DecodeOptions::default()),
            Err(MaceError::Truncated { .. })
        ));
        assert!(matches!(
            decode(&bytes[..10], DecodeOptions::default()),
            Err(MaceError::Truncated { .. })
        ));

        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            decode(&long, DecodeOptions::default()),
            Err(MaceError::TrailingBytes(1))
        ));

        let mut positive = bytes;
        positive[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&1.5f32.to_le_bytes());
        assert!(matches!(
            decode(&positive, DecodeOptions::default()),
            Err(MaceError::Invalid(_))
        ));
    }
}
