//! PCM waveforms and the mono 16-bit WAV codec.
//!
//! Samples are held as `f64` so that gain changes stay exact until the
//! waveform is written. Writing rounds to the nearest integer and saturates
//! at the 16-bit range; any waveform read from disk re-encodes to the same
//! bytes.

use std::io::Cursor;
use std::path::Path;

use thiserror::Error;

use crate::fsio;

pub const PCM_MIN: f64 = i16::MIN as f64;
pub const PCM_MAX: f64 = i16::MAX as f64;
/// Size of the RIFF header the writer emits.
pub const CANONICAL_HEADER_LEN: usize = 44;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("unsupported WAV format: {0}")]
    Unsupported(String),
    #[error("malformed WAV data: {0}")]
    Malformed(String),
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<hound::Error> for WavError {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::Unsupported => WavError::Unsupported("not PCM".into()),
            hound::Error::IoError(err) => WavError::Malformed(err.to_string()),
            other => WavError::Malformed(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, WavError> {
        if sample_rate == 0 {
            return Err(WavError::ZeroSampleRate);
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn from_pcm(pcm: &[i16], sample_rate: u32) -> Result<Self, WavError> {
        Self::new(pcm.iter().map(|&s| s as f64).collect(), sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Copy of `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Waveform {
        Waveform {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    pub(crate) fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    /// Rounded, saturated 16-bit samples.
    pub fn to_pcm(&self) -> Vec<i16> {
        self.samples
            .iter()
            .map(|&s| s.round().clamp(PCM_MIN, PCM_MAX) as i16)
            .collect()
    }
}

/// Canonical 44-byte-header mono 16-bit PCM WAV.
pub fn encode_wav(wave: &Waveform) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::with_capacity(CANONICAL_HEADER_LEN + 2 * wave.len()));
    {
        let mut writer =
            hound::WavWriter::new(&mut cursor, spec).expect("writing to memory cannot fail");
        let mut samples = writer.get_i16_writer(wave.len() as u32);
        for s in wave.to_pcm() {
            samples.write_sample(s);
        }
        samples.flush().expect("writing to memory cannot fail");
        writer.finalize().expect("writing to memory cannot fail");
    }
    cursor.into_inner()
}

/// Decodes mono 16-bit PCM; chunks other than `fmt ` and `data` are skipped.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform, WavError> {
    let reader = hound::WavReader::new(Cursor::new(bytes))?;
    let spec = reader.spec();
    check_format(&spec)?;
    let pcm = reader
        .into_samples::<i16>()
        .collect::<Result<Vec<_>, _>>()?;
    Waveform::from_pcm(&pcm, spec.sample_rate)
}

fn check_format(spec: &hound::WavSpec) -> Result<(), WavError> {
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(WavError::Unsupported(format!(
            "{} channel(s), {} bits, {:?}; expected mono 16-bit PCM",
            spec.channels, spec.bits_per_sample, spec.sample_format
        )));
    }
    if spec.sample_rate == 0 {
        return Err(WavError::ZeroSampleRate);
    }
    Ok(())
}

fn io_err(path: &Path, source: std::io::Error) -> WavError {
    WavError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn read_wav(path: &Path) -> Result<Waveform, WavError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    decode_wav(&bytes)
}

pub fn write_wav(path: &Path, wave: &Waveform) -> Result<(), WavError> {
    fsio::write_atomic(path, &encode_wav(wave)).map_err(|e| io_err(path, e))
}

/// `(samples, sample_rate)` from the header alone.
pub fn wav_info(path: &Path) -> Result<(usize, u32), WavError> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(err) => io_err(path, err),
        other => other.into(),
    })?;
    check_format(&reader.spec())?;
    Ok((reader.duration() as usize, reader.spec().sample_rate))
}
