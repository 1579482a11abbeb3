//! Generator for the bundled toy corpus in `data/toy/`.
//!
//! Eight short Cantonese utterances over a tone-merged set of eight
//! syllables. Each syllable is a triangle wave with its own period, every
//! segment length and amplitude is fixed by a formula, and the emissions
//! put posterior 0.9 on the true label of each frame. Only integer
//! arithmetic and literal constants are used, so the bytes are identical
//! on every platform.

use std::io;
use std::path::Path;

use crate::align::mace;
use crate::align::EmissionMatrix;
use crate::audio::{self, Waveform};
use crate::fsio;
use crate::lexicon::MetaSetHash;
use crate::manifest::{self, ManifestRecord, Source};

pub const SAMPLE_RATE: u32 = 16000;
pub const FRAME_HOP: u32 = 160;

/// Tone-merged syllables, in id order.
pub const LABELS: [&str; 8] = ["nei", "hou", "sik", "faan", "haa", "ngo", "dei", "heoi"];

/// Toned spellings used by the lexicon, merged onto [`LABELS`].
pub const MERGE_RULES: [(&str, &str); 10] = [
    ("nei5", "nei"),
    ("hou2", "hou"),
    ("sik6", "sik"),
    ("faan6", "faan"),
    ("haa1", "haa"),
    ("haa4", "haa"),
    ("haa6", "haa"),
    ("ngo5", "ngo"),
    ("dei6", "dei"),
    ("heoi3", "heoi"),
];

pub const LEXICON: [(&str, &str); 9] = [
    ("你", "nei5"),
    ("好", "hou2"),
    ("食", "sik6"),
    ("飯", "faan6"),
    ("蝦", "haa1"),
    ("下", "haa6"),
    ("我", "ngo5"),
    ("哋", "dei6"),
    ("去", "heoi3"),
];

/// `(id, transcript, label ids)` of the real corpus.
pub const UTTERANCES: [(&str, &str, &[u32]); 8] = [
    ("toy01", "你好", &[0, 1]),
    ("toy02", "我食飯", &[5, 2, 3]),
    ("toy03", "你哋去", &[0, 6, 7]),
    ("toy04", "我哋食蝦", &[5, 6, 2, 4]),
    ("toy05", "好飯", &[1, 3]),
    ("toy06", "去食飯", &[7, 2, 3]),
    ("toy07", "我好", &[5, 1]),
    ("toy08", "下去", &[4, 7]),
];

/// Text-only corpus the synthesizer samples from. Contains one line with
/// an out-of-lexicon character (佢) and two lines from the test split.
pub const TEXTS: [&str; 24] = [
    "我食飯",
    "你食飯",
    "你好",
    "我好",
    "我哋去食飯",
    "你哋去食蝦",
    "我去食飯",
    "你去",
    "我哋好",
    "你哋好",
    "我食蝦",
    "好飯",
    "下去",
    "你哋食飯",
    "我哋食飯",
    "我食飯",
    "你好",
    "佢食飯",
    "去食蝦",
    "我哋去",
    "你去食飯",
    "我下去",
    "食蝦",
    "我食飯",
];

/// Held-out transcripts that must not be synthesized.
pub const TEST_TEXTS: [&str; 3] = ["你哋去食蝦", "我下去", "你哋去"];

/// ln 0.9 and ln(0.1 / 7).
const LOG_TRUE: f32 = -0.105_360_515;
const LOG_OTHER: f32 = -4.248_495;

fn segment_frames(utt: usize, seg: usize) -> usize {
    6 + (3 * utt + 5 * seg) % 7
}

fn triangle(n: usize, period: usize, amp: i32) -> i16 {
    let p = (n % period) as i32;
    let period = period as i32;
    let v = if 2 * p < period {
        -amp + 4 * amp * p / period
    } else {
        3 * amp - 4 * amp * p / period
    };
    v as i16
}

/// Frame boundaries of utterance `utt` (index into [`UTTERANCES`]).
pub fn boundaries(utt: usize) -> Vec<usize> {
    let mut b = vec![0];
    for seg in 0..UTTERANCES[utt].2.len() {
        b.push(b[seg] + segment_frames(utt, seg));
    }
    b
}

fn utterance_audio(utt: usize) -> Waveform {
    let ids = UTTERANCES[utt].2;
    let mut pcm = Vec::new();
    for (seg, &id) in ids.iter().enumerate() {
        let len = segment_frames(utt, seg) * FRAME_HOP as usize;
        let period = 40 + 8 * id as usize;
        let amp = 2000 + 700 * ((utt + 2 * id as usize) % 5) as i32;
        pcm.extend((0..len).map(|n| triangle(n, period, amp)));
    }
    Waveform::from_pcm(&pcm, SAMPLE_RATE).expect("toy sample rate is positive")
}

fn utterance_emissions(utt: usize) -> EmissionMatrix {
    let ids = UTTERANCES[utt].2;
    let k = LABELS.len();
    let mut values = Vec::new();
    for (seg, &id) in ids.iter().enumerate() {
        for _ in 0..segment_frames(utt, seg) {
            values.extend((0..k).map(|label| {
                if label == id as usize {
                    LOG_TRUE as f64
                } else {
                    LOG_OTHER as f64
                }
            }));
        }
    }
    EmissionMatrix::new(values.len() / k, k, values, FRAME_HOP, SAMPLE_RATE)
        .expect("toy emissions are valid")
}

fn lines<'a>(items: impl IntoIterator<Item = &'a str>) -> String {
    items.into_iter().flat_map(|s| [s, "\n"]).collect()
}

/// Every file of the toy corpus as `(relative path, bytes)`.
pub fn files() -> Vec<(String, Vec<u8>)> {
    let meta_set = lines(LABELS);
    let hash = MetaSetHash::of_bytes(meta_set.as_bytes());
    let mut out = vec![
        ("meta_set.txt".to_string(), meta_set.into_bytes()),
        (
            "merge_rules.txt".to_string(),
            MERGE_RULES
                .iter()
                .map(|(a, c)| format!("{a}\t{c}\n"))
                .collect::<String>()
                .into_bytes(),
        ),
        (
            "lexicon.txt".to_string(),
            std::iter::once("#tokenize=char\n".to_string())
                .chain(LEXICON.iter().map(|(g, p)| format!("{g}\t{p}\n")))
                .collect::<String>()
                .into_bytes(),
        ),
        ("texts.txt".to_string(), lines(TEXTS).into_bytes()),
        ("test_texts.txt".to_string(), lines(TEST_TEXTS).into_bytes()),
        (
            "mac-forge.conf".to_string(),
            "# settings for the bundled toy corpus; paths are relative to this file\n\
             meta-set = meta_set.txt\n\
             merge-rules = merge_rules.txt\n\
             lexicon = lexicon.txt\n\
             manifest = manifest.jsonl\n\
             emissions = emissions\n\
             texts = texts.txt\n\
             exclude = test_texts.txt\n\
             sample-rate = 16000\n"
                .to_string()
                .into_bytes(),
        ),
    ];
    let records: Vec<ManifestRecord> = UTTERANCES
        .iter()
        .map(|(id, text, _)| ManifestRecord {
            id: id.to_string(),
            audio: format!("wav/{id}.wav"),
            text: text.to_string(),
            source: Source::Real,
            provenance: String::new(),
        })
        .collect();
    out.push((
        "manifest.jsonl".to_string(),
        manifest::to_jsonl(&records).into_bytes(),
    ));
    for (utt, (id, _, _)) in UTTERANCES.iter().enumerate() {
        out.push((
            format!("wav/{id}.wav"),
            audio::encode_wav(&utterance_audio(utt)),
        ));
        out.push((
            format!("emissions/{id}.mace"),
            mace::encode(&utterance_emissions(utt), &hash),
        ));
    }
    out
}

/// Writes the toy corpus under `dir`.
pub fn write(dir: &Path) -> io::Result<()> {
    for (rel, bytes) in files() {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        fsio::write_atomic(&path, &bytes)?;
    }
    Ok(())
}
