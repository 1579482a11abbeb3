//! Meta-audio concatenation: synthesize speech/transcript pairs for
//! low-resource ASR by stitching aligned clips of sub-word units.
//!
//! Data flows through [`lexicon`] (transcript to meta-audio ids),
//! [`align`] (segmentation of real utterances), [`clipdb`] (stored clips),
//! [`sampler`] and [`synth`] (new pairs), and [`pipeline`] (the commands
//! behind the `mac-forge` binary). The guide in `book/` walks through each
//! stage; its snippets run as doctests of this crate.

pub mod align;
pub mod audio;
pub mod clipdb;
pub mod fsio;
pub mod lexicon;
pub mod manifest;
pub mod pipeline;
pub mod sampler;
pub mod synth;
pub mod toy;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/meta-audio.md")]
    struct MetaAudio;
    #[doc = include_str!("../../../book/src/alignment.md")]
    struct Alignment;
    #[doc = include_str!("../../../book/src/clip-database.md")]
    struct ClipDatabase;
    #[doc = include_str!("../../../book/src/energy-normalization.md")]
    struct EnergyNormalization;
    #[doc = include_str!("../../../book/src/sampling.md")]
    struct Sampling;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
    #[doc = include_str!("../../../book/src/formats.md")]
    struct Formats;
}
