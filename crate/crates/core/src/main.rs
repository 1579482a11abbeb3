use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mac_forge::lexicon::OovPolicy;
use mac_forge::pipeline::{self, parse_oov, AlignRequest, PipelineConfig, PipelineError, Report};

/// Build meta-audio clip databases and synthesize speech/transcript pairs.
#[derive(Debug, Parser)]
#[command(name = "mac-forge", version)]
struct Cli {
    /// Print the report as one JSON object.
    #[arg(long, global = true)]
    json: bool,
    /// key=value settings file; flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Force-align a real corpus and store every clip.
    BuildDb(BuildDbArgs),
    /// Sample transcripts and concatenate clips into new pairs.
    Synth(SynthArgs),
    /// Combine a real and a synthetic manifest at a duration ratio.
    Mix(MixArgs),
    /// Report per-label clip counts of a database.
    Stats(StatsArgs),
    /// Score and segment one utterance's emissions.
    Align(AlignArgs),
}

fn oov_arg(s: &str) -> Result<OovPolicy, String> {
    parse_oov(s).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
struct LexiconArgs {
    /// Meta-audio set, one label per line.
    #[arg(long)]
    meta_set: Option<PathBuf>,
    /// alias<TAB>canonical label rewrites.
    #[arg(long)]
    merge_rules: Option<PathBuf>,
    /// grapheme<TAB>labels pronunciation table.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Out-of-lexicon graphemes: error or skip.
    #[arg(long, value_parser = oov_arg)]
    oov: Option<OovPolicy>,
}

impl LexiconArgs {
    fn into_config(self) -> PipelineConfig {
        PipelineConfig {
            meta_set: self.meta_set,
            merge_rules: self.merge_rules,
            lexicon: self.lexicon,
            oov: self.oov,
            ..Default::default()
        }
    }
}

#[derive(Debug, Args)]
struct BuildDbArgs {
    #[command(flatten)]
    lexicon: LexiconArgs,
    /// Manifest of the real corpus.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Directory holding <id>.mace emission files.
    #[arg(long)]
    emissions: Option<PathBuf>,
    /// Database directory to write.
    #[arg(long)]
    db: Option<PathBuf>,
    #[arg(long)]
    sample_rate: Option<u32>,
    #[arg(long)]
    min_seg_frames: Option<usize>,
    #[arg(long)]
    min_clip_samples: Option<usize>,
    /// Drop clips whose segment log-score is below this.
    #[arg(long, allow_negative_numbers = true)]
    score_floor: Option<f64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    lexicon: LexiconArgs,
    #[arg(long)]
    db: Option<PathBuf>,
    /// Text corpus, one transcript per line.
    #[arg(long)]
    texts: Option<PathBuf>,
    /// Transcripts to leave out, one per line.
    #[arg(long)]
    exclude: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of pairs to synthesize.
    #[arg(short = 'M', long)]
    count: Option<usize>,
    /// Master seed; drawn from entropy and printed when omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// Clip selection: uniform, best or weighted.
    #[arg(long)]
    policy: Option<String>,
    /// Temperature for the weighted policy.
    #[arg(long)]
    temperature: Option<f64>,
    /// Synthesize every distinct transcript once instead of sampling.
    #[arg(long)]
    each_once: bool,
    /// Replace the manifest, provenance and wav/ of an earlier run.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct MixArgs {
    /// Manifest of real pairs.
    #[arg(long, alias = "real")]
    manifest: Option<PathBuf>,
    /// Manifest written by `synth`.
    #[arg(long, alias = "synth")]
    synth_manifest: Option<PathBuf>,
    /// Target share of synthetic audio duration, in [0, 1].
    #[arg(long, alias = "rho")]
    ratio: Option<f64>,
    /// Combined manifest to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    db: Option<PathBuf>,
    /// Check the database against this set and print label names.
    #[arg(long)]
    meta_set: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AlignArgs {
    #[command(flatten)]
    lexicon: LexiconArgs,
    /// Emission file to align.
    #[arg(long)]
    mace: PathBuf,
    /// Space-separated meta-audio labels.
    #[arg(long, conflicts_with = "text")]
    labels: Option<String>,
    /// Transcript to map through the lexicon.
    #[arg(long)]
    text: Option<String>,
    #[arg(long)]
    min_seg_frames: Option<usize>,
    /// The file holds unnormalized logits.
    #[arg(long)]
    logits: bool,
}

fn emit<R: Report>(report: R, json: bool) -> i32 {
    println!("{}", report.render(json));
    report.exit_code()
}

fn run(cli: Cli) -> Result<i32, PipelineError> {
    pipeline::configure_threads()?;
    let file = match &cli.config {
        Some(path) => PipelineConfig::read_file(path)?,
        None => PipelineConfig::default(),
    };
    let json = cli.json;
    Ok(match cli.command {
        Command::BuildDb(a) => {
            let flags = PipelineConfig {
                manifest: a.manifest,
                emissions: a.emissions,
                db: a.db,
                sample_rate: a.sample_rate,
                min_seg_frames: a.min_seg_frames,
                min_clip_samples: a.min_clip_samples,
                score_floor: a.score_floor,
                ..a.lexicon.into_config()
            };
            emit(pipeline::build_db(&flags.over(file))?, json)
        }
        Command::Synth(a) => {
            let flags = PipelineConfig {
                db: a.db,
                texts: a.texts,
                exclude: a.exclude,
                out: a.out,
                count: a.count,
                seed: a.seed,
                policy: a.policy,
                temperature: a.temperature,
                each_once: a.each_once.then_some(true),
                ..a.lexicon.into_config()
            };
            emit(pipeline::synth(&flags.over(file), a.force)?, json)
        }
        Command::Mix(a) => {
            let flags = PipelineConfig {
                manifest: a.manifest,
                synth_manifest: a.synth_manifest,
                ratio: a.ratio,
                out: a.out,
                ..Default::default()
            };
            let report = pipeline::mix(&flags.over(file))?;
            if let Some(w) = &report.warning {
                eprintln!("warning: {w}");
            }
            emit(report, json)
        }
        Command::Stats(a) => {
            let flags = PipelineConfig {
                db: a.db,
                meta_set: a.meta_set,
                ..Default::default()
            };
            emit(pipeline::stats(&flags.over(file))?, json)
        }
        Command::Align(a) => {
            let flags = PipelineConfig {
                min_seg_frames: a.min_seg_frames,
                ..a.lexicon.into_config()
            };
            let req = AlignRequest {
                mace: a.mace,
                labels: a.labels,
                text: a.text,
                logits: a.logits,
            };
            emit(pipeline::align(&flags.over(file), &req)?, json)
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
