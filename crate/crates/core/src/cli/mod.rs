//! The `tse` command-line front end.
//!
//! Every subcommand reads an optional TOML run configuration (`--config`),
//! applies its flags on top, validates the result and embeds it, with the
//! seed and tool version, in each report it writes.

mod commands;
pub use commands::system_name;
pub mod table;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::embedder::Pooling;
use crate::error::{Result, TseError};
use crate::separator::Preset;

#[derive(Parser, Debug)]
#[command(name = "tse", version, about = "Target speaker extraction with speaker-embedding cues")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic clean-speech corpus.
    Synth(SynthArgs),
    /// Build speaker-disjoint train/valid/test mixture manifests.
    Mix(MixArgs),
    /// Train an x-vector (stats) or xi-vector (gaussian) embedder.
    TrainEmbedder(TrainEmbedderArgs),
    /// Embed every utterance of a corpus split into an archive.
    ExtractEmbeddings(ExtractArgs),
    /// Score cosine trials and report EER and minDCF.
    EvalEmbeddings(EvalEmbeddingsArgs),
    /// Fit LDA projections on an embedding archive.
    FitLda(FitLdaArgs),
    /// Train the cue-conditioned extractor.
    TrainTse(TrainTseArgs),
    /// Evaluate trained extractors on a mixture split.
    EvalTse(EvalTseArgs),
    /// Finite-difference check of every differentiable op.
    Gradcheck(GradcheckArgs),
    /// Gradient suite plus structural invariants.
    Selftest(GradcheckArgs),
    /// Print the resolved run configuration as TOML.
    Config(ConfigArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub speakers: Option<usize>,
    #[arg(long)]
    pub utts: Option<usize>,
    /// Utterance duration in seconds.
    #[arg(long)]
    pub dur: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MixArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub snr_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub snr_max: Option<f64>,
    /// Speaker fractions `train,valid,test`.
    #[arg(long, value_delimiter = ',')]
    pub split_ratios: Option<Vec<f64>>,
    /// Mixture counts `train,valid,test`.
    #[arg(long, value_delimiter = ',')]
    pub mixtures: Option<Vec<usize>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SplitSelect {
    /// `splits.json` written by `mix`; restricts the corpus to one split's speakers.
    #[arg(long)]
    pub splits: Option<PathBuf>,
    #[arg(long, default_value = "train")]
    pub split: String,
}

#[derive(Args, Debug)]
pub struct TrainEmbedderArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub select: SplitSelect,
    #[arg(long)]
    pub pooling: Option<Pooling>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub common: Common,
    /// Embedder model file.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub select: SplitSelect,
    /// Output archive (`.ark`); a `.jsonl` mirror and `.meta.json` are written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalEmbeddingsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, required = true)]
    pub archive: Vec<PathBuf>,
    #[arg(long)]
    pub trials_per_speaker: Option<usize>,
    #[command(flatten)]
    pub dcf: DcfArgs,
    #[arg(long)]
    pub out: PathBuf,
}

/// Detection-cost operating point for minDCF.
#[derive(Args, Debug)]
pub struct DcfArgs {
    #[arg(long)]
    pub p_target: Option<f64>,
    #[arg(long)]
    pub c_miss: Option<f64>,
    #[arg(long)]
    pub c_fa: Option<f64>,
}

impl DcfArgs {
    pub(crate) fn apply(&self, cfg: &mut RunConfig) {
        let v = &mut cfg.verification;
        v.p_target = self.p_target.unwrap_or(v.p_target);
        v.c_miss = self.c_miss.unwrap_or(v.c_miss);
        v.c_fa = self.c_fa.unwrap_or(v.c_fa);
    }
}

#[derive(Args, Debug)]
pub struct FitLdaArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub archive: PathBuf,
    /// One model per value, e.g. `8,16,32,64`.
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long)]
    pub shrinkage: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum CueArg {
    Xvec,
    Xivec,
}

#[derive(Args, Debug)]
pub struct TrainTseArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory written by `mix`.
    #[arg(long)]
    pub mixtures: PathBuf,
    #[arg(long)]
    pub embedder: PathBuf,
    /// Expected embedder type; checked against the model.
    #[arg(long, value_enum)]
    pub cue: Option<CueArg>,
    /// LDA model applied to the embedding cue.
    #[arg(long)]
    pub lda: Option<PathBuf>,
    #[arg(long)]
    pub dynamic_mixing: bool,
    /// Clean corpus used for dynamic mixing.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Continue from `OUT/last.ckpt`.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalTseArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub mixtures: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Output directories of `train-tse`.
    #[arg(long, required = true)]
    pub system: Vec<PathBuf>,
    #[arg(long)]
    pub write_wavs: bool,
    #[arg(long)]
    pub trials_per_speaker: Option<usize>,
    #[command(flatten)]
    pub dcf: DcfArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = crate::gradcheck::DEFAULT_INSTANCES)]
    pub instances: usize,
    /// Only ops whose name contains this string.
    #[arg(long)]
    pub filter: Option<String>,
    /// Test hook: corrupt the tape gradient of this op.
    #[arg(long)]
    pub inject_fault: Option<String>,
    /// Optional JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ConfigArgs {
    #[command(flatten)]
    pub common: Common,
}

impl Common {
    pub(crate) fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::load(self.config.as_deref())?;
        if let Some(s) = self.seed {
            c.seed = s;
        }
        Ok(c)
    }
}

/// Parses `args` (including the program name) and runs the subcommand,
/// writing human-readable output to `out` and diagnostics to `err`.
/// Returns the process exit code: 0 success, 1 usage, 2 data, 3 numerical.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match commands::dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub(crate) fn usage(msg: impl Into<String>) -> TseError {
    TseError::InvalidArgument(msg.into())
}
