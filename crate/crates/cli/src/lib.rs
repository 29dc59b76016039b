//! `swallow` command-line driver.
//!
//! Every subcommand's flags can also come from a TOML file passed with
//! `--config`; each subcommand reads the table of the same name and flags
//! given on the command line take precedence. Commands that write artifacts
//! also write a [`manifest::RunManifest`], which `swallow replay` re-executes
//! and checks byte for byte.

pub mod commands;
pub mod error;
pub mod manifest;
mod serve;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use swallow_core::signal::Volume;

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "swallow", version, about = "Swallow sEMG pipeline: simulate, preprocess, train, evaluate, serve")]
pub struct Cli {
    /// TOML file with one table per subcommand; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Where to write the run manifest (default: next to the main output).
    #[arg(long, global = true, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labelled corpus (JSON lines) and optional frame files.
    Simulate(SimulateArgs),
    /// Run the filter/envelope chain and write envelope CSVs plus a filter report.
    Preprocess(PreprocessArgs),
    /// Train a classifier and write a checkpoint and its training log.
    Train(TrainArgs),
    /// Score a corpus with a checkpoint (or read scores) and write metrics JSON.
    Eval(EvalArgs),
    /// Train the 1D and 2D networks on one split and tabulate both.
    Compare(CompareArgs),
    /// Compare backprop gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
    /// Quantise one corpus event into a binary frame stream.
    EncodeFrames(EncodeFramesArgs),
    /// Decode a binary frame stream into a one-line corpus.
    DecodeFrames(DecodeFramesArgs),
    /// Re-run the command recorded in a manifest and verify its outputs.
    Replay(ReplayArgs),
}

/// Fills unset fields from `file`, keeping values already present.
trait Layer: Sized {
    fn layer(self, file: Self) -> Self;
}

macro_rules! layered {
    ($t:ty { $($f:ident),* $(,)? }) => {
        impl Layer for $t {
            fn layer(mut self, file: Self) -> Self {
                $( if self.$f.is_none() { self.$f = file.$f; } )*
                self
            }
        }
    };
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateArgs {
    #[arg(long)]
    pub healthy: Option<usize>,
    #[arg(long)]
    pub patient: Option<usize>,
    /// Events per subject.
    #[arg(long)]
    pub events: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Bolus volume in mL for every event (5, 10 or 15); rotates when unset.
    #[arg(long)]
    pub volume: Option<Volume>,
    #[arg(long)]
    pub duration_s: Option<f64>,
    /// Relative per-subject spread of amplitude, duration and gains.
    #[arg(long)]
    pub spread: Option<f64>,
    /// Output corpus (JSON lines).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write one frame file per event into this directory.
    #[arg(long)]
    pub frames_dir: Option<PathBuf>,
}
layered!(SimulateArgs { healthy, patient, events, seed, volume, duration_s, spread, out, frames_dir });

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessArgs {
    /// Corpus (`.jsonl`) or binary frame file.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Only this corpus event (0-based).
    #[arg(long)]
    pub event: Option<usize>,
    #[arg(long)]
    pub hp_order: Option<usize>,
    #[arg(long)]
    pub hp_cutoff_hz: Option<f64>,
    #[arg(long)]
    pub rms_window_ms: Option<f64>,
    #[arg(long)]
    pub notch_hz: Option<f64>,
    #[arg(long)]
    pub notch_q: Option<f64>,
    #[arg(long)]
    pub fs_hz: Option<f64>,
}
layered!(PreprocessArgs { input, out, event, hp_order, hp_cutoff_hz, rms_window_ms, notch_hz, notch_q, fs_hz });

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// TOML file with training hyperparameters.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    /// Output checkpoint (JSON).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// `1d` or `2d`.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Seed for the split and batch order.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed for weight initialisation.
    #[arg(long)]
    pub model_seed: Option<u64>,
    /// Training log CSV (default: `<checkpoint>.log.csv`).
    #[arg(long)]
    pub log: Option<PathBuf>,
}
layered!(TrainArgs {
    corpus, train_config, checkpoint, arch, iterations, batch_size, learning_rate, momentum, val_fraction, seed,
    model_seed, log
});

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// CSV with `score,label` rows, instead of a corpus and checkpoint.
    #[arg(long, conflicts_with_all = ["corpus", "checkpoint"])]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Metrics JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
layered!(EvalArgs { corpus, checkpoint, scores, threshold, out });

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub model_seed: Option<u64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Report JSON; the table goes to stdout and `<out>.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
layered!(CompareArgs { corpus, train_config, iterations, seed, model_seed, threshold, out });

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckArgs {
    /// `1d` or `2d`.
    #[arg(long)]
    pub arch: Option<String>,
    /// Corpus to draw inputs from; a small synthetic one otherwise.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub params: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// `train` (batch statistics) or `infer` (running statistics).
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fail when the max relative error reaches this.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
layered!(GradcheckArgs { arch, corpus, batch, params, epsilon, mode, seed, tolerance, out });

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeArgs {
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Checkpoint used for scoring; scoring answers 503 without one.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Speed-up factor for simulated live recordings.
    #[arg(long)]
    pub live_speed: Option<f64>,
}
layered!(ServeArgs { host, port, data_dir, model, live_speed });

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodeFramesArgs {
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub event: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
layered!(EncodeFramesArgs { input, event, out });

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeFramesArgs {
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub subject_id: Option<String>,
    /// 0 = healthy, 1 = patient.
    #[arg(long)]
    pub label: Option<u8>,
    #[arg(long)]
    pub volume: Option<Volume>,
    #[arg(long)]
    pub fs_hz: Option<f64>,
}
layered!(DecodeFramesArgs { input, out, subject_id, label, volume, fs_hz });

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    pub manifest_file: PathBuf,
}

/// Reads `table` from the config file, if there is one.
fn section<T: DeserializeOwned + Default>(config: Option<&Path>, table: &str) -> CliResult<T> {
    let Some(path) = config else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    let mut doc: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    match doc.remove(table) {
        None => Ok(T::default()),
        Some(v) => v
            .try_into()
            .map_err(|e| CliError::Validation(format!("{}: [{table}]: {e}", path.display()))),
    }
}

pub(crate) fn required<T: Clone>(v: &Option<T>, flag: &str) -> CliResult<T> {
    v.clone().ok_or_else(|| CliError::Usage(format!("missing required option --{flag}")))
}

/// Writes a file, creating parent directories.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path.display(), e))?;
    f.write_all(bytes).map_err(|e| CliError::io(path.display(), e))?;
    Ok(())
}

/// Parses `argv` (without the program name) and runs the command.
pub fn run(argv: &[String]) -> CliResult<()> {
    match Cli::try_parse_from(std::iter::once("swallow".to_string()).chain(argv.iter().cloned())) {
        Ok(cli) => execute(cli, argv),
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            Ok(())
        }
        Err(e) => Err(CliError::Usage(e.to_string())),
    }
}

fn execute(cli: Cli, argv: &[String]) -> CliResult<()> {
    let cfg = cli.config.as_deref();
    let m = cli.manifest.as_deref();
    use commands as c;
    match cli.command {
        Command::Simulate(a) => c::simulate(a.layer(section(cfg, "simulate")?), m, argv),
        Command::Preprocess(a) => c::preprocess(a.layer(section(cfg, "preprocess")?), m, argv),
        Command::Train(a) => c::train(a.layer(section(cfg, "train")?), m, argv),
        Command::Eval(a) => c::eval(a.layer(section(cfg, "eval")?), m, argv),
        Command::Compare(a) => c::compare(a.layer(section(cfg, "compare")?), m, argv),
        Command::Gradcheck(a) => c::gradcheck(a.layer(section(cfg, "gradcheck")?), m, argv),
        Command::Serve(a) => serve::serve(a.layer(section(cfg, "serve")?)),
        Command::EncodeFrames(a) => c::encode_frames(a.layer(section(cfg, "encode-frames")?), m, argv),
        Command::DecodeFrames(a) => c::decode_frames(a.layer(section(cfg, "decode-frames")?), m, argv),
        Command::Replay(a) => c::replay(&a.manifest_file),
    }
}
