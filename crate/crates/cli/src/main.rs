//! `weakfish`: dataset preparation, training, evaluation, benchmarking and
//! clip triage for weakly supervised fish detection.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error
//! (including a missing checkpoint). Set `WEAKFISH_DETERMINISTIC=1` to run
//! every parallel step on a single thread.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::Failure;

pub const DETERMINISM_ENV: &str = "WEAKFISH_DETERMINISTIC";

#[derive(Debug, Parser)]
#[command(name = "weakfish", version, about = "Weakly supervised fish detection in underwater video frames")]
struct Cli {
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split a `<habitat>/{valid,empty}/<clip>/` tree into a frame manifest.
    Prepare(PrepareArgs),
    /// Decode clip videos into frame folders with ffmpeg.
    ExtractFrames(ExtractArgs),
    /// Generate the synthetic desk-scale dataset and its experiment configs.
    MakeSynthetic(SyntheticArgs),
    /// Train a model from scratch as described by a run config.
    Train(TrainArgs),
    /// Fine-tune a trained checkpoint as described by a run config.
    Finetune(FinetuneArgs),
    /// Score the test split of a manifest and write the evaluation report.
    Eval(EvalArgs),
    /// Score the frames of one clip and decide whether to keep it.
    Triage(TriageArgs),
    /// Measure scoring throughput.
    Bench(BenchArgs),
    /// Check a manifest's invariants and that every frame exists.
    CheckManifest(CheckManifestArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Args)]
struct PrepareArgs {
    /// Root of the clip tree.
    root: PathBuf,
    /// Manifest CSV to write.
    out_manifest: PathBuf,
    /// Every `interval`-th frame of a clip goes to training.
    #[arg(long, default_value_t = 10)]
    interval: usize,
    /// Also write a CLAHE-enhanced copy of the tree and its manifest.
    #[arg(long, value_enum, default_value_t = Switch::Off)]
    clahe: Switch,
    #[arg(long, default_value_t = 2.0)]
    clip_limit: f64,
    #[arg(long, default_value_t = 16)]
    grid_cols: usize,
    #[arg(long, default_value_t = 8)]
    grid_rows: usize,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    /// Root of the clip tree.
    root: PathBuf,
    /// ffmpeg executable.
    #[arg(long, default_value = "ffmpeg")]
    ffmpeg: PathBuf,
    /// List the videos that would be decoded without running ffmpeg.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Debug, Args)]
struct SyntheticArgs {
    /// Output directory.
    out: PathBuf,
    #[arg(long, default_value_t = 2020)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    habitats: usize,
    #[arg(long, default_value_t = 2)]
    clips_per_label: usize,
    #[arg(long, default_value_t = 32)]
    frames_per_clip: usize,
    /// Images in each external source.
    #[arg(long, default_value_t = 200)]
    external: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Run config (TOML).
    config: PathBuf,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    /// Run config (TOML).
    config: PathBuf,
    /// Checkpoint to start from.
    #[arg(long)]
    from: PathBuf,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
}

#[derive(Debug, Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    manifest: PathBuf,
    /// Decision threshold; the checkpoint's own when absent.
    #[arg(long)]
    threshold: Option<f64>,
    /// Directory for eval.json, scores.csv and roc.svg.
    #[arg(long, default_value = "eval")]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
}

#[derive(Debug, Args)]
struct TriageArgs {
    checkpoint: PathBuf,
    /// Folder holding the frames of one clip.
    clip_dir: PathBuf,
    /// Decision threshold; the checkpoint's own when absent.
    #[arg(long)]
    threshold: Option<f64>,
    /// Directory for triage.json and overlays.
    #[arg(long, default_value = "triage")]
    out: PathBuf,
    /// Write a heatmap overlay per frame (heatmap heads only).
    #[arg(long)]
    save_overlays: bool,
    /// Overlay strength in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
}

#[derive(Debug, Args)]
struct BenchArgs {
    checkpoint: PathBuf,
    manifest: PathBuf,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    /// Score at most this many frames.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
}

#[derive(Debug, Args)]
struct CheckManifestArgs {
    manifest: PathBuf,
}

fn init_logging(quiet: bool) {
    let level = if quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn init_threads() -> Result<(), Failure> {
    let on = std::env::var(DETERMINISM_ENV)
        .map(|v| !matches!(v.as_str(), "" | "0" | "false" | "off"))
        .unwrap_or(false);
    if on {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global()
            .map_err(|e| Failure::runtime(anyhow::anyhow!("cannot configure the thread pool: {e}")))?;
        log::debug!("{DETERMINISM_ENV} set: single-threaded");
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Prepare(a) => commands::prepare(&a),
        Command::ExtractFrames(a) => commands::extract_frames(&a),
        Command::MakeSynthetic(a) => commands::make_synthetic(&a),
        Command::Train(a) => commands::train(&a.config, None, a.precision),
        Command::Finetune(a) => commands::train(&a.config, Some(&a.from), a.precision),
        Command::Eval(a) => commands::eval(&a),
        Command::Triage(a) => commands::triage(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::CheckManifest(a) => commands::check_manifest(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.quiet);
    match init_threads().and_then(|()| dispatch(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
