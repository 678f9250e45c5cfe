use std::path::{Component, Path, PathBuf};
use std::process::Command as Process;
use std::time::Instant;

use anyhow::{anyhow, Context};
use serde::Serialize;

use weakfish_core::config::RunConfig;
use weakfish_core::dataset::{
    list_frames, load_manifest, scan_clip_folders_detailed, validate_manifest, video_frame_dir,
    write_atomic, FrameSample, Split,
};
use weakfish_core::imaging::ClaheParams;
use weakfish_core::loader::ImageLoader;
use weakfish_core::localizer::{self, overlay, upscale_heatmap};
use weakfish_core::metrics::score_samples;
use weakfish_core::model::{convert_to_localizer, load_checkpoint, sidecar_path, weights_path, HeadKind};
use weakfish_core::pipeline::{self, evaluate_into, manifest_samples, write_json, RunOutcome};
use weakfish_core::synthetic::{desk_experiments, generate, SyntheticSpec};
use weakfish_core::{Error, Scalar};

use super::{
    BenchArgs, CheckManifestArgs, EvalArgs, ExtractArgs, Precision, PrepareArgs, SplitArg, Switch,
    SyntheticArgs, TriageArgs,
};

pub const TRIAGE_REPORT: &str = "triage.json";
const OVERLAY_DIR: &str = "overlays";
const MANIFEST: &str = "manifest.csv";

/// An error together with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(error: anyhow::Error) -> Self {
        Failure { code: 2, error }
    }

    pub fn runtime(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_)
            | Error::InvalidArgument(_)
            | Error::Parse { .. }
            | Error::WrongVariant { .. }
            | Error::BackboneUnavailable(_) => 2,
            _ => 1,
        };
        Failure { code, error: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure::runtime(error)
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

fn require_file(path: &Path, what: &str) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::usage(anyhow!("{what} not found: {}", path.display())))
    }
}

fn require_dir(path: &Path, what: &str) -> CmdResult {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::usage(anyhow!("{what} is not a directory: {}", path.display())))
    }
}

fn require_checkpoint(path: &Path) -> CmdResult {
    let sidecar = sidecar_path(path);
    require_file(&sidecar, "checkpoint")?;
    require_file(&weights_path(&sidecar), "checkpoint weights")
}

fn check_threshold(t: f64) -> CmdResult<f64> {
    if (0.0..=1.0).contains(&t) {
        Ok(t)
    } else {
        Err(Failure::usage(anyhow!("threshold must be in [0, 1], got {t}")))
    }
}

pub fn prepare(a: &PrepareArgs) -> CmdResult {
    require_dir(&a.root, "clip root")?;
    let clahe = match a.clahe {
        Switch::Off => None,
        Switch::On => {
            if !(a.clip_limit > 0.0) || a.grid_cols == 0 || a.grid_rows == 0 {
                return Err(Failure::usage(anyhow!(
                    "CLAHE needs clip_limit > 0 and grid dimensions >= 1"
                )));
            }
            Some(ClaheParams {
                clip_limit: a.clip_limit,
                grid_cols: a.grid_cols,
                grid_rows: a.grid_rows,
            })
        }
    };
    let out = pipeline::prepare(&a.root, &a.out_manifest, a.interval, clahe.as_ref())?;
    println!(
        "{}: {} frames ({} train, {} test)",
        out.manifest.display(),
        out.n_frames,
        out.n_train,
        out.n_test
    );
    if let (Some(root), Some(manifest)) = (&out.clahe_root, &out.clahe_manifest) {
        println!("{}: CLAHE frames under {}", manifest.display(), root.display());
    }
    Ok(())
}

pub fn extract_frames(a: &ExtractArgs) -> CmdResult {
    require_dir(&a.root, "clip root")?;
    let videos = scan_clip_folders_detailed(&a.root)?.unextracted_videos;
    if videos.is_empty() {
        println!("no videos left to extract under {}", a.root.display());
        return Ok(());
    }
    for video in &videos {
        let dir = video_frame_dir(video);
        if a.dry_run {
            println!("{} -> {}", video.display(), dir.display());
            continue;
        }
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let status = Process::new(&a.ffmpeg)
            .args(["-hide_banner", "-loglevel", "error", "-nostdin", "-i"])
            .arg(video)
            .args(["-start_number", "0"])
            .arg(dir.join("frame_%06d.png"))
            .status();
        let failed = match status {
            Ok(s) if s.success() => None,
            Ok(s) => Some(anyhow!("{} exited with {s} on {}", a.ffmpeg.display(), video.display())),
            Err(e) => Some(anyhow!("cannot run {}: {e}", a.ffmpeg.display())),
        };
        if let Some(e) = failed {
            // A partial folder would be taken for an extracted clip.
            let _ = std::fs::remove_dir_all(&dir);
            return Err(Failure::runtime(e));
        }
        let n = list_frames(&dir)?.len();
        println!("{}: {n} frames", dir.display());
    }
    Ok(())
}

pub fn make_synthetic(a: &SyntheticArgs) -> CmdResult {
    let spec = SyntheticSpec {
        habitats: a.habitats,
        clips_per_label: a.clips_per_label,
        frames_per_clip: a.frames_per_clip,
        external_negatives: a.external,
        external_positives: a.external,
        seed: a.seed,
        ..SyntheticSpec::default()
    };
    let layout = generate(&a.out, &spec)?;
    let prep = pipeline::prepare(
        &layout.frames_root,
        &a.out.join(MANIFEST),
        10,
        Some(&ClaheParams::default()),
    )?;
    let clahe_manifest = prep
        .clahe_manifest
        .as_deref()
        .and_then(Path::file_name)
        .map(|n| n.to_string_lossy().into_owned())
        .expect("prepare with CLAHE writes a second manifest");
    println!(
        "{}: {} frames ({} train, {} test), {} + {} external images",
        a.out.display(),
        prep.n_frames,
        prep.n_train,
        prep.n_test,
        spec.external_negatives,
        spec.external_positives
    );
    for (name, text) in desk_experiments(MANIFEST, &clahe_manifest) {
        let path = a.out.join(format!("{name}.toml"));
        write_atomic(&path, text.as_bytes())?;
        match name.strip_suffix("-vlq") {
            None => println!("weakfish train {}", path.display()),
            Some(base) => println!(
                "weakfish finetune {} --from {}",
                path.display(),
                a.out.join("runs").join(base).join(pipeline::MODEL_CHECKPOINT).display()
            ),
        }
    }
    Ok(())
}

pub fn train(config: &Path, from: Option<&Path>, precision: Precision) -> CmdResult {
    require_file(config, "run config")?;
    let cfg = RunConfig::load(config)?;
    if let Some(ckpt) = from {
        require_checkpoint(ckpt)?;
    }
    let outcome = match precision {
        Precision::F32 => pipeline::run_experiment::<f32>(&cfg, from)?,
        Precision::F64 => pipeline::run_experiment::<f64>(&cfg, from)?,
    };
    print_run(&outcome);
    Ok(())
}

fn print_run(o: &RunOutcome) {
    let t = &o.train;
    if let Some(best) = t.epochs.get(t.best_epoch) {
        println!(
            "{} epochs, best validation accuracy {:.4} at epoch {}, {}",
            t.epochs.len(),
            best.val_acc,
            best.epoch,
            t.stop_reason
        );
    }
    print!("{}", o.eval.summary());
    println!("run directory {}", o.run_dir.display());
}

fn split_samples(manifest: &Path, split: SplitArg) -> CmdResult<Vec<FrameSample>> {
    require_file(manifest, "manifest")?;
    let m = load_manifest(manifest)?;
    let mut samples = Vec::new();
    if matches!(split, SplitArg::Train | SplitArg::All) {
        samples.extend(manifest_samples(&m, Split::Train));
    }
    if matches!(split, SplitArg::Test | SplitArg::All) {
        samples.extend(manifest_samples(&m, Split::Test));
    }
    if samples.is_empty() {
        return Err(Failure::usage(anyhow!(
            "{} has no frames in the requested split",
            manifest.display()
        )));
    }
    Ok(samples)
}

pub fn eval(a: &EvalArgs) -> CmdResult {
    require_checkpoint(&a.checkpoint)?;
    let samples = split_samples(&a.manifest, a.split)?;
    match a.precision {
        Precision::F32 => eval_with::<f32>(a, &samples),
        Precision::F64 => eval_with::<f64>(a, &samples),
    }
}

fn eval_with<T: Scalar>(a: &EvalArgs, samples: &[FrameSample]) -> CmdResult {
    let (model, meta) = load_checkpoint::<T>(&a.checkpoint)?;
    let threshold = check_threshold(a.threshold.unwrap_or(meta.threshold))?;
    let loader = ImageLoader::new(false);
    let (report, _) = evaluate_into(
        &model,
        samples,
        &meta.preprocess,
        &loader,
        a.batch_size,
        threshold,
        &a.out,
    )?;
    print!("{}", report.summary());
    if let Some(c) = &report.class_metrics {
        println!("AP {:.4}  AR {:.4}", c.ap, c.ar);
    }
    println!(
        "{:.1} images/sec at batch size {}",
        report.throughput.images_per_sec, report.throughput.batch_size
    );
    println!("report written to {}", a.out.join(pipeline::EVAL_REPORT).display());
    Ok(())
}

/// `<habitat>/<valid|empty>/<clip>` when the folder follows the clip-tree
/// convention, otherwise the folder name.
fn clip_id_for(dir: &Path) -> String {
    let names: Vec<String> = dir
        .components()
        .filter_map(|c| match c {
            Component::Normal(n) => Some(n.to_string_lossy().into_owned()),
            _ => None,
        })
        .collect();
    match names.as_slice() {
        [.., habitat, label, clip] if label == "valid" || label == "empty" => {
            format!("{habitat}/{label}/{clip}")
        }
        [.., clip] => clip.clone(),
        [] => "clip".into(),
    }
}

pub fn triage(a: &TriageArgs) -> CmdResult {
    require_checkpoint(&a.checkpoint)?;
    require_dir(&a.clip_dir, "clip folder")?;
    if !(0.0..=1.0).contains(&a.alpha) {
        return Err(Failure::usage(anyhow!("alpha must be in [0, 1], got {}", a.alpha)));
    }
    let (model, meta) = load_checkpoint::<f32>(&a.checkpoint)?;
    if a.save_overlays && model.head() == HeadKind::XFishMp {
        return Err(Failure::usage(anyhow!(
            "overlays need a heatmap head (XFishHmMp or XFishHm); this checkpoint holds XFishMp"
        )));
    }
    let threshold = check_threshold(a.threshold.unwrap_or(meta.threshold))?;
    let frames = list_frames(&a.clip_dir)?;
    if frames.is_empty() {
        return Err(Failure::usage(anyhow!("no frames in {}", a.clip_dir.display())));
    }
    let loader = ImageLoader::new(false);
    let clip_id = clip_id_for(&a.clip_dir);
    let result = localizer::triage(&model, &clip_id, &frames, &meta.preprocess, &loader, threshold)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_json(&result, &a.out.join(TRIAGE_REPORT))?;
    let verdict = if result.keep { "keep" } else { "discard" };
    match result.clip_score {
        Some(s) => println!("{clip_id}: {verdict} (clip score {s:.4}, {} frames)", result.per_frame.len()),
        None => println!("{clip_id}: {verdict} (no frame could be scored)"),
    }
    for f in &result.failures {
        log::warn!("frame {} skipped: {}", f.index, f.error);
    }
    if a.save_overlays {
        let localizer = match model.head() {
            HeadKind::XFishHm => model,
            _ => convert_to_localizer(model)?,
        };
        let dir = a.out.join(OVERLAY_DIR);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for f in &result.per_frame {
            let x = loader.eval_input::<f32>(&f.path, &meta.preprocess)?;
            let heat = upscale_heatmap(&localizer::heatmap(&localizer, &x)?, x.dims())?;
            let img = overlay(&x.to_gray_image(255.0), &heat, a.alpha)?;
            let name = f
                .path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("frame_{:06}", f.index));
            let path = dir.join(format!("{name}.png"));
            img.save(&path).with_context(|| format!("writing {}", path.display()))?;
        }
        println!("{} overlays written to {}", result.per_frame.len(), dir.display());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct BenchReport {
    images: usize,
    seconds: f64,
    images_per_sec: f64,
    batch_size: usize,
    threads: usize,
    scalar: &'static str,
}

pub fn bench(a: &BenchArgs) -> CmdResult {
    require_checkpoint(&a.checkpoint)?;
    if a.batch_size == 0 {
        return Err(Failure::usage(anyhow!("batch size must be >= 1")));
    }
    let mut samples = split_samples(&a.manifest, SplitArg::Test)?;
    if let Some(n) = a.limit {
        samples.truncate(n.max(1));
    }
    let report = match a.precision {
        Precision::F32 => bench_with::<f32>(a, &samples)?,
        Precision::F64 => bench_with::<f64>(a, &samples)?,
    };
    println!(
        "{:.1} images/sec ({} images in {:.2}s, batch size {}, {} threads)",
        report.images_per_sec, report.images, report.seconds, report.batch_size, report.threads
    );
    println!("{}", serde_json::to_string(&report).context("serializing the benchmark")?);
    Ok(())
}

fn bench_with<T: Scalar>(a: &BenchArgs, samples: &[FrameSample]) -> CmdResult<BenchReport> {
    let (model, meta) = load_checkpoint::<T>(&a.checkpoint)?;
    let loader = ImageLoader::new(false);
    let started = Instant::now();
    let (scored, failed) = score_samples(&model, samples, &meta.preprocess, &loader, a.batch_size)?;
    let seconds = started.elapsed().as_secs_f64().max(1e-9);
    if scored.is_empty() {
        return Err(Failure::runtime(anyhow!("none of the {} frames could be read", failed.len())));
    }
    Ok(BenchReport {
        images: scored.len(),
        seconds,
        images_per_sec: scored.len() as f64 / seconds,
        batch_size: a.batch_size,
        threads: rayon::current_num_threads(),
        scalar: T::NAME,
    })
}

pub fn check_manifest(a: &CheckManifestArgs) -> CmdResult {
    require_file(&a.manifest, "manifest")?;
    let m = load_manifest(&a.manifest)?;
    m.check_invariants()
        .map_err(|e| Failure::runtime(anyhow!("{}: {e}", a.manifest.display())))?;
    let clips = m.clip_counts();
    println!(
        "{}: {} clips, {} frames ({} train, {} test), interval {}",
        a.manifest.display(),
        clips.len(),
        m.entries.len(),
        m.frames(Split::Train).count(),
        m.frames(Split::Test).count(),
        m.protocol_params.interval
    );
    let missing: Vec<PathBuf> = validate_manifest(&m);
    if missing.is_empty() {
        return Ok(());
    }
    for p in missing.iter().take(10) {
        eprintln!("missing: {}", p.display());
    }
    Err(Failure::runtime(anyhow!("{} frames are missing on disk", missing.len())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_ids_follow_the_tree_convention() {
        assert_eq!(clip_id_for(Path::new("/data/frames/h1/valid/c7")), "h1/valid/c7");
        assert_eq!(clip_id_for(Path::new("h2/empty/c1/")), "h2/empty/c1");
        assert_eq!(clip_id_for(Path::new("/tmp/someclip")), "someclip");
    }

    #[test]
    fn core_errors_map_to_exit_codes() {
        assert_eq!(Failure::from(Error::Config(vec!["x".into()])).code, 2);
        assert_eq!(Failure::from(Error::InvalidArgument("bad".into())).code, 2);
        let io = Error::Io {
            path: "/x".into(),
            source: std::io::Error::other("boom"),
        };
        assert_eq!(Failure::from(io).code, 1);
    }
}
