//! Workflow steps: dataset preparation, and runs driven by a [`RunConfig`]
//! that train or fine-tune, save the model and evaluate it on the manifest's
//! test split. Every run artifact lands in the run directory next to a
//! snapshot of the configuration.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{
    load_manifest, prepare_manifest, scan_clip_folders, write_atomic, DatasetManifest, FrameSample,
    SampleSplit, Split,
};
use crate::error::{Error, Result};
use crate::imaging::{clahe_file, ClaheParams, PreprocessParams};
use crate::loader::ImageLoader;
use crate::metrics::{evaluate_model, roc_svg, write_scores_csv, EvalReport, ScoredFrame};
use crate::model::{build_model, load_checkpoint, save_checkpoint, CheckpointMeta, Model};
use crate::multidomain::MultiDomainSet;
use crate::scalar::Scalar;
use crate::trainer::{finetune, train, TrainContext, TrainReport, TrainSource};

pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const TRAIN_REPORT: &str = "train_report.json";
pub const MODEL_CHECKPOINT: &str = "model.json";
pub const EVAL_REPORT: &str = "eval.json";
pub const SCORES_CSV: &str = "scores.csv";
pub const ROC_SVG: &str = "roc.svg";

/// What [`prepare`] wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareOutcome {
    pub manifest: PathBuf,
    pub n_frames: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub clahe_root: Option<PathBuf>,
    pub clahe_manifest: Option<PathBuf>,
}

/// `<root>-clahe` next to `root`.
pub fn clahe_root_for(root: &Path) -> PathBuf {
    let name = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "frames".into());
    root.with_file_name(format!("{name}-clahe"))
}

/// `<stem>-clahe.<ext>` next to `manifest`.
pub fn clahe_manifest_for(manifest: &Path) -> PathBuf {
    let stem = manifest
        .file_stem()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "manifest".into());
    let ext = manifest
        .extension()
        .map(|e| e.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    manifest.with_file_name(format!("{stem}-clahe.{ext}"))
}

/// Build the manifest of the clip tree at `root`. With `clahe`, also write an
/// enhanced copy of every frame to a parallel tree (`<root>-clahe`) and a
/// second manifest over it (`<manifest stem>-clahe.csv`).
pub fn prepare(root: &Path, manifest: &Path, interval: usize, clahe: Option<&ClaheParams>) -> Result<PrepareOutcome> {
    let m = prepare_manifest(root, interval, manifest)?;
    let mut outcome = PrepareOutcome {
        manifest: manifest.to_path_buf(),
        n_frames: m.entries.len(),
        n_train: m.frames(Split::Train).count(),
        n_test: m.frames(Split::Test).count(),
        clahe_root: None,
        clahe_manifest: None,
    };
    let Some(params) = clahe else {
        return Ok(outcome);
    };
    let out_root = clahe_root_for(root);
    let clips = scan_clip_folders(root)?;
    let jobs: Vec<(PathBuf, PathBuf)> = clips
        .iter()
        .flat_map(|c| &c.frame_paths)
        .map(|src| {
            let rel = src.strip_prefix(root).expect("frames come from the scanned root");
            (src.clone(), out_root.join(rel).with_extension("png"))
        })
        .collect();
    jobs.par_iter()
        .try_for_each(|(src, dst)| clahe_file(src, dst, params))?;
    let enhanced_manifest = clahe_manifest_for(manifest);
    prepare_manifest(&out_root, interval, &enhanced_manifest)?;
    outcome.clahe_root = Some(out_root);
    outcome.clahe_manifest = Some(enhanced_manifest);
    Ok(outcome)
}

/// Project-domain samples of one manifest split.
pub fn manifest_samples(manifest: &DatasetManifest, split: Split) -> Vec<FrameSample> {
    let as_sample = match split {
        Split::Train => SampleSplit::Train,
        Split::Test => SampleSplit::Test,
    };
    manifest
        .frames(split)
        .map(|f| FrameSample::from_frame(f, as_sample))
        .collect()
}

pub fn write_json<S: Serialize>(value: &S, path: &Path) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

/// Score `samples` and write the report, the per-frame scores and the ROC plot
/// into `out_dir`.
pub fn evaluate_into<T: Scalar>(
    model: &Model<T>,
    samples: &[FrameSample],
    preprocess: &PreprocessParams,
    loader: &ImageLoader,
    batch_size: usize,
    threshold: f64,
    out_dir: &Path,
) -> Result<(EvalReport, Vec<ScoredFrame>)> {
    let (report, scored) = evaluate_model(model, samples, preprocess, loader, batch_size, threshold)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_json(&report, &out_dir.join(EVAL_REPORT))?;
    write_scores_csv(&scored, &out_dir.join(SCORES_CSV))?;
    if let Some(roc) = &report.roc {
        let title = format!("ROC, AUC {:.4}", roc.auc);
        write_atomic(&out_dir.join(ROC_SVG), roc_svg(roc, &title).as_bytes())?;
    }
    Ok((report, scored))
}

/// What a run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub train: TrainReport,
    pub eval: EvalReport,
}

/// Train from scratch (`from` is `None`) or fine-tune the checkpoint at `from`,
/// then evaluate on the test split.
pub fn run_experiment<T: Scalar>(cfg: &RunConfig, from: Option<&Path>) -> Result<RunOutcome> {
    let run_dir = cfg.run_dir.clone();
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    write_atomic(&run_dir.join(CONFIG_SNAPSHOT), cfg.to_toml()?.as_bytes())?;

    let manifest = load_manifest(&cfg.dataset.manifest)?;
    let project = manifest_samples(&manifest, Split::Train);
    let test = manifest_samples(&manifest, Split::Test);
    if project.is_empty() || test.is_empty() {
        return Err(Error::arg(format!(
            "{}: manifest needs both train and test frames ({} train, {} test)",
            cfg.dataset.manifest.display(),
            project.len(),
            test.len()
        )));
    }
    let data = MultiDomainSet::new(
        &project,
        cfg.domain_sources()?,
        cfg.dataset.train_fraction,
        cfg.dataset.external_validation,
        cfg.seed,
    )?;
    log::info!(
        "{} project training frames, {} validation images, {} test frames, {} external sources",
        data.project_train().len(),
        data.validation().len(),
        test.len(),
        data.sources().len()
    );

    let mut model = match from {
        None => build_model::<T>(
            &cfg.model.backbone_spec()?,
            cfg.model.head,
            cfg.preprocess.target(),
            cfg.seed,
        )?,
        Some(path) => load_for_finetune(cfg, path)?,
    };
    let loader = ImageLoader::new(cfg.train.cache_images);
    let ctx = TrainContext {
        preprocess: &cfg.preprocess,
        augment: &cfg.augment,
        loader: &loader,
        out_dir: Some(&run_dir),
        seed: cfg.seed,
    };
    let source = if data.sources().is_empty() {
        TrainSource::Plain(data.project_train())
    } else {
        TrainSource::MultiDomain(&data)
    };
    let report = match from {
        None => train(&mut model, source, data.validation(), &cfg.train, &ctx)?,
        Some(_) => finetune(&mut model, source, data.validation(), &cfg.train, &ctx)?,
    };
    write_json(&report, &run_dir.join(TRAIN_REPORT))?;

    let mut meta = CheckpointMeta::new(&model, &cfg.preprocess, cfg.eval.threshold);
    if let Some(best) = report.epochs.get(report.best_epoch) {
        meta.epoch = Some(best.epoch);
        meta.val_acc = Some(best.val_acc);
    }
    let checkpoint = run_dir.join(MODEL_CHECKPOINT);
    save_checkpoint(&model, &meta, &checkpoint)?;

    let (eval, _) = evaluate_into(
        &model,
        &test,
        &cfg.preprocess,
        &loader,
        cfg.eval.batch_size,
        cfg.eval.threshold,
        &run_dir,
    )?;
    Ok(RunOutcome {
        run_dir,
        checkpoint,
        train: report,
        eval,
    })
}

fn load_for_finetune<T: Scalar>(cfg: &RunConfig, path: &Path) -> Result<Model<T>> {
    let (model, meta) = load_checkpoint::<T>(path)?;
    let mut errs = Vec::new();
    if meta.head != cfg.model.head {
        errs.push(format!(
            "model.head is {} but the checkpoint holds {}",
            cfg.model.head, meta.head
        ));
    }
    if meta.input_size != cfg.preprocess.target_size {
        errs.push(format!(
            "preprocess.target_size is {:?} but the checkpoint expects {:?}",
            cfg.preprocess.target_size, meta.input_size
        ));
    }
    if errs.is_empty() {
        Ok(model)
    } else {
        Err(Error::Config(errs))
    }
}
