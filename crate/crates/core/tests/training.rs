use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use weakfish_core::config::RunConfig;
use weakfish_core::dataset::{load_manifest, prepare_manifest, Split};
use weakfish_core::imaging::Plane;
use weakfish_core::loader::ImageLoader;
use weakfish_core::model::{build_model, load_checkpoint, BackboneSpec, HeadKind};
use weakfish_core::pipeline::{self, manifest_samples, run_experiment};
use weakfish_core::synthetic::{generate, SyntheticSpec};
use weakfish_core::trainer::{accuracy, train, TrainContext, TrainSource};
use weakfish_core::Error;

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        habitats: 2,
        clips_per_label: 1,
        frames_per_clip: 20,
        frame_size: [96, 128],
        external_negatives: 12,
        external_positives: 12,
        seed: 11,
    }
}

fn config(head: &str, run_dir: &str, max_epochs: usize, sources: bool) -> String {
    let mut s = format!(
        r#"seed = 3
run_dir = "{run_dir}"
[dataset]
manifest = "manifest.csv"
[model]
head = "{head}"
[preprocess]
target_size = [64, 64]
[train]
initial_lr = 1e-3
max_epochs = {max_epochs}
[augment]
enabled = false
"#
    );
    if sources {
        s.push_str(
            r#"
[[sources]]
name = "general"
role = "external_negative"
path_glob = "external/negative/*.png"
draw_count = 5
"#,
        );
    }
    s
}

fn dataset(dir: &Path) {
    let layout = generate(dir, &small_spec()).unwrap();
    prepare_manifest(&layout.frames_root, 4, &dir.join("manifest.csv")).unwrap();
}

fn load(dir: &Path, text: &str) -> RunConfig {
    RunConfig::from_toml(text, &dir.join("run.toml"), dir).unwrap()
}

#[test]
fn gray_to_rgb_layer_receives_gradient() {
    let mut model = build_model::<f64>(&BackboneSpec::tiny(), HeadKind::XFishHmMp, (64, 64), 4).unwrap();
    let x = Plane::from_fn(64, 64, |r, c| ((r * 7 + c * 3) % 11) as f64 / 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    model.zero_grad();
    model.train_example(&x, 1.0, 1.0, &mut rng).unwrap();
    let g = &model.gray_rgb().weight.grad;
    assert_eq!(g.len(), 3);
    assert!(g.iter().all(|v| v.abs() > 0.0), "{g:?}");
}

#[test]
fn training_lowers_loss_and_replays_its_schedule() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let cfg = load(dir.path(), &config("XFishHmMp", "runs/a", 6, false));
    let manifest = load_manifest(&cfg.dataset.manifest).unwrap();
    let samples = manifest_samples(&manifest, Split::Train);
    let (train_set, val_set) = samples.split_at(samples.len() * 3 / 4);
    let mut model = build_model::<f32>(&BackboneSpec::tiny(), cfg.model.head, (64, 64), cfg.seed).unwrap();
    let loader = ImageLoader::new(true);
    let out = dir.path().join("out");
    let ctx = TrainContext {
        preprocess: &cfg.preprocess,
        augment: &cfg.augment,
        loader: &loader,
        out_dir: Some(&out),
        seed: cfg.seed,
    };
    let report = train(&mut model, TrainSource::Plain(train_set), val_set, &cfg.train, &ctx).unwrap();

    assert_eq!(report.epochs.len(), 6);
    let first = report.epochs[0].train_loss;
    let last = report.epochs[4..].iter().map(|e| e.train_loss).sum::<f64>() / 2.0;
    assert!(last < first, "loss {first} -> {last}");
    let recorded: Vec<_> = report.epochs.iter().map(|e| e.action).collect();
    assert_eq!(report.replay_actions(), recorded);

    let best = report.best_checkpoint.as_deref().expect("best checkpoint written");
    let (reloaded, meta) = load_checkpoint::<f32>(best).unwrap();
    let acc = accuracy(&reloaded, val_set, &meta.preprocess, &loader, cfg.train.threshold).unwrap();
    assert!((acc - report.best_val_acc).abs() <= 1e-6, "{acc} vs {}", report.best_val_acc);
}

#[test]
fn run_directory_is_self_describing() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let base = load(dir.path(), &config("XFishMp", "runs/base", 2, false));
    let outcome = run_experiment::<f32>(&base, None).unwrap();
    for name in [
        pipeline::CONFIG_SNAPSHOT,
        pipeline::TRAIN_REPORT,
        pipeline::MODEL_CHECKPOINT,
        pipeline::EVAL_REPORT,
        pipeline::SCORES_CSV,
    ] {
        assert!(outcome.run_dir.join(name).is_file(), "{name} missing");
    }
    let snapshot = RunConfig::load(&outcome.run_dir.join(pipeline::CONFIG_SNAPSHOT)).unwrap();
    assert_eq!(snapshot, base);
    let n_test = manifest_samples(&load_manifest(&base.dataset.manifest).unwrap(), Split::Test).len();
    assert_eq!(outcome.eval.n_scored, n_test);

    let ft = load(dir.path(), &config("XFishMp", "runs/ft", 2, true));
    let tuned = run_experiment::<f32>(&ft, Some(&outcome.checkpoint)).unwrap();
    assert!((tuned.train.initial_lr - 1e-4).abs() < 1e-15);
    assert!(tuned.train.epochs.iter().all(|e| e.composition.is_some()));

    let wrong = load(dir.path(), &config("XFishHmMp", "runs/wrong", 2, true));
    assert!(matches!(
        run_experiment::<f32>(&wrong, Some(&outcome.checkpoint)),
        Err(Error::Config(_))
    ));
}

#[test]
fn prepare_with_clahe_writes_a_parallel_tree() {
    let dir = tempfile::tempdir().unwrap();
    let layout = generate(dir.path(), &small_spec()).unwrap();
    let manifest = dir.path().join("m.csv");
    let clahe = weakfish_core::imaging::ClaheParams::default();
    let out = pipeline::prepare(&layout.frames_root, &manifest, 10, Some(&clahe)).unwrap();
    assert_eq!(out.n_frames, layout.n_frames);

    let root = out.clahe_root.unwrap();
    assert_eq!(root, dir.path().join("frames-clahe"));
    let plain = load_manifest(&manifest).unwrap();
    let enhanced = load_manifest(&out.clahe_manifest.unwrap()).unwrap();
    assert_eq!(plain.entries.len(), enhanced.entries.len());
    for (a, b) in plain.entries.iter().zip(&enhanced.entries) {
        assert_eq!((&a.clip_id, a.label, a.split), (&b.clip_id, b.label, b.split));
        assert!(b.path.starts_with(&root) && b.path.is_file(), "{}", b.path.display());
    }
}

#[test]
fn prepare_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let layout = generate(dir.path(), &small_spec()).unwrap();
    let manifest = dir.path().join("m.csv");
    let first = pipeline::prepare(&layout.frames_root, &manifest, 10, None).unwrap();
    let a = load_manifest(&manifest).unwrap();
    let second = pipeline::prepare(&layout.frames_root, &manifest, 10, None).unwrap();
    let b = load_manifest(&manifest).unwrap();
    assert_eq!(first, second);
    assert_eq!(a.entries, b.entries);
    assert_eq!(a.protocol_params, b.protocol_params);
}
