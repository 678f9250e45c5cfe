use std::path::Path;
use std::process::{Command, Output};

use weakfish_core::config::RunConfig;
use weakfish_core::metrics::EvalReport;

fn weakfish(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_weakfish"))
        .args(args)
        .current_dir(cwd)
        .env("WEAKFISH_DETERMINISTIC", "1")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {stdout}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

fn small_dataset(dir: &Path) {
    ok(&weakfish(
        &[
            "make-synthetic",
            "data",
            "--habitats",
            "2",
            "--clips-per-label",
            "1",
            "--frames-per-clip",
            "20",
            "--external",
            "10",
        ],
        dir,
    ));
}

const QUICK_RUN: &str = r#"seed = 5
run_dir = "runs/quick"
[dataset]
manifest = "manifest.csv"
[model]
head = "XFishHmMp"
[preprocess]
target_size = [64, 64]
[train]
initial_lr = 1e-3
max_epochs = 2
[augment]
enabled = false
"#;

fn read_report(path: &Path) -> EvalReport {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn bad_root_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = weakfish(&["prepare", "missing-root", "m.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing-root"));
    assert!(!dir.path().join("m.csv").exists());
}

#[test]
fn missing_checkpoint_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.csv"), "").unwrap();
    for args in [
        &["eval", "nope.json", "m.csv"][..],
        &["bench", "nope.json", "m.csv"][..],
        &["triage", "nope.json", "."][..],
    ] {
        let out = weakfish(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint not found"));
    }
}

#[test]
fn config_errors_are_listed_per_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = QUICK_RUN.replace("max_epochs = 2", "max_epochs = 2\nbatch_size = 0")
        .replace("[64, 64]", "[60, 64]");
    std::fs::write(dir.path().join("bad.toml"), bad).unwrap();
    let out = weakfish(&["train", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train.batch_size"), "{err}");
    assert!(err.contains("preprocess.target_size"), "{err}");
}

#[test]
fn prepare_twice_gives_identical_manifests() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let body = |name: &str| {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        text.lines().filter(|l| !l.contains("created_at")).collect::<Vec<_>>().join("\n")
    };
    ok(&weakfish(&["prepare", "data/frames", "a.csv", "--interval", "5"], dir.path()));
    ok(&weakfish(&["prepare", "data/frames", "b.csv", "--interval", "5"], dir.path()));
    assert_eq!(body("a.csv"), body("b.csv"));
    let listing = ok(&weakfish(&["check-manifest", "a.csv"], dir.path()));
    assert!(listing.contains("interval 5"), "{listing}");
}

#[test]
fn synthetic_configs_load() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let data = dir.path().join("data");
    assert!(data.join("manifest-clahe.csv").is_file());
    assert!(data.join("frames-clahe").is_dir());
    let mut names = Vec::new();
    for entry in std::fs::read_dir(&data).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = RunConfig::load(&path).unwrap();
            assert!(cfg.dataset.manifest.is_file());
            assert!(cfg.domain_sources().unwrap().iter().all(|s| s.pool.len() == 10));
            names.push(path.file_stem().unwrap().to_string_lossy().into_owned());
        }
    }
    names.sort();
    assert_eq!(names.len(), 8, "{names:?}");
    assert!(names.contains(&"xfishhmmp-fd10c-vlq".to_string()));
}

#[test]
fn train_eval_triage_bench_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let data = dir.path().join("data");
    std::fs::write(data.join("quick.toml"), QUICK_RUN).unwrap();

    let summary = ok(&weakfish(&["train", "quick.toml"], &data));
    assert!(summary.contains("AUC"), "{summary}");
    let run = data.join("runs/quick");
    let ckpt = "runs/quick/model.json";

    // Re-evaluating the stored checkpoint reproduces the stored report.
    let table = ok(&weakfish(&["eval", ckpt, "manifest.csv", "--out", "again"], &data));
    assert!(table.contains("FP ") && table.contains("%)"), "{table}");
    let stored = read_report(&run.join("eval.json"));
    let again = read_report(&data.join("again/eval.json"));
    assert_eq!(again.without_timing(), stored.without_timing());
    assert!(data.join("again/roc.svg").is_file());
    assert!(data.join("again/scores.csv").is_file());

    let clip = "frames/habitat01/valid/clip01";
    ok(&weakfish(&["triage", ckpt, clip, "--out", "tri", "--save-overlays"], &data));
    let triage: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(data.join("tri/triage.json")).unwrap()).unwrap();
    assert_eq!(triage["clip_id"], "habitat01/valid/clip01");
    let per_frame = triage["per_frame"].as_array().unwrap();
    assert_eq!(per_frame.len(), 20);
    let max = per_frame.iter().map(|f| f["score"].as_f64().unwrap()).fold(f64::MIN, f64::max);
    assert_eq!(triage["clip_score"].as_f64().unwrap(), max);
    assert_eq!(triage["keep"].as_bool().unwrap(), max >= 0.5);
    assert_eq!(std::fs::read_dir(data.join("tri/overlays")).unwrap().count(), 20);

    let bench = ok(&weakfish(&["bench", ckpt, "manifest.csv", "--limit", "8", "--batch-size", "4"], &data));
    let json: serde_json::Value = serde_json::from_str(bench.lines().last().unwrap()).unwrap();
    assert!(json["images_per_sec"].as_f64().unwrap() > 0.0);
    assert_eq!(json["batch_size"], 4);
    assert_eq!(json["images"], 8);
}
