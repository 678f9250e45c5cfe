//! Desk-scale run on generated data: baseline training, then fine-tuning
//! with external-domain draws.
//!
//! ```text
//! cargo run --release -p weakfish-core --example desk -- /tmp/desk
//! ```

use std::path::PathBuf;
use std::time::Instant;

use weakfish_core::config::RunConfig;
use weakfish_core::dataset::prepare_manifest;
use weakfish_core::pipeline::run_experiment;
use weakfish_core::synthetic::{desk_config, generate, SyntheticSpec};

fn main() -> weakfish_core::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "desk".into()));
    let started = Instant::now();
    let layout = generate(&out, &SyntheticSpec::default())?;
    prepare_manifest(&layout.frames_root, 10, &out.join("manifest.csv"))?;
    println!("data ready in {:.1}s", started.elapsed().as_secs_f64());

    let base_cfg = RunConfig::from_toml(&desk_config("XFishHmMp", "manifest.csv", "runs/baseline", false), &out.join("baseline.toml"), &out)?;
    let base = run_experiment::<f32>(&base_cfg, None)?;
    for e in &base.train.epochs {
        println!(
            "epoch {:>2} lr {:.1e} loss {:.4} train {:.3} val {:.3} {:?} ({:.1}s)",
            e.epoch, e.lr, e.train_loss, e.train_acc, e.val_acc, e.action, e.seconds
        );
    }
    println!("baseline: {}\n{}", base.train.stop_reason, base.eval.summary());
    println!("elapsed {:.1}s", started.elapsed().as_secs_f64());

    let ft_cfg = RunConfig::from_toml(&desk_config("XFishHmMp", "manifest.csv", "runs/finetune", true), &out.join("finetune.toml"), &out)?;
    let ft = run_experiment::<f32>(&ft_cfg, Some(&base.checkpoint))?;
    for e in &ft.train.epochs {
        println!(
            "epoch {:>2} lr {:.1e} loss {:.4} train {:.3} val {:.3} {:?} ({:.1}s)",
            e.epoch, e.lr, e.train_loss, e.train_acc, e.val_acc, e.action, e.seconds
        );
    }
    println!("finetune: {}\n{}", ft.train.stop_reason, ft.eval.summary());
    println!("elapsed {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}
