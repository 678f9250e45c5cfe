//! Desk-scale stand-in data: textured "habitat" clips with and without bright
//! blob fish, plus general-domain negatives and fish-domain positives.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{EMPTY_DIR, FISH_DIR};
use crate::error::{Error, Result};
use crate::multidomain::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub habitats: usize,
    pub clips_per_label: usize,
    pub frames_per_clip: usize,
    /// `[rows, cols]` of every project frame.
    pub frame_size: [usize; 2],
    pub external_negatives: usize,
    pub external_positives: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            habitats: 4,
            clips_per_label: 2,
            frames_per_clip: 32,
            frame_size: [216, 384],
            external_negatives: 200,
            external_positives: 200,
            seed: 2020,
        }
    }
}

impl SyntheticSpec {
    pub fn project_frames(&self) -> usize {
        self.habitats * 2 * self.clips_per_label * self.frames_per_clip
    }
}

/// Where [`generate`] put things.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLayout {
    /// Root of the `<habitat>/{valid,empty}/<clip>/` tree.
    pub frames_root: PathBuf,
    pub negatives_dir: PathBuf,
    pub positives_dir: PathBuf,
    pub n_frames: usize,
}

struct Habitat {
    base: f64,
    amplitude: f64,
    waves: Vec<(f64, f64, f64, f64)>,
    noise: f64,
}

impl Habitat {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..4)
            .map(|_| {
                let angle = rng.random_range(0.0..PI);
                let period = rng.random_range(18.0..70.0);
                (
                    angle.cos() * 2.0 * PI / period,
                    angle.sin() * 2.0 * PI / period,
                    rng.random_range(0.0..2.0 * PI),
                    rng.random_range(0.4..1.0),
                )
            })
            .collect();
        Habitat {
            base: rng.random_range(50.0..140.0),
            amplitude: rng.random_range(12.0..24.0),
            waves,
            noise: rng.random_range(3.0..7.0),
        }
    }

    fn value(&self, y: f64, x: f64, drift: f64) -> f64 {
        let norm: f64 = self.waves.iter().map(|w| w.3).sum();
        let t: f64 = self
            .waves
            .iter()
            .map(|&(ky, kx, phase, weight)| weight * (ky * y + kx * (x + drift) + phase).sin())
            .sum();
        self.base + self.amplitude * t / norm
    }
}

/// Fish-like blob: an ellipse body plus a triangular tail, with soft edges.
#[derive(Debug, Clone, Copy)]
struct Fish {
    cy: f64,
    cx: f64,
    len: f64,
    height: f64,
    angle: f64,
    contrast: f64,
}

impl Fish {
    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Self {
        let len = rng.random_range(26.0..40.0) * scale;
        let margin = len;
        Fish {
            cy: rng.random_range(margin.min(rows as f64 / 2.0)..(rows as f64 - margin).max(rows as f64 / 2.0 + 1.0)),
            cx: rng.random_range(margin.min(cols as f64 / 2.0)..(cols as f64 - margin).max(cols as f64 / 2.0 + 1.0)),
            len,
            height: len * rng.random_range(0.35..0.5),
            angle: rng.random_range(-0.6..0.6) + if rng.random_bool(0.5) { PI } else { 0.0 },
            contrast: rng.random_range(60.0..95.0),
        }
    }

    /// Coverage in `[0, 1]` of pixel `(y, x)`.
    fn coverage(&self, y: f64, x: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        let (a, b) = (self.len / 2.0, self.height / 2.0);
        let body = 1.0 - ((u / a).powi(2) + (v / b).powi(2)).sqrt();
        let body = (body * a / 1.5).clamp(0.0, 1.0);
        let tu = u + a;
        let tail = if tu < 0.0 && tu > -0.45 * self.len {
            let half = -tu * 0.9;
            ((half - v.abs()) / 1.5).clamp(0.0, 1.0)
        } else {
            0.0
        };
        body.max(tail)
    }

    fn moved(&self, rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Self {
        let step = self.len * 0.15;
        let (s, c) = self.angle.sin_cos();
        let keep_in = |v: f64, dim: usize| {
            let margin = self.len.min(dim as f64 / 2.0);
            v.clamp(margin, dim as f64 - margin)
        };
        Fish {
            cx: keep_in(self.cx + c * step + rng.random_range(-2.0..2.0), cols),
            cy: keep_in(self.cy + s * step + rng.random_range(-2.0..2.0), rows),
            angle: self.angle + rng.random_range(-0.08..0.08),
            ..*self
        }
    }
}

fn render(
    rows: usize,
    cols: usize,
    background: impl Fn(f64, f64) -> f64,
    fish: &[Fish],
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> GrayImage {
    let normal = Normal::new(0.0, noise.max(1e-9)).expect("finite sigma");
    GrayImage::from_fn(cols as u32, rows as u32, |x, y| {
        let (yf, xf) = (y as f64, x as f64);
        let mut v = background(yf, xf);
        for f in fish {
            let cov = f.coverage(yf, xf);
            if cov > 0.0 {
                v = v * (1.0 - cov) + (v + f.contrast) * cov;
            }
        }
        v += normal.sample(rng);
        Luma([v.round().clamp(0.0, 255.0) as u8])
    })
}

fn save(img: &GrayImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Write the full synthetic dataset under `out`.
pub fn generate(out: &Path, spec: &SyntheticSpec) -> Result<SyntheticLayout> {
    if spec.habitats == 0 || spec.clips_per_label == 0 || spec.frames_per_clip == 0 {
        return Err(Error::arg("synthetic spec needs at least one habitat, clip and frame"));
    }
    let [rows, cols] = spec.frame_size;
    if rows < 64 || cols < 64 {
        return Err(Error::arg("synthetic frames must be at least 64x64"));
    }
    let frames_root = out.join("frames");
    let mut n_frames = 0;
    for h in 0..spec.habitats {
        let mut hrng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 100, h as u64));
        let habitat = Habitat::random(&mut hrng);
        let habitat_id = format!("habitat{:02}", h + 1);
        for (label_dir, with_fish) in [(FISH_DIR, true), (EMPTY_DIR, false)] {
            for clip in 0..spec.clips_per_label {
                let clip_seed = derive_seed(spec.seed, 200 + h as u64, (clip * 2 + with_fish as usize) as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(clip_seed);
                let n_fish = if with_fish { rng.random_range(1..=2) } else { 0 };
                let mut fish: Vec<Fish> = (0..n_fish).map(|_| Fish::random(&mut rng, rows, cols, 1.0)).collect();
                let drift_speed = rng.random_range(-1.5..1.5);
                let dir = frames_root
                    .join(&habitat_id)
                    .join(label_dir)
                    .join(format!("clip{:02}", clip + 1));
                for k in 0..spec.frames_per_clip {
                    let drift = drift_speed * k as f64;
                    let img = render(rows, cols, |y, x| habitat.value(y, x, drift), &fish, habitat.noise, &mut rng);
                    save(&img, &dir.join(format!("frame_{k:06}.png")))?;
                    n_frames += 1;
                    fish = fish.iter().map(|f| f.moved(&mut rng, rows, cols)).collect();
                }
            }
        }
    }

    let negatives_dir = out.join("external").join("negative");
    for i in 0..spec.external_negatives {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 300, i as u64));
        let img = general_scene(&mut rng);
        save(&img, &negatives_dir.join(format!("neg_{i:04}.png")))?;
    }
    let positives_dir = out.join("external").join("positive");
    for i in 0..spec.external_positives {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 400, i as u64));
        let img = fish_closeup(&mut rng);
        save(&img, &positives_dir.join(format!("pos_{i:04}.png")))?;
    }
    Ok(SyntheticLayout {
        frames_root,
        negatives_dir,
        positives_dir,
        n_frames,
    })
}

/// Fish-free scene: gradients, stripes and rectangles at a random size.
fn general_scene(rng: &mut ChaCha8Rng) -> GrayImage {
    let rows = rng.random_range(120..260);
    let cols = rng.random_range(160..340);
    let g0 = rng.random_range(20.0..200.0);
    let gy = rng.random_range(-0.4..0.4);
    let gx = rng.random_range(-0.4..0.4);
    let period = rng.random_range(8.0..40.0);
    let stripe = rng.random_range(0.0..25.0);
    let rects: Vec<(f64, f64, f64, f64, f64)> = (0..rng.random_range(0..4))
        .map(|_| {
            let h = rng.random_range(10.0..rows as f64 / 2.0);
            let w = rng.random_range(10.0..cols as f64 / 2.0);
            (
                rng.random_range(0.0..rows as f64 - h),
                rng.random_range(0.0..cols as f64 - w),
                h,
                w,
                rng.random_range(-60.0..60.0),
            )
        })
        .collect();
    let background = move |y: f64, x: f64| {
        let mut v = g0 + gy * y + gx * x + stripe * (2.0 * PI * x / period).sin();
        for &(ry, rx, h, w, delta) in &rects {
            if y >= ry && y < ry + h && x >= rx && x < rx + w {
                v += delta;
            }
        }
        v
    };
    render(rows, cols, background, &[], 4.0, rng)
}

/// Large fish on plain water.
fn fish_closeup(rng: &mut ChaCha8Rng) -> GrayImage {
    let rows = rng.random_range(120..240);
    let cols = rng.random_range(160..320);
    let base = rng.random_range(40.0..130.0);
    let gy = rng.random_range(-0.2..0.2);
    let scale = rng.random_range(1.2..2.2);
    let fish = [Fish::random(rng, rows, cols, scale)];
    render(rows, cols, move |y, _| base + gy * y, &fish, 5.0, rng)
}

/// Desk-scale run configuration for the synthetic layout, with the external
/// sources included when `with_sources` is set. Paths are relative to the
/// dataset directory.
pub fn desk_config(head: &str, manifest: &str, run_dir: &str, with_sources: bool) -> String {
    let mut s = format!(
        r#"seed = 7
run_dir = "{run_dir}"

[dataset]
manifest = "{manifest}"
train_fraction = 0.8
external_validation = true

[model]
head = "{head}"
backbone = "tiny"

[preprocess]
pad_fraction = 0.05
target_size = [256, 256]

[train]
batch_size = 4
initial_lr = 1e-3
lr_patience = 10
restart_patience = 32
max_restarts = 2
max_epochs = 150

[augment]
enabled = true
rotation_deg = [-5.0, 5.0]
axis_scale_range = [0.95, 1.0]
perspective_jitter_fraction = 0.02
noise_sigma_range = [0.0, 4.0]

[eval]
threshold = 0.5
batch_size = 8
"#
    );
    if with_sources {
        s.push_str(
            r#"
[[sources]]
name = "general"
role = "external_negative"
path_glob = "external/negative/*.png"
draw_count = 40

[[sources]]
name = "fishdomain"
role = "external_positive"
path_glob = "external/positive/*.png"
draw_count = 40
"#,
        );
    }
    s
}

/// The experiment grid on the synthetic layout: both pooled heads, trained on
/// plain and CLAHE-enhanced frames, each as a baseline and as a fine-tuning
/// run with external draws. Returns `(name, config text)` pairs.
pub fn desk_experiments(manifest: &str, clahe_manifest: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for head in ["XFishMp", "XFishHmMp"] {
        for (data, m) in [("fd10", manifest), ("fd10c", clahe_manifest)] {
            for vlq in [false, true] {
                let name = format!("{}-{data}{}", head.to_lowercase(), if vlq { "-vlq" } else { "" });
                let text = desk_config(head, m, &format!("runs/{name}"), vlq);
                out.push((name, text));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fish_coverage_is_local() {
        let f = Fish {
            cy: 50.0,
            cx: 50.0,
            len: 30.0,
            height: 12.0,
            angle: 0.0,
            contrast: 80.0,
        };
        assert_eq!(f.coverage(50.0, 50.0), 1.0);
        assert_eq!(f.coverage(50.0, 90.0), 0.0);
        assert_eq!(f.coverage(5.0, 50.0), 0.0);
    }

    #[test]
    fn small_dataset_layout_and_determinism() {
        let spec = SyntheticSpec {
            habitats: 2,
            clips_per_label: 1,
            frames_per_clip: 3,
            frame_size: [64, 96],
            external_negatives: 2,
            external_positives: 2,
            seed: 1,
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let la = generate(a.path(), &spec).unwrap();
        generate(b.path(), &spec).unwrap();
        assert_eq!(la.n_frames, spec.project_frames());
        let f = "frames/habitat01/valid/clip01/frame_000002.png";
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        assert!(a.path().join("frames/habitat02/empty/clip01/frame_000000.png").is_file());
        assert!(a.path().join("external/positive/pos_0001.png").is_file());
    }

    #[test]
    fn desk_config_parses() {
        for sources in [false, true] {
            let text = desk_config("XFishHmMp", "manifest.csv", "runs/x", sources);
            let cfg = crate::config::RunConfig::from_toml(&text, Path::new("c"), Path::new("/d")).unwrap();
            assert_eq!(cfg.sources.len(), if sources { 2 } else { 0 });
        }
        let grid = desk_experiments("m.csv", "m-clahe.csv");
        assert_eq!(grid.len(), 8);
        for (name, text) in &grid {
            let cfg = crate::config::RunConfig::from_toml(text, Path::new("c"), Path::new("/d")).unwrap();
            assert_eq!(cfg.run_dir, Path::new("/d/runs").join(name));
        }
    }
}
