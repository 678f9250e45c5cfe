//! Heatmap localization and empty-frame/clip triage.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use image::{GrayImage, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{resize_to, Plane, PreprocessParams};
use crate::loader::ImageLoader;
use crate::model::{HeadKind, HeatMap, Model};
use crate::scalar::Scalar;

/// Colour the heatmap is rendered in.
const HEAT_COLOUR: [f64; 3] = [255.0, 0.0, 0.0];

pub fn heatmap<T: Scalar>(model: &Model<T>, input: &Plane<T>) -> Result<HeatMap<T>> {
    if model.head() != HeadKind::XFishHm {
        return Err(Error::WrongVariant {
            expected: HeadKind::XFishHm.name(),
            found: model.head().name(),
        });
    }
    model.heatmap(input)
}

/// Pixel-centre aligned bilinear upscaling, clamped to `[0, 1]`.
pub fn upscale_heatmap<T: Scalar>(h: &HeatMap<T>, target: (usize, usize)) -> Result<Plane<T>> {
    let up = resize_to(h.plane(), target)?;
    Ok(up.map(|v| v.max(T::zero()).min(T::one())))
}

/// Blend the heatmap in red over a grayscale image: each pixel moves towards
/// red by `alpha * heat`.
pub fn overlay<T: Scalar>(gray: &GrayImage, heat: &Plane<T>, alpha: f64) -> Result<RgbImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::arg(format!("overlay alpha must be in [0, 1], got {alpha}")));
    }
    let (w, h) = gray.dimensions();
    if heat.dims() != (h as usize, w as usize) {
        return Err(Error::arg(format!(
            "heatmap is {}x{} but the image is {h}x{w}",
            heat.height(),
            heat.width()
        )));
    }
    Ok(RgbImage::from_fn(w, h, |x, y| {
        let base = gray.get_pixel(x, y).0[0];
        let weight = alpha * heat.get(y as usize, x as usize).as_f64();
        if weight <= 0.0 {
            return Rgb([base; 3]);
        }
        let mix = |c: f64| (base as f64 * (1.0 - weight) + c * weight).round().clamp(0.0, 255.0) as u8;
        Rgb(HEAT_COLOUR.map(mix))
    }))
}

/// Connected (4-neighbour) group of heatmap cells at or above a threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub cells: usize,
    /// Inclusive cell bounds `[row0, col0, row1, col1]`.
    pub cell_bbox: [usize; 4],
    /// Half-open pixel bounds `[y0, x0, y1, x1]` in network input coordinates.
    pub pixel_bbox: [usize; 4],
    pub peak: f64,
}

/// Fish regions of a heatmap; `stride` maps cells back to input pixels.
pub fn heat_regions<T: Scalar>(h: &HeatMap<T>, cell_threshold: f64, stride: usize) -> Vec<Region> {
    let (rows, cols) = h.dims();
    let plane = h.plane();
    let hot = |r: usize, c: usize| plane.get(r, c).as_f64() >= cell_threshold;
    let mut seen = vec![false; rows * cols];
    let mut regions = Vec::new();
    for r0 in 0..rows {
        for c0 in 0..cols {
            if seen[r0 * cols + c0] || !hot(r0, c0) {
                continue;
            }
            seen[r0 * cols + c0] = true;
            let mut queue = VecDeque::from([(r0, c0)]);
            let mut bbox = [r0, c0, r0, c0];
            let mut cells = 0;
            let mut peak = f64::NEG_INFINITY;
            while let Some((r, c)) = queue.pop_front() {
                cells += 1;
                peak = peak.max(plane.get(r, c).as_f64());
                bbox = [bbox[0].min(r), bbox[1].min(c), bbox[2].max(r), bbox[3].max(c)];
                let neighbours = [
                    (r.wrapping_sub(1), c),
                    (r + 1, c),
                    (r, c.wrapping_sub(1)),
                    (r, c + 1),
                ];
                for (nr, nc) in neighbours {
                    if nr < rows && nc < cols && !seen[nr * cols + nc] && hot(nr, nc) {
                        seen[nr * cols + nc] = true;
                        queue.push_back((nr, nc));
                    }
                }
            }
            regions.push(Region {
                cells,
                cell_bbox: bbox,
                pixel_bbox: [
                    bbox[0] * stride,
                    bbox[1] * stride,
                    (bbox[2] + 1) * stride,
                    (bbox[3] + 1) * stride,
                ],
                peak,
            });
        }
    }
    regions
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub index: usize,
    pub path: PathBuf,
    pub score: f64,
    /// `score >= threshold`.
    pub fish: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFailure {
    pub index: usize,
    pub path: PathBuf,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageResult {
    pub clip_id: String,
    pub keep: bool,
    /// Maximum frame score; `None` when no frame could be scored.
    pub clip_score: Option<f64>,
    pub threshold: f64,
    pub per_frame: Vec<FrameScore>,
    pub failures: Vec<FrameFailure>,
}

/// Clip score (maximum frame score) and the keep decision.
pub fn aggregate(scores: &[f64], threshold: f64) -> (Option<f64>, bool) {
    let clip = scores.iter().copied().reduce(f64::max);
    (clip, clip.is_some_and(|s| s >= threshold))
}

/// Score every frame of a clip and decide whether the clip holds fish.
/// Frames that cannot be decoded are skipped and listed.
pub fn triage<T: Scalar>(
    model: &Model<T>,
    clip_id: &str,
    frames: &[PathBuf],
    preprocess: &PreprocessParams,
    loader: &ImageLoader,
    threshold: f64,
) -> Result<TriageResult> {
    if frames.is_empty() {
        return Err(Error::arg(format!("clip `{clip_id}` has no frames")));
    }
    let mut per_frame = Vec::with_capacity(frames.len());
    let mut failures = Vec::new();
    for (index, path) in frames.iter().enumerate() {
        match score_frame(model, path, preprocess, loader) {
            Ok(score) => per_frame.push(FrameScore {
                index,
                path: path.clone(),
                score,
                fish: score >= threshold,
            }),
            Err(e @ (Error::Image { .. } | Error::Io { .. })) => failures.push(FrameFailure {
                index,
                path: path.clone(),
                error: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    let scores: Vec<f64> = per_frame.iter().map(|f| f.score).collect();
    let (clip_score, keep) = aggregate(&scores, threshold);
    Ok(TriageResult {
        clip_id: clip_id.to_string(),
        keep,
        clip_score,
        threshold,
        per_frame,
        failures,
    })
}

fn score_frame<T: Scalar>(
    model: &Model<T>,
    path: &Path,
    preprocess: &PreprocessParams,
    loader: &ImageLoader,
) -> Result<f64> {
    let x = loader.eval_input::<T>(path, preprocess)?;
    Ok(model.score(&x)?.as_f64())
}
