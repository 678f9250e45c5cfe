//! Contrast-limited adaptive histogram equalization.
//!
//! Follows the tile convention of OpenCV's `createCLAHE`: the image is split
//! into `grid_rows x grid_cols` tiles (after reflect-101 extension when the
//! size is not divisible), each tile gets a clipped-histogram equalization
//! lookup table, and every pixel blends the tables of the four nearest tile
//! centres bilinearly. Pixels outside the outermost centres clamp to the edge
//! tiles.

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::lab::{lab_to_rgb, rgb_to_lab, Lab};
use crate::error::{Error, Result};

const BINS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClaheParams {
    pub clip_limit: f64,
    pub grid_cols: usize,
    pub grid_rows: usize,
}

impl Default for ClaheParams {
    fn default() -> Self {
        ClaheParams {
            clip_limit: 2.0,
            grid_cols: 16,
            grid_rows: 8,
        }
    }
}

impl ClaheParams {
    fn check(&self, height: usize, width: usize) -> Result<()> {
        if !(self.clip_limit > 0.0) {
            return Err(Error::arg(format!(
                "clip_limit must be > 0, got {}",
                self.clip_limit
            )));
        }
        if self.grid_cols == 0 || self.grid_rows == 0 {
            return Err(Error::arg("CLAHE grid dimensions must be >= 1"));
        }
        if height < self.grid_rows || width < self.grid_cols {
            return Err(Error::arg(format!(
                "{height}x{width} image is smaller than the {}x{} tile grid",
                self.grid_rows, self.grid_cols
            )));
        }
        Ok(())
    }

    /// Per-bin pixel count cap for a tile of `tile_pixels` pixels.
    pub fn clip_threshold(&self, tile_pixels: usize) -> u32 {
        let t = (self.clip_limit * tile_pixels as f64 / BINS as f64).floor();
        t.clamp(1.0, u32::MAX as f64) as u32
    }
}

/// Histogram after clipping, with the bookkeeping of the redistribution.
#[derive(Debug, Clone)]
pub struct ClippedHistogram {
    pub bins: [u32; BINS],
    pub threshold: u32,
    pub excess: u32,
    /// Uniform amount added to every bin.
    pub quotient: u32,
}

/// Cap every bin at `threshold` and hand the excess back uniformly: each bin
/// receives `excess / 256`, and the `excess % 256` leftover counts go one each
/// to evenly spaced bins.
pub fn clip_histogram(hist: &[u32; BINS], threshold: u32) -> ClippedHistogram {
    let mut bins = *hist;
    let mut excess = 0u32;
    for b in bins.iter_mut() {
        if *b > threshold {
            excess += *b - threshold;
            *b = threshold;
        }
    }
    let quotient = excess / BINS as u32;
    let mut residual = (excess % BINS as u32) as usize;
    for b in bins.iter_mut() {
        *b += quotient;
    }
    if residual > 0 {
        let step = (BINS / residual).max(1);
        let mut i = 0;
        while i < BINS && residual > 0 {
            bins[i] += 1;
            residual -= 1;
            i += step;
        }
    }
    ClippedHistogram {
        bins,
        threshold,
        excess,
        quotient,
    }
}

fn reflect101(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * n - 2;
    let r = i % period;
    if r >= n {
        period - r
    } else {
        r
    }
}

struct TileGrid {
    tile_h: usize,
    tile_w: usize,
    rows: usize,
    cols: usize,
}

impl TileGrid {
    fn new(height: usize, width: usize, p: &ClaheParams) -> Self {
        TileGrid {
            tile_h: height.div_ceil(p.grid_rows),
            tile_w: width.div_ceil(p.grid_cols),
            rows: p.grid_rows,
            cols: p.grid_cols,
        }
    }
}

/// One 256-entry lookup table per tile, row-major over the tile grid.
pub fn tile_luts(img: &GrayImage, params: &ClaheParams) -> Result<Vec<[u8; BINS]>> {
    let (h, w) = (img.height() as usize, img.width() as usize);
    params.check(h, w)?;
    let grid = TileGrid::new(h, w, params);
    Ok(compute_luts(img, params, &grid))
}

fn compute_luts(img: &GrayImage, params: &ClaheParams, grid: &TileGrid) -> Vec<[u8; BINS]> {
    let (h, w) = (img.height() as usize, img.width() as usize);
    let raw = img.as_raw();
    let tile_pixels = grid.tile_h * grid.tile_w;
    let threshold = params.clip_threshold(tile_pixels);
    let scale = (BINS - 1) as f64 / tile_pixels as f64;
    let mut luts = Vec::with_capacity(grid.rows * grid.cols);
    for ty in 0..grid.rows {
        for tx in 0..grid.cols {
            let mut hist = [0u32; BINS];
            for y in ty * grid.tile_h..(ty + 1) * grid.tile_h {
                let sy = reflect101(y, h);
                for x in tx * grid.tile_w..(tx + 1) * grid.tile_w {
                    hist[raw[sy * w + reflect101(x, w)] as usize] += 1;
                }
            }
            let clipped = clip_histogram(&hist, threshold);
            let mut lut = [0u8; BINS];
            let mut cdf = 0u64;
            for (v, &count) in clipped.bins.iter().enumerate() {
                cdf += count as u64;
                lut[v] = (cdf as f64 * scale).round().clamp(0.0, 255.0) as u8;
            }
            luts.push(lut);
        }
    }
    luts
}

/// Neighbouring tile indices and the weight of the second one along one axis.
fn axis_blend(pos: usize, tile: usize, tiles: usize) -> (usize, usize, f64) {
    let f = pos as f64 / tile as f64 - 0.5;
    let lo = f.floor();
    let frac = f - lo;
    let lo = lo as i64;
    let a = lo.max(0) as usize;
    let b = ((lo + 1).max(0) as usize).min(tiles - 1);
    (a.min(tiles - 1), b, frac)
}

pub fn clahe(img: &GrayImage, params: &ClaheParams) -> Result<GrayImage> {
    let (h, w) = (img.height() as usize, img.width() as usize);
    params.check(h, w)?;
    let grid = TileGrid::new(h, w, params);
    let luts = compute_luts(img, params, &grid);
    let xs: Vec<_> = (0..w).map(|x| axis_blend(x, grid.tile_w, grid.cols)).collect();
    let raw = img.as_raw();
    let mut out = vec![0u8; h * w];
    for y in 0..h {
        let (ty0, ty1, fy) = axis_blend(y, grid.tile_h, grid.rows);
        for (x, &(tx0, tx1, fx)) in xs.iter().enumerate() {
            let v = raw[y * w + x] as usize;
            let l = |ty: usize, tx: usize| luts[ty * grid.cols + tx][v] as f64;
            let top = l(ty0, tx0) * (1.0 - fx) + l(ty0, tx1) * fx;
            let bottom = l(ty1, tx0) * (1.0 - fx) + l(ty1, tx1) * fx;
            out[y * w + x] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(GrayImage::from_raw(w as u32, h as u32, out).expect("dimensions preserved"))
}

/// CLAHE on the CIELAB lightness of an RGB image; `a`/`b` pass through.
pub fn clahe_color(rgb: &RgbImage, params: &ClaheParams) -> Result<RgbImage> {
    let (w, h) = rgb.dimensions();
    params.check(h as usize, w as usize)?;
    let labs: Vec<Lab> = rgb.pixels().map(|p| rgb_to_lab(p.0)).collect();
    let l8: Vec<u8> = labs.iter().map(|lab| lab.l_u8()).collect();
    let l_img = GrayImage::from_raw(w, h, l8).expect("dimensions preserved");
    let enhanced = clahe(&l_img, params)?;
    let buf: Vec<u8> = labs
        .iter()
        .zip(l_img.as_raw().iter().zip(enhanced.as_raw()))
        .flat_map(|(lab, (&before, &after))| lab_to_rgb(lab.shifted_l_u8(before, after)))
        .collect();
    Ok(RgbImage::from_raw(w, h, buf).expect("dimensions preserved"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Luma, Rgb};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_gray(h: u32, w: u32, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| Luma([rng.random()]))
    }

    #[test]
    fn constant_image_stays_constant() {
        for v in [0u8, 17, 128, 255] {
            let img = GrayImage::from_pixel(64, 48, Luma([v]));
            let out = clahe(&img, &ClaheParams::default()).unwrap();
            let first = out.as_raw()[0];
            assert!(out.as_raw().iter().all(|&p| p == first));
        }
    }

    #[test]
    fn luts_are_monotone_and_output_in_range() {
        let img = random_gray(50, 70, 3);
        let p = ClaheParams {
            clip_limit: 2.0,
            grid_cols: 7,
            grid_rows: 3,
        };
        for lut in tile_luts(&img, &p).unwrap() {
            assert!(lut.windows(2).all(|w| w[0] <= w[1]));
        }
        assert_eq!(clahe(&img, &p).unwrap().dimensions(), (70, 50));
    }

    #[test]
    fn clipping_bound_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let mut hist = [0u32; BINS];
            let spikes = rng.random_range(1..6);
            for _ in 0..rng.random_range(0..2000) {
                let bin = if rng.random_bool(0.7) {
                    rng.random_range(0..spikes)
                } else {
                    rng.random_range(0..BINS)
                };
                hist[bin] += 1;
            }
            let total: u32 = hist.iter().sum();
            let threshold = rng.random_range(1..40);
            let c = clip_histogram(&hist, threshold);
            assert_eq!(c.bins.iter().sum::<u32>(), total, "mass preserved");
            for &b in &c.bins {
                assert!(b <= c.threshold + c.quotient + 1);
            }
        }
    }

    #[test]
    fn default_grid_on_full_hd_frame() {
        let img = random_gray(1080, 1920, 5);
        let out = clahe(&img, &ClaheParams::default()).unwrap();
        assert_eq!(out.dimensions(), (1920, 1080));
    }

    #[test]
    fn too_small_and_bad_params_are_rejected() {
        let img = random_gray(4, 20, 1);
        assert!(clahe(&img, &ClaheParams::default()).is_err());
        let bad = ClaheParams {
            clip_limit: 0.0,
            ..Default::default()
        };
        assert!(clahe(&random_gray(64, 64, 1), &bad).is_err());
    }

    #[test]
    fn non_divisible_sizes_are_handled() {
        let img = random_gray(37, 101, 9);
        let out = clahe(&img, &ClaheParams::default()).unwrap();
        assert_eq!(out.dimensions(), (101, 37));
    }

    #[test]
    fn color_clahe_keeps_gray_gray() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rgb = RgbImage::from_fn(64, 32, |_, _| {
            let v: u8 = rng.random();
            Rgb([v, v, v])
        });
        let out = clahe_color(&rgb, &ClaheParams::default()).unwrap();
        for p in out.pixels() {
            let [r, g, b] = p.0;
            let spread = r.max(g).max(b) - r.min(g).min(b);
            assert!(spread <= 1, "{:?}", p.0);
        }
    }

    #[test]
    fn color_clahe_keeps_constant_colour_constant() {
        let rgb = RgbImage::from_pixel(48, 32, Rgb([30, 120, 200]));
        let out = clahe_color(&rgb, &ClaheParams::default()).unwrap();
        let first = *out.get_pixel(0, 0);
        assert!(out.pixels().all(|p| *p == first));
    }
}
