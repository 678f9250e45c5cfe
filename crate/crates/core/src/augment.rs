//! Seeded training-time augmentation of padded grayscale images.
//!
//! Chain, in order: fit to the network input, rotate, horizontal flip,
//! independent row/column downscale followed by zero padding back to the input
//! shape, random perspective warp, additive Gaussian noise clipped to
//! `[0, 255]`, and per-image min-max normalization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::imaging::{fit_to, normalize_unit, pad_to, resize_to, Plane};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Rotation range in degrees.
    pub rotation_deg: [f64; 2],
    pub hflip_prob: f64,
    /// Independent scale range for rows and columns.
    pub axis_scale_range: [f64; 2],
    /// Maximum corner displacement as a fraction of the image side.
    pub perspective_jitter_fraction: f64,
    pub noise_sigma_range: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            rotation_deg: [-20.0, 20.0],
            hflip_prob: 0.5,
            axis_scale_range: [0.9, 1.0],
            perspective_jitter_fraction: 0.05,
            noise_sigma_range: [0.0, 8.0],
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut range = |name: &str, [lo, hi]: [f64; 2]| {
            if !(lo <= hi) {
                errs.push(format!("augment.{name}: low {lo} must be <= high {hi}"));
            }
        };
        range("rotation_deg", self.rotation_deg);
        range("axis_scale_range", self.axis_scale_range);
        range("noise_sigma_range", self.noise_sigma_range);
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            errs.push(format!("augment.hflip_prob: {} not in [0, 1]", self.hflip_prob));
        }
        if !(self.axis_scale_range[0] > 0.0) {
            errs.push("augment.axis_scale_range: scales must be > 0".into());
        }
        if !(0.0..0.5).contains(&self.perspective_jitter_fraction) {
            errs.push(format!(
                "augment.perspective_jitter_fraction: {} not in [0, 0.5)",
                self.perspective_jitter_fraction
            ));
        }
        if !(self.noise_sigma_range[0] >= 0.0) {
            errs.push("augment.noise_sigma_range: sigma must be >= 0".into());
        }
        errs
    }
}

/// One concrete set of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentDraw {
    pub rotation_deg: f64,
    pub flip: bool,
    pub scale_rows: f64,
    pub scale_cols: f64,
    /// Displacement `[dx, dy]` of the corners (top-left, top-right,
    /// bottom-right, bottom-left) as fractions of the image width/height.
    pub corner_offsets: [[f64; 2]; 4],
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl AugmentDraw {
    /// Every transform at its identity setting.
    pub fn identity() -> Self {
        AugmentDraw {
            rotation_deg: 0.0,
            flip: false,
            scale_rows: 1.0,
            scale_cols: 1.0,
            corner_offsets: [[0.0; 2]; 4],
            noise_sigma: 0.0,
            noise_seed: 0,
        }
    }
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

pub fn sample_params(config: &AugmentConfig, seed: u64) -> AugmentDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let j = config.perspective_jitter_fraction;
    let rotation_deg = uniform(&mut rng, config.rotation_deg);
    let flip = rng.random_bool(config.hflip_prob);
    let scale_rows = uniform(&mut rng, config.axis_scale_range);
    let scale_cols = uniform(&mut rng, config.axis_scale_range);
    let mut corner_offsets = [[0.0; 2]; 4];
    for corner in corner_offsets.iter_mut() {
        for v in corner.iter_mut() {
            *v = uniform(&mut rng, [-j, j]);
        }
    }
    let noise_sigma = uniform(&mut rng, config.noise_sigma_range);
    AugmentDraw {
        rotation_deg,
        flip,
        scale_rows,
        scale_cols,
        corner_offsets,
        noise_sigma,
        noise_seed: rng.random(),
    }
}

/// Augment (or, when disabled, just fit and normalize) a padded `[0, 255]`
/// grayscale image into a `target`-shaped `[0, 1]` plane.
pub fn augment<T: Scalar>(
    image: &Plane<T>,
    config: &AugmentConfig,
    target: (usize, usize),
    seed: u64,
) -> crate::Result<Plane<T>> {
    let fitted = fit_to(image, target)?;
    if !config.enabled {
        return Ok(normalize_unit(&fitted));
    }
    let draw = sample_params(config, seed);
    apply_draw(&fitted, &draw)
}

/// Apply a draw to an image already at the network input shape.
pub fn apply_draw<T: Scalar>(image: &Plane<T>, draw: &AugmentDraw) -> crate::Result<Plane<T>> {
    let dims = image.dims();
    let mut img = rotate(image, draw.rotation_deg);
    if draw.flip {
        img = hflip(&img);
    }
    img = scale_axes(&img, draw.scale_rows, draw.scale_cols)?;
    debug_assert_eq!(img.dims(), dims);
    img = perspective(&img, &draw.corner_offsets);
    add_noise(&mut img, draw.noise_sigma, draw.noise_seed);
    Ok(normalize_unit(&img))
}

/// Rotate about the image centre with bilinear sampling and zero fill.
pub fn rotate<T: Scalar>(img: &Plane<T>, degrees: f64) -> Plane<T> {
    if degrees == 0.0 {
        return img.clone();
    }
    let (h, w) = img.dims();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    Plane::from_fn(h, w, |r, c| {
        let dy = r as f64 - cy;
        let dx = c as f64 - cx;
        let sx = cx + cos * dx + sin * dy;
        let sy = cy - sin * dx + cos * dy;
        img.sample_bilinear(sy, sx)
    })
}

pub fn hflip<T: Scalar>(img: &Plane<T>) -> Plane<T> {
    let w = img.width();
    Plane::from_fn(img.height(), w, |r, c| img.get(r, w - 1 - c))
}

/// Shrink rows and columns independently, then zero-pad back to the original
/// shape.
pub fn scale_axes<T: Scalar>(img: &Plane<T>, rows: f64, cols: f64) -> crate::Result<Plane<T>> {
    let (h, w) = img.dims();
    let nh = ((h as f64 * rows).round() as usize).clamp(1, h);
    let nw = ((w as f64 * cols).round() as usize).clamp(1, w);
    if (nh, nw) == (h, w) {
        return Ok(img.clone());
    }
    pad_to(&resize_to(img, (nh, nw))?, (h, w))
}

/// Homography `H` with `H * [x, y, 1] ~ [u, v, 1]` for four point pairs.
fn homography(from: &[[f64; 2]; 4], to: &[[f64; 2]; 4]) -> Option<[f64; 9]> {
    let mut a = [[0.0f64; 9]; 8];
    for i in 0..4 {
        let [x, y] = from[i];
        let [u, v] = to[i];
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    for col in 0..8 {
        let pivot = (col..8).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        for row in 0..8 {
            if row != col {
                let factor = a[row][col] / a[col][col];
                if factor != 0.0 {
                    for k in col..9 {
                        a[row][k] -= factor * a[col][k];
                    }
                }
            }
        }
    }
    let mut h = [0.0; 9];
    for i in 0..8 {
        h[i] = a[i][8] / a[i][i];
    }
    h[8] = 1.0;
    Some(h)
}

/// Warp so that the image corners move by `offsets` (fractions of the side);
/// sampling is bilinear with zero fill.
pub fn perspective<T: Scalar>(img: &Plane<T>, offsets: &[[f64; 2]; 4]) -> Plane<T> {
    if offsets.iter().flatten().all(|&v| v == 0.0) {
        return img.clone();
    }
    let (h, w) = img.dims();
    let (xm, ym) = (w as f64 - 1.0, h as f64 - 1.0);
    let src = [[0.0, 0.0], [xm, 0.0], [xm, ym], [0.0, ym]];
    let mut dst = src;
    for (d, o) in dst.iter_mut().zip(offsets) {
        d[0] += o[0] * w as f64;
        d[1] += o[1] * h as f64;
    }
    // Map output (destination) pixels back to source coordinates.
    let Some(m) = homography(&dst, &src) else {
        return img.clone();
    };
    Plane::from_fn(h, w, |r, c| {
        let (x, y) = (c as f64, r as f64);
        let z = m[6] * x + m[7] * y + m[8];
        if z.abs() < 1e-12 {
            return T::zero();
        }
        let sx = (m[0] * x + m[1] * y + m[2]) / z;
        let sy = (m[3] * x + m[4] * y + m[5]) / z;
        img.sample_bilinear(sy, sx)
    })
}

/// Add zero-mean Gaussian noise and clip to `[0, 255]`.
pub fn add_noise<T: Scalar>(img: &mut Plane<T>, sigma: f64, seed: u64) {
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in img.data_mut() {
            *v = T::lit((v.as_f64() + normal.sample(&mut rng)).clamp(0.0, 255.0));
        }
    } else {
        for v in img.data_mut() {
            *v = v.max(T::zero()).min(T::lit(255.0));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{pad_border, resize_to};

    fn textured(h: usize, w: usize) -> Plane<f32> {
        Plane::from_fn(h, w, |r, c| {
            (127.0 + 100.0 * ((r as f32 * 0.13).sin() * (c as f32 * 0.07).cos())).round()
        })
    }

    #[test]
    fn disabled_matches_plain_preprocessing() {
        let padded = pad_border(&textured(300, 500), 0.05);
        let out = augment(&padded, &AugmentConfig::disabled(), (64, 64), 9).unwrap();
        let plain = normalize_unit(&resize_to(&padded, (64, 64)).unwrap());
        assert_eq!(out, plain);
    }

    #[test]
    fn identity_draw_matches_plain_path() {
        let img = fit_to(&textured(80, 120), (64, 64)).unwrap();
        let out = apply_draw(&img, &AugmentDraw::identity()).unwrap();
        let plain = normalize_unit(&img);
        for (a, b) in out.data().iter().zip(plain.data()) {
            assert!((a - b).abs() <= 2.0 / 255.0);
        }
    }

    #[test]
    fn noise_is_clipped_to_byte_range() {
        let mut img = Plane::<f64>::filled(32, 32, 254.0);
        add_noise(&mut img, 8.0, 1);
        let (lo, hi) = img.min_max().unwrap();
        assert!(hi <= 255.0 && lo >= 0.0);
        assert!(img.data().iter().any(|&v| v == 255.0));
    }

    #[test]
    fn draws_stay_in_range() {
        let cfg = AugmentConfig::default();
        let mut flips = 0;
        for seed in 0..10_000u64 {
            let d = sample_params(&cfg, seed);
            assert!((-20.0..=20.0).contains(&d.rotation_deg));
            assert!((0.0..=8.0).contains(&d.noise_sigma));
            assert!((0.9..=1.0).contains(&d.scale_rows) && (0.9..=1.0).contains(&d.scale_cols));
            assert!(d.corner_offsets.iter().flatten().all(|v| v.abs() <= 0.05));
            flips += d.flip as u32;
        }
        let rate = flips as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&rate), "{rate}");
        assert_eq!(sample_params(&cfg, 77), sample_params(&cfg, 77));
    }

    #[test]
    fn double_flip_is_identity() {
        let img = textured(13, 17);
        assert_eq!(hflip(&hflip(&img)), img);
    }

    #[test]
    fn output_shape_and_range() {
        for (h, w) in [(40, 200), (300, 30), (64, 64)] {
            let out = augment(&textured(h, w), &AugmentConfig::default(), (64, 64), 3).unwrap();
            assert_eq!(out.dims(), (64, 64));
            assert_eq!(out.min_max(), Some((0.0, 1.0)));
        }
    }

    #[test]
    fn seeds_change_the_output() {
        let img = textured(64, 64);
        let cfg = AugmentConfig::default();
        let mut differ = 0;
        for s in 0..100u64 {
            let a = augment(&img, &cfg, (64, 64), 2 * s).unwrap();
            let b = augment(&img, &cfg, (64, 64), 2 * s + 1).unwrap();
            differ += (a != b) as u32;
        }
        assert!(differ >= 99);
        let cfg_again = augment(&img, &cfg, (64, 64), 5).unwrap();
        assert_eq!(cfg_again, augment(&img, &cfg, (64, 64), 5).unwrap());
    }

    #[test]
    fn homography_recovers_known_translation() {
        let from = [[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]];
        let to = from.map(|[x, y]| [x + 2.0, y - 1.0]);
        let h = homography(&from, &to).unwrap();
        let expect = [1.0, 0.0, 2.0, 0.0, 1.0, -1.0, 0.0, 0.0, 1.0];
        for (a, b) in h.iter().zip(expect) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn quarter_turn_moves_pixels() {
        let mut img = Plane::<f64>::zeros(5, 5);
        img.set(0, 2, 1.0);
        let r = rotate(&img, 90.0);
        // A 90 degree turn carries the top-middle pixel to a side-middle pixel.
        let hot: Vec<_> = (0..25).filter(|i| r.data()[*i] > 0.5).collect();
        assert_eq!(hot.len(), 1);
        assert!(hot[0] == 10 || hot[0] == 14);
    }
}
