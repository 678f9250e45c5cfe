//! Deterministic image preprocessing.
//!
//! Float images are [`Plane`]s: single-channel, row-major, values nominally in
//! `[0, 255]` until [`normalize_unit`] maps them to `[0, 1]`.

mod clahe;
mod lab;

use std::path::Path;

use image::{DynamicImage, GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use clahe::{clahe, clahe_color, clip_histogram, tile_luts, ClaheParams, ClippedHistogram};
pub use lab::{lab_to_rgb, rgb_to_lab, Lab};

/// Single-channel row-major image of scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Plane<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::zero())
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Plane {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::arg(format!(
                "plane {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Plane {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Plane {
            height,
            width,
            data,
        }
    }

    pub fn from_gray(img: &GrayImage) -> Self {
        Plane {
            height: img.height() as usize,
            width: img.width() as usize,
            data: img.as_raw().iter().map(|&v| T::lit(v as f64)).collect(),
        }
    }

    /// Round and saturate to 8 bits after multiplying by `scale`.
    pub fn to_gray_image(&self, scale: f64) -> GrayImage {
        let buf = self
            .data
            .iter()
            .map(|v| (v.as_f64() * scale).round().clamp(0.0, 255.0) as u8)
            .collect();
        GrayImage::from_raw(self.width as u32, self.height as u32, buf)
            .expect("buffer matches dimensions")
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.width + c] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Plane {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Plane<U> {
        Plane {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// `(min, max)`; `None` for an empty plane.
    pub fn min_max(&self) -> Option<(T, T)> {
        let first = *self.data.first()?;
        Some(
            self.data
                .iter()
                .fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v))),
        )
    }

    /// Bilinear sample at a fractional pixel position, reading zeros outside
    /// the image.
    pub fn sample_bilinear(&self, y: f64, x: f64) -> T {
        let y0 = y.floor();
        let x0 = x.floor();
        let fy = y - y0;
        let fx = x - x0;
        let (y0, x0) = (y0 as i64, x0 as i64);
        let px = |r: i64, c: i64| -> f64 {
            if r < 0 || c < 0 || r >= self.height as i64 || c >= self.width as i64 {
                0.0
            } else {
                self.get(r as usize, c as usize).as_f64()
            }
        };
        let top = px(y0, x0) * (1.0 - fx) + px(y0, x0 + 1) * fx;
        let bottom = px(y0 + 1, x0) * (1.0 - fx) + px(y0 + 1, x0 + 1) * fx;
        T::lit(top * (1.0 - fy) + bottom * fy)
    }
}

/// Geometry of the float preprocessing path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessParams {
    pub pad_fraction: f64,
    /// `[rows, cols]` of the network input.
    pub target_size: [usize; 2],
}

impl Default for PreprocessParams {
    fn default() -> Self {
        PreprocessParams {
            pad_fraction: 0.05,
            target_size: [512, 512],
        }
    }
}

impl PreprocessParams {
    pub fn target(&self) -> (usize, usize) {
        (self.target_size[0], self.target_size[1])
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.pad_fraction >= 0.0) {
            errs.push(format!(
                "preprocess.pad_fraction: must be >= 0, got {}",
                self.pad_fraction
            ));
        }
        if self.target_size.contains(&0) {
            errs.push("preprocess.target_size: dimensions must be > 0".into());
        }
        errs
    }
}

/// ITU-R BT.601 luma of an 8-bit RGB image, rounded to the nearest level.
pub fn to_grayscale(rgb: &RgbImage) -> GrayImage {
    let buf = rgb
        .pixels()
        .map(|p| luma_601(p.0[0], p.0[1], p.0[2]))
        .collect();
    GrayImage::from_raw(rgb.width(), rgb.height(), buf).expect("same dimensions")
}

/// [`to_grayscale`] over an interleaved `height x width x channels` buffer.
pub fn to_grayscale_interleaved(
    height: usize,
    width: usize,
    channels: usize,
    data: &[u8],
) -> Result<GrayImage> {
    if channels != 3 {
        return Err(Error::arg(format!("expected 3 channels, got {channels}")));
    }
    if data.len() != height * width * 3 {
        return Err(Error::arg(format!(
            "buffer of {} bytes does not match {height}x{width}x3",
            data.len()
        )));
    }
    let rgb = RgbImage::from_raw(width as u32, height as u32, data.to_vec())
        .ok_or_else(|| Error::arg("image dimensions overflow"))?;
    Ok(to_grayscale(&rgb))
}

#[inline]
fn luma_601(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
        .round()
        .clamp(0.0, 255.0) as u8
}

/// Decode any supported file into an 8-bit grayscale image.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(match img {
        DynamicImage::ImageLuma8(g) => g,
        other => to_grayscale(&other.to_rgb8()),
    })
}

/// CLAHE-enhance one image file: gray images directly, colour images on their
/// CIELAB lightness. The result is written as PNG.
pub fn clahe_file(src: &Path, dst: &Path, params: &ClaheParams) -> Result<()> {
    let img = image::open(src).map_err(|source| Error::Image {
        path: src.to_path_buf(),
        source,
    })?;
    let out = match img {
        DynamicImage::ImageLuma8(g) => DynamicImage::ImageLuma8(clahe(&g, params)?),
        other => DynamicImage::ImageRgb8(clahe_color(&other.to_rgb8(), params)?),
    };
    if let Some(parent) = dst.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    out.save_with_format(dst, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: dst.to_path_buf(),
            source,
        })
}

/// Border width added on each side of an axis of length `dim`.
pub fn border_size(dim: usize, pad_fraction: f64) -> usize {
    (pad_fraction * dim as f64).floor() as usize
}

/// Zero border of `floor(pad_fraction * dim)` pixels on each side of each axis.
pub fn pad_border<T: Scalar>(img: &Plane<T>, pad_fraction: f64) -> Plane<T> {
    let pr = border_size(img.height, pad_fraction);
    let pc = border_size(img.width, pad_fraction);
    let mut out = Plane::zeros(img.height + 2 * pr, img.width + 2 * pc);
    for r in 0..img.height {
        let src = &img.data[r * img.width..(r + 1) * img.width];
        let start = (r + pr) * out.width + pc;
        out.data[start..start + img.width].copy_from_slice(src);
    }
    out
}

/// Remove `rows` / `cols` pixels from each side.
pub fn crop_border<T: Scalar>(img: &Plane<T>, rows: usize, cols: usize) -> Result<Plane<T>> {
    if 2 * rows > img.height || 2 * cols > img.width {
        return Err(Error::arg("crop border larger than image"));
    }
    Ok(Plane::from_fn(
        img.height - 2 * rows,
        img.width - 2 * cols,
        |r, c| img.get(r + rows, c + cols),
    ))
}

/// Bilinear resampling to exactly `target` (rows, cols), pixel-centre aligned.
pub fn resize_to<T: Scalar>(img: &Plane<T>, target: (usize, usize)) -> Result<Plane<T>> {
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::arg("resize target must be non-empty"));
    }
    if img.height == 0 || img.width == 0 {
        return Err(Error::arg("cannot resize an empty image"));
    }
    if (th, tw) == img.dims() {
        return Ok(img.clone());
    }
    let sy = img.height as f64 / th as f64;
    let sx = img.width as f64 / tw as f64;
    let clamp_coord = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64);
    let cols: Vec<(usize, usize, f64)> = (0..tw)
        .map(|c| {
            let x = clamp_coord((c as f64 + 0.5) * sx - 0.5, img.width);
            let x0 = x.floor() as usize;
            (x0, (x0 + 1).min(img.width - 1), x - x0 as f64)
        })
        .collect();
    let mut out = Vec::with_capacity(th * tw);
    for r in 0..th {
        let y = clamp_coord((r as f64 + 0.5) * sy - 0.5, img.height);
        let y0 = y.floor() as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let fy = y - y0 as f64;
        for &(x0, x1, fx) in &cols {
            let top = img.get(y0, x0).as_f64() * (1.0 - fx) + img.get(y0, x1).as_f64() * fx;
            let bot = img.get(y1, x0).as_f64() * (1.0 - fx) + img.get(y1, x1).as_f64() * fx;
            out.push(T::lit(top * (1.0 - fy) + bot * fy));
        }
    }
    Plane::from_vec(th, tw, out)
}

/// Centre `img` on a zero canvas of `target` (rows, cols).
pub fn pad_to<T: Scalar>(img: &Plane<T>, target: (usize, usize)) -> Result<Plane<T>> {
    let (th, tw) = target;
    if img.height > th || img.width > tw {
        return Err(Error::arg(format!(
            "cannot pad {}x{} into {th}x{tw}",
            img.height, img.width
        )));
    }
    let (r0, c0) = ((th - img.height) / 2, (tw - img.width) / 2);
    let mut out = Plane::zeros(th, tw);
    for r in 0..img.height {
        let start = (r + r0) * tw + c0;
        out.data[start..start + img.width]
            .copy_from_slice(&img.data[r * img.width..(r + 1) * img.width]);
    }
    Ok(out)
}

/// Zero-pad images that already fit inside `target`, downsize everything else.
pub fn fit_to<T: Scalar>(img: &Plane<T>, target: (usize, usize)) -> Result<Plane<T>> {
    if img.height <= target.0 && img.width <= target.1 {
        pad_to(img, target)
    } else {
        resize_to(img, target)
    }
}

/// Per-image min-max scaling to `[0, 1]`. Constant images map to all zeros.
pub fn normalize_unit<T: Scalar>(img: &Plane<T>) -> Plane<T> {
    match img.min_max() {
        Some((lo, hi)) if hi > lo => {
            let span = hi - lo;
            img.map(|v| (v - lo) / span)
        }
        _ => Plane::zeros(img.height, img.width),
    }
}

/// Gray `[0,255]` image to padded float plane: the cached, seed-independent
/// part of both the training and validation paths.
pub fn padded_plane<T: Scalar>(gray: &GrayImage, params: &PreprocessParams) -> Plane<T> {
    pad_border(&Plane::from_gray(gray), params.pad_fraction)
}

/// Validation / inference path on an already padded plane: fit to the
/// network input and normalize.
pub fn finish_preprocess<T: Scalar>(padded: &Plane<T>, params: &PreprocessParams) -> Result<Plane<T>> {
    Ok(normalize_unit(&fit_to(padded, params.target())?))
}

/// Full deterministic preprocessing: pad border, fit to target, normalize.
pub fn preprocess<T: Scalar>(gray: &GrayImage, params: &PreprocessParams) -> Result<Plane<T>> {
    finish_preprocess(&padded_plane(gray, params), params)
}

/// Single gray level as an RGB triple (used by overlays and tests).
pub fn gray_to_rgb_image(gray: &GrayImage) -> RgbImage {
    RgbImage::from_fn(gray.width(), gray.height(), |x, y| {
        let Luma([v]) = *gray.get_pixel(x, y);
        image::Rgb([v, v, v])
    })
}
