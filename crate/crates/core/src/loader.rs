//! Image decoding with an optional in-memory cache, and the two input paths
//! (training with augmentation, evaluation without).

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use image::GrayImage;

use crate::augment::{augment, AugmentConfig};
use crate::error::Result;
use crate::imaging::{load_gray, padded_plane, preprocess, Plane, PreprocessParams};
use crate::scalar::Scalar;

/// Decodes frames as 8-bit grayscale, optionally keeping every decoded image.
#[derive(Debug, Default)]
pub struct ImageLoader {
    cache: Option<Mutex<HashMap<PathBuf, Arc<GrayImage>>>>,
}

impl ImageLoader {
    pub fn new(cache: bool) -> Self {
        ImageLoader {
            cache: cache.then(Default::default),
        }
    }

    pub fn load(&self, path: &Path) -> Result<Arc<GrayImage>> {
        let Some(cache) = &self.cache else {
            return load_gray(path).map(Arc::new);
        };
        if let Some(img) = cache.lock().expect("cache lock").get(path) {
            return Ok(Arc::clone(img));
        }
        let img = Arc::new(load_gray(path)?);
        cache
            .lock()
            .expect("cache lock")
            .insert(path.to_path_buf(), Arc::clone(&img));
        Ok(img)
    }

    pub fn cached(&self) -> usize {
        self.cache
            .as_ref()
            .map_or(0, |c| c.lock().expect("cache lock").len())
    }

    /// Deterministic network input for evaluation and validation.
    pub fn eval_input<T: Scalar>(&self, path: &Path, params: &PreprocessParams) -> Result<Plane<T>> {
        preprocess(&*self.load(path)?, params)
    }

    /// Augmented network input for training.
    pub fn train_input<T: Scalar>(
        &self,
        path: &Path,
        params: &PreprocessParams,
        augmentation: &AugmentConfig,
        seed: u64,
    ) -> Result<Plane<T>> {
        let padded = padded_plane(&*self.load(path)?, params);
        augment(&padded, augmentation, params.target(), seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Luma;

    #[test]
    fn cache_returns_identical_images() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        GrayImage::from_fn(40, 30, |x, y| Luma([(x * 5 + y) as u8]))
            .save(&path)
            .unwrap();
        let loader = ImageLoader::new(true);
        let a = loader.load(&path).unwrap();
        std::fs::remove_file(&path).unwrap();
        let b = loader.load(&path).unwrap();
        assert_eq!(a, b);
        assert_eq!(loader.cached(), 1);
        assert!(ImageLoader::new(false).load(&path).is_err());
    }

    #[test]
    fn disabled_augmentation_matches_eval_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        GrayImage::from_fn(90, 60, |x, y| Luma([((x * 3) ^ y) as u8]))
            .save(&path)
            .unwrap();
        let params = PreprocessParams {
            pad_fraction: 0.05,
            target_size: [64, 64],
        };
        let loader = ImageLoader::new(false);
        let e: Plane<f64> = loader.eval_input(&path, &params).unwrap();
        let t: Plane<f64> = loader
            .train_input(&path, &params, &AugmentConfig::disabled(), 7)
            .unwrap();
        assert_eq!(e, t);
    }
}
