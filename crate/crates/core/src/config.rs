//! TOML run configuration: one file per experiment.
//!
//! ```toml
//! seed = 7
//! run_dir = "runs/hmmp"
//!
//! [dataset]
//! manifest = "data/manifest.csv"
//!
//! [[sources]]
//! name = "general"
//! role = "external_negative"
//! path_glob = "external/negative/*.png"
//! draw_count = 100
//!
//! [model]
//! head = "XFishHmMp"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::dataset::is_frame_file;
use crate::error::{Error, Result};
use crate::imaging::PreprocessParams;
use crate::model::{BackboneSpec, HeadKind};
use crate::multidomain::{DomainSource, SourceRole};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub run_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub sources: Vec<SourceConfig>,
    pub model: ModelConfig,
    #[serde(default)]
    pub preprocess: PreprocessParams,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub manifest: PathBuf,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Freeze a validation draw from every external source.
    #[serde(default = "default_true")]
    pub external_validation: bool,
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub name: String,
    pub role: SourceRole,
    pub path_glob: String,
    pub draw_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub head: HeadKind,
    #[serde(default = "default_backbone")]
    pub backbone: String,
    /// Block widths of a `tiny` backbone; the standard widths when absent.
    #[serde(default)]
    pub channels: Option<Vec<usize>>,
}

fn default_backbone() -> String {
    "tiny".into()
}

impl ModelConfig {
    pub fn backbone_spec(&self) -> Result<BackboneSpec> {
        match (&self.channels, self.backbone.as_str()) {
            (Some(ch), "tiny") => Ok(BackboneSpec::strided(ch.clone())),
            (Some(_), other) => Err(Error::Config(vec![format!(
                "model.channels only applies to the tiny backbone, not `{other}`"
            )])),
            (None, name) => BackboneSpec::by_name(name),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub threshold: f64,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: 0.5,
            batch_size: 8,
        }
    }
}

impl RunConfig {
    /// Parse, resolve relative paths against `base_dir`, and validate.
    pub fn from_toml(text: &str, origin: &Path, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            Error::Config(vec![format!("{}: {}", origin.display(), e.message())])
        })?;
        cfg.resolve(base_dir);
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml(&text, path, base)
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &Path| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        self.run_dir = join(&self.run_dir);
        self.dataset.manifest = join(&self.dataset.manifest);
        for s in &mut self.sources {
            if !Path::new(&s.path_glob).is_absolute() {
                s.path_glob = base.join(&s.path_glob).to_string_lossy().into_owned();
            }
        }
    }

    /// Every problem with the configuration, one message per field.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let f = self.dataset.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            errs.push(format!("dataset.train_fraction must be in (0, 1), got {f}"));
        }
        let mut names = HashSet::new();
        for (i, s) in self.sources.iter().enumerate() {
            if s.name.trim().is_empty() {
                errs.push(format!("sources[{i}].name must not be empty"));
            } else if !names.insert(s.name.as_str()) {
                errs.push(format!("sources[{i}].name `{}` is used twice", s.name));
            }
            if s.path_glob.trim().is_empty() {
                errs.push(format!("sources[{i}].path_glob must not be empty"));
            } else if let Err(e) = glob::Pattern::new(&s.path_glob) {
                errs.push(format!("sources[{i}].path_glob is not a valid pattern: {e}"));
            }
        }
        match self.model.backbone_spec() {
            Ok(spec) => {
                errs.extend(spec.validate().into_iter().map(|e| format!("model.{e}")));
                if spec.check_input(self.preprocess.target()).is_err() {
                    errs.push(format!(
                        "preprocess.target_size {:?} must be divisible by the backbone stride {}",
                        self.preprocess.target_size, spec.output_stride
                    ));
                }
            }
            Err(Error::Config(e)) => errs.extend(e),
            Err(e) => errs.push(format!("model.backbone: {e}")),
        }
        if !self.model.head.is_pooled() {
            errs.push("model.head: XFishHm is derived from a trained XFishHmMp model and cannot be trained directly".into());
        }
        errs.extend(self.preprocess.validate());
        errs.extend(self.train.validate());
        errs.extend(self.augment.validate());
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            errs.push(format!("eval.threshold must be in [0, 1], got {}", self.eval.threshold));
        }
        if self.eval.batch_size == 0 {
            errs.push("eval.batch_size must be >= 1".into());
        }
        errs
    }

    /// Expand every source glob into a pool of frame images.
    pub fn domain_sources(&self) -> Result<Vec<DomainSource>> {
        self.sources
            .iter()
            .map(|s| {
                Ok(DomainSource {
                    name: s.name.clone(),
                    role: s.role,
                    pool: expand_glob(&s.path_glob)?,
                    draw_count: s.draw_count,
                })
            })
            .collect()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(vec![e.to_string()]))
    }
}

/// Image files matching `pattern`, sorted.
pub fn expand_glob(pattern: &str) -> Result<Vec<PathBuf>> {
    let paths = glob::glob(pattern)
        .map_err(|e| Error::Config(vec![format!("bad glob `{pattern}`: {e}")]))?;
    let mut out = Vec::new();
    for entry in paths {
        let p = entry.map_err(|e| {
            let path = e.path().to_path_buf();
            Error::io(path, e.into())
        })?;
        if p.is_file() && is_frame_file(&p) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}
