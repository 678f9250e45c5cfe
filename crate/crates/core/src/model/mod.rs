//! The three network variants on top of a stride-32 backbone.
//!
//! Every model starts with a trainable 1x1 gray-to-RGB convolution and ends
//! in one of three heads:
//!
//! * `XFishMp`: global spatial max pool, dropout, one sigmoid unit.
//! * `XFishHmMp`: 1x1 convolution to a single sigmoid channel (the heatmap),
//!   then a global spatial max pool.
//! * `XFishHm`: `XFishHmMp` without the pool; outputs the heatmap itself.

mod backbone;
mod checkpoint;
mod layers;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Plane;
use crate::scalar::{sigmoid, softplus, Scalar};

pub use backbone::{xception_layers, BackboneSpec, LayerParams};
pub use checkpoint::{
    load_checkpoint, read_sidecar, save_checkpoint, sidecar_path, weights_path, CheckpointMeta,
    SCHEMA_VERSION,
};
pub use layers::{relu_backward, relu_in_place, Conv2d, ConvCache, FeatureMap, Param};

/// Dropout probability of the `XFishMp` head.
pub const DROPOUT_PROB: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HeadKind {
    XFishMp,
    XFishHmMp,
    XFishHm,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::XFishMp => "XFishMp",
            HeadKind::XFishHmMp => "XFishHmMp",
            HeadKind::XFishHm => "XFishHm",
        }
    }

    /// Whether the model emits a single score (and can therefore be trained
    /// against image-level labels).
    pub fn is_pooled(self) -> bool {
        self != HeadKind::XFishHm
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xfishmp" => Ok(HeadKind::XFishMp),
            "xfishhmmp" => Ok(HeadKind::XFishHmMp),
            "xfishhm" => Ok(HeadKind::XFishHm),
            _ => Err(Error::arg(format!(
                "unknown head `{s}` (expected XFishMp, XFishHmMp or XFishHm)"
            ))),
        }
    }
}

/// Grid of `[0, 1]` fish evidence, one cell per `stride x stride` input block.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap<T> {
    plane: Plane<T>,
}

impl<T: Scalar> HeatMap<T> {
    pub fn from_plane(plane: Plane<T>) -> Result<Self> {
        if plane
            .data()
            .iter()
            .any(|&v| !(v >= T::zero() && v <= T::one()))
        {
            return Err(Error::arg("heatmap values must lie in [0, 1]"));
        }
        Ok(HeatMap { plane })
    }

    pub fn plane(&self) -> &Plane<T> {
        &self.plane
    }

    pub fn dims(&self) -> (usize, usize) {
        self.plane.dims()
    }

    pub fn max(&self) -> T {
        self.plane
            .data()
            .iter()
            .copied()
            .fold(T::neg_infinity(), T::max)
    }

    /// Row and column of the first maximal cell.
    pub fn argmax(&self) -> (usize, usize) {
        let idx = argmax(self.plane.data());
        (idx / self.plane.width(), idx % self.plane.width())
    }
}

/// Model output for one image.
#[derive(Debug, Clone, PartialEq)]
pub enum Output<T> {
    Score(T),
    Heatmap(HeatMap<T>),
}

/// Loss and prediction for one training example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example<T> {
    pub loss: T,
    pub prob: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    head: HeadKind,
    backbone: BackboneSpec,
    input_size: (usize, usize),
    gray_rgb: Conv2d<T>,
    blocks: Vec<Conv2d<T>>,
    /// Dense unit (`XFishMp`) or heatmap convolution, both 1x1 `C -> 1`.
    top: Conv2d<T>,
}

/// 1-channel to 3-channel 1x1 convolution initialised to copy the gray
/// channel into all three outputs.
pub fn gray_to_rgb_layer<T: Scalar>() -> Conv2d<T> {
    let mut conv = Conv2d::zeros(1, 3, 1, 1, 0);
    conv.weight.value.fill(T::one());
    conv
}

/// Trainable parameters of a model on `backbone`, front layer included. All
/// three heads end in a `C -> 1` unit, so the count does not depend on the
/// head. Works for descriptor-only backbones too.
pub fn spec_param_count(backbone: &BackboneSpec) -> usize {
    6 + backbone.trainable_params() + backbone.feature_channels + 1
}

pub fn build_model<T: Scalar>(
    backbone: &BackboneSpec,
    head: HeadKind,
    input_size: (usize, usize),
    seed: u64,
) -> Result<Model<T>> {
    let errs = backbone.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    if backbone.pretrained || backbone.name != "tiny" {
        return Err(Error::BackboneUnavailable(backbone.name.clone()));
    }
    backbone.check_input(input_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prev = 3;
    let mut blocks = Vec::with_capacity(backbone.channels.len());
    for &c in &backbone.channels {
        let mut conv = Conv2d::zeros(prev, c, 3, 2, 1);
        conv.init_normal(2.0, &mut rng);
        blocks.push(conv);
        prev = c;
    }
    let mut top = Conv2d::zeros(prev, 1, 1, 1, 0);
    top.init_normal(1.0, &mut rng);
    Ok(Model {
        head,
        backbone: backbone.clone(),
        input_size,
        gray_rgb: gray_to_rgb_layer(),
        blocks,
        top,
    })
}

/// Drop the final max pool of an `XFishHmMp` model, keeping every weight.
pub fn convert_to_localizer<T: Scalar>(model: Model<T>) -> Result<Model<T>> {
    if model.head != HeadKind::XFishHmMp {
        return Err(Error::WrongVariant {
            expected: HeadKind::XFishHmMp.name(),
            found: model.head.name(),
        });
    }
    Ok(Model {
        head: HeadKind::XFishHm,
        ..model
    })
}

fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn plane_to_map<T: Scalar>(x: &Plane<T>) -> FeatureMap<T> {
    FeatureMap {
        channels: 1,
        height: x.height(),
        width: x.width(),
        data: x.data().to_vec(),
    }
}

struct Trace<T> {
    gray_cache: ConvCache<T>,
    caches: Vec<ConvCache<T>>,
    outputs: Vec<FeatureMap<T>>,
}

impl<T: Scalar> Model<T> {
    pub fn head(&self) -> HeadKind {
        self.head
    }

    pub fn backbone(&self) -> &BackboneSpec {
        &self.backbone
    }

    pub fn input_size(&self) -> (usize, usize) {
        self.input_size
    }

    /// Heatmap dimensions for the configured input size.
    pub fn heatmap_size(&self) -> (usize, usize) {
        let s = self.backbone.output_stride;
        (self.input_size.0 / s, self.input_size.1 / s)
    }

    pub fn gray_rgb(&self) -> &Conv2d<T> {
        &self.gray_rgb
    }

    pub fn top(&self) -> &Conv2d<T> {
        &self.top
    }

    pub fn top_mut(&mut self) -> &mut Conv2d<T> {
        &mut self.top
    }

    fn layers(&self) -> impl Iterator<Item = &Conv2d<T>> {
        std::iter::once(&self.gray_rgb)
            .chain(&self.blocks)
            .chain(std::iter::once(&self.top))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Conv2d<T>> {
        std::iter::once(&mut self.gray_rgb)
            .chain(&mut self.blocks)
            .chain(std::iter::once(&mut self.top))
    }

    /// Parameters in a fixed order: weight then bias of each layer, input to output.
    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(Conv2d::param_count).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// All parameters flattened in [`Model::params`] order.
    pub fn export_weights(&self) -> Vec<T> {
        self.params()
            .into_iter()
            .flat_map(|p| p.value.iter().copied())
            .collect()
    }

    pub fn import_weights(&mut self, weights: &[T]) -> Result<()> {
        let expected = self.param_count();
        if weights.len() != expected {
            return Err(Error::arg(format!(
                "weight vector has {} values, model needs {expected}",
                weights.len()
            )));
        }
        let mut rest = weights;
        for p in self.params_mut() {
            let (head, tail) = rest.split_at(p.len());
            p.value.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    fn check_input(&self, x: &Plane<T>) -> Result<()> {
        if x.dims() != self.input_size {
            return Err(Error::arg(format!(
                "model expects {}x{} input, got {}x{}",
                self.input_size.0,
                self.input_size.1,
                x.height(),
                x.width()
            )));
        }
        Ok(())
    }

    /// Backbone features of one image (after the gray-to-RGB layer).
    pub fn features(&self, x: &Plane<T>) -> Result<FeatureMap<T>> {
        self.check_input(x)?;
        let mut h = self.gray_rgb.forward(&plane_to_map(x));
        for block in &self.blocks {
            h = block.forward(&h);
            relu_in_place(&mut h);
        }
        Ok(h)
    }

    fn pooled_logit(&self, feat: &FeatureMap<T>) -> T {
        let pooled = FeatureMap {
            channels: feat.channels,
            height: 1,
            width: 1,
            data: (0..feat.channels)
                .map(|c| feat.channel(c).iter().copied().fold(T::neg_infinity(), T::max))
                .collect(),
        };
        self.top.forward(&pooled).data[0]
    }

    fn heat_values(&self, feat: &FeatureMap<T>) -> Plane<T> {
        let z = self.top.forward(feat);
        let data = z.data.into_iter().map(sigmoid).collect();
        Plane::from_vec(z.height, z.width, data).expect("top output shape")
    }

    pub fn forward(&self, x: &Plane<T>) -> Result<Output<T>> {
        let feat = self.features(x)?;
        Ok(match self.head {
            HeadKind::XFishMp => Output::Score(sigmoid(self.pooled_logit(&feat))),
            HeadKind::XFishHmMp => {
                let heat = HeatMap {
                    plane: self.heat_values(&feat),
                };
                Output::Score(heat.max())
            }
            HeadKind::XFishHm => Output::Heatmap(HeatMap {
                plane: self.heat_values(&feat),
            }),
        })
    }

    /// Fish probability of one image; the heatmap maximum for `XFishHm`.
    pub fn score(&self, x: &Plane<T>) -> Result<T> {
        Ok(match self.forward(x)? {
            Output::Score(s) => s,
            Output::Heatmap(h) => h.max(),
        })
    }

    pub fn heatmap(&self, x: &Plane<T>) -> Result<HeatMap<T>> {
        match self.forward(x)? {
            Output::Heatmap(h) => Ok(h),
            Output::Score(_) => Err(Error::WrongVariant {
                expected: HeadKind::XFishHm.name(),
                found: self.head.name(),
            }),
        }
    }

    fn trunk_train(&self, x: &Plane<T>) -> Trace<T> {
        let (mut h, gray_cache) = self.gray_rgb.forward_train(&plane_to_map(x));
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut outputs = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (mut out, cache) = block.forward_train(&h);
            relu_in_place(&mut out);
            caches.push(cache);
            h = out.clone();
            outputs.push(out);
        }
        Trace {
            gray_cache,
            caches,
            outputs,
        }
    }

    fn trunk_backward(&mut self, trace: Trace<T>, mut grad: FeatureMap<T>) {
        for (i, (cache, out)) in trace.caches.iter().zip(&trace.outputs).enumerate().rev() {
            relu_backward(out, &mut grad);
            grad = self.blocks[i]
                .backward(cache, &grad, true)
                .expect("input gradient requested");
        }
        self.gray_rgb.backward(&trace.gray_cache, &grad, false);
    }

    /// Binary cross-entropy on one image; gradients are added to the parameter
    /// `grad` buffers after scaling by `grad_scale` (use `1 / batch_size` for
    /// a batch mean). `rng` drives the `XFishMp` dropout mask.
    pub fn train_example<R: Rng + ?Sized>(
        &mut self,
        x: &Plane<T>,
        label: T,
        grad_scale: T,
        rng: &mut R,
    ) -> Result<Example<T>> {
        self.check_input(x)?;
        if !self.head.is_pooled() {
            return Err(Error::WrongVariant {
                expected: "pooled (XFishMp or XFishHmMp)",
                found: self.head.name(),
            });
        }
        let trace = self.trunk_train(x);
        let feat = trace.outputs.last().expect("at least one block");
        let (c, n) = (feat.channels, feat.spatial());
        match self.head {
            HeadKind::XFishMp => {
                let keep = T::lit(1.0 / (1.0 - DROPOUT_PROB));
                let mut positions = Vec::with_capacity(c);
                let mut mask = Vec::with_capacity(c);
                let mut pooled = FeatureMap::zeros(c, 1, 1);
                for ch in 0..c {
                    let values = feat.channel(ch);
                    let idx = argmax(values);
                    let m = if rng.random::<f64>() < DROPOUT_PROB {
                        T::zero()
                    } else {
                        keep
                    };
                    positions.push(idx);
                    mask.push(m);
                    pooled.data[ch] = values[idx] * m;
                }
                let (z, top_cache) = self.top.forward_train(&pooled);
                let z = z.data[0];
                let example = bce(z, label);
                let dz = FeatureMap {
                    channels: 1,
                    height: 1,
                    width: 1,
                    data: vec![(sigmoid(z) - label) * grad_scale],
                };
                let dpooled = self.top.backward(&top_cache, &dz, true).expect("input gradient");
                let mut dfeat = FeatureMap::zeros(c, feat.height, feat.width);
                for ch in 0..c {
                    dfeat.data[ch * n + positions[ch]] = dpooled.data[ch] * mask[ch];
                }
                self.trunk_backward(trace, dfeat);
                Ok(example)
            }
            _ => {
                let (zmap, top_cache) = self.top.forward_train(feat);
                let idx = argmax(&zmap.data);
                let z = zmap.data[idx];
                let example = bce(z, label);
                let mut dz = FeatureMap::zeros(1, zmap.height, zmap.width);
                dz.data[idx] = (sigmoid(z) - label) * grad_scale;
                let dfeat = self.top.backward(&top_cache, &dz, true).expect("input gradient");
                self.trunk_backward(trace, dfeat);
                Ok(example)
            }
        }
    }
}

/// Binary cross-entropy from a logit: `softplus(z) - y z`.
pub fn bce<T: Scalar>(logit: T, label: T) -> Example<T> {
    Example {
        loss: softplus(logit) - label * logit,
        prob: sigmoid(logit),
    }
}
