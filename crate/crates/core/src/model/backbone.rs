//! Feature extractors.
//!
//! Two backbones are known: `tiny`, a stack of stride-2 3x3 convolutions that
//! can actually be built and trained on a CPU, and `xception`, which is only
//! described (shape and trainable parameter count) since its pretrained
//! weights are not bundled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub name: String,
    pub output_stride: usize,
    pub feature_channels: usize,
    pub pretrained: bool,
    /// Output channels of each stride-2 block (`tiny` family only).
    #[serde(default)]
    pub channels: Vec<usize>,
}

impl BackboneSpec {
    /// Five stride-2 blocks, about 48k parameters.
    pub fn tiny() -> Self {
        Self::strided(vec![8, 16, 32, 48, 64])
    }

    /// A `tiny`-family backbone with custom block widths.
    pub fn strided(channels: Vec<usize>) -> Self {
        BackboneSpec {
            name: "tiny".into(),
            output_stride: 1 << channels.len(),
            feature_channels: channels.last().copied().unwrap_or(3),
            pretrained: false,
            channels,
        }
    }

    pub fn xception() -> Self {
        BackboneSpec {
            name: "xception".into(),
            output_stride: 32,
            feature_channels: 2048,
            pretrained: true,
            channels: Vec::new(),
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny()),
            "xception" => Ok(Self::xception()),
            other => Err(Error::arg(format!(
                "unknown backbone `{other}` (expected tiny or xception)"
            ))),
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        match self.name.as_str() {
            "tiny" => {
                if self.channels.is_empty() || self.channels.contains(&0) {
                    errs.push("backbone.channels must be non-empty and positive".into());
                } else {
                    if self.output_stride != 1 << self.channels.len() {
                        errs.push(format!(
                            "backbone.output_stride {} does not match {} stride-2 blocks",
                            self.output_stride,
                            self.channels.len()
                        ));
                    }
                    if Some(&self.feature_channels) != self.channels.last() {
                        errs.push("backbone.feature_channels must equal the last block width".into());
                    }
                }
            }
            "xception" => {
                if *self != Self::xception() {
                    errs.push("backbone `xception` has a fixed shape".into());
                }
            }
            other => errs.push(format!("unknown backbone `{other}`")),
        }
        errs
    }

    /// Trainable parameters of the feature extractor (no classification top).
    pub fn trainable_params(&self) -> usize {
        match self.name.as_str() {
            "xception" => xception_layers().iter().map(|l| l.params).sum(),
            _ => {
                let mut prev = 3;
                let mut total = 0;
                for &c in &self.channels {
                    total += prev * c * 9 + c;
                    prev = c;
                }
                total
            }
        }
    }

    pub fn check_input(&self, size: (usize, usize)) -> Result<()> {
        let s = self.output_stride;
        if size.0 == 0 || size.1 == 0 || size.0 % s != 0 || size.1 % s != 0 {
            return Err(Error::arg(format!(
                "input {}x{} is not divisible by the backbone output stride {s}",
                size.0, size.1
            )));
        }
        Ok(())
    }
}

/// One row of a parameter table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerParams {
    pub name: String,
    pub params: usize,
}

fn conv(name: String, k: usize, cin: usize, cout: usize) -> LayerParams {
    LayerParams {
        name,
        params: k * k * cin * cout,
    }
}

fn sepconv(name: String, cin: usize, cout: usize) -> LayerParams {
    LayerParams {
        name,
        params: 9 * cin + cin * cout,
    }
}

/// Batch-norm scale and offset; the moving statistics are not trainable.
fn bn(name: String, c: usize) -> LayerParams {
    LayerParams { name, params: 2 * c }
}

/// Trainable parameter table of the Xception feature extractor (convolutions
/// without bias, each followed by batch normalization).
pub fn xception_layers() -> Vec<LayerParams> {
    let mut l = vec![
        conv("block1_conv1".into(), 3, 3, 32),
        bn("block1_conv1_bn".into(), 32),
        conv("block1_conv2".into(), 3, 32, 64),
        bn("block1_conv2_bn".into(), 64),
    ];
    let entry = [(2, 64, 128), (3, 128, 256), (4, 256, 728)];
    for (b, cin, cout) in entry {
        l.push(conv(format!("block{b}_residual"), 1, cin, cout));
        l.push(bn(format!("block{b}_residual_bn"), cout));
        l.push(sepconv(format!("block{b}_sepconv1"), cin, cout));
        l.push(bn(format!("block{b}_sepconv1_bn"), cout));
        l.push(sepconv(format!("block{b}_sepconv2"), cout, cout));
        l.push(bn(format!("block{b}_sepconv2_bn"), cout));
    }
    for b in 5..=12 {
        for s in 1..=3 {
            l.push(sepconv(format!("block{b}_sepconv{s}"), 728, 728));
            l.push(bn(format!("block{b}_sepconv{s}_bn"), 728));
        }
    }
    l.push(conv("block13_residual".into(), 1, 728, 1024));
    l.push(bn("block13_residual_bn".into(), 1024));
    l.push(sepconv("block13_sepconv1".into(), 728, 728));
    l.push(bn("block13_sepconv1_bn".into(), 728));
    l.push(sepconv("block13_sepconv2".into(), 728, 1024));
    l.push(bn("block13_sepconv2_bn".into(), 1024));
    l.push(sepconv("block14_sepconv1".into(), 1024, 1536));
    l.push(bn("block14_sepconv1_bn".into(), 1536));
    l.push(sepconv("block14_sepconv2".into(), 1536, 2048));
    l.push(bn("block14_sepconv2_bn".into(), 2048));
    l
}
