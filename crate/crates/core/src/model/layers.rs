//! Convolution building blocks with explicit forward and backward passes.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::{gemm, Scalar};

/// Channel-major (`C x H x W`) activation tensor of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn spatial(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.spatial();
        &self.data[c * n..(c + 1) * n]
    }
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Vec<T>) -> Self {
        let grad = vec![T::zero(); value.len()];
        Param { value, grad }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// 2-D convolution with square kernel, symmetric zero padding and bias.
///
/// Weights are stored as an `out x (in * k * k)` matrix so the forward pass is
/// one GEMM against the im2col expansion of the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

/// Saved im2col matrix of a training forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    in_dims: (usize, usize, usize),
    cols: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        assert!(kernel >= 1 && stride >= 1);
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::new(vec![T::zero(); out_channels * in_channels * kernel * kernel]),
            bias: Param::new(vec![T::zero(); out_channels]),
        }
    }

    /// Normal weights with standard deviation `sqrt(gain / fan_in)`, zero bias.
    pub fn init_normal<R: Rng + ?Sized>(&mut self, gain: f64, rng: &mut R) {
        let std = (gain / self.fan_in() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        for w in &mut self.weight.value {
            *w = T::lit(normal.sample(rng));
        }
        self.bias.value.fill(T::zero());
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn out_dims(&self, height: usize, width: usize) -> (usize, usize) {
        let span = |d: usize| (d + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1;
        (span(height), span(width))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn im2col(&self, x: &FeatureMap<T>) -> Vec<T> {
        let (oh, ow) = self.out_dims(x.height, x.width);
        let k = self.kernel;
        let n = oh * ow;
        let mut cols = vec![T::zero(); self.fan_in() * n];
        let pad = self.padding as isize;
        for c in 0..x.channels {
            let plane = x.channel(c);
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((c * k + ky) * k + kx) * n..][..n];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - pad;
                        if iy < 0 || iy >= x.height as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * x.width..][..x.width];
                        let dst = &mut row[oy * ow..][..ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - pad;
                            if ix >= 0 && ix < x.width as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], dims: (usize, usize, usize)) -> FeatureMap<T> {
        let (channels, height, width) = dims;
        let (oh, ow) = self.out_dims(height, width);
        let k = self.kernel;
        let n = oh * ow;
        let mut out = FeatureMap::zeros(channels, height, width);
        let pad = self.padding as isize;
        for c in 0..channels {
            let plane = &mut out.data[c * height * width..][..height * width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((c * k + ky) * k + kx) * n..][..n];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - pad;
                        if iy < 0 || iy >= height as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - pad;
                            if ix >= 0 && ix < width as isize {
                                plane[iy as usize * width + ix as usize] += row[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn apply(&self, cols: &[T], n: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(self.out_channels * n);
        for &b in &self.bias.value {
            out.extend(std::iter::repeat_n(b, n));
        }
        gemm(
            self.out_channels,
            self.fan_in(),
            n,
            &self.weight.value,
            false,
            cols,
            false,
            T::one(),
            &mut out,
        );
        out
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> FeatureMap<T> {
        assert_eq!(x.channels, self.in_channels, "conv input channels");
        let (oh, ow) = self.out_dims(x.height, x.width);
        let data = if self.is_pointwise() {
            self.apply(&x.data, oh * ow)
        } else {
            self.apply(&self.im2col(x), oh * ow)
        };
        FeatureMap {
            channels: self.out_channels,
            height: oh,
            width: ow,
            data,
        }
    }

    /// Forward pass that keeps what [`Conv2d::backward`] needs.
    pub fn forward_train(&self, x: &FeatureMap<T>) -> (FeatureMap<T>, ConvCache<T>) {
        assert_eq!(x.channels, self.in_channels, "conv input channels");
        let (oh, ow) = self.out_dims(x.height, x.width);
        let cols = if self.is_pointwise() {
            x.data.clone()
        } else {
            self.im2col(x)
        };
        let data = self.apply(&cols, oh * ow);
        let out = FeatureMap {
            channels: self.out_channels,
            height: oh,
            width: ow,
            data,
        };
        let cache = ConvCache {
            in_dims: (x.channels, x.height, x.width),
            cols,
        };
        (out, cache)
    }

    /// Accumulate parameter gradients for output gradient `dout`; returns the
    /// input gradient when `need_input_grad` is set.
    pub fn backward(
        &mut self,
        cache: &ConvCache<T>,
        dout: &FeatureMap<T>,
        need_input_grad: bool,
    ) -> Option<FeatureMap<T>> {
        let n = dout.spatial();
        let fan_in = self.fan_in();
        gemm(
            self.out_channels,
            n,
            fan_in,
            &dout.data,
            false,
            &cache.cols,
            true,
            T::one(),
            &mut self.weight.grad,
        );
        for (o, g) in self.bias.grad.iter_mut().enumerate() {
            *g += dout.channel(o).iter().copied().sum::<T>();
        }
        if !need_input_grad {
            return None;
        }
        let mut dcols = vec![T::zero(); fan_in * n];
        gemm(
            fan_in,
            self.out_channels,
            n,
            &self.weight.value,
            true,
            &dout.data,
            false,
            T::zero(),
            &mut dcols,
        );
        Some(if self.is_pointwise() {
            let (c, h, w) = cache.in_dims;
            FeatureMap {
                channels: c,
                height: h,
                width: w,
                data: dcols,
            }
        } else {
            self.col2im(&dcols, cache.in_dims)
        })
    }
}

pub fn relu_in_place<T: Scalar>(x: &mut FeatureMap<T>) {
    for v in &mut x.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zero the gradient wherever the ReLU output was clamped.
pub fn relu_backward<T: Scalar>(output: &FeatureMap<T>, grad: &mut FeatureMap<T>) {
    for (g, &y) in grad.data.iter_mut().zip(&output.data) {
        if y <= T::zero() {
            *g = T::zero();
        }
    }
}
