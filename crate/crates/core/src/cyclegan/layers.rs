//! Trainable layers: thin stateful wrappers over the ops in
//! [`crate::neural::ops`] that own parameters, cache what their backward
//! pass needs, and accumulate gradients into [`Param`] slots.

use super::GanError;
use crate::neural::ops;
use crate::neural::{Param, Scalar, Tensor};
use crate::rng::SeedRng;

/// Standard deviation of kernel init; normalization starts at identity.
pub(crate) const INIT_STD: f64 = 0.02;

type Result<T> = std::result::Result<T, GanError>;

pub(crate) struct ConvLayer<F: Scalar> {
    pub weight: Param<F>, // [c_out, c_in, k, k]
    pub bias: Param<F>,   // [c_out]
    pub stride: usize,
    pub pad: usize,
}

impl<F: Scalar> ConvLayer<F> {
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut SeedRng,
    ) -> Self {
        Self {
            weight: Param::new(Tensor::randn(&[c_out, c_in, k, k], INIT_STD, rng)),
            bias: Param::new(Tensor::zeros(&[c_out])),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>)> {
        let y = ops::conv2d(x, &self.weight.value, Some(&self.bias.value), self.stride, self.pad)?;
        Ok((y, x.clone()))
    }

    /// Returns the input gradient; accumulates parameter gradients when
    /// `train` is set.
    pub fn backward(&mut self, x: &Tensor<F>, gy: &Tensor<F>, train: bool) -> Result<Tensor<F>> {
        let g = ops::conv2d_backward(x, &self.weight.value, gy, self.stride, self.pad)?;
        if train {
            self.weight.grad.axpy(F::one(), &g.weight)?;
            self.bias.grad.axpy(F::one(), &g.bias)?;
        }
        Ok(g.input)
    }
}

pub(crate) struct ConvTransposeLayer<F: Scalar> {
    pub weight: Param<F>, // [c_in, c_out, k, k]
    pub bias: Param<F>,   // [c_out]
    pub stride: usize,
    pub pad: usize,
}

impl<F: Scalar> ConvTransposeLayer<F> {
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut SeedRng,
    ) -> Self {
        Self {
            weight: Param::new(Tensor::randn(&[c_in, c_out, k, k], INIT_STD, rng)),
            bias: Param::new(Tensor::zeros(&[c_out])),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>)> {
        let y = ops::conv2d_transpose(
            x,
            &self.weight.value,
            Some(&self.bias.value),
            self.stride,
            self.pad,
        )?;
        Ok((y, x.clone()))
    }

    pub fn backward(&mut self, x: &Tensor<F>, gy: &Tensor<F>, train: bool) -> Result<Tensor<F>> {
        let g = ops::conv2d_transpose_backward(x, &self.weight.value, gy, self.stride, self.pad)?;
        if train {
            self.weight.grad.axpy(F::one(), &g.weight)?;
            self.bias.grad.axpy(F::one(), &g.bias)?;
        }
        Ok(g.input)
    }
}

pub(crate) struct InstanceNormLayer<F: Scalar> {
    pub scale: Param<F>,
    pub shift: Param<F>,
    pub eps: f64,
}

pub(crate) struct NormCache<F: Scalar> {
    input: Tensor<F>,
    stats: ops::InstanceNormCache,
}

impl<F: Scalar> InstanceNormLayer<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            scale: Param::new(Tensor::full(&[channels], F::one())),
            shift: Param::new(Tensor::zeros(&[channels])),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, NormCache<F>)> {
        let (y, stats) = ops::instance_norm(x, &self.scale.value, &self.shift.value, self.eps)?;
        Ok((
            y,
            NormCache {
                input: x.clone(),
                stats,
            },
        ))
    }

    pub fn backward(
        &mut self,
        cache: &NormCache<F>,
        gy: &Tensor<F>,
        train: bool,
    ) -> Result<Tensor<F>> {
        let (gx, gscale, gshift) =
            ops::instance_norm_backward(&cache.input, &self.scale.value, &cache.stats, gy)?;
        if train {
            self.scale.grad.axpy(F::one(), &gscale)?;
            self.shift.grad.axpy(F::one(), &gshift)?;
        }
        Ok(gx)
    }
}

/// conv -> instance norm -> relu, the generator's building block.
pub(crate) struct ConvNormRelu<F: Scalar> {
    pub conv: ConvLayer<F>,
    pub norm: InstanceNormLayer<F>,
}

pub(crate) struct ConvNormReluCache<F: Scalar> {
    conv_in: Tensor<F>,
    norm: NormCache<F>,
    relu_in: Tensor<F>,
}

impl<F: Scalar> ConvNormRelu<F> {
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut SeedRng,
    ) -> Self {
        Self {
            conv: ConvLayer::new(c_in, c_out, k, stride, pad, rng),
            norm: InstanceNormLayer::new(c_out),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, ConvNormReluCache<F>)> {
        let (t, conv_in) = self.conv.forward(x)?;
        let (u, norm) = self.norm.forward(&t)?;
        let y = ops::relu(&u);
        Ok((
            y,
            ConvNormReluCache {
                conv_in,
                norm,
                relu_in: u,
            },
        ))
    }

    pub fn backward(
        &mut self,
        cache: &ConvNormReluCache<F>,
        gy: &Tensor<F>,
        train: bool,
    ) -> Result<Tensor<F>> {
        let gu = ops::relu_backward(&cache.relu_in, gy)?;
        let gt = self.norm.backward(&cache.norm, &gu, train)?;
        self.conv.backward(&cache.conv_in, &gt, train)
    }
}

/// transpose conv -> instance norm -> relu, the decoder block.
pub(crate) struct UpNormRelu<F: Scalar> {
    pub conv: ConvTransposeLayer<F>,
    pub norm: InstanceNormLayer<F>,
}

pub(crate) struct UpNormReluCache<F: Scalar> {
    conv_in: Tensor<F>,
    norm: NormCache<F>,
    relu_in: Tensor<F>,
}

impl<F: Scalar> UpNormRelu<F> {
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut SeedRng,
    ) -> Self {
        Self {
            conv: ConvTransposeLayer::new(c_in, c_out, k, stride, pad, rng),
            norm: InstanceNormLayer::new(c_out),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, UpNormReluCache<F>)> {
        let (t, conv_in) = self.conv.forward(x)?;
        let (u, norm) = self.norm.forward(&t)?;
        let y = ops::relu(&u);
        Ok((
            y,
            UpNormReluCache {
                conv_in,
                norm,
                relu_in: u,
            },
        ))
    }

    pub fn backward(
        &mut self,
        cache: &UpNormReluCache<F>,
        gy: &Tensor<F>,
        train: bool,
    ) -> Result<Tensor<F>> {
        let gu = ops::relu_backward(&cache.relu_in, gy)?;
        let gt = self.norm.backward(&cache.norm, &gu, train)?;
        self.conv.backward(&cache.conv_in, &gt, train)
    }
}
