//! The phrase-to-phrase generator.
//!
//! Encoder (same-size 7x7 conv, then two stride-2 downsampling blocks),
//! a stack of residual blocks at the bottleneck, decoder (two stride-2
//! transposed-conv blocks), and a final 7x7 conv squashed by a sigmoid, so
//! outputs live in (0, 1) at the input's exact shape. Instance norm and
//! relu throughout.

use super::layers::{ConvLayer, ConvNormRelu, ConvNormReluCache, UpNormRelu, UpNormReluCache};
use super::{ArchConfig, GanError};
use crate::neural::ops;
use crate::neural::{Param, Scalar, Tensor};
use crate::rng::SeedRng;

type Result<T> = std::result::Result<T, GanError>;

pub(crate) struct ResBlock<F: Scalar> {
    pub block1: ConvNormRelu<F>,
    pub conv2: ConvLayer<F>,
    pub norm2: super::layers::InstanceNormLayer<F>,
}

pub(crate) struct ResBlockCache<F: Scalar> {
    b1: ConvNormReluCache<F>,
    conv2_in: Tensor<F>,
    norm2: super::layers::NormCache<F>,
}

impl<F: Scalar> ResBlock<F> {
    fn new(channels: usize, rng: &mut SeedRng) -> Self {
        Self {
            block1: ConvNormRelu::new(channels, channels, 3, 1, 1, rng),
            conv2: ConvLayer::new(channels, channels, 3, 1, 1, rng),
            norm2: super::layers::InstanceNormLayer::new(channels),
        }
    }

    fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, ResBlockCache<F>)> {
        let (t, b1) = self.block1.forward(x)?;
        let (u, conv2_in) = self.conv2.forward(&t)?;
        let (v, norm2) = self.norm2.forward(&u)?;
        let mut y = v;
        y.axpy(F::one(), x)?; // skip connection
        Ok((y, ResBlockCache { b1, conv2_in, norm2 }))
    }

    fn backward(
        &mut self,
        cache: &ResBlockCache<F>,
        gy: &Tensor<F>,
        train: bool,
    ) -> Result<Tensor<F>> {
        let gv = self.norm2.backward(&cache.norm2, gy, train)?;
        let gt = self.conv2.backward(&cache.conv2_in, &gv, train)?;
        let mut gx = self.block1.backward(&cache.b1, &gt, train)?;
        gx.axpy(F::one(), gy)?; // skip connection
        Ok(gx)
    }
}

pub struct Generator<F: Scalar> {
    pub(crate) stem: ConvNormRelu<F>,
    pub(crate) down1: ConvNormRelu<F>,
    pub(crate) down2: ConvNormRelu<F>,
    pub(crate) res: Vec<ResBlock<F>>,
    pub(crate) up1: UpNormRelu<F>,
    pub(crate) up2: UpNormRelu<F>,
    pub(crate) head: ConvLayer<F>,
}

pub struct GeneratorCache<F: Scalar> {
    stem: ConvNormReluCache<F>,
    down1: ConvNormReluCache<F>,
    down2: ConvNormReluCache<F>,
    res: Vec<ResBlockCache<F>>,
    up1: UpNormReluCache<F>,
    up2: UpNormReluCache<F>,
    head_in: Tensor<F>,
    /// Sigmoid output, kept because its backward runs off the output.
    output: Tensor<F>,
}

impl<F: Scalar> Generator<F> {
    pub fn new(arch: &ArchConfig, rng: &mut SeedRng) -> Self {
        let nf = arch.base_filters;
        Self {
            stem: ConvNormRelu::new(1, nf, 7, 1, 3, rng),
            down1: ConvNormRelu::new(nf, nf * 2, 3, 2, 1, rng),
            down2: ConvNormRelu::new(nf * 2, nf * 4, 3, 2, 1, rng),
            res: (0..arch.residual_blocks)
                .map(|_| ResBlock::new(nf * 4, rng))
                .collect(),
            up1: UpNormRelu::new(nf * 4, nf * 2, 4, 2, 1, rng),
            up2: UpNormRelu::new(nf * 2, nf, 4, 2, 1, rng),
            head: ConvLayer::new(nf, 1, 7, 1, 3, rng),
        }
    }

    /// Forward pass; the cache carries everything the backward pass needs.
    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, GeneratorCache<F>)> {
        let (t, stem) = self.stem.forward(x)?;
        let (t, down1) = self.down1.forward(&t)?;
        let (mut t, down2) = self.down2.forward(&t)?;
        let mut res = Vec::with_capacity(self.res.len());
        for block in &self.res {
            let (next, cache) = block.forward(&t)?;
            res.push(cache);
            t = next;
        }
        let (t, up1) = self.up1.forward(&t)?;
        let (t, up2) = self.up2.forward(&t)?;
        let (t, head_in) = self.head.forward(&t)?;
        let y = ops::sigmoid(&t);
        let cache = GeneratorCache {
            stem,
            down1,
            down2,
            res,
            up1,
            up2,
            head_in,
            output: y.clone(),
        };
        Ok((y, cache))
    }

    /// Backward pass; accumulates parameter gradients when `train` is set
    /// and returns the gradient with respect to the input.
    pub fn backward(
        &mut self,
        cache: &GeneratorCache<F>,
        gy: &Tensor<F>,
        train: bool,
    ) -> Result<Tensor<F>> {
        let g = ops::sigmoid_backward(&cache.output, gy)?;
        let g = self.head.backward(&cache.head_in, &g, train)?;
        let g = self.up2.backward(&cache.up2, &g, train)?;
        let mut g = self.up1.backward(&cache.up1, &g, train)?;
        for (block, bcache) in self.res.iter_mut().zip(cache.res.iter()).rev() {
            g = block.backward(bcache, &g, train)?;
        }
        let g = self.down2.backward(&cache.down2, &g, train)?;
        let g = self.down1.backward(&cache.down1, &g, train)?;
        self.stem.backward(&cache.stem, &g, train)
    }

    pub fn params(&self) -> Vec<(String, &Param<F>)> {
        let mut v: Vec<(String, &Param<F>)> = vec![
            ("stem.conv.w".into(), &self.stem.conv.weight),
            ("stem.conv.b".into(), &self.stem.conv.bias),
            ("stem.norm.scale".into(), &self.stem.norm.scale),
            ("stem.norm.shift".into(), &self.stem.norm.shift),
            ("down1.conv.w".into(), &self.down1.conv.weight),
            ("down1.conv.b".into(), &self.down1.conv.bias),
            ("down1.norm.scale".into(), &self.down1.norm.scale),
            ("down1.norm.shift".into(), &self.down1.norm.shift),
            ("down2.conv.w".into(), &self.down2.conv.weight),
            ("down2.conv.b".into(), &self.down2.conv.bias),
            ("down2.norm.scale".into(), &self.down2.norm.scale),
            ("down2.norm.shift".into(), &self.down2.norm.shift),
        ];
        for (i, r) in self.res.iter().enumerate() {
            v.push((format!("res{i}.conv1.w"), &r.block1.conv.weight));
            v.push((format!("res{i}.conv1.b"), &r.block1.conv.bias));
            v.push((format!("res{i}.norm1.scale"), &r.block1.norm.scale));
            v.push((format!("res{i}.norm1.shift"), &r.block1.norm.shift));
            v.push((format!("res{i}.conv2.w"), &r.conv2.weight));
            v.push((format!("res{i}.conv2.b"), &r.conv2.bias));
            v.push((format!("res{i}.norm2.scale"), &r.norm2.scale));
            v.push((format!("res{i}.norm2.shift"), &r.norm2.shift));
        }
        v.extend([
            ("up1.conv.w".to_string(), &self.up1.conv.weight),
            ("up1.conv.b".to_string(), &self.up1.conv.bias),
            ("up1.norm.scale".to_string(), &self.up1.norm.scale),
            ("up1.norm.shift".to_string(), &self.up1.norm.shift),
            ("up2.conv.w".to_string(), &self.up2.conv.weight),
            ("up2.conv.b".to_string(), &self.up2.conv.bias),
            ("up2.norm.scale".to_string(), &self.up2.norm.scale),
            ("up2.norm.shift".to_string(), &self.up2.norm.shift),
            ("head.w".to_string(), &self.head.weight),
            ("head.b".to_string(), &self.head.bias),
        ]);
        v
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param<F>)> {
        let mut v: Vec<(String, &mut Param<F>)> = vec![
            ("stem.conv.w".into(), &mut self.stem.conv.weight),
            ("stem.conv.b".into(), &mut self.stem.conv.bias),
            ("stem.norm.scale".into(), &mut self.stem.norm.scale),
            ("stem.norm.shift".into(), &mut self.stem.norm.shift),
            ("down1.conv.w".into(), &mut self.down1.conv.weight),
            ("down1.conv.b".into(), &mut self.down1.conv.bias),
            ("down1.norm.scale".into(), &mut self.down1.norm.scale),
            ("down1.norm.shift".into(), &mut self.down1.norm.shift),
            ("down2.conv.w".into(), &mut self.down2.conv.weight),
            ("down2.conv.b".into(), &mut self.down2.conv.bias),
            ("down2.norm.scale".into(), &mut self.down2.norm.scale),
            ("down2.norm.shift".into(), &mut self.down2.norm.shift),
        ];
        for (i, r) in self.res.iter_mut().enumerate() {
            v.push((format!("res{i}.conv1.w"), &mut r.block1.conv.weight));
            v.push((format!("res{i}.conv1.b"), &mut r.block1.conv.bias));
            v.push((format!("res{i}.norm1.scale"), &mut r.block1.norm.scale));
            v.push((format!("res{i}.norm1.shift"), &mut r.block1.norm.shift));
            v.push((format!("res{i}.conv2.w"), &mut r.conv2.weight));
            v.push((format!("res{i}.conv2.b"), &mut r.conv2.bias));
            v.push((format!("res{i}.norm2.scale"), &mut r.norm2.scale));
            v.push((format!("res{i}.norm2.shift"), &mut r.norm2.shift));
        }
        v.extend([
            ("up1.conv.w".to_string(), &mut self.up1.conv.weight),
            ("up1.conv.b".to_string(), &mut self.up1.conv.bias),
            ("up1.norm.scale".to_string(), &mut self.up1.norm.scale),
            ("up1.norm.shift".to_string(), &mut self.up1.norm.shift),
            ("up2.conv.w".to_string(), &mut self.up2.conv.weight),
            ("up2.conv.b".to_string(), &mut self.up2.conv.bias),
            ("up2.norm.scale".to_string(), &mut self.up2.norm.scale),
            ("up2.norm.shift".to_string(), &mut self.up2.norm.shift),
            ("head.w".to_string(), &mut self.head.weight),
            ("head.b".to_string(), &mut self.head.bias),
        ]);
        v
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch() -> ArchConfig {
        ArchConfig {
            base_filters: 2,
            residual_blocks: 1,
        }
    }

    #[test]
    fn output_matches_input_shape_and_range() {
        let mut rng = SeedRng::new(1);
        let g: Generator<f32> = Generator::new(&tiny_arch(), &mut rng);
        let x = Tensor::<f32>::rand_uniform(&[2, 1, 64, 84], 0.0, 1.0, &mut rng);
        let (y, _) = g.forward(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn params_and_params_mut_agree_on_names() {
        let mut rng = SeedRng::new(2);
        let mut g: Generator<f32> = Generator::new(&tiny_arch(), &mut rng);
        let names: Vec<String> = g.params().into_iter().map(|(n, _)| n).collect();
        let names_mut: Vec<String> = g.params_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, names_mut);
        assert_eq!(names.len(), 12 + 8 + 10);
    }

    #[test]
    fn backward_accumulates_into_every_param() {
        let mut rng = SeedRng::new(3);
        let mut g: Generator<f32> = Generator::new(&tiny_arch(), &mut rng);
        let x = Tensor::<f32>::rand_uniform(&[1, 1, 64, 84], 0.0, 1.0, &mut rng);
        let (y, cache) = g.forward(&x).unwrap();
        let gy = Tensor::<f32>::full(y.shape(), 1.0);
        let gx = g.backward(&cache, &gy, true).unwrap();
        assert_eq!(gx.shape(), x.shape());
        for (name, p) in g.params() {
            assert!(
                p.grad.data().iter().any(|&v| v != 0.0),
                "no gradient reached {name}"
            );
        }
    }

    #[test]
    fn untrained_backward_leaves_grads_zero() {
        let mut rng = SeedRng::new(4);
        let mut g: Generator<f32> = Generator::new(&tiny_arch(), &mut rng);
        let x = Tensor::<f32>::rand_uniform(&[1, 1, 64, 84], 0.0, 1.0, &mut rng);
        let (y, cache) = g.forward(&x).unwrap();
        let gy = Tensor::<f32>::full(y.shape(), 0.5);
        g.backward(&cache, &gy, false).unwrap();
        for (name, p) in g.params() {
            assert!(
                p.grad.data().iter().all(|&v| v == 0.0),
                "gradient leaked into {name}"
            );
        }
    }
}
