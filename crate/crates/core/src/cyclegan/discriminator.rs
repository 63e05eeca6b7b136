//! Patch discriminator: three stride-2 conv blocks (leaky relu 0.2,
//! instance norm after the first block) and a final conv to a single-channel
//! map of patch scores. No output nonlinearity; the objective is
//! least-squares.

use super::layers::{ConvLayer, InstanceNormLayer, NormCache};
use super::{ArchConfig, GanError};
use crate::neural::ops;
use crate::neural::{Param, Scalar, Tensor};
use crate::rng::SeedRng;

type Result<T> = std::result::Result<T, GanError>;

const LEAK: f64 = 0.2;

pub struct Discriminator<F: Scalar> {
    pub(crate) c1: ConvLayer<F>,
    pub(crate) c2: ConvLayer<F>,
    pub(crate) n2: InstanceNormLayer<F>,
    pub(crate) c3: ConvLayer<F>,
    pub(crate) n3: InstanceNormLayer<F>,
    pub(crate) head: ConvLayer<F>,
}

pub struct DiscriminatorCache<F: Scalar> {
    c1_in: Tensor<F>,
    a1_in: Tensor<F>,
    c2_in: Tensor<F>,
    n2: NormCache<F>,
    a2_in: Tensor<F>,
    c3_in: Tensor<F>,
    n3: NormCache<F>,
    a3_in: Tensor<F>,
    head_in: Tensor<F>,
}

impl<F: Scalar> Discriminator<F> {
    pub fn new(arch: &ArchConfig, rng: &mut SeedRng) -> Self {
        let nf = arch.base_filters;
        Self {
            c1: ConvLayer::new(1, nf, 4, 2, 1, rng),
            c2: ConvLayer::new(nf, nf * 2, 4, 2, 1, rng),
            n2: InstanceNormLayer::new(nf * 2),
            c3: ConvLayer::new(nf * 2, nf * 4, 4, 2, 1, rng),
            n3: InstanceNormLayer::new(nf * 4),
            head: ConvLayer::new(nf * 4, 1, 4, 1, 1, rng),
        }
    }

    /// Scores for a batch: `[N, 1, h', w']` patch map, finite, unbounded.
    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, DiscriminatorCache<F>)> {
        let alpha = F::of(LEAK);
        let (t, c1_in) = self.c1.forward(x)?;
        let a1_in = t;
        let t = ops::leaky_relu(&a1_in, alpha);
        let (t, c2_in) = self.c2.forward(&t)?;
        let (u, n2) = self.n2.forward(&t)?;
        let a2_in = u;
        let t = ops::leaky_relu(&a2_in, alpha);
        let (t, c3_in) = self.c3.forward(&t)?;
        let (u, n3) = self.n3.forward(&t)?;
        let a3_in = u;
        let t = ops::leaky_relu(&a3_in, alpha);
        let (scores, head_in) = self.head.forward(&t)?;
        Ok((
            scores,
            DiscriminatorCache {
                c1_in,
                a1_in,
                c2_in,
                n2,
                a2_in,
                c3_in,
                n3,
                a3_in,
                head_in,
            },
        ))
    }

    /// Backward pass. With `train` unset, parameter gradients stay
    /// untouched and only the input gradient is produced (the path the
    /// generator objective uses).
    pub fn backward(
        &mut self,
        cache: &DiscriminatorCache<F>,
        gy: &Tensor<F>,
        train: bool,
    ) -> Result<Tensor<F>> {
        let alpha = F::of(LEAK);
        let g = self.head.backward(&cache.head_in, gy, train)?;
        let g = ops::leaky_relu_backward(&cache.a3_in, alpha, &g)?;
        let g = self.n3.backward(&cache.n3, &g, train)?;
        let g = self.c3.backward(&cache.c3_in, &g, train)?;
        let g = ops::leaky_relu_backward(&cache.a2_in, alpha, &g)?;
        let g = self.n2.backward(&cache.n2, &g, train)?;
        let g = self.c2.backward(&cache.c2_in, &g, train)?;
        let g = ops::leaky_relu_backward(&cache.a1_in, alpha, &g)?;
        self.c1.backward(&cache.c1_in, &g, train)
    }

    pub fn params(&self) -> Vec<(String, &Param<F>)> {
        vec![
            ("c1.w".into(), &self.c1.weight),
            ("c1.b".into(), &self.c1.bias),
            ("c2.w".into(), &self.c2.weight),
            ("c2.b".into(), &self.c2.bias),
            ("n2.scale".into(), &self.n2.scale),
            ("n2.shift".into(), &self.n2.shift),
            ("c3.w".into(), &self.c3.weight),
            ("c3.b".into(), &self.c3.bias),
            ("n3.scale".into(), &self.n3.scale),
            ("n3.shift".into(), &self.n3.shift),
            ("head.w".into(), &self.head.weight),
            ("head.b".into(), &self.head.bias),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param<F>)> {
        vec![
            ("c1.w".into(), &mut self.c1.weight),
            ("c1.b".into(), &mut self.c1.bias),
            ("c2.w".into(), &mut self.c2.weight),
            ("c2.b".into(), &mut self.c2.bias),
            ("n2.scale".into(), &mut self.n2.scale),
            ("n2.shift".into(), &mut self.n2.shift),
            ("c3.w".into(), &mut self.c3.weight),
            ("c3.b".into(), &mut self.c3.bias),
            ("n3.scale".into(), &mut self.n3.scale),
            ("n3.shift".into(), &mut self.n3.shift),
            ("head.w".into(), &mut self.head.weight),
            ("head.b".into(), &mut self.head.bias),
        ]
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

    #[test]
    fn scores_are_a_patch_map() {
        let mut rng = SeedRng::new(1);
        let d: Discriminator<f32> = Discriminator::new(
            &ArchConfig {
                base_filters: 2,
                residual_blocks: 0,
            },
            &mut rng,
        );
        let x = Tensor::<f32>::rand_uniform(&[2, 1, 64, 84], 0.0, 1.0, &mut rng);
        let (s, _) = d.forward(&x).unwrap();
        // 64x84 -> 32x42 -> 16x21 -> 8x10 -> 7x9 under k4 s2 p1 + final k4 s1 p1.
        assert_eq!(s.shape(), &[2, 1, 7, 9]);
        assert!(s.all_finite());
    }

    #[test]
    fn frozen_backward_only_produces_input_grads() {
        let mut rng = SeedRng::new(2);
        let arch = ArchConfig {
            base_filters: 2,
            residual_blocks: 0,
        };
        let mut d: Discriminator<f32> = Discriminator::new(&arch, &mut rng);
        let x = Tensor::<f32>::rand_uniform(&[1, 1, 64, 84], 0.0, 1.0, &mut rng);
        let (s, cache) = d.forward(&x).unwrap();
        let gy = Tensor::<f32>::full(s.shape(), 1.0);
        let gx = d.backward(&cache, &gy, false).unwrap();
        assert_eq!(gx.shape(), x.shape());
        for (name, p) in d.params() {
            assert!(
                p.grad.data().iter().all(|&v| v == 0.0),
                "gradient leaked into {name}"
            );
        }
    }

    #[test]
    fn trained_backward_reaches_every_param() {
        let mut rng = SeedRng::new(3);
        let arch = ArchConfig {
            base_filters: 2,
            residual_blocks: 0,
        };
        let mut d: Discriminator<f32> = Discriminator::new(&arch, &mut rng);
        let x = Tensor::<f32>::rand_uniform(&[1, 1, 64, 84], 0.0, 1.0, &mut rng);
        let (s, cache) = d.forward(&x).unwrap();
        let gy = Tensor::<f32>::full(s.shape(), 1.0);
        d.backward(&cache, &gy, true).unwrap();
        for (name, p) in d.params() {
            assert!(
                p.grad.data().iter().any(|&v| v != 0.0),
                "no gradient reached {name}"
            );
        }
    }
}
