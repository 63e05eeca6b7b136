//! Generator and discriminator objectives.
//!
//! Least-squares adversarial terms, an L1 cycle-consistency term weighted by
//! lambda, and least-squares terms against the mixed-pool discriminators
//! weighted by gamma. The loss functions are generic over [`Mapper`] /
//! [`Scorer`] so tests can swap a generator for [`IdentityMap`] and verify
//! the cycle term vanishes.
//!
//! Gradient isolation is structural: the generator objective walks
//! discriminators with parameter training disabled, and the discriminator
//! objective never backpropagates through a generator (fakes are detached).

use super::discriminator::{Discriminator, DiscriminatorCache};
use super::generator::{Generator, GeneratorCache};
use super::GanError;
use crate::neural::ops;
use crate::neural::{Scalar, Tensor};

type Result<T> = std::result::Result<T, GanError>;

/// Anything that maps a batch tensor to a same-shaped batch tensor and can
/// push gradients back through itself.
pub trait Mapper<F: Scalar> {
    type Cache;
    fn apply(&self, x: &Tensor<F>) -> Result<(Tensor<F>, Self::Cache)>;
    /// Accumulates this mapper's own parameter gradients and returns the
    /// input gradient.
    fn apply_backward(&mut self, cache: &Self::Cache, gy: &Tensor<F>) -> Result<Tensor<F>>;
}

impl<F: Scalar> Mapper<F> for Generator<F> {
    type Cache = GeneratorCache<F>;

    fn apply(&self, x: &Tensor<F>) -> Result<(Tensor<F>, Self::Cache)> {
        self.forward(x)
    }

    fn apply_backward(&mut self, cache: &Self::Cache, gy: &Tensor<F>) -> Result<Tensor<F>> {
        self.backward(cache, gy, true)
    }
}

/// Exact identity map; a stand-in generator for loss-identity tests.
pub struct IdentityMap;

impl<F: Scalar> Mapper<F> for IdentityMap {
    type Cache = ();

    fn apply(&self, x: &Tensor<F>) -> Result<(Tensor<F>, Self::Cache)> {
        Ok((x.clone(), ()))
    }

    fn apply_backward(&mut self, _cache: &Self::Cache, gy: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(gy.clone())
    }
}

/// Anything that maps a batch tensor to a patch-score tensor.
pub trait Scorer<F: Scalar> {
    type Cache;
    fn score(&self, x: &Tensor<F>) -> Result<(Tensor<F>, Self::Cache)>;
    /// Returns the input gradient; touches its own parameter gradients only
    /// when `train_params` is set.
    fn score_backward(
        &mut self,
        cache: &Self::Cache,
        gy: &Tensor<F>,
        train_params: bool,
    ) -> Result<Tensor<F>>;
}

impl<F: Scalar> Scorer<F> for Discriminator<F> {
    type Cache = DiscriminatorCache<F>;

    fn score(&self, x: &Tensor<F>) -> Result<(Tensor<F>, Self::Cache)> {
        self.forward(x)
    }

    fn score_backward(
        &mut self,
        cache: &Self::Cache,
        gy: &Tensor<F>,
        train_params: bool,
    ) -> Result<Tensor<F>> {
        self.backward(cache, gy, train_params)
    }
}

/// Constant-score stand-in for loss arithmetic tests.
pub struct ConstantScorer {
    pub value: f64,
    pub patch_shape: Vec<usize>,
}

impl<F: Scalar> Scorer<F> for ConstantScorer {
    type Cache = ();

    fn score(&self, x: &Tensor<F>) -> Result<(Tensor<F>, Self::Cache)> {
        let mut shape = vec![x.shape()[0]];
        shape.extend_from_slice(&self.patch_shape);
        Ok((Tensor::full(&shape, F::of(self.value)), ()))
    }

    fn score_backward(
        &mut self,
        _cache: &Self::Cache,
        _gy: &Tensor<F>,
        _train_params: bool,
    ) -> Result<Tensor<F>> {
        Err(GanError::Unsupported(
            "constant scorer has no input gradient",
        ))
    }
}

/// Components of the generator objective for one batch; `total` is the
/// weighted sum actually optimized.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GenLosses {
    pub adv_ab: f64,
    pub adv_ba: f64,
    pub cyc_aba: f64,
    pub cyc_bab: f64,
    pub mixed_ab: f64,
    pub mixed_ba: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub total: f64,
}

impl GenLosses {
    /// The defining composition; `total` always equals this.
    pub fn compose(&self) -> f64 {
        self.adv_ab
            + self.adv_ba
            + self.lambda * (self.cyc_aba + self.cyc_bab)
            + self.gamma * (self.mixed_ab + self.mixed_ba)
    }

    pub fn all_finite(&self) -> bool {
        [
            self.adv_ab,
            self.adv_ba,
            self.cyc_aba,
            self.cyc_bab,
            self.mixed_ab,
            self.mixed_ba,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("adv_ab", self.adv_ab),
            ("adv_ba", self.adv_ba),
            ("cyc_aba", self.cyc_aba),
            ("cyc_bab", self.cyc_bab),
            ("mixed_ab", self.mixed_ab),
            ("mixed_ba", self.mixed_ba),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Components of the discriminator objective for one batch. Each per-network
/// term is already the halved real/fake sum; `total` weights the mixed-pool
/// terms by gamma.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DiscLosses {
    pub d_a: f64,
    pub d_b: f64,
    pub d_a_mixed: f64,
    pub d_b_mixed: f64,
    pub gamma: f64,
    pub total: f64,
}

impl DiscLosses {
    pub fn compose(&self) -> f64 {
        self.d_a + self.d_b + self.gamma * (self.d_a_mixed + self.d_b_mixed)
    }

    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("d_a", self.d_a),
            ("d_b", self.d_b),
            ("d_a_mixed", self.d_a_mixed),
            ("d_b_mixed", self.d_b_mixed),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Generator objective over a batch pair, pushing gradients into the two
/// mappers only. Discriminators are walked with parameter training off.
#[allow(clippy::too_many_arguments)]
pub fn generator_losses_with<F, GAB, GBA, DA, DB, DAM, DBM>(
    g_ab: &mut GAB,
    g_ba: &mut GBA,
    d_a: &mut DA,
    d_b: &mut DB,
    d_a_m: &mut DAM,
    d_b_m: &mut DBM,
    batch_a: &Tensor<F>,
    batch_b: &Tensor<F>,
    lambda: f64,
    gamma: f64,
    backprop: bool,
) -> Result<GenLosses>
where
    F: Scalar,
    GAB: Mapper<F>,
    GBA: Mapper<F>,
    DA: Scorer<F>,
    DB: Scorer<F>,
    DAM: Scorer<F>,
    DBM: Scorer<F>,
{
    if batch_a.shape() != batch_b.shape() {
        return Err(GanError::BatchShape(format!(
            "domain batches differ: {:?} vs {:?}",
            batch_a.shape(),
            batch_b.shape()
        )));
    }

    // Forward.
    let (fake_b, c_ab) = g_ab.apply(batch_a)?;
    let (fake_a, c_ba) = g_ba.apply(batch_b)?;
    let (cyc_a, c_aba) = g_ba.apply(&fake_b)?;
    let (cyc_b, c_bab) = g_ab.apply(&fake_a)?;

    let (s_b, cd_b) = d_b.score(&fake_b)?;
    let (s_a, cd_a) = d_a.score(&fake_a)?;
    let (s_bm, cd_bm) = d_b_m.score(&fake_b)?;
    let (s_am, cd_am) = d_a_m.score(&fake_a)?;

    let one = F::one();
    let (adv_ab, g_s_b) = ops::mse_to_constant(&s_b, one);
    let (adv_ba, g_s_a) = ops::mse_to_constant(&s_a, one);
    let (mixed_ab, g_s_bm) = ops::mse_to_constant(&s_bm, one);
    let (mixed_ba, g_s_am) = ops::mse_to_constant(&s_am, one);
    let (cyc_aba, g_cyc_a, _) = ops::l1_diff(&cyc_a, batch_a)?;
    let (cyc_bab, g_cyc_b, _) = ops::l1_diff(&cyc_b, batch_b)?;

    let losses = GenLosses {
        adv_ab,
        adv_ba,
        cyc_aba,
        cyc_bab,
        mixed_ab,
        mixed_ba,
        lambda,
        gamma,
        total: adv_ab + adv_ba + lambda * (cyc_aba + cyc_bab) + gamma * (mixed_ab + mixed_ba),
    };
    if !backprop {
        return Ok(losses);
    }

    let lam = F::of(lambda);
    let gam = F::of(gamma);

    // Backward, fake_b route: adversarial + mixed + cycle A->B->A.
    let mut g_fake_b = d_b.score_backward(&cd_b, &g_s_b, false)?;
    if gamma != 0.0 {
        let mut g = d_b_m.score_backward(&cd_bm, &g_s_bm, false)?;
        g.scale(gam);
        g_fake_b.axpy(F::one(), &g)?;
    }
    if lambda != 0.0 {
        let mut g_cyc = g_cyc_a;
        g_cyc.scale(lam);
        let g = g_ba.apply_backward(&c_aba, &g_cyc)?;
        g_fake_b.axpy(F::one(), &g)?;
    }
    g_ab.apply_backward(&c_ab, &g_fake_b)?;

    // Backward, fake_a route: symmetric.
    let mut g_fake_a = d_a.score_backward(&cd_a, &g_s_a, false)?;
    if gamma != 0.0 {
        let mut g = d_a_m.score_backward(&cd_am, &g_s_am, false)?;
        g.scale(gam);
        g_fake_a.axpy(F::one(), &g)?;
    }
    if lambda != 0.0 {
        let mut g_cyc = g_cyc_b;
        g_cyc.scale(lam);
        let g = g_ab.apply_backward(&c_bab, &g_cyc)?;
        g_fake_a.axpy(F::one(), &g)?;
    }
    g_ba.apply_backward(&c_ba, &g_fake_a)?;

    Ok(losses)
}

/// One least-squares discriminator term: 0.5 * [mse(D(real), 1) +
/// mse(D(fake), 0)], with gradients scaled by `weight`.
fn lsgan_disc_term<F: Scalar, D: Scorer<F>>(
    d: &mut D,
    real: &Tensor<F>,
    fake: &Tensor<F>,
    weight: f64,
    backprop: bool,
) -> Result<f64> {
    let (s_real, c_real) = d.score(real)?;
    let (loss_real, mut g_real) = ops::mse_to_constant(&s_real, F::one());
    let (s_fake, c_fake) = d.score(fake)?;
    let (loss_fake, mut g_fake) = ops::mse_to_constant(&s_fake, F::zero());
    if backprop {
        let half_w = F::of(0.5 * weight);
        g_real.scale(half_w);
        g_fake.scale(half_w);
        d.score_backward(&c_real, &g_real, true)?;
        d.score_backward(&c_fake, &g_fake, true)?;
    }
    Ok(0.5 * (loss_real + loss_fake))
}

/// Discriminator objective over one batch triple. The fake batches are
/// detached: no gradient reaches whatever produced them.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_losses_with<F, DA, DB, DAM, DBM>(
    d_a: &mut DA,
    d_b: &mut DB,
    d_a_m: &mut DAM,
    d_b_m: &mut DBM,
    batch_a: &Tensor<F>,
    batch_b: &Tensor<F>,
    batch_m: &Tensor<F>,
    fake_a: &Tensor<F>,
    fake_b: &Tensor<F>,
    gamma: f64,
    backprop: bool,
) -> Result<DiscLosses>
where
    F: Scalar,
    DA: Scorer<F>,
    DB: Scorer<F>,
    DAM: Scorer<F>,
    DBM: Scorer<F>,
{
    let d_a_loss = lsgan_disc_term(d_a, batch_a, fake_a, 1.0, backprop)?;
    let d_b_loss = lsgan_disc_term(d_b, batch_b, fake_b, 1.0, backprop)?;
    let d_a_mixed = lsgan_disc_term(d_a_m, batch_m, fake_a, gamma, backprop)?;
    let d_b_mixed = lsgan_disc_term(d_b_m, batch_m, fake_b, gamma, backprop)?;
    Ok(DiscLosses {
        d_a: d_a_loss,
        d_b: d_b_loss,
        d_a_mixed,
        d_b_mixed,
        gamma,
        total: d_a_loss + d_b_loss + gamma * (d_a_mixed + d_b_mixed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cyclegan::{ArchConfig, CycleGan};
    use crate::rng::SeedRng;

    fn small_model() -> CycleGan<f32> {
        CycleGan::new(
            &ArchConfig {
                base_filters: 2,
                residual_blocks: 1,
            },
            &crate::neural::AdamConfig::default(),
            7,
        )
    }

    fn batch(rng: &mut SeedRng, n: usize) -> Tensor<f32> {
        let mut t = Tensor::<f32>::zeros(&[n, 1, 64, 84]);
        for v in t.data_mut() {
            *v = if rng.below(10) == 0 { 1.0 } else { 0.0 };
        }
        t
    }

    #[test]
    fn identity_generators_zero_the_cycle_terms() {
        let mut rng = SeedRng::new(1);
        let a = batch(&mut rng, 2);
        let b = batch(&mut rng, 2);
        let mut m = small_model();
        let losses = generator_losses_with(
            &mut IdentityMap,
            &mut IdentityMap,
            &mut m.d_a,
            &mut m.d_b,
            &mut m.d_a_m,
            &mut m.d_b_m,
            &a,
            &b,
            10.0,
            1.0,
            false,
        )
        .unwrap();
        assert_eq!(losses.cyc_aba, 0.0);
        assert_eq!(losses.cyc_bab, 0.0);
    }

    #[test]
    fn zero_weights_isolate_the_adversarial_terms() {
        let mut rng = SeedRng::new(2);
        let a = batch(&mut rng, 2);
        let b = batch(&mut rng, 2);
        let mut m = small_model();
        let losses = m.generator_losses(&a, &b, 0.0, 0.0).unwrap();
        assert_eq!(losses.total, losses.adv_ab + losses.adv_ba);
    }

    #[test]
    fn constant_one_scorer_gives_half_discriminator_loss() {
        // Hand arithmetic: D(anything) = 1 makes the real term 0 and the
        // fake term 1, so each lsgan term is 1/2.
        let mut rng = SeedRng::new(3);
        let a = batch(&mut rng, 2);
        let b = batch(&mut rng, 2);
        let m_batch = batch(&mut rng, 2);
        let mut c1 = ConstantScorer {
            value: 1.0,
            patch_shape: vec![1, 7, 9],
        };
        let mut c2 = ConstantScorer {
            value: 1.0,
            patch_shape: vec![1, 7, 9],
        };
        let mut c3 = ConstantScorer {
            value: 1.0,
            patch_shape: vec![1, 7, 9],
        };
        let mut c4 = ConstantScorer {
            value: 1.0,
            patch_shape: vec![1, 7, 9],
        };
        let losses = discriminator_losses_with(
            &mut c1, &mut c2, &mut c3, &mut c4, &a, &b, &m_batch, &b, &a, 1.0, false,
        )
        .unwrap();
        assert_eq!(losses.d_a, 0.5);
        assert_eq!(losses.d_b, 0.5);
        assert_eq!(losses.d_a_mixed, 0.5);
        assert_eq!(losses.d_b_mixed, 0.5);
        assert_eq!(losses.total, 2.0);
    }

    #[test]
    fn gamma_zero_removes_mixed_terms_from_the_total() {
        let mut rng = SeedRng::new(4);
        let a = batch(&mut rng, 2);
        let b = batch(&mut rng, 2);
        let m_batch = batch(&mut rng, 4);
        let mut m = small_model();
        let losses = m.discriminator_losses(&a, &b, &m_batch, 0.0).unwrap();
        assert_eq!(losses.total, losses.d_a + losses.d_b);
    }

    #[test]
    fn totals_match_their_composition() {
        let mut rng = SeedRng::new(5);
        let a = batch(&mut rng, 2);
        let b = batch(&mut rng, 2);
        let m_batch = batch(&mut rng, 2);
        let mut m = small_model();
        let g = m.generator_losses(&a, &b, 10.0, 1.0).unwrap();
        assert!((g.total - g.compose()).abs() <= 1e-6 * g.total.abs().max(1.0));
        let d = m.discriminator_losses(&a, &b, &m_batch, 1.0).unwrap();
        assert!((d.total - d.compose()).abs() <= 1e-6 * d.total.abs().max(1.0));
    }

    #[test]
    fn generator_objective_leaves_discriminators_untouched() {
        let mut rng = SeedRng::new(6);
        let a = batch(&mut rng, 2);
        let b = batch(&mut rng, 2);
        let mut m = small_model();
        m.zero_all_grads();
        m.generator_losses(&a, &b, 10.0, 1.0).unwrap();
        for (net, d) in [
            ("d_a", &m.d_a),
            ("d_b", &m.d_b),
            ("d_a_m", &m.d_a_m),
            ("d_b_m", &m.d_b_m),
        ] {
            for (name, p) in d.params() {
                assert!(
                    p.grad.data().iter().all(|&v| v == 0.0),
                    "generator objective leaked into {net}.{name}"
                );
            }
        }
        // And it must reach the generators.
        let touched = m
            .g_ab
            .params()
            .iter()
            .any(|(_, p)| p.grad.data().iter().any(|&v| v != 0.0));
        assert!(touched);
    }

    #[test]
    fn discriminator_objective_leaves_generators_untouched() {
        let mut rng = SeedRng::new(7);
        let a = batch(&mut rng, 2);
        let b = batch(&mut rng, 2);
        let m_batch = batch(&mut rng, 2);
        let mut m = small_model();
        m.zero_all_grads();
        m.discriminator_losses(&a, &b, &m_batch, 1.0).unwrap();
        for (net, g) in [("g_ab", &m.g_ab), ("g_ba", &m.g_ba)] {
            for (name, p) in g.params() {
                assert!(
                    p.grad.data().iter().all(|&v| v == 0.0),
                    "discriminator objective leaked into {net}.{name}"
                );
            }
        }
        let touched = m
            .d_a
            .params()
            .iter()
            .any(|(_, p)| p.grad.data().iter().any(|&v| v != 0.0));
        assert!(touched);
    }
}
