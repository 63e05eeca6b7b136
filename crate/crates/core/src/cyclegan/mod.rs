//! Sentiment-transfer model: generators between the negative (A) and
//! positive (B) phrase domains, one least-squares discriminator per domain,
//! and one mixed-pool discriminator per direction that scores generated
//! phrases against the joined pool of both classes, pulling them toward the
//! shared manifold of real music.

mod checkpoint;
mod discriminator;
mod generator;
mod layers;
mod losses;
mod train;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, load_checkpoint_as,
    save_checkpoint, save_checkpoint_with_progress, Checkpoint,
};
pub use discriminator::Discriminator;
pub use generator::Generator;
pub use losses::{
    discriminator_losses_with, generator_losses_with, ConstantScorer, DiscLosses, GenLosses,
    IdentityMap, Mapper, Scorer,
};
pub use train::{train, HistoryRow, NullSink, ProgressSink, TrainingHistory};

use crate::dataset::DatasetError;
use crate::midi::MidiError;
use crate::neural::{AdamConfig, AdamState, NeuralError, Param, Scalar, Tensor};
use crate::pianoroll::{
    self, PianoRollPhrase, RollError, PHRASE_CELLS, PHRASE_PITCHES, PHRASE_STEPS,
};
use crate::rng::SeedRng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GanError {
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Roll(#[from] RollError),
    #[error(transparent)]
    Midi(#[from] MidiError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("batch shape problem: {0}")]
    BatchShape(String),
    #[error("dataset is empty or too small for one batch")]
    EmptyDataset,
    #[error("non-finite loss component '{component}' at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        component: String,
        epoch: usize,
        batch: usize,
    },
    #[error("bad training config: {0}")]
    BadConfig(String),
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes (expected \"MSTC\")")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u16),
    #[error("checkpoint does not fit the architecture: {0}")]
    CheckpointShape(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("unsupported: {0}")]
    Unsupported(&'static str),
}

/// Network sizing. Defaults follow the desk-scale layout: filter widths
/// 64 -> 128 -> 256 through the encoder and 6 residual blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArchConfig {
    pub base_filters: usize,
    pub residual_blocks: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            base_filters: 64,
            residual_blocks: 6,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<(), GanError> {
        if self.base_filters == 0 {
            return Err(GanError::BadConfig("base_filters must be positive".into()));
        }
        Ok(())
    }
}

/// Training hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the L1 cycle-consistency term.
    pub lambda_cycle: f64,
    /// Weight of the mixed-pool adversarial terms.
    pub gamma_mixed: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (when a directory is given).
    pub checkpoint_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 16,
            lambda_cycle: 10.0,
            gamma_mixed: 1.0,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            seed: 42,
            checkpoint_every: 10,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), GanError> {
        let positive = [
            ("epochs", self.epochs as f64),
            ("batch_size", self.batch_size as f64),
            ("lr", self.lr),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("checkpoint_every", self.checkpoint_every as f64),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(GanError::BadConfig(format!("{name} must be positive")));
            }
        }
        if self.lambda_cycle < 0.0 || self.gamma_mixed < 0.0 {
            return Err(GanError::BadConfig(
                "lambda_cycle and gamma_mixed must be non-negative".into(),
            ));
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(GanError::BadConfig("betas must be below 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: 1e-8,
        }
    }
}

/// Transfer direction: A is the negative domain, B the positive one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    AtoB,
    BtoA,
}

/// The full model: two generators, two domain discriminators, two
/// mixed-pool discriminators, and one optimizer state per network.
pub struct CycleGan<F: Scalar> {
    pub arch: ArchConfig,
    pub g_ab: Generator<F>,
    pub g_ba: Generator<F>,
    pub d_a: Discriminator<F>,
    pub d_b: Discriminator<F>,
    pub d_a_m: Discriminator<F>,
    pub d_b_m: Discriminator<F>,
    pub opt_g_ab: AdamState<F>,
    pub opt_g_ba: AdamState<F>,
    pub opt_d_a: AdamState<F>,
    pub opt_d_b: AdamState<F>,
    pub opt_d_a_m: AdamState<F>,
    pub opt_d_b_m: AdamState<F>,
}

/// Fixed network order used by checkpoints and parameter walks.
pub const NETWORK_NAMES: [&str; 6] = ["g_ab", "g_ba", "d_a", "d_b", "d_a_m", "d_b_m"];

impl<F: Scalar> CycleGan<F> {
    /// Fresh model with seeded initialization (kernels N(0, 0.02),
    /// normalization at identity, biases zero).
    pub fn new(arch: &ArchConfig, adam: &AdamConfig, seed: u64) -> Self {
        let mut rng = SeedRng::new(seed);
        let g_ab = Generator::new(arch, &mut rng);
        let g_ba = Generator::new(arch, &mut rng);
        let d_a = Discriminator::new(arch, &mut rng);
        let d_b = Discriminator::new(arch, &mut rng);
        let d_a_m = Discriminator::new(arch, &mut rng);
        let d_b_m = Discriminator::new(arch, &mut rng);
        let state = |params: Vec<(String, &Param<F>)>| {
            let refs: Vec<&Param<F>> = params.into_iter().map(|(_, p)| p).collect();
            AdamState::new(*adam, &refs)
        };
        let opt_g_ab = state(g_ab.params());
        let opt_g_ba = state(g_ba.params());
        let opt_d_a = state(d_a.params());
        let opt_d_b = state(d_b.params());
        let opt_d_a_m = state(d_a_m.params());
        let opt_d_b_m = state(d_b_m.params());
        Self {
            arch: *arch,
            g_ab,
            g_ba,
            d_a,
            d_b,
            d_a_m,
            d_b_m,
            opt_g_ab,
            opt_g_ba,
            opt_d_a,
            opt_d_b,
            opt_d_a_m,
            opt_d_b_m,
        }
    }

    /// All parameters as `network.param` names, in checkpoint order.
    pub fn named_params(&self) -> Vec<(String, &Param<F>)> {
        let mut v = Vec::new();
        let nets: [(&str, Vec<(String, &Param<F>)>); 6] = [
            ("g_ab", self.g_ab.params()),
            ("g_ba", self.g_ba.params()),
            ("d_a", self.d_a.params()),
            ("d_b", self.d_b.params()),
            ("d_a_m", self.d_a_m.params()),
            ("d_b_m", self.d_b_m.params()),
        ];
        for (net, params) in nets {
            for (name, p) in params {
                v.push((format!("{net}.{name}"), p));
            }
        }
        v
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param<F>)> {
        let mut v: Vec<(String, &mut Param<F>)> = Vec::new();
        for (name, p) in self.g_ab.params_mut() {
            v.push((format!("g_ab.{name}"), p));
        }
        for (name, p) in self.g_ba.params_mut() {
            v.push((format!("g_ba.{name}"), p));
        }
        for (name, p) in self.d_a.params_mut() {
            v.push((format!("d_a.{name}"), p));
        }
        for (name, p) in self.d_b.params_mut() {
            v.push((format!("d_b.{name}"), p));
        }
        for (name, p) in self.d_a_m.params_mut() {
            v.push((format!("d_a_m.{name}"), p));
        }
        for (name, p) in self.d_b_m.params_mut() {
            v.push((format!("d_b_m.{name}"), p));
        }
        v
    }

    pub fn zero_all_grads(&mut self) {
        for (_, p) in self.named_params_mut() {
            p.zero_grad();
        }
    }

    /// Generator objective on one batch pair; gradients land in the
    /// generators only.
    pub fn generator_losses(
        &mut self,
        batch_a: &Tensor<F>,
        batch_b: &Tensor<F>,
        lambda: f64,
        gamma: f64,
    ) -> Result<GenLosses, GanError> {
        losses::generator_losses_with(
            &mut self.g_ab,
            &mut self.g_ba,
            &mut self.d_a,
            &mut self.d_b,
            &mut self.d_a_m,
            &mut self.d_b_m,
            batch_a,
            batch_b,
            lambda,
            gamma,
            true,
        )
    }

    /// Discriminator objective on one batch triple; fakes are generated
    /// internally and detached, so gradients land in the discriminators only.
    pub fn discriminator_losses(
        &mut self,
        batch_a: &Tensor<F>,
        batch_b: &Tensor<F>,
        batch_m: &Tensor<F>,
        gamma: f64,
    ) -> Result<DiscLosses, GanError> {
        let (fake_b, _) = self.g_ab.forward(batch_a)?;
        let (fake_a, _) = self.g_ba.forward(batch_b)?;
        losses::discriminator_losses_with(
            &mut self.d_a,
            &mut self.d_b,
            &mut self.d_a_m,
            &mut self.d_b_m,
            batch_a,
            batch_b,
            batch_m,
            &fake_a,
            &fake_b,
            gamma,
            true,
        )
    }
}

/// One phrase as a `[1, 1, 64, 84]` tensor of 0/1 values.
pub fn phrase_to_tensor<F: Scalar>(phrase: &PianoRollPhrase) -> Tensor<F> {
    let data = phrase
        .cells()
        .iter()
        .map(|&c| if c == 1 { F::one() } else { F::zero() })
        .collect();
    Tensor::new(vec![1, 1, PHRASE_STEPS, PHRASE_PITCHES], data)
        .expect("phrase dimensions are fixed")
}

/// A batch of phrases as `[N, 1, 64, 84]`.
pub fn phrases_to_batch<F: Scalar>(phrases: &[&PianoRollPhrase]) -> Result<Tensor<F>, GanError> {
    if phrases.is_empty() {
        return Err(GanError::EmptyDataset);
    }
    let mut data = Vec::with_capacity(phrases.len() * PHRASE_CELLS);
    for p in phrases {
        data.extend(
            p.cells()
                .iter()
                .map(|&c| if c == 1 { F::one() } else { F::zero() }),
        );
    }
    Ok(Tensor::new(
        vec![phrases.len(), 1, PHRASE_STEPS, PHRASE_PITCHES],
        data,
    )?)
}

/// Run one phrase through the direction's generator and binarize at 0.5.
///
/// Deterministic for fixed weights, and always yields a structurally valid
/// phrase regardless of training state.
pub fn transfer<F: Scalar>(
    model: &CycleGan<F>,
    phrase: &PianoRollPhrase,
    direction: Direction,
) -> Result<PianoRollPhrase, GanError> {
    let x = phrase_to_tensor::<F>(phrase);
    let generator = match direction {
        Direction::AtoB => &model.g_ab,
        Direction::BtoA => &model.g_ba,
    };
    let (y, _) = generator.forward(&x)?;
    Ok(pianoroll::binarize(y.data(), F::of(0.5))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midi;

    fn tiny_model() -> CycleGan<f32> {
        CycleGan::new(
            &ArchConfig {
                base_filters: 2,
                residual_blocks: 1,
            },
            &AdamConfig::default(),
            11,
        )
    }

    fn random_phrase(seed: u64) -> PianoRollPhrase {
        let mut rng = SeedRng::new(seed);
        let mut p = PianoRollPhrase::zeros();
        for _ in 0..120 {
            p.set(rng.below(PHRASE_STEPS), rng.below(PHRASE_PITCHES), true);
        }
        p
    }

    #[test]
    fn transfer_produces_valid_phrases_from_untrained_models() {
        let model = tiny_model();
        for seed in 0..5 {
            let p = random_phrase(seed);
            let out = transfer(&model, &p, Direction::AtoB).unwrap();
            // Constructor invariants guarantee shape and binary cells; also
            // check the emitted MIDI validates clean.
            let file = pianoroll::phrases_to_midi(&[out], &pianoroll::ConversionConfig::default())
                .unwrap();
            let report = midi::validate_smf(&midi::write_smf(&file).unwrap());
            assert!(report.is_valid());
            assert!(!report.has_warning("unmatched-note-on"));
        }
    }

    #[test]
    fn transfer_is_deterministic_for_fixed_weights() {
        let model = tiny_model();
        let p = random_phrase(3);
        let a = transfer(&model, &p, Direction::BtoA).unwrap();
        let b = transfer(&model, &p, Direction::BtoA).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn saturated_generator_yields_all_zero_phrase() {
        let mut model = tiny_model();
        // Zero every weight, then push the head bias far negative: the
        // sigmoid saturates near 0 and binarization clears every cell.
        for (_, p) in model.g_ab.params_mut() {
            p.value.fill(0.0);
        }
        for v in model.g_ab.head.bias.value.data_mut() {
            *v = -30.0;
        }
        let out = transfer(&model, &random_phrase(4), Direction::AtoB).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn named_params_cover_six_networks_in_order() {
        let model = tiny_model();
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        for net in NETWORK_NAMES {
            assert!(names.iter().any(|n| n.starts_with(&format!("{net}."))));
        }
        let mut model = model;
        let mut_names: Vec<String> = model
            .named_params_mut()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        assert_eq!(names, mut_names);
    }

    #[test]
    fn phrase_tensor_round_trip() {
        let p = random_phrase(9);
        let t = phrase_to_tensor::<f32>(&p);
        assert_eq!(t.shape(), &[1, 1, 64, 84]);
        let back = pianoroll::binarize(t.data(), 0.5).unwrap();
        assert_eq!(back, p);
    }
}
