//! WGAN-GP downscaling model: generator, critic, losses, optimizer,
//! training loop, checkpoints and ensemble sampling.
//!
//! Networks are written once against the generic [`Tape`](crate::tape::Tape)
//! so the same code runs in `f32` for training and in `f64` for gradient
//! checking.

mod adam;
mod checkpoint;
mod ensemble;
mod gradcheck;
mod loss;
mod net;
mod train;

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::preprocess::{PreprocessError, NOISE_CHANNELS};
use crate::tape::{Scalar, Tape, Tensor, Var};

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use ensemble::{forecast_region, sample_ensemble, score_checkpoint, EnsembleForecast};
pub use gradcheck::{grad_check, tiny_config, GradCheckReport, TensorCheck};
pub use loss::{
    content_loss, critic_loss, generator_loss, gradient_penalty, CriticTerms, GeneratorTerms, StepInputs, StepLosses,
};
pub use net::{Critic, Generator};
pub use train::{train, validation_crps, LossRecord, TrainOutcome, TrainSplit, Trainer};

/// Number of LR predictor channels.
pub const PREDICTOR_CHANNELS: usize = 9;
/// Leaky-ReLU slope used throughout.
pub const LEAK: f64 = 0.2;
/// LR to HR upsampling: nearest x5 then 2x2 average pooling.
pub const UPSAMPLE: usize = 5;
pub const POOL: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite {what} at step {step}; last good checkpoint: {last_good:?}")]
    Divergence {
        what: String,
        step: usize,
        last_good: Option<PathBuf>,
    },
    #[error("malformed checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Store(#[from] crate::datastore::StoreError),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
    #[error(transparent)]
    Verify(#[from] crate::verify::VerifyError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub filters: usize,
    pub residual_blocks: usize,
    pub noise_channels: usize,
    pub use_static_inputs: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            filters: 128,
            residual_blocks: 3,
            noise_channels: NOISE_CHANNELS,
            use_static_inputs: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriticConfig {
    pub filters: usize,
    pub residual_blocks: usize,
    pub use_static_inputs: bool,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            filters: 256,
            residual_blocks: 3,
            use_static_inputs: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_gen: f64,
    pub lr_critic: f64,
    pub content_weight: f64,
    pub gp_weight: f64,
    pub content_ensemble: usize,
    pub epochs: usize,
    pub critic_steps_per_gen: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// LR crop edge length in cells.
    pub lr_patch: usize,
    /// Generator updates per epoch; `None` means one pass over the training
    /// hours (`hours / batch_size`).
    pub steps_per_epoch: Option<usize>,
    /// Validation scores every `val_stride`-th hour.
    pub val_stride: usize,
    pub val_members: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_gen: 0.005,
            lr_critic: 0.0005,
            content_weight: 300.0,
            gp_weight: 10.0,
            content_ensemble: 8,
            epochs: 5,
            critic_steps_per_gen: 5,
            adam_beta1: 0.5,
            adam_beta2: 0.9,
            batch_size: 8,
            seed: 0,
            lr_patch: crate::grid::DEFAULT_LR_PATCH,
            steps_per_epoch: None,
            val_stride: 24,
            val_members: 8,
        }
    }
}

/// Everything needed to build and train a model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub generator: GeneratorConfig,
    pub critic: CriticConfig,
    pub train: TrainConfig,
}

impl ModelConfig {
    /// A few-thousand-parameter configuration for CPU experiments.
    pub fn desk() -> Self {
        Self {
            generator: GeneratorConfig {
                filters: 8,
                residual_blocks: 1,
                ..GeneratorConfig::default()
            },
            critic: CriticConfig {
                filters: 8,
                residual_blocks: 1,
                ..CriticConfig::default()
            },
            train: TrainConfig {
                lr_patch: 4,
                ..TrainConfig::default()
            },
        }
    }

    /// Both networks with or without static inputs.
    pub fn with_static_inputs(mut self, on: bool) -> Self {
        self.generator.use_static_inputs = on;
        self.critic.use_static_inputs = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        let checks = [
            (self.generator.filters > 0, "generator.filters must be positive"),
            (self.critic.filters > 0, "critic.filters must be positive"),
            (t.lr_gen > 0.0 && t.lr_critic > 0.0, "learning rates must be positive"),
            (
                t.content_weight >= 0.0 && t.gp_weight >= 0.0,
                "loss weights must be non-negative",
            ),
            (t.content_ensemble > 0, "content_ensemble must be positive"),
            (t.critic_steps_per_gen > 0, "critic_steps_per_gen must be positive"),
            (t.batch_size > 0, "batch_size must be positive"),
            (t.lr_patch > 0, "lr_patch must be positive"),
            (
                t.val_members > 0 && t.val_stride > 0,
                "validation settings must be positive",
            ),
            (
                (0.0..1.0).contains(&t.adam_beta1) && (0.0..1.0).contains(&t.adam_beta2),
                "adam betas must lie in [0, 1)",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(ModelError::Config((*msg).into())),
            None => Ok(()),
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Ordered, named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<f32>>,
}

impl ParamSet {
    fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// He-normal convolution weight plus zero bias.
    fn conv(&mut self, rng: &mut ChaCha8Rng, name: &str, out: usize, inp: usize, k: usize, gain: f64) {
        let fan_in = (inp * k * k) as f64;
        let normal = Normal::new(0.0, gain * (2.0 / fan_in).sqrt()).expect("valid std");
        let w = (0..out * inp * k * k).map(|_| normal.sample(rng) as f32).collect();
        self.push(format!("{name}.w"), Tensor::new(vec![out, inp, k, k], w));
        self.push(format!("{name}.b"), Tensor::zeros(&[out]));
    }

    fn dense(&mut self, rng: &mut ChaCha8Rng, name: &str, out: usize, inp: usize) {
        let normal = Normal::new(0.0, (1.0 / inp as f64).sqrt()).expect("valid std");
        let w = (0..out * inp).map(|_| normal.sample(rng) as f32).collect();
        self.push(format!("{name}.w"), Tensor::new(vec![out, inp], w));
        self.push(format!("{name}.b"), Tensor::zeros(&[out]));
    }

    fn push(&mut self, name: String, t: Tensor<f32>) {
        self.names.push(name);
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Places every tensor on `tape` as a leaf, converted to `T`.
    pub fn leaves<T: Scalar>(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.cast())).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

pub(crate) fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
