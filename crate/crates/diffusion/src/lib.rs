//! Conditional denoising diffusion at toy scale.
//!
//! The pieces mirror a latent diffusion model with a ControlNet-style
//! condition branch, shrunk so that everything runs on a CPU in milliseconds:
//!
//! * [`schedule`]: linear-β DDPM schedule, forward noising, the reverse
//!   update, classifier-free guidance and the ε-prediction loss.
//! * [`blocks`]: the zero-initialised condition encoder and the
//!   ETFI-guided fusion module (cross-attention, linear, transformer blocks,
//!   zero-initialised output convolution), with hand-written backward passes.
//! * [`denoiser`]: the pluggable noise predictor contract plus an oracle and a
//!   small trainable convolutional predictor.
//! * [`sampler`], [`train`], [`checkpoint`]: the sampling loop, a toy
//!   training loop and a binary weight format.
//!
//! The latent space is the downscaled pixel space mapped to `[-1, 1]`.

pub mod blocks;
pub mod checkpoint;
pub mod denoiser;
pub mod error;
pub mod latent;
pub mod layers;
pub mod sampler;
pub mod schedule;
pub mod train;

pub use blocks::{BlockParams, ConditionFeatures, ModelConfig, TimestepEmbedding};
pub use checkpoint::Checkpoint;
pub use denoiser::{Denoiser, OracleDenoiser, Step, ToyDenoiser};

pub use error::{DiffusionError, Result};
pub use latent::{Latent, Tokens};
pub use sampler::{sample, sample_latent, SampleOutput, StepTrace};

pub use schedule::{
    cfg_combine, forward_diffuse, make_schedule, reverse_step, training_loss, NoiseSchedule,
    VarianceMode,
};
