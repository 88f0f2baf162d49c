//! Ancestral sampling with classifier-free guidance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spikeline_core::{EtfiImage, GrayImage};

use crate::blocks::BlockParams;
use crate::denoiser::{Denoiser, Step};
use crate::error::{DiffusionError, Result};
use crate::latent::{gray_from_latent, latent_from_gray, Latent};
use crate::schedule::{cfg_combine, reverse_step, NoiseSchedule};

/// Norms recorded after each reverse step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTrace {
    pub t: usize,
    /// RMS of the guided noise prediction.
    pub eps_rms: f64,
    /// RMS of `z_{t-1}`.
    pub z_rms: f64,
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub image: GrayImage,
    pub latent: Latent,
    pub trace: Vec<StepTrace>,
}

/// Samples an image conditioned on an ETFI frame.
///
/// `cfg_scale = None` runs only the conditional branch.
pub fn sample(
    denoiser: &dyn Denoiser,
    condition: &EtfiImage,
    blocks: &BlockParams,
    sched: &NoiseSchedule,
    cfg_scale: Option<f64>,
    seed: u64,
) -> Result<SampleOutput> {
    let cond = latent_from_gray(&condition.image, blocks.config.channels);
    sample_latent(denoiser, &cond, blocks, sched, cfg_scale, seed)
}

/// [`sample`] for a condition already in latent form.
pub fn sample_latent(
    denoiser: &dyn Denoiser,
    cond: &Latent,
    blocks: &BlockParams,
    sched: &NoiseSchedule,
    cfg_scale: Option<f64>,
    seed: u64,
) -> Result<SampleOutput> {
    if let Some(s) = cfg_scale {
        if !s.is_finite() {
            return Err(DiffusionError::Config(format!(
                "cfg scale {s} is not finite"
            )));
        }
    }
    let feats = blocks.encode_condition(cond)?;
    let uncond = feats.zeroed();
    let (c, h, w) = blocks.config.latent_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = Latent::randn(c, h, w, &mut rng);
    let mut trace = Vec::with_capacity(sched.steps());
    for t in (1..=sched.steps()).rev() {
        let step = Step {
            t,
            model_t: sched.model_timestep(t),
            alpha_bar: sched.alpha_bar(t),
        };
        let fused = blocks.fuse(&z, step.model_t, &feats.f_enc_hat)?;
        let eps_cond = denoiser.predict(&fused, step, &feats, true)?;
        let eps = match cfg_scale {
            None => eps_cond,
            Some(scale) => {
                let fused_u = blocks.fuse(&z, step.model_t, &uncond.f_enc_hat)?;
                let eps_uncond = denoiser.predict(&fused_u, step, &uncond, false)?;
                cfg_combine(&eps_cond, &eps_uncond, scale)?
            }
        };
        // Drawn on every step, used or not, so the stream never depends on σ.
        let noise = Latent::randn(c, h, w, &mut rng);
        z = reverse_step(&z, t, &eps, sched, &noise)?;
        trace.push(StepTrace {
            t,
            eps_rms: eps.rms(),
            z_rms: z.rms(),
        });
    }
    Ok(SampleOutput {
        image: gray_from_latent(&z),
        latent: z,
        trace,
    })
}
