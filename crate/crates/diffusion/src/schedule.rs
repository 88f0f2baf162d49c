//! DDPM noise schedule and the closed-form pieces of the diffusion process.

use crate::error::{DiffusionError, Result};
use crate::latent::Latent;

pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
pub const DEFAULT_SAMPLING_STEPS: usize = 50;
pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const DEFAULT_CFG_SCALE: f64 = 2.0;

/// How much fresh noise the reverse step injects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceMode {
    /// Deterministic reverse updates.
    Zero,
    /// `σ_t = √β_t`, except `σ_1 = 0` so the last step returns the mean.
    #[default]
    Beta,
}

/// Per-step coefficients, indexed by `t` in `1..=steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
    /// Timestep fed to the network's time embedding at each step.
    timesteps: Vec<usize>,
    variance: VarianceMode,
}

/// Linear β from `beta_start` to `beta_end` over `steps` steps.
pub fn make_schedule(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    variance: VarianceMode,
) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(DiffusionError::InvalidSchedule(
            "steps must be at least 1".into(),
        ));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(DiffusionError::InvalidSchedule(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
        )));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    Ok(NoiseSchedule::assemble(
        beta,
        alpha,
        alpha_bar,
        (1..=steps).collect(),
        variance,
    ))
}

impl NoiseSchedule {
    fn assemble(
        beta: Vec<f64>,
        alpha: Vec<f64>,
        alpha_bar: Vec<f64>,
        timesteps: Vec<usize>,
        variance: VarianceMode,
    ) -> Self {
        let sigma = beta
            .iter()
            .enumerate()
            .map(|(i, b)| match variance {
                VarianceMode::Beta if i > 0 => b.sqrt(),
                _ => 0.0,
            })
            .collect();
        Self {
            beta,
            alpha,
            alpha_bar,
            sigma,
            timesteps,
            variance,
        }
    }

    /// Subsamples a long training schedule to `steps` evenly spaced steps.
    ///
    /// Step `i` uses training timestep `(i - 1) * (T / steps) + 1`; its β is
    /// chosen so the cumulative products match the training schedule exactly
    /// at the retained timesteps.
    pub fn strided(train: &NoiseSchedule, steps: usize) -> Result<NoiseSchedule> {
        let total = train.steps();
        if steps == 0 || steps > total {
            return Err(DiffusionError::InvalidSchedule(format!(
                "cannot take {steps} steps from a {total}-step schedule"
            )));
        }
        let stride = total / steps;
        let timesteps: Vec<usize> = (0..steps).map(|i| i * stride + 1).collect();
        let alpha_bar: Vec<f64> = timesteps.iter().map(|&t| train.alpha_bar(t)).collect();
        let mut prev = 1.0;
        let mut alpha = Vec::with_capacity(steps);
        for &ab in &alpha_bar {
            alpha.push(ab / prev);
            prev = ab;
        }
        let beta = alpha.iter().map(|a| 1.0 - a).collect();
        let model_t = timesteps.iter().map(|&t| train.timesteps[t - 1]).collect();
        Ok(NoiseSchedule::assemble(
            beta,
            alpha,
            alpha_bar,
            model_t,
            train.variance,
        ))
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn variance(&self) -> VarianceMode {
        self.variance
    }

    pub fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(DiffusionError::InvalidTimestep {
                t,
                steps: self.steps(),
            });
        }
        Ok(())
    }

    // The accessors below panic on an out-of-range `t`; call `check` first
    // where `t` comes from outside.

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// `ᾱ_{t-1}`, with `ᾱ_0 = 1`.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 1 {
            1.0
        } else {
            self.alpha_bar[t - 2]
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }

    pub fn model_timestep(&self, t: usize) -> usize {
        self.timesteps[t - 1]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}

/// `z_t = √ᾱ_t · z_0 + √(1 − ᾱ_t) · ε`.
pub fn forward_diffuse(
    z0: &Latent,
    t: usize,
    eps: &Latent,
    sched: &NoiseSchedule,
) -> Result<Latent> {
    z0.ensure_shape(eps)?;
    sched.check(t)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(z0.zip_map(eps, |z, e| a * z + b * e))
}

/// One ancestral DDPM update from `z_t` to `z_{t-1}`.
pub fn reverse_step(
    z_t: &Latent,
    t: usize,
    eps_pred: &Latent,
    sched: &NoiseSchedule,
    noise: &Latent,
) -> Result<Latent> {
    z_t.ensure_shape(eps_pred)?;
    z_t.ensure_shape(noise)?;
    sched.check(t)?;
    let coef = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv = 1.0 / sched.alpha(t).sqrt();
    let sigma = sched.sigma(t);
    let data = z_t
        .data
        .iter()
        .zip(&eps_pred.data)
        .zip(&noise.data)
        .map(|((z, e), n)| (z - coef * e) * inv + sigma * n)
        .collect();
    Latent::from_vec(z_t.channels, z_t.height, z_t.width, data)
}

/// Classifier-free guidance: `ε_u + s · (ε_c − ε_u)`.
pub fn cfg_combine(eps_cond: &Latent, eps_uncond: &Latent, scale: f64) -> Result<Latent> {
    eps_cond.ensure_shape(eps_uncond)?;
    Ok(eps_uncond.zip_map(eps_cond, |u, c| u + scale * (c - u)))
}

/// Mean squared error between predicted and true noise.
pub fn training_loss(eps_pred: &Latent, eps: &Latent) -> Result<f64> {
    eps_pred.ensure_shape(eps)?;
    if eps.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = eps_pred
        .data
        .iter()
        .zip(&eps.data)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(sum / eps.len() as f64)
}
