//! Noise predictors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{ConditionFeatures, TimestepEmbedding};
use crate::error::{DiffusionError, Result};
use crate::latent::{Latent, Tokens};
use crate::layers::{silu, silu_grad, Conv2d, Linear, Module, Param};

/// Where in the schedule a prediction is requested.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    /// Sampling step, `1..=steps`.
    pub t: usize,
    /// Timestep seen by the time embedding.
    pub model_t: usize,
    pub alpha_bar: f64,
}

/// Predicts the noise in a fused latent.
///
/// `guided` is true for the conditional branch of classifier-free guidance;
/// the unconditional branch receives zeroed features and `guided == false`.
pub trait Denoiser {
    fn predict(
        &self,
        fused: &Latent,
        step: Step,
        cond: &ConditionFeatures,
        guided: bool,
    ) -> Result<Latent>;
}

/// Returns exactly the noise that separates `fused` from a fixed target, so
/// that sampling collapses onto the target.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    pub target: Latent,
}

impl OracleDenoiser {
    pub fn new(target: Latent) -> Self {
        Self { target }
    }
}

impl Denoiser for OracleDenoiser {
    fn predict(
        &self,
        fused: &Latent,
        step: Step,
        _: &ConditionFeatures,
        _: bool,
    ) -> Result<Latent> {
        fused.ensure_shape(&self.target)?;
        let a = step.alpha_bar.sqrt();
        let b = (1.0 - step.alpha_bar).sqrt();
        Ok(fused.zip_map(&self.target, |z, x| (z - a * x) / b))
    }
}

/// A one-hidden-layer convolutional predictor over `[fused, F_enc]`.
///
/// ```text
/// x = concat(fused, f_enc)
/// ε = conv_out(silu(conv_in(x) + time(t_emb))) + skip(x)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser {
    pub time_dim: usize,
    pub conv_in: Conv2d,
    pub time: Linear,
    pub conv_out: Conv2d,
    pub skip: Conv2d,
}

#[derive(Debug, Clone)]
pub struct ToyCache {
    x: Latent,
    temb: Tokens,
    pre: Latent,
    act: Latent,
}

impl ToyDenoiser {
    pub fn new(channels: usize, hidden: usize, time_dim: usize, seed: u64) -> Result<Self> {
        if channels == 0 || hidden == 0 || time_dim == 0 {
            return Err(DiffusionError::Config(
                "denoiser sizes must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            time_dim,
            conv_in: Conv2d::new("den.conv_in", 2 * channels, hidden, &mut rng),
            time: Linear::new("den.time", time_dim, hidden, &mut rng),
            conv_out: Conv2d::new("den.conv_out", hidden, channels, &mut rng),
            skip: Conv2d::new("den.skip", 2 * channels, channels, &mut rng),
        })
    }

    pub fn channels(&self) -> usize {
        self.conv_out.out_channels()
    }

    pub fn hidden(&self) -> usize {
        self.conv_in.out_channels()
    }

    pub fn forward(
        &self,
        fused: &Latent,
        model_t: usize,
        f_enc: &Latent,
    ) -> Result<(Latent, ToyCache)> {
        fused.ensure_shape(f_enc)?;
        if fused.channels != self.channels() {
            return Err(DiffusionError::shape(self.channels(), fused.channels));
        }
        let x = fused.concat_channels(f_enc);
        let temb = TimestepEmbedding::new(model_t, self.time_dim).as_tokens();
        let bias = self.time.forward(&temb);
        let mut pre = self.conv_in.forward(&x);
        let plane = pre.height * pre.width;
        for (c, b) in bias.row(0).iter().enumerate() {
            pre.data[c * plane..(c + 1) * plane]
                .iter_mut()
                .for_each(|v| *v += b);
        }
        let act = pre.map(silu);
        let out = self.conv_out.forward(&act).add(&self.skip.forward(&x));
        Ok((out, ToyCache { x, temb, pre, act }))
    }

    /// Returns gradients for `(fused, f_enc)`.
    pub fn backward(&self, c: &ToyCache, dout: &Latent, g: &mut ToyDenoiser) -> (Latent, Latent) {
        let dact = self.conv_out.backward(&c.act, dout, &mut g.conv_out);
        let dpre = dact.zip_map(&c.pre, |d, v| d * silu_grad(v));
        let plane = dpre.height * dpre.width;
        let dbias: Vec<f64> = (0..dpre.channels)
            .map(|ch| dpre.data[ch * plane..(ch + 1) * plane].iter().sum())
            .collect();
        self.time.backward(
            &c.temb,
            &Tokens::from_vec(1, dbias.len(), dbias),
            &mut g.time,
        );
        let dx = self
            .conv_in
            .backward(&c.x, &dpre, &mut g.conv_in)
            .add(&self.skip.backward(&c.x, dout, &mut g.skip));
        dx.split_channels(self.channels())
    }
}

impl Denoiser for ToyDenoiser {
    fn predict(
        &self,
        fused: &Latent,
        step: Step,
        cond: &ConditionFeatures,
        _: bool,
    ) -> Result<Latent> {
        Ok(self.forward(fused, step.model_t, &cond.f_enc)?.0)
    }
}

impl Module for ToyDenoiser {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        self.conv_in.visit(f);
        self.time.visit(f);
        self.conv_out.visit(f);
        self.skip.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv_in.visit_mut(f);
        self.time.visit_mut(f);
        self.conv_out.visit_mut(f);
        self.skip.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::tests::rel_err;

    #[test]
    fn oracle_inverts_forward_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x0 = Latent::randn(1, 3, 3, &mut rng);
        let eps = Latent::randn(1, 3, 3, &mut rng);
        let ab: f64 = 0.3;
        let zt = x0.zip_map(&eps, |x, e| ab.sqrt() * x + (1.0 - ab).sqrt() * e);
        let feats = ConditionFeatures {
            f_enc: x0.clone(),
            f_enc_hat: x0.clone(),
            text: None,
        };
        let step = Step {
            t: 3,
            model_t: 3,
            alpha_bar: ab,
        };
        let got = OracleDenoiser::new(x0)
            .predict(&zt, step, &feats, true)
            .unwrap();
        assert!(rel_err(&got.data, &eps.data) < 1e-12);
    }

    #[test]
    fn toy_gradients() {
        let d = ToyDenoiser::new(1, 4, 6, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = Latent::randn(1, 4, 4, &mut rng);
        let f = Latent::randn(1, 4, 4, &mut rng);
        let w = Latent::randn(1, 4, 4, &mut rng);
        let loss = |d: &ToyDenoiser, z: &Latent, f: &Latent| -> f64 {
            let out = d.forward(z, 17, f).unwrap().0;
            out.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = d.forward(&z, 17, &f).unwrap();
        let mut g = d.zeros_like();
        let (dz, df) = d.backward(&cache, &w, &mut g);
        let h = 1e-6;
        let numeric = |x: &Latent, which: usize| -> Vec<f64> {
            (0..x.len())
                .map(|i| {
                    let mut a = x.clone();
                    a.data[i] += h;
                    let fp = if which == 0 {
                        loss(&d, &a, &f)
                    } else {
                        loss(&d, &z, &a)
                    };
                    a.data[i] -= 2.0 * h;
                    let fm = if which == 0 {
                        loss(&d, &a, &f)
                    } else {
                        loss(&d, &z, &a)
                    };
                    (fp - fm) / (2.0 * h)
                })
                .collect()
        };
        assert!(rel_err(&numeric(&z, 0), &dz.data) < 1e-6);
        assert!(rel_err(&numeric(&f, 1), &df.data) < 1e-6);
        let gw = &g.time.weight.value;
        let num: Vec<f64> = (0..gw.len())
            .map(|i| {
                let mut dp = d.clone();
                dp.time.weight.value[i] += h;
                let fp = loss(&dp, &z, &f);
                dp.time.weight.value[i] -= 2.0 * h;
                (fp - loss(&dp, &z, &f)) / (2.0 * h)
            })
            .collect();
        assert!(rel_err(&num, gw) < 1e-6);
    }
}
