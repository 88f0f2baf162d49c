//! Toy training of the condition branch plus a [`ToyDenoiser`] on the
//! ε-prediction objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{BlockParams, TimestepEmbedding};
use crate::denoiser::ToyDenoiser;
use crate::error::{DiffusionError, Result};
use crate::latent::Latent;
use crate::layers::{Module, Param};
use crate::schedule::{forward_diffuse, training_loss, NoiseSchedule};

/// Condition branch and noise predictor, trained jointly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainModel {
    pub blocks: BlockParams,
    pub denoiser: ToyDenoiser,
}

impl Module for TrainModel {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        self.blocks.visit(f);
        self.denoiser.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.blocks.visit_mut(f);
        self.denoiser.visit_mut(f);
    }
}

/// One noised training example.
#[derive(Debug, Clone)]
pub struct Example {
    /// Schedule step, `1..=steps`.
    pub t: usize,
    pub eps: Latent,
    /// Train the unconditional branch: condition features are zeroed, as in
    /// the guidance sampler.
    pub drop_condition: bool,
}

impl TrainModel {
    /// Loss for one example; when `grads` is given, also accumulates
    /// `scale · ∂loss/∂θ` into it.
    pub fn loss(
        &self,
        cond: &Latent,
        target: &Latent,
        ex: &Example,
        sched: &NoiseSchedule,
        grads: Option<(&mut TrainModel, f64)>,
    ) -> Result<f64> {
        let cfg = self.blocks.config;
        let z_t = forward_diffuse(target, ex.t, &ex.eps, sched)?;
        let model_t = sched.model_timestep(ex.t);
        if cond.shape() != cfg.latent_shape() {
            return Err(DiffusionError::shape(cfg.latent_shape(), cond.shape()));
        }
        let (feats, enc_cache) = self.blocks.encoder.forward(cond);
        let used = if ex.drop_condition {
            feats.zeroed()
        } else {
            feats.clone()
        };
        let temb = TimestepEmbedding::new(model_t, cfg.time_dim);
        let (fused, fuse_cache) = self
            .blocks
            .fusion
            .forward(&cfg, &z_t, &temb, &used.f_enc_hat)?;
        let (pred, den_cache) = self.denoiser.forward(&fused, model_t, &used.f_enc)?;
        let loss = training_loss(&pred, &ex.eps)?;
        if let Some((g, scale)) = grads {
            let n = pred.len() as f64;
            let dpred = pred.zip_map(&ex.eps, |p, e| scale * 2.0 * (p - e) / n);
            let (dfused, df_enc) = self.denoiser.backward(&den_cache, &dpred, &mut g.denoiser);
            let (_, df_hat) =
                self.blocks
                    .fusion
                    .backward(&cfg, &fuse_cache, &dfused, &mut g.blocks.fusion);
            if ex.drop_condition {
                // The encoder did not influence the loss.
                return Ok(loss);
            }
            self.blocks.encoder.backward(
                &enc_cache,
                &feats,
                &df_enc,
                &df_hat,
                &mut g.blocks.encoder,
            );
        }
        Ok(loss)
    }

    /// Mean loss over `examples`, no gradients.
    pub fn mean_loss(
        &self,
        cond: &Latent,
        target: &Latent,
        examples: &[Example],
        sched: &NoiseSchedule,
    ) -> Result<f64> {
        let mut sum = 0.0;
        for ex in examples {
            sum += self.loss(cond, target, ex, sched, None)?;
        }
        Ok(sum / examples.len() as f64)
    }
}

/// Draws examples with uniform timesteps and standard normal noise; each
/// drops the condition with probability `dropout`.
pub fn draw_examples<R: Rng + ?Sized>(
    n: usize,
    like: &Latent,
    sched: &NoiseSchedule,
    dropout: f64,
    rng: &mut R,
) -> Vec<Example> {
    (0..n)
        .map(|_| Example {
            t: rng.random_range(1..=sched.steps()),
            eps: Latent::randn(like.channels, like.height, like.width, rng),
            drop_condition: rng.random::<f64>() < dropout,
        })
        .collect()
}

/// AdamW with bias correction and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn update<M: Module>(&mut self, model: &mut M, grads: &M) {
        let g: Vec<&Param> = grads.params();
        if self.m.is_empty() {
            self.m = g.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut idx = 0;
        model.visit_mut(&mut |p| {
            let (m, v, gp) = (&mut self.m[idx], &mut self.v[idx], &g[idx].value);
            for i in 0..p.value.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gp[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gp[i] * gp[i];
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                p.value[i] -= self.lr * (update + self.weight_decay * p.value[i]);
            }
            idx += 1;
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    /// Probability of training the unconditional branch on an example.
    pub cond_dropout: f64,
    /// Size of the fixed batch used to measure progress.
    pub eval_examples: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            batch: 8,
            lr: 3e-3,
            cond_dropout: 0.1,
            eval_examples: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss on the fixed evaluation batch before the first update.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Mean minibatch loss per iteration.
    pub history: Vec<f64>,
}

/// Fits `model` to a single `(cond, target)` pair.
pub fn train(
    model: &mut TrainModel,
    cond: &Latent,
    target: &Latent,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if cfg.iterations == 0 || cfg.batch == 0 || cfg.eval_examples == 0 {
        return Err(DiffusionError::Config(
            "iterations, batch and eval size must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eval = draw_examples(cfg.eval_examples, target, sched, cfg.cond_dropout, &mut rng);
    let initial_loss = model.mean_loss(cond, target, &eval, sched)?;
    let mut opt = AdamW::new(cfg.lr);
    let mut history = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let batch = draw_examples(cfg.batch, target, sched, cfg.cond_dropout, &mut rng);
        let mut grads = model.zeros_like();
        let scale = 1.0 / cfg.batch as f64;
        let mut total = 0.0;
        for ex in &batch {
            total += model.loss(cond, target, ex, sched, Some((&mut grads, scale)))?;
        }
        history.push(total * scale);
        opt.update(model, &grads);
    }
    let final_loss = model.mean_loss(cond, target, &eval, sched)?;
    Ok(TrainReport {
        initial_loss,
        final_loss,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::ModelConfig;
    use crate::layers::tests::rel_err;
    use crate::schedule::{make_schedule, VarianceMode};

    fn setup() -> (TrainModel, Latent, Latent, NoiseSchedule) {
        let cfg = ModelConfig::tiny(4, 4);
        let mut model = TrainModel {
            blocks: BlockParams::new(cfg, 1).unwrap(),
            denoiser: ToyDenoiser::new(1, 4, cfg.time_dim, 2).unwrap(),
        };
        // Break the zero init so every path carries gradient.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        model.visit_mut(&mut |p| {
            for v in &mut p.value {
                *v += 0.1 * (rng.random::<f64>() - 0.5);
            }
        });
        let cond = Latent::randn(1, 4, 4, &mut rng);
        let target = Latent::randn(1, 4, 4, &mut rng);
        let sched = make_schedule(100, 1e-4, 0.02, VarianceMode::Beta).unwrap();
        (model, cond, target, sched)
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let (model, cond, target, sched) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for drop in [false, true] {
            let mut ex = draw_examples(1, &target, &sched, 0.0, &mut rng).remove(0);
            ex.drop_condition = drop;
            let mut g = model.zeros_like();
            model
                .loss(&cond, &target, &ex, &sched, Some((&mut g, 1.0)))
                .unwrap();
            let grads = g.params();
            let h = 1e-5;
            for (idx, gp) in grads.iter().enumerate() {
                let numeric: Vec<f64> = (0..gp.len())
                    .map(|j| {
                        let eval = |delta: f64| {
                            let mut m = model.clone();
                            let mut k = 0;
                            m.visit_mut(&mut |p| {
                                if k == idx {
                                    p.value[j] += delta;
                                }
                                k += 1;
                            });
                            m.loss(&cond, &target, &ex, &sched, None).unwrap()
                        };
                        (eval(h) - eval(-h)) / (2.0 * h)
                    })
                    .collect();
                let err = rel_err(&numeric, &gp.value);
                assert!(err <= 1e-4, "{}: {err}", gp.name);
            }
        }
    }

    #[test]
    fn adam_reduces_loss() {
        let (mut model, cond, target, sched) = setup();
        let cfg = TrainConfig {
            iterations: 40,
            ..TrainConfig::default()
        };
        let r = train(&mut model, &cond, &target, &sched, &cfg).unwrap();
        assert!(r.final_loss < r.initial_loss);
        assert_eq!(r.history.len(), 40);
    }
}
