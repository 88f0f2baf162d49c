//! Condition encoder and ETFI-guided fusion.
//!
//! ```text
//! F̂_enc = Res(Conv(EI))              F_enc  = ZeroConv(F̂_enc) + EI
//! F̂_ECA = Attn(q = z_t ⊕ t_emb, kv = F̂_enc)
//! F_ECA = Linear(F̂_ECA + z_t) + F̂_ECA
//! F_fuse = ZeroConv(Trans(F_ECA)) + z_t
//! ```
//!
//! Attention and the transformer blocks work on non-overlapping
//! `patch × patch` tokens so that a 32×32 latent costs 64 tokens, not 1024.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DiffusionError, Result};
use crate::latent::{patchify, unpatchify, Latent, Tokens};
use crate::layers::{
    attention, attention_backward, silu, silu_grad, AttentionCache, Conv2d, Linear, Module, Param,
};

/// Sizes of every block. The latent size is fixed per model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Width of the condition encoder.
    pub features: usize,
    pub res_blocks: usize,
    pub patch: usize,
    /// Query/key width of both attention layers.
    pub attn_dim: usize,
    pub time_dim: usize,
    /// Number of transformer blocks.
    pub depth: usize,
    pub ffn_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 1,
            height: 32,
            width: 32,
            features: 8,
            res_blocks: 1,
            patch: 4,
            attn_dim: 16,
            time_dim: 16,
            depth: 1,
            ffn_hidden: 32,
        }
    }
}

impl ModelConfig {
    /// Smallest useful model at the given latent size.
    pub fn tiny(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            features: 4,
            patch: 2,
            attn_dim: 8,
            time_dim: 8,
            ffn_hidden: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("height", self.height),
            ("width", self.width),
            ("features", self.features),
            ("patch", self.patch),
            ("attn_dim", self.attn_dim),
            ("time_dim", self.time_dim),
            ("ffn_hidden", self.ffn_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(DiffusionError::Config(format!("{name} must be positive")));
        }
        if !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return Err(DiffusionError::Config(format!(
                "latent {}x{} is not divisible by patch {}",
                self.height, self.width, self.patch
            )));
        }
        Ok(())
    }

    /// Width of a latent token.
    pub fn token_dim(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    fn feature_token_dim(&self) -> usize {
        self.features * self.patch * self.patch
    }

    pub fn latent_shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    fn check_latent(&self, l: &Latent) -> Result<()> {
        if l.shape() != self.latent_shape() {
            return Err(DiffusionError::shape(self.latent_shape(), l.shape()));
        }
        Ok(())
    }
}

/// Sinusoidal encoding of an integer timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct TimestepEmbedding {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl TimestepEmbedding {
    /// `[sin(t ω_i) | cos(t ω_i)]` with `ω_i = 10000^(-i / (dim/2))`; an odd
    /// trailing slot is zero.
    pub fn new(t: usize, dim: usize) -> Self {
        let half = dim / 2;
        let mut values = vec![0.0; dim];
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
            let arg = t as f64 * freq;
            values[i] = arg.sin();
            values[half + i] = arg.cos();
        }
        Self { dim, values }
    }

    pub fn as_tokens(&self) -> Tokens {
        Tokens::from_vec(1, self.dim, self.values.clone())
    }
}

/// Output of the condition encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionFeatures {
    /// Latent-shaped features handed to the noise predictor.
    pub f_enc: Latent,
    /// Encoder features before the zero convolution, used by the fusion block.
    pub f_enc_hat: Latent,
    /// Optional text tokens. Carried through but unused by the built-in
    /// predictors.
    pub text: Option<Tokens>,
}

impl ConditionFeatures {
    /// The unconditional branch of classifier-free guidance.
    pub fn zeroed(&self) -> Self {
        Self {
            f_enc: self.f_enc.map(|_| 0.0),
            f_enc_hat: self.f_enc_hat.map(|_| 0.0),
            text: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

#[derive(Debug, Clone)]
struct ResCache {
    x: Latent,
    u1: Latent,
    c1: Latent,
    u2: Latent,
}

impl ResBlock {
    fn forward(&self, x: &Latent) -> (Latent, ResCache) {
        let u1 = x.map(silu);
        let c1 = self.conv1.forward(&u1);
        let u2 = c1.map(silu);
        let out = x.add(&self.conv2.forward(&u2));
        let cache = ResCache {
            x: x.clone(),
            u1,
            c1,
            u2,
        };
        (out, cache)
    }

    fn backward(&self, c: &ResCache, dout: &Latent, g: &mut ResBlock) -> Latent {
        let du2 = self.conv2.backward(&c.u2, dout, &mut g.conv2);
        let dc1 = du2.zip_map(&c.c1, |d, v| d * silu_grad(v));
        let du1 = self.conv1.backward(&c.u1, &dc1, &mut g.conv1);
        let dx = du1.zip_map(&c.x, |d, v| d * silu_grad(v));
        dx.add(dout)
    }
}

impl Module for ResBlock {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        self.conv1.visit(f);
        self.conv2.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv1.visit_mut(f);
        self.conv2.visit_mut(f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEncoder {
    pub conv_in: Conv2d,
    pub res: Vec<ResBlock>,
    pub zero_out: Conv2d,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    input: Latent,
    res: Vec<ResCache>,
}

impl ConditionEncoder {
    fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let conv_in = Conv2d::new("enc.conv_in", cfg.channels, cfg.features, rng);
        let res = (0..cfg.res_blocks)
            .map(|i| ResBlock {
                conv1: Conv2d::new(
                    &format!("enc.res{i}.conv1"),
                    cfg.features,
                    cfg.features,
                    rng,
                ),
                conv2: Conv2d::new(
                    &format!("enc.res{i}.conv2"),
                    cfg.features,
                    cfg.features,
                    rng,
                ),
            })
            .collect();
        Self {
            conv_in,
            res,
            zero_out: Conv2d::zero("enc.zero_out", cfg.features, cfg.channels),
        }
    }

    pub fn forward(&self, cond: &Latent) -> (ConditionFeatures, EncoderCache) {
        let mut h = self.conv_in.forward(cond);
        let mut caches = Vec::with_capacity(self.res.len());
        for block in &self.res {
            let (next, c) = block.forward(&h);
            caches.push(c);
            h = next;
        }
        let f_enc = self.zero_out.forward(&h).add(cond);
        let feats = ConditionFeatures {
            f_enc,
            f_enc_hat: h,
            text: None,
        };
        let cache = EncoderCache {
            input: cond.clone(),
            res: caches,
        };
        (feats, cache)
    }

    /// Back-propagates gradients arriving at both outputs. Returns the
    /// gradient with respect to the condition.
    pub fn backward(
        &self,
        cache: &EncoderCache,
        feats: &ConditionFeatures,
        d_f_enc: &Latent,
        d_f_enc_hat: &Latent,
        g: &mut ConditionEncoder,
    ) -> Latent {
        let mut dh = self
            .zero_out
            .backward(&feats.f_enc_hat, d_f_enc, &mut g.zero_out);
        dh = dh.add(d_f_enc_hat);
        for (i, block) in self.res.iter().enumerate().rev() {
            dh = block.backward(&cache.res[i], &dh, &mut g.res[i]);
        }
        let dx = self.conv_in.backward(&cache.input, &dh, &mut g.conv_in);
        dx.add(d_f_enc)
    }
}

impl Module for ConditionEncoder {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        self.conv_in.visit(f);
        self.res.iter().for_each(|r| r.visit(f));
        self.zero_out.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv_in.visit_mut(f);
        self.res.iter_mut().for_each(|r| r.visit_mut(f));
        self.zero_out.visit_mut(f);
    }
}

/// Cross-attention from latent/time queries to condition keys and values.
#[derive(Debug, Clone, PartialEq)]
pub struct Eca {
    pub q_latent: Linear,
    pub q_time: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
}

#[derive(Debug, Clone)]
pub struct EcaCache {
    z_tok: Tokens,
    f_tok: Tokens,
    temb: Tokens,
    q: Tokens,
    k: Tokens,
    v: Tokens,
    attn: AttentionCache,
    a: Tokens,
    pub out: Tokens,
}

impl EcaCache {
    pub fn probs(&self) -> &Tokens {
        &self.attn.probs
    }
}

impl Eca {
    fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let (m, d) = (cfg.token_dim(), cfg.attn_dim);
        Self {
            q_latent: Linear::new("fuse.eca.q_latent", m, d, rng),
            q_time: Linear::new("fuse.eca.q_time", cfg.time_dim, d, rng),
            key: Linear::new("fuse.eca.key", cfg.feature_token_dim(), d, rng),
            value: Linear::new("fuse.eca.value", cfg.feature_token_dim(), d, rng),
            out: Linear::new("fuse.eca.out", d, m, rng),
        }
    }

    pub fn forward(&self, z_tok: &Tokens, temb: &Tokens, f_tok: &Tokens) -> EcaCache {
        let tq = self.q_time.forward(temb);
        let q = self.q_latent.forward(z_tok).add_row(tq.row(0));
        let k = self.key.forward(f_tok);
        let v = self.value.forward(f_tok);
        let (a, attn) = attention(&q, &k, &v);
        let out = self.out.forward(&a);
        EcaCache {
            z_tok: z_tok.clone(),
            f_tok: f_tok.clone(),
            temb: temb.clone(),
            q,
            k,
            v,
            attn,
            a,
            out,
        }
    }

    /// Returns gradients for `(z_tok, f_tok)`.
    pub fn backward(&self, c: &EcaCache, dout: &Tokens, g: &mut Eca) -> (Tokens, Tokens) {
        let da = self.out.backward(&c.a, dout, &mut g.out);
        let (dq, dk, dv) = attention_backward(&c.q, &c.k, &c.v, &c.attn, &da);
        let dz = self.q_latent.backward(&c.z_tok, &dq, &mut g.q_latent);
        self.q_time.backward(&c.temb, &dq.sum_rows(), &mut g.q_time);
        let mut df = self.key.backward(&c.f_tok, &dk, &mut g.key);
        df.add_assign(&self.value.backward(&c.f_tok, &dv, &mut g.value));
        (dz, df)
    }
}

impl Module for Eca {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        for l in [
            &self.q_latent,
            &self.q_time,
            &self.key,
            &self.value,
            &self.out,
        ] {
            l.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for l in [
            &mut self.q_latent,
            &mut self.q_time,
            &mut self.key,
            &mut self.value,
            &mut self.out,
        ] {
            l.visit_mut(f);
        }
    }
}

/// Self-attention then a SiLU feed-forward layer, each with a residual.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlock {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ff1: Linear,
    pub ff2: Linear,
}

#[derive(Debug, Clone)]
struct TransformerCache {
    x: Tokens,
    q: Tokens,
    k: Tokens,
    v: Tokens,
    attn: AttentionCache,
    a: Tokens,
    x1: Tokens,
    f1: Tokens,
    g: Tokens,
}

impl TransformerBlock {
    fn new(name: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let (m, d, hdim) = (cfg.token_dim(), cfg.attn_dim, cfg.ffn_hidden);
        Self {
            q: Linear::new(&format!("{name}.q"), m, d, rng),
            k: Linear::new(&format!("{name}.k"), m, d, rng),
            v: Linear::new(&format!("{name}.v"), m, d, rng),
            o: Linear::new(&format!("{name}.o"), d, m, rng),
            ff1: Linear::new(&format!("{name}.ff1"), m, hdim, rng),
            ff2: Linear::new(&format!("{name}.ff2"), hdim, m, rng),
        }
    }

    fn forward(&self, x: &Tokens) -> (Tokens, TransformerCache) {
        let q = self.q.forward(x);
        let k = self.k.forward(x);
        let v = self.v.forward(x);
        let (a, attn) = attention(&q, &k, &v);
        let x1 = x.add(&self.o.forward(&a));
        let f1 = self.ff1.forward(&x1);
        let g = Tokens::from_vec(f1.n, f1.dim, f1.data.iter().map(|&v| silu(v)).collect());
        let out = x1.add(&self.ff2.forward(&g));
        let cache = TransformerCache {
            x: x.clone(),
            q,
            k,
            v,
            attn,
            a,
            x1,
            f1,
            g,
        };
        (out, cache)
    }

    fn backward(&self, c: &TransformerCache, dout: &Tokens, gr: &mut TransformerBlock) -> Tokens {
        let dg = self.ff2.backward(&c.g, dout, &mut gr.ff2);
        let df1 = Tokens::from_vec(
            dg.n,
            dg.dim,
            dg.data
                .iter()
                .zip(&c.f1.data)
                .map(|(d, v)| d * silu_grad(*v))
                .collect(),
        );
        let mut dx1 = self.ff1.backward(&c.x1, &df1, &mut gr.ff1);
        dx1.add_assign(dout);
        let da = self.o.backward(&c.a, &dx1, &mut gr.o);
        let (dq, dk, dv) = attention_backward(&c.q, &c.k, &c.v, &c.attn, &da);
        let mut dx = dx1;
        dx.add_assign(&self.q.backward(&c.x, &dq, &mut gr.q));
        dx.add_assign(&self.k.backward(&c.x, &dk, &mut gr.k));
        dx.add_assign(&self.v.backward(&c.x, &dv, &mut gr.v));
        dx
    }
}

impl Module for TransformerBlock {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        for l in [&self.q, &self.k, &self.v, &self.o, &self.ff1, &self.ff2] {
            l.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for l in [
            &mut self.q,
            &mut self.k,
            &mut self.v,
            &mut self.o,
            &mut self.ff1,
            &mut self.ff2,
        ] {
            l.visit_mut(f);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModule {
    pub eca: Eca,
    pub linear: Linear,
    pub blocks: Vec<TransformerBlock>,
    pub zero_out: Conv2d,
}

#[derive(Debug, Clone)]
pub struct FusionCache {
    pub eca: EcaCache,
    h: Tokens,
    blocks: Vec<TransformerCache>,
    trans_out: Latent,
}

impl FusionModule {
    fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let eca = Eca::new(cfg, rng);
        let linear = Linear::new("fuse.linear", cfg.token_dim(), cfg.token_dim(), rng);
        let blocks = (0..cfg.depth)
            .map(|i| TransformerBlock::new(&format!("fuse.trans{i}"), cfg, rng))
            .collect();
        Self {
            eca,
            linear,
            blocks,
            zero_out: Conv2d::zero("fuse.zero_out", cfg.channels, cfg.channels),
        }
    }

    pub fn forward(
        &self,
        cfg: &ModelConfig,
        z_t: &Latent,
        temb: &TimestepEmbedding,
        f_enc_hat: &Latent,
    ) -> Result<(Latent, FusionCache)> {
        let z_tok = patchify(z_t, cfg.patch)?;
        let f_tok = patchify(f_enc_hat, cfg.patch)?;
        let eca = self.eca.forward(&z_tok, &temb.as_tokens(), &f_tok);
        let h = eca.out.add(&z_tok);
        let mut x = self.linear.forward(&h).add(&eca.out);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, c) = block.forward(&x);
            caches.push(c);
            x = next;
        }
        let trans_out = unpatchify(&x, cfg.channels, cfg.height, cfg.width, cfg.patch);
        let fused = self.zero_out.forward(&trans_out).add(z_t);
        let cache = FusionCache {
            eca,
            h,
            blocks: caches,
            trans_out,
        };
        Ok((fused, cache))
    }

    /// Returns gradients for `(z_t, f_enc_hat)`.
    pub fn backward(
        &self,
        cfg: &ModelConfig,
        c: &FusionCache,
        d_fused: &Latent,
        g: &mut FusionModule,
    ) -> (Latent, Latent) {
        let dtrans = self
            .zero_out
            .backward(&c.trans_out, d_fused, &mut g.zero_out);
        let mut dx = patchify(&dtrans, cfg.patch).expect("shape checked in forward");
        for (i, block) in self.blocks.iter().enumerate().rev() {
            dx = block.backward(&c.blocks[i], &dx, &mut g.blocks[i]);
        }
        // F_ECA = Linear(h) + F̂_ECA, h = F̂_ECA + z.
        let dh = self.linear.backward(&c.h, &dx, &mut g.linear);
        let d_eca = dx.add(&dh);
        let (mut dz_tok, df_tok) = self.eca.backward(&c.eca, &d_eca, &mut g.eca);
        dz_tok.add_assign(&dh);
        let dz = unpatchify(&dz_tok, cfg.channels, cfg.height, cfg.width, cfg.patch).add(d_fused);
        let df = unpatchify(&df_tok, cfg.features, cfg.height, cfg.width, cfg.patch);
        (dz, df)
    }
}

impl Module for FusionModule {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        self.eca.visit(f);
        self.linear.visit(f);
        self.blocks.iter().for_each(|b| b.visit(f));
        self.zero_out.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.eca.visit_mut(f);
        self.linear.visit_mut(f);
        self.blocks.iter_mut().for_each(|b| b.visit_mut(f));
        self.zero_out.visit_mut(f);
    }
}

/// All weights of the condition branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub config: ModelConfig,
    pub init_seed: u64,
    pub encoder: ConditionEncoder,
    pub fusion: FusionModule,
}

impl BlockParams {
    /// Fresh weights: zero convolutions are exactly zero, everything else is
    /// drawn from `init_seed`.
    pub fn new(config: ModelConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let encoder = ConditionEncoder::new(&config, &mut rng);
        let fusion = FusionModule::new(&config, &mut rng);
        Ok(Self {
            config,
            init_seed,
            encoder,
            fusion,
        })
    }

    pub fn encode_condition(&self, cond: &Latent) -> Result<ConditionFeatures> {
        self.config.check_latent(cond)?;
        Ok(self.encoder.forward(cond).0)
    }

    /// The cross-attention output `F̂_ECA`, reshaped to the latent.
    pub fn eca_attention(
        &self,
        temb: &TimestepEmbedding,
        f_enc_hat: &Latent,
        z_t: &Latent,
    ) -> Result<Latent> {
        let cfg = &self.config;
        cfg.check_latent(z_t)?;
        self.check_features(f_enc_hat)?;
        if temb.dim != cfg.time_dim {
            return Err(DiffusionError::shape(cfg.time_dim, temb.dim));
        }
        let c = self.fusion.eca.forward(
            &patchify(z_t, cfg.patch)?,
            &temb.as_tokens(),
            &patchify(f_enc_hat, cfg.patch)?,
        );
        Ok(unpatchify(
            &c.out,
            cfg.channels,
            cfg.height,
            cfg.width,
            cfg.patch,
        ))
    }

    /// `F_fuse` for model timestep `t`.
    pub fn fuse(&self, z_t: &Latent, t: usize, f_enc_hat: &Latent) -> Result<Latent> {
        self.config.check_latent(z_t)?;
        self.check_features(f_enc_hat)?;
        let temb = TimestepEmbedding::new(t, self.config.time_dim);
        Ok(self.fusion.forward(&self.config, z_t, &temb, f_enc_hat)?.0)
    }

    fn check_features(&self, f: &Latent) -> Result<()> {
        let want = (self.config.features, self.config.height, self.config.width);
        if f.shape() != want {
            return Err(DiffusionError::shape(want, f.shape()));
        }
        Ok(())
    }
}

impl Module for BlockParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        self.encoder.visit(f);
        self.fusion.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.encoder.visit_mut(f);
        self.fusion.visit_mut(f);
    }
}

/// Free-function form of [`BlockParams::encode_condition`].
pub fn encode_condition(etfi: &Latent, params: &BlockParams) -> Result<ConditionFeatures> {
    params.encode_condition(etfi)
}

/// Free-function form of [`BlockParams::eca_attention`].
pub fn eca_attention(
    temb: &TimestepEmbedding,
    features: &ConditionFeatures,
    z_t: &Latent,
    params: &BlockParams,
) -> Result<Latent> {
    params.eca_attention(temb, &features.f_enc_hat, z_t)
}

/// Free-function form of [`BlockParams::fuse`].
pub fn fuse(
    z_t: &Latent,
    t: usize,
    features: &ConditionFeatures,
    params: &BlockParams,
) -> Result<Latent> {
    params.fuse(z_t, t, &features.f_enc_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::tests::rel_err;
    use rand::Rng;

    fn randomize_all(p: &mut BlockParams, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        p.visit_mut(&mut |param| {
            for v in &mut param.value {
                *v = 0.4 * (rng.random::<f64>() - 0.5);
            }
        });
    }

    fn dot(a: &Latent, b: &Latent) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn zero_init_identities() {
        let cfg = ModelConfig::tiny(4, 4);
        let p = BlockParams::new(cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ei = Latent::randn(1, 4, 4, &mut rng);
        let feats = p.encode_condition(&ei).unwrap();
        assert_eq!(feats.f_enc, ei);
        let z = Latent::randn(1, 4, 4, &mut rng);
        assert_eq!(p.fuse(&z, 10, &feats.f_enc_hat).unwrap(), z);
        // Non-zero-init weights really are random.
        assert!(p.encoder.conv_in.weight.value.iter().any(|&v| v != 0.0));
        assert!(p.encoder.zero_out.weight.value.iter().all(|&v| v == 0.0));
        assert!(p.fusion.zero_out.weight.value.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn construction_is_reproducible() {
        let cfg = ModelConfig::tiny(4, 4);
        let a = BlockParams::new(cfg, 5).unwrap();
        assert_eq!(a, BlockParams::new(cfg, 5).unwrap());
        assert_ne!(a, BlockParams::new(cfg, 6).unwrap());
        let ei =
            Latent::from_vec(1, 4, 4, (0..16).map(|i| i as f64 / 8.0 - 1.0).collect()).unwrap();
        let x = a.encode_condition(&ei).unwrap();
        let y = a.encode_condition(&ei).unwrap();
        assert!(x
            .f_enc_hat
            .data
            .iter()
            .zip(&y.f_enc_hat.data)
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn zero_conv_perturbation_is_linear() {
        let cfg = ModelConfig::tiny(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ei = Latent::randn(1, 4, 4, &mut rng);
        let diff = |delta: f64| {
            let mut p = BlockParams::new(cfg, 5).unwrap();
            p.encoder.zero_out.weight.value[4] = delta;
            let f = p.encode_condition(&ei).unwrap();
            f.f_enc.zip_map(&ei, |a, b| a - b)
        };
        let (d1, d2) = (diff(1e-3), diff(2e-3));
        assert!(d1.rms() > 0.0);
        for (a, b) in d1.data.iter().zip(&d2.data) {
            assert!((2.0 * a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn attention_examples() {
        // One patch means one key/value token: every query gets its value.
        let cfg = ModelConfig {
            patch: 4,
            ..ModelConfig::tiny(4, 4)
        };
        let p = BlockParams::new(cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = Latent::randn(cfg.features, 4, 4, &mut rng);
        let f_tok = patchify(&f, 4).unwrap();
        let expect = p
            .fusion
            .eca
            .out
            .forward(&p.fusion.eca.value.forward(&f_tok));
        for t in [1, 500] {
            let z = Latent::randn(1, 4, 4, &mut rng);
            let got = p
                .eca_attention(&TimestepEmbedding::new(t, cfg.time_dim), &f, &z)
                .unwrap();
            let got_tok = patchify(&got, 4).unwrap();
            assert!(rel_err(&got_tok.data, &expect.data) < 1e-12);
        }

        // Two identical keys: output is the mean of the two values.
        let q = Tokens::from_vec(3, 2, vec![0.3, -1.0, 2.0, 0.5, -0.7, 0.1]);
        let k = Tokens::from_vec(2, 2, vec![0.4, 0.9, 0.4, 0.9]);
        let v = Tokens::from_vec(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 5.0]);
        let (out, cache) = attention(&q, &k, &v);
        for i in 0..3 {
            assert!((cache.probs.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (a, b) in out.row(i).iter().zip([0.0, 1.0, 4.0]) {
                assert!((a - b).abs() < 1e-12);
            }
        }

        // Softmax rows of the real block are normalised.
        let cfg = ModelConfig::tiny(4, 4);
        let p = BlockParams::new(cfg, 3).unwrap();
        let z = Latent::randn(1, 4, 4, &mut rng);
        let f = Latent::randn(cfg.features, 4, 4, &mut rng);
        let c = p.fusion.eca.forward(
            &patchify(&z, 2).unwrap(),
            &TimestepEmbedding::new(7, cfg.time_dim).as_tokens(),
            &patchify(&f, 2).unwrap(),
        );
        for i in 0..c.probs().n {
            assert!((c.probs().row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_errors() {
        let p = BlockParams::new(ModelConfig::tiny(4, 4), 1).unwrap();
        assert!(p.encode_condition(&Latent::zeros(1, 8, 8)).is_err());
        assert!(p
            .fuse(&Latent::zeros(1, 4, 4), 1, &Latent::zeros(1, 4, 4))
            .is_err());
        let bad = ModelConfig {
            patch: 3,
            ..ModelConfig::tiny(4, 4)
        };
        assert!(BlockParams::new(bad, 1).is_err());
    }

    /// Central differences on every tensor, compared on whole-tensor norms.
    fn check_gradients(
        p: &BlockParams,
        loss: impl Fn(&BlockParams) -> f64,
        analytic: &BlockParams,
    ) {
        let h = 1e-5;
        let grads = analytic.params();
        let mut idx = 0;
        let mut probe = p.clone();
        let n_params = p.params().len();
        while idx < n_params {
            let len = p.params()[idx].len();
            let mut numeric = vec![0.0; len];
            for (j, slot) in numeric.iter_mut().enumerate() {
                let mut k = 0;
                probe.visit_mut(&mut |q| {
                    if k == idx {
                        q.value[j] += h;
                    }
                    k += 1;
                });
                let fp = loss(&probe);
                let mut k = 0;
                probe.visit_mut(&mut |q| {
                    if k == idx {
                        q.value[j] -= 2.0 * h;
                    }
                    k += 1;
                });
                let fm = loss(&probe);
                let mut k = 0;
                probe.visit_mut(&mut |q| {
                    if k == idx {
                        q.value[j] += h;
                    }
                    k += 1;
                });
                *slot = (fp - fm) / (2.0 * h);
            }
            let err = rel_err(&numeric, &grads[idx].value);
            assert!(err <= 1e-4, "{}: relative error {err}", grads[idx].name);
            idx += 1;
        }
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let cfg = ModelConfig::tiny(4, 4);
        let mut p = BlockParams::new(cfg, 11).unwrap();
        randomize_all(&mut p, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let ei = Latent::randn(1, 4, 4, &mut rng);
        let w1 = Latent::randn(1, 4, 4, &mut rng);
        let w2 = Latent::randn(cfg.features, 4, 4, &mut rng);
        let loss = |p: &BlockParams| {
            let f = p.encode_condition(&ei).unwrap();
            dot(&f.f_enc, &w1) + dot(&f.f_enc_hat, &w2)
        };
        let (feats, cache) = p.encoder.forward(&ei);
        let mut g = p.zeros_like();
        let dx = p.encoder.backward(&cache, &feats, &w1, &w2, &mut g.encoder);
        check_gradients(&p, loss, &g);

        let h = 1e-6;
        let numeric: Vec<f64> = (0..ei.len())
            .map(|i| {
                let mut a = ei.clone();
                a.data[i] += h;
                let fa = p.encode_condition(&a).unwrap();
                a.data[i] -= 2.0 * h;
                let fb = p.encode_condition(&a).unwrap();
                (dot(&fa.f_enc, &w1) + dot(&fa.f_enc_hat, &w2)
                    - dot(&fb.f_enc, &w1)
                    - dot(&fb.f_enc_hat, &w2))
                    / (2.0 * h)
            })
            .collect();
        assert!(rel_err(&numeric, &dx.data) <= 1e-4);
    }

    #[test]
    fn fusion_gradients_match_finite_differences() {
        let cfg = ModelConfig {
            depth: 2,
            ..ModelConfig::tiny(4, 4)
        };
        let mut p = BlockParams::new(cfg, 21).unwrap();
        randomize_all(&mut p, 22);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let z = Latent::randn(1, 4, 4, &mut rng);
        let f = Latent::randn(cfg.features, 4, 4, &mut rng);
        let w = Latent::randn(1, 4, 4, &mut rng);
        let t = 37;
        let loss = |p: &BlockParams| dot(&p.fuse(&z, t, &f).unwrap(), &w);
        let temb = TimestepEmbedding::new(t, cfg.time_dim);
        let (_, cache) = p.fusion.forward(&cfg, &z, &temb, &f).unwrap();
        let mut g = p.zeros_like();
        let (dz, df) = p.fusion.backward(&cfg, &cache, &w, &mut g.fusion);
        check_gradients(&p, loss, &g);

        let h = 1e-6;
        let fd = |x: &Latent, eval: &dyn Fn(&Latent) -> f64| -> Vec<f64> {
            (0..x.len())
                .map(|i| {
                    let mut a = x.clone();
                    a.data[i] += h;
                    let fp = eval(&a);
                    a.data[i] -= 2.0 * h;
                    (fp - eval(&a)) / (2.0 * h)
                })
                .collect()
        };
        let num_z = fd(&z, &|a| dot(&p.fuse(a, t, &f).unwrap(), &w));
        let num_f = fd(&f, &|a| dot(&p.fuse(&z, t, a).unwrap(), &w));
        assert!(rel_err(&num_z, &dz.data) <= 1e-4);
        assert!(rel_err(&num_f, &df.data) <= 1e-4);
    }

    #[test]
    fn timestep_embedding() {
        let e = TimestepEmbedding::new(0, 6);
        assert_eq!(e.values, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let e = TimestepEmbedding::new(3, 5);
        assert_eq!(e.values[4], 0.0);
        assert_eq!(e.values[0], 3f64.sin());
        assert_eq!(e, TimestepEmbedding::new(3, 5));
    }
}
