//! Dense building blocks with closed-form backward passes.
//!
//! Every `backward` accumulates parameter gradients into a structurally
//! identical value (`grads`) and returns the gradient with respect to the
//! layer input.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::latent::{Latent, Tokens};

/// A named tensor of weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            value: vec![0.0; shape.iter().product()],
        }
    }

    /// Gaussian weights with standard deviation `std`.
    pub fn randn<R: Rng + ?Sized>(
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(name, shape);
        for v in &mut p.value {
            *v = std * rng.sample::<f64, _>(StandardNormal);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Walks every parameter of a module in a fixed order.
pub trait Module: Clone {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param));

    /// Same structure, all values zero. Used as a gradient accumulator.
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |p| p.value.iter_mut().for_each(|v| *v = 0.0));
        z
    }

    fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.push(p));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.len());
        n
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// 3×3 convolution with zero padding of one pixel, stride one.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(name: &str, cin: usize, cout: usize, rng: &mut R) -> Self {
        let std = (2.0 / (9 * cin) as f64).sqrt();
        Self {
            weight: Param::randn(format!("{name}.weight"), &[cout, cin, 3, 3], std, rng),
            bias: Param::zeros(format!("{name}.bias"), &[cout]),
        }
    }

    /// All-zero weights and bias.
    pub fn zero(name: &str, cin: usize, cout: usize) -> Self {
        Self {
            weight: Param::zeros(format!("{name}.weight"), &[cout, cin, 3, 3]),
            bias: Param::zeros(format!("{name}.bias"), &[cout]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: &Latent) -> Latent {
        let (cin, h, w) = x.shape();
        let cout = self.out_channels();
        debug_assert_eq!(cin, self.in_channels());
        let wt = &self.weight.value;
        let mut out = Latent::zeros(cout, h, w);
        for o in 0..cout {
            let plane = &mut out.data[o * h * w..(o + 1) * h * w];
            plane.iter_mut().for_each(|v| *v = self.bias.value[o]);
            for i in 0..cin {
                let src = &x.data[i * h * w..(i + 1) * h * w];
                for ky in 0..3 {
                    let (y0, y1) = valid_range(ky, h);
                    for kx in 0..3 {
                        let k = wt[((o * cin + i) * 3 + ky) * 3 + kx];
                        let (x0, x1) = valid_range(kx, w);
                        for y in y0..y1 {
                            let sy = y + ky - 1;
                            let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                            let d = &mut plane[y * w + x0..y * w + x1];
                            d.iter_mut().zip(s).for_each(|(d, s)| *d += k * s);
                        }
                    }
                }
            }
        }
        out
    }

    pub fn backward(&self, x: &Latent, dout: &Latent, grads: &mut Conv2d) -> Latent {
        let (cin, h, w) = x.shape();
        let cout = self.out_channels();
        let wt = &self.weight.value;
        let mut dx = Latent::zeros(cin, h, w);
        for o in 0..cout {
            let dplane = &dout.data[o * h * w..(o + 1) * h * w];
            grads.bias.value[o] += dplane.iter().sum::<f64>();
            for i in 0..cin {
                let src = &x.data[i * h * w..(i + 1) * h * w];
                let dsrc = &mut dx.data[i * h * w..(i + 1) * h * w];
                for ky in 0..3 {
                    let (y0, y1) = valid_range(ky, h);
                    for kx in 0..3 {
                        let widx = ((o * cin + i) * 3 + ky) * 3 + kx;
                        let k = wt[widx];
                        let (x0, x1) = valid_range(kx, w);
                        let mut gw = 0.0;
                        for y in y0..y1 {
                            let sy = y + ky - 1;
                            let a = sy * w + x0 + kx - 1;
                            let span = a..a + (x1 - x0);
                            let g = &dplane[y * w + x0..y * w + x1];
                            gw += g
                                .iter()
                                .zip(&src[span.clone()])
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                            let ds = &mut dsrc[span];
                            ds.iter_mut().zip(g).for_each(|(d, g)| *d += k * g);
                        }
                        grads.weight.value[widx] += gw;
                    }
                }
            }
        }
        dx
    }
}

/// Output positions whose tap `k` (0..3) lands inside `0..n`.
#[inline]
fn valid_range(k: usize, n: usize) -> (usize, usize) {
    let lo = 1usize.saturating_sub(k);
    let hi = (n + 1).saturating_sub(k).min(n);
    (lo, hi)
}

impl Module for Conv2d {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Affine map applied to every token: `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// Shape `[out, in]`.
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(name: &str, din: usize, dout: usize, rng: &mut R) -> Self {
        let std = (1.0 / din as f64).sqrt();
        Self {
            weight: Param::randn(format!("{name}.weight"), &[dout, din], std, rng),
            bias: Param::zeros(format!("{name}.bias"), &[dout]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: &Tokens) -> Tokens {
        let (din, dout) = (self.in_dim(), self.out_dim());
        debug_assert_eq!(x.dim, din);
        let mut out = Tokens::zeros(x.n, dout);
        for t in 0..x.n {
            let xr = x.row(t);
            let orow = out.row_mut(t);
            for (o, slot) in orow.iter_mut().enumerate() {
                let wr = &self.weight.value[o * din..(o + 1) * din];
                *slot = self.bias.value[o] + wr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        out
    }

    pub fn backward(&self, x: &Tokens, dout: &Tokens, grads: &mut Linear) -> Tokens {
        let (din, dim_out) = (self.in_dim(), self.out_dim());
        let mut dx = Tokens::zeros(x.n, din);
        for t in 0..x.n {
            let xr = x.row(t);
            let gr = dout.row(t);
            for (o, &g) in gr.iter().enumerate().take(dim_out) {
                if g == 0.0 {
                    continue;
                }
                grads.bias.value[o] += g;
                let wr = &self.weight.value[o * din..(o + 1) * din];
                let gw = &mut grads.weight.value[o * din..(o + 1) * din];
                for i in 0..din {
                    gw[i] += g * xr[i];
                }
                let dxr = dx.row_mut(t);
                for i in 0..din {
                    dxr[i] += g * wr[i];
                }
            }
        }
        dx
    }
}

impl Module for Linear {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Intermediates of [`attention`] needed by [`attention_backward`].
#[derive(Debug, Clone)]
pub struct AttentionCache {
    /// Row-stochastic `n_q × n_k` weights.
    pub probs: Tokens,
    pub scale: f64,
}

/// Scaled dot-product attention with a row-wise softmax.
pub fn attention(q: &Tokens, k: &Tokens, v: &Tokens) -> (Tokens, AttentionCache) {
    debug_assert_eq!(q.dim, k.dim);
    debug_assert_eq!(k.n, v.n);
    let scale = 1.0 / (q.dim as f64).sqrt();
    let mut probs = Tokens::zeros(q.n, k.n);
    for i in 0..q.n {
        let qi = q.row(i);
        let row = probs.row_mut(i);
        for (j, s) in row.iter_mut().enumerate() {
            *s = scale * qi.iter().zip(k.row(j)).map(|(a, b)| a * b).sum::<f64>();
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for s in row.iter_mut() {
            *s = (*s - max).exp();
            sum += *s;
        }
        row.iter_mut().for_each(|s| *s /= sum);
    }
    let mut out = Tokens::zeros(q.n, v.dim);
    for i in 0..q.n {
        let pr = probs.row(i).to_vec();
        let orow = out.row_mut(i);
        for (j, p) in pr.iter().enumerate() {
            orow.iter_mut().zip(v.row(j)).for_each(|(o, b)| *o += p * b);
        }
    }
    (out, AttentionCache { probs, scale })
}

/// Returns `(dq, dk, dv)`.
pub fn attention_backward(
    q: &Tokens,
    k: &Tokens,
    v: &Tokens,
    cache: &AttentionCache,
    dout: &Tokens,
) -> (Tokens, Tokens, Tokens) {
    let p = &cache.probs;
    let mut dq = Tokens::zeros(q.n, q.dim);
    let mut dk = Tokens::zeros(k.n, k.dim);
    let mut dv = Tokens::zeros(v.n, v.dim);
    for i in 0..q.n {
        let go = dout.row(i);
        let pr = p.row(i);
        let dp: Vec<f64> = (0..k.n)
            .map(|j| go.iter().zip(v.row(j)).map(|(a, b)| a * b).sum())
            .collect();
        let dot: f64 = dp.iter().zip(pr).map(|(a, b)| a * b).sum();
        for j in 0..k.n {
            dv.row_mut(j)
                .iter_mut()
                .zip(go)
                .for_each(|(d, g)| *d += pr[j] * g);
            let ds = pr[j] * (dp[j] - dot) * cache.scale;
            if ds == 0.0 {
                continue;
            }
            dq.row_mut(i)
                .iter_mut()
                .zip(k.row(j))
                .for_each(|(d, b)| *d += ds * b);
            dk.row_mut(j)
                .iter_mut()
                .zip(q.row(i))
                .for_each(|(d, a)| *d += ds * a);
        }
    }
    (dq, dk, dv)
}
