use rand::Rng;
use rand_distr::StandardNormal;
use spikeline_core::gray::quantize;
use spikeline_core::GrayImage;

use crate::error::{DiffusionError, Result};

/// A `(channels, height, width)` tensor stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Latent {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(DiffusionError::shape(channels * height * width, data.len()));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn randn<R: Rng + ?Sized>(
        channels: usize,
        height: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        let data = (0..channels * height * width)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn ensure_shape(&self, other: &Latent) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(DiffusionError::shape(self.shape(), other.shape()));
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &Latent, f: impl Fn(f64, f64) -> f64) -> Latent {
        debug_assert_eq!(self.shape(), other.shape());
        self.with_data(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Latent {
        self.with_data(self.data.iter().map(|&a| f(a)).collect())
    }

    fn with_data(&self, data: Vec<f64>) -> Latent {
        Latent {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn add(&self, other: &Latent) -> Latent {
        self.zip_map(other, |a, b| a + b)
    }

    /// Root mean square of the values.
    pub fn rms(&self) -> f64 {
        (self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks `self` and `other` along the channel axis.
    pub fn concat_channels(&self, other: &Latent) -> Latent {
        debug_assert_eq!((self.height, self.width), (other.height, other.width));
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Latent {
            channels: self.channels + other.channels,
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Splits off the first `channels` channels.
    pub fn split_channels(&self, channels: usize) -> (Latent, Latent) {
        let plane = self.height * self.width;
        let (a, b) = self.data.split_at(channels * plane);
        (
            Latent {
                channels,
                height: self.height,
                width: self.width,
                data: a.to_vec(),
            },
            Latent {
                channels: self.channels - channels,
                height: self.height,
                width: self.width,
                data: b.to_vec(),
            },
        )
    }
}

/// Maps 8-bit gray levels to `[-1, 1]`, replicated over `channels`.
pub fn latent_from_gray(img: &GrayImage, channels: usize) -> Latent {
    let plane: Vec<f64> = img
        .pixels()
        .iter()
        .map(|&v| v as f64 / 127.5 - 1.0)
        .collect();
    let mut data = Vec::with_capacity(plane.len() * channels);
    for _ in 0..channels {
        data.extend_from_slice(&plane);
    }
    Latent {
        channels,
        height: img.height(),
        width: img.width(),
        data,
    }
}

/// Maps `[-1, 1]` back to gray levels, averaging channels.
pub fn gray_from_latent(latent: &Latent) -> GrayImage {
    let plane = latent.height * latent.width;
    let pixels = (0..plane)
        .map(|i| {
            let mean = (0..latent.channels)
                .map(|c| latent.data[c * plane + i])
                .sum::<f64>()
                / latent.channels as f64;
            quantize((mean + 1.0) * 127.5)
        })
        .collect();
    GrayImage::new(latent.width, latent.height, pixels).expect("latent has positive size")
}

/// Row-major `n × dim` matrix of token vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokens {
    pub n: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Tokens {
    pub fn zeros(n: usize, dim: usize) -> Self {
        Self {
            n,
            dim,
            data: vec![0.0; n * dim],
        }
    }

    pub fn from_vec(n: usize, dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * dim);
        Self { n, dim, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn add(&self, other: &Tokens) -> Tokens {
        debug_assert_eq!((self.n, self.dim), (other.n, other.dim));
        Tokens {
            n: self.n,
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tokens) {
        debug_assert_eq!((self.n, self.dim), (other.n, other.dim));
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
    }

    /// Adds the single row `row` to every token.
    pub fn add_row(&self, row: &[f64]) -> Tokens {
        debug_assert_eq!(row.len(), self.dim);
        let mut out = self.clone();
        for i in 0..self.n {
            out.row_mut(i)
                .iter_mut()
                .zip(row)
                .for_each(|(a, b)| *a += b);
        }
        out
    }

    /// Column sums as a single token.
    pub fn sum_rows(&self) -> Tokens {
        let mut out = Tokens::zeros(1, self.dim);
        for i in 0..self.n {
            out.data
                .iter_mut()
                .zip(self.row(i))
                .for_each(|(a, b)| *a += b);
        }
        out
    }
}

/// Cuts a latent into non-overlapping `patch × patch` tokens. Token order is
/// row-major over patches; features are ordered `(channel, dy, dx)`.
pub fn patchify(latent: &Latent, patch: usize) -> Result<Tokens> {
    let (c, h, w) = latent.shape();
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(DiffusionError::Config(format!(
            "{h}x{w} latent not divisible by patch {patch}"
        )));
    }
    let (ph, pw) = (h / patch, w / patch);
    let dim = c * patch * patch;
    let mut out = Tokens::zeros(ph * pw, dim);
    for py in 0..ph {
        for px in 0..pw {
            let row = out.row_mut(py * pw + px);
            for ch in 0..c {
                for dy in 0..patch {
                    for dx in 0..patch {
                        row[(ch * patch + dy) * patch + dx] =
                            latent.at(ch, py * patch + dy, px * patch + dx);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`].
pub fn unpatchify(
    tokens: &Tokens,
    channels: usize,
    height: usize,
    width: usize,
    patch: usize,
) -> Latent {
    let pw = width / patch;
    assert_eq!(tokens.n, (height / patch) * pw);
    assert_eq!(tokens.dim, channels * patch * patch);
    let mut out = Latent::zeros(channels, height, width);
    for t in 0..tokens.n {
        let (py, px) = (t / pw, t % pw);
        let row = tokens.row(t);
        for ch in 0..channels {
            for dy in 0..patch {
                for dx in 0..patch {
                    let idx = (ch * height + py * patch + dy) * width + px * patch + dx;
                    out.data[idx] = row[(ch * patch + dy) * patch + dx];
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_round_trip() {
        let data: Vec<f64> = (0..2 * 4 * 6).map(|i| i as f64).collect();
        let l = Latent::from_vec(2, 4, 6, data).unwrap();
        let t = patchify(&l, 2).unwrap();
        assert_eq!((t.n, t.dim), (6, 8));
        assert_eq!(&t.row(0)[..4], &[0.0, 1.0, 6.0, 7.0]);
        assert_eq!(unpatchify(&t, 2, 4, 6, 2), l);
        assert!(patchify(&l, 4).is_err());
    }

    #[test]
    fn gray_mapping() {
        let img = GrayImage::new(3, 1, vec![0, 128, 255]).unwrap();
        let l = latent_from_gray(&img, 2);
        assert_eq!(l.at(0, 0, 0), -1.0);
        assert_eq!(l.at(1, 0, 2), 1.0);
        assert_eq!(gray_from_latent(&l), img);
    }
}
