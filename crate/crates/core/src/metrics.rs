//! Reference-based image quality metrics and small statistics helpers.
//!
//! SSIM is the single-scale form with an 8×8 uniform window sliding at stride
//! 1 over every valid position, population (co)variances, and
//! `C1 = (0.01·255)²`, `C2 = (0.03·255)²`. The score is the mean over windows.

use crate::error::{Error, Result};
use crate::gray::GrayImage;
use crate::isi::{overexposed_fraction, EtfiImage};

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
pub const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn same_size(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

pub fn mse(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    same_size(a, b)?;
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.pixels().len() as f64)
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical images.
pub fn psnr(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / m).log10())
}

pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    same_size(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::DimensionMismatch(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let (pa, pb) = (a.pixels(), b.pixels());
    let mut total = 0.0;
    let mut windows = 0usize;
    for y0 in 0..=h - SSIM_WINDOW {
        for x0 in 0..=w - SSIM_WINDOW {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + SSIM_WINDOW {
                for x in x0..x0 + SSIM_WINDOW {
                    let va = pa[y * w + x] as f64;
                    let vb = pb[y * w + x] as f64;
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let var_a = (saa / n - ma * ma).max(0.0);
            let var_b = (sbb / n - mb * mb).max(0.0);
            let cov = sab / n - ma * mb;
            total += ssim_from_moments(ma, mb, var_a, var_b, cov);
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

/// SSIM of one window given its moments.
pub fn ssim_from_moments(mean_a: f64, mean_b: f64, var_a: f64, var_b: f64, cov: f64) -> f64 {
    ((2.0 * mean_a * mean_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mean_a * mean_a + mean_b * mean_b + SSIM_C1) * (var_a + var_b + SSIM_C2))
}

/// Fraction of ETFI pixels whose raw value reached 255.
pub fn overexposure_ratio(etfi: &EtfiImage) -> f64 {
    overexposed_fraction(&etfi.raw)
}

/// Ranks with ties sharing their average rank (1-based).
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&average_ranks(a), &average_ranks(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noisy(seed: u64) -> GrayImage {
        GrayImage::from_fn(16, 12, |x, y| {
            (crate::rng::hash3(seed, x as u64, y as u64) % 256) as u8
        })
    }

    #[test]
    fn psnr_values() {
        let a = noisy(1);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let black = GrayImage::filled(4, 4, 0);
        let white = GrayImage::filled(4, 4, 255);
        assert_eq!(psnr(&black, &white).unwrap(), 0.0);
        let one = GrayImage::filled(4, 4, 1);
        assert!((psnr(&black, &one).unwrap() - 48.1308).abs() < 0.01);
        assert!(psnr(&black, &GrayImage::filled(4, 5, 0)).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let base = GrayImage::filled(8, 8, 100);
        let mut last = f64::INFINITY;
        for amp in 1..=20u8 {
            let n = GrayImage::from_fn(8, 8, |x, y| {
                if (x + y) % 2 == 0 {
                    100 + amp
                } else {
                    100 - amp
                }
            });
            let p = psnr(&base, &n).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = noisy(3);
        let b = noisy(4);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        let s = ssim(&a, &b).unwrap();
        assert!((-1.0..1.0).contains(&s));
    }

    #[test]
    fn ssim_of_constant_images() {
        let a = GrayImage::filled(8, 8, 50);
        let b = GrayImage::filled(8, 8, 178);
        let (ma, mb) = (50.0f64, 178.0f64);
        let closed = (2.0 * ma * mb + SSIM_C1) / (ma * ma + mb * mb + SSIM_C1);
        assert!((ssim(&a, &b).unwrap() - closed).abs() < 1e-12);
        assert!(ssim(&GrayImage::filled(7, 8, 0), &GrayImage::filled(7, 8, 0)).is_err());
    }

    #[test]
    fn row_permutation_invariance() {
        let a = noisy(5);
        let b = noisy(6);
        let flip = |img: &GrayImage| {
            GrayImage::from_fn(img.width(), img.height(), |x, y| {
                img.get(x, img.height() - 1 - y)
            })
        };
        let (fa, fb) = (flip(&a), flip(&b));
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&fa, &fb).unwrap());
        assert!((ssim(&a, &b).unwrap() - ssim(&fa, &fb).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn overexposure_counts() {
        let e = EtfiImage::from_raw(4, 1, vec![300.0, 10.0, 500.0, 1.0]).unwrap();
        assert_eq!(overexposure_ratio(&e), 0.5);
        let lo = EtfiImage::from_raw(2, 1, vec![254.9, 1.0]).unwrap();
        assert_eq!(overexposure_ratio(&lo), 0.0);
        let hi = EtfiImage::from_raw(2, 1, vec![255.0, 1e6]).unwrap();
        assert_eq!(overexposure_ratio(&hi), 1.0);
    }

    #[test]
    fn spearman_handles_ties() {
        assert_eq!(
            average_ranks(&[3.0, 1.0, 3.0, 2.0]),
            vec![3.5, 1.0, 3.5, 2.0]
        );
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, 4.0, 8.0, 16.0, 32.0];
        assert!((spearman(&a, &b) - 1.0).abs() < 1e-12);
        let r: Vec<f64> = b.iter().rev().copied().collect();
        assert!((spearman(&a, &r) + 1.0).abs() < 1e-12);
    }
}
