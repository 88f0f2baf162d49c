//! Separable bilinear resampling.
//!
//! Pixel centres sit at half-integer coordinates. When shrinking, the
//! triangle kernel is widened by the scale factor so every source pixel
//! contributes (antialiased bilinear); when enlarging it is the plain
//! two-tap bilinear interpolation. Weights are renormalised at the borders.

use crate::gray::{quantize, GrayImage};

/// One output sample: first source index and its normalised weights.
#[derive(Debug, Clone)]
struct Taps {
    start: usize,
    weights: Vec<f64>,
}

fn taps(src_len: usize, dst_len: usize) -> Vec<Taps> {
    let scale = src_len as f64 / dst_len as f64;
    let support = scale.max(1.0);
    (0..dst_len)
        .map(|d| {
            let center = (d as f64 + 0.5) * scale;
            let lo = ((center - support).floor().max(0.0)) as usize;
            let hi = ((center + support).ceil() as usize).min(src_len);
            let mut weights: Vec<f64> = (lo..hi)
                .map(|s| {
                    let dist = ((s as f64 + 0.5) - center).abs() / support;
                    (1.0 - dist).max(0.0)
                })
                .collect();
            let sum: f64 = weights.iter().sum();
            if sum > 0.0 {
                weights.iter_mut().for_each(|w| *w /= sum);
            } else {
                // Degenerate single tap; happens only for src_len == 1.
                weights = vec![1.0; hi - lo];
            }
            Taps { start: lo, weights }
        })
        .collect()
}

/// Resizes a real-valued plane.
pub fn resize_plane(
    src: &[f64],
    width: usize,
    height: usize,
    new_width: usize,
    new_height: usize,
) -> Vec<f64> {
    assert_eq!(src.len(), width * height);
    assert!(new_width > 0 && new_height > 0);
    let xt = taps(width, new_width);
    let yt = taps(height, new_height);

    let mut horiz = vec![0.0; new_width * height];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        for (dx, t) in xt.iter().enumerate() {
            horiz[y * new_width + dx] = t
                .weights
                .iter()
                .enumerate()
                .map(|(i, w)| w * row[t.start + i])
                .sum();
        }
    }
    let mut out = vec![0.0; new_width * new_height];
    for (dy, t) in yt.iter().enumerate() {
        for x in 0..new_width {
            out[dy * new_width + x] = t
                .weights
                .iter()
                .enumerate()
                .map(|(i, w)| w * horiz[(t.start + i) * new_width + x])
                .sum();
        }
    }
    out
}

pub fn to_plane(img: &GrayImage) -> Vec<f64> {
    img.pixels().iter().map(|&v| v as f64).collect()
}

pub fn from_plane(width: usize, height: usize, plane: &[f64]) -> GrayImage {
    GrayImage::new(width, height, plane.iter().map(|&v| quantize(v)).collect())
        .expect("plane sized to image")
}

pub fn resize(img: &GrayImage, new_width: usize, new_height: usize) -> GrayImage {
    let plane = resize_plane(
        &to_plane(img),
        img.width(),
        img.height(),
        new_width,
        new_height,
    );
    from_plane(new_width, new_height, &plane)
}
