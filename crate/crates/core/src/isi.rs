//! Global inter-spike intervals and ETFI enhancement.
//!
//! For a reference frame `k`, a pixel's interval is the distance between the
//! last spike at or before `k` and the first spike after `k`. ETFI rescales
//! the reciprocal interval by the frame's largest interval,
//! `EI_k = max(ISI_k) / ISI_k`, so the dimmest pixel with a measurable
//! interval maps to exactly 1 and brighter pixels scale up from there.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gray::{quantize, GrayImage};
use crate::stream::{row_bytes, SpikeStream};

/// Per-pixel inter-spike interval, in frames, at one reference frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IsiMap {
    pub width: usize,
    pub height: usize,
    /// Interval per pixel; `fallback` where no bounding spike pair exists.
    pub isi: Vec<u32>,
    /// Whether both bounding spikes were found.
    pub valid: Vec<bool>,
}

impl IsiMap {
    /// Builds a map from intervals, all marked valid.
    pub fn from_intervals(width: usize, height: usize, isi: Vec<u32>) -> Result<Self> {
        if isi.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} map needs {} intervals, got {}",
                width * height,
                isi.len()
            )));
        }
        if isi.contains(&0) {
            return Err(Error::Config("intervals must be at least 1".into()));
        }
        let valid = vec![true; isi.len()];
        Ok(Self {
            width,
            height,
            isi,
            valid,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.isi[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Largest interval among valid pixels.
    pub fn max_valid(&self) -> Option<u32> {
        self.isi
            .iter()
            .zip(&self.valid)
            .filter(|(_, &v)| v)
            .map(|(&i, _)| i)
            .max()
    }
}

/// Finds the bounding spikes of every pixel around absolute frame `k`.
///
/// A spike exactly at `k` counts as the earlier bound. Pixels lacking either
/// bound get the stream length as interval and are flagged invalid; for a
/// window `S_{k,δt}` that is `2δt + 1`.
pub fn isi_search(stream: &SpikeStream, k: i64) -> Result<IsiMap> {
    let pos = stream.position(k)?;
    let (w, h) = (stream.width(), stream.height());
    let fallback = u32::try_from(stream.len())
        .map_err(|_| Error::Config("stream longer than u32::MAX frames".into()))?;

    let rows: Vec<(Vec<u32>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|y| isi_row(stream, pos, y, fallback))
        .collect();

    let mut isi = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for (i, v) in rows {
        isi.extend(i);
        valid.extend(v);
    }
    Ok(IsiMap {
        width: w,
        height: h,
        isi,
        valid,
    })
}

/// Two passes over one row: backwards from `pos` for the last spike, forwards
/// from `pos + 1` for the next. Whole bytes are resolved at once and each pass
/// stops as soon as every pixel has its bound.
fn isi_row(stream: &SpikeStream, pos: usize, y: usize, fallback: u32) -> (Vec<u32>, Vec<bool>) {
    let w = stream.width();
    let rb = row_bytes(w);
    let frames = stream.frames();
    let full_last = if w.is_multiple_of(8) {
        0xFF
    } else {
        (1u8 << (w % 8)) - 1
    };
    let full = |b: usize| if b + 1 == rb { full_last } else { 0xFF };

    let scan = |order: &mut dyn Iterator<Item = usize>| -> Vec<Option<usize>> {
        let mut found = vec![0u8; rb];
        let mut at = vec![None; w];
        let mut remaining = w;
        for f in order {
            if remaining == 0 {
                break;
            }
            let row = frames[f].packed_row(y);
            for b in 0..rb {
                let mut fresh = row[b] & !found[b];
                if fresh == 0 {
                    continue;
                }
                found[b] |= fresh;
                while fresh != 0 {
                    let bit = fresh.trailing_zeros() as usize;
                    at[b * 8 + bit] = Some(f);
                    remaining -= 1;
                    fresh &= fresh - 1;
                }
            }
        }
        debug_assert!((0..rb).all(|b| found[b] & !full(b) == 0));
        at
    };

    let prev = scan(&mut (0..=pos).rev());
    let next = scan(&mut (pos + 1..frames.len()));

    let mut isi = vec![fallback; w];
    let mut valid = vec![false; w];
    for x in 0..w {
        if let (Some(p), Some(n)) = (prev[x], next[x]) {
            isi[x] = (n - p) as u32;
            valid[x] = true;
        }
    }
    (isi, valid)
}

/// ETFI output: quantized image plus the unclipped enhancement.
#[derive(Debug, Clone, PartialEq)]
pub struct EtfiImage {
    pub image: GrayImage,
    pub raw: Vec<f64>,
    /// Fraction of pixels with `raw ≥ 255`.
    pub overexposure_ratio: f64,
}

impl EtfiImage {
    /// Re-quantizes `raw` (clip at 255, round half-up) and refreshes the
    /// overexposure ratio.
    pub fn from_raw(width: usize, height: usize, raw: Vec<f64>) -> Result<Self> {
        let pixels = raw.iter().map(|&r| quantize(r.min(255.0))).collect();
        let image = GrayImage::new(width, height, pixels)?;
        let overexposure_ratio = overexposed_fraction(&raw);
        Ok(Self {
            image,
            raw,
            overexposure_ratio,
        })
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }
}

pub(crate) fn overexposed_fraction(raw: &[f64]) -> f64 {
    if raw.is_empty() {
        return 0.0;
    }
    raw.iter().filter(|&&r| r >= 255.0).count() as f64 / raw.len() as f64
}

/// `EI = max(ISI) / ISI`, with the maximum taken over valid pixels of this
/// frame only.
pub fn etfi(isi: &IsiMap) -> Result<EtfiImage> {
    let max = isi.max_valid().ok_or(Error::NoValidPixels)? as f64;
    let raw = isi.isi.iter().map(|&i| max / i as f64).collect();
    EtfiImage::from_raw(isi.width, isi.height, raw)
}

/// Display gain for an ETFI image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gain {
    Fixed(f64),
    /// Maps the 99th-percentile raw value to 255.
    Auto,
}

pub const AUTO_GAIN_PERCENTILE: f64 = 0.99;

/// Nearest-rank percentile of `values`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Resolves `gain` against this image's raw values.
pub fn resolve_gain(etfi: &EtfiImage, gain: Gain) -> Result<f64> {
    let g = match gain {
        Gain::Fixed(g) => g,
        Gain::Auto => 255.0 / percentile(&etfi.raw, AUTO_GAIN_PERCENTILE),
    };
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::InvalidGain(g));
    }
    Ok(g)
}

/// Scales raw intensities and re-quantizes. Monotone, so pixel order is kept.
pub fn apply_gain(etfi: &EtfiImage, gain: Gain) -> Result<EtfiImage> {
    let g = resolve_gain(etfi, gain)?;
    let raw = etfi.raw.iter().map(|&r| r * g).collect();
    EtfiImage::from_raw(etfi.width(), etfi.height(), raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::SensorConfig;
    use crate::stream::SpikeFrame;

    fn single_pixel(spikes: &[usize], len: usize) -> SpikeStream {
        let frames = (0..len)
            .map(|i| SpikeFrame::from_fn(1, 1, |_, _| spikes.contains(&i)))
            .collect();
        SpikeStream::new(SensorConfig::new(1, 1), 0, frames).unwrap()
    }

    #[test]
    fn spike_at_k_is_previous_bound() {
        let s = single_pixel(&[2, 5, 9], 12);
        let m = isi_search(&s, 6).unwrap();
        assert_eq!((m.isi[0], m.valid[0]), (4, true));
        let m = isi_search(&s, 5).unwrap();
        assert_eq!((m.isi[0], m.valid[0]), (4, true));
        let m = isi_search(&s, 4).unwrap();
        assert_eq!(m.isi[0], 3);
        let m = isi_search(&s, 9).unwrap();
        assert_eq!((m.isi[0], m.valid[0]), (12, false));
        let m = isi_search(&s, 1).unwrap();
        assert!(!m.valid[0]);
    }

    #[test]
    fn silent_pixel_gets_window_length() {
        let s = single_pixel(&[], 21);
        let m = isi_search(&s, 10).unwrap();
        assert_eq!((m.isi[0], m.valid[0]), (21, false));
    }

    #[test]
    fn search_respects_start_index() {
        let mut s = single_pixel(&[2, 5, 9], 12);
        s.start_index = 100;
        assert_eq!(isi_search(&s, 106).unwrap().isi[0], 4);
        assert!(matches!(
            isi_search(&s, 6),
            Err(Error::FrameOutOfBounds { .. })
        ));
    }

    #[test]
    fn etfi_small_grid() {
        let m = IsiMap::from_intervals(2, 2, vec![2, 4, 8, 8]).unwrap();
        let e = etfi(&m).unwrap();
        assert_eq!(e.raw, vec![4.0, 2.0, 1.0, 1.0]);
        assert_eq!(e.image.pixels(), &[4, 2, 1, 1]);
        assert_eq!(e.overexposure_ratio, 0.0);
    }

    #[test]
    fn etfi_uniform_is_one() {
        let m = IsiMap::from_intervals(3, 3, vec![17; 9]).unwrap();
        let e = etfi(&m).unwrap();
        assert!(e.raw.iter().all(|&r| r == 1.0));
        assert!(e.image.pixels().iter().all(|&v| v == 1));
    }

    #[test]
    fn etfi_clips_and_reports_overexposure() {
        let m = IsiMap::from_intervals(1, 2, vec![1, 512]).unwrap();
        let e = etfi(&m).unwrap();
        assert_eq!(e.raw, vec![512.0, 1.0]);
        assert_eq!(e.image.pixels(), &[255, 1]);
        assert_eq!(e.overexposure_ratio, 0.5);
    }

    #[test]
    fn invalid_pixels_do_not_set_the_scale() {
        let mut m = IsiMap::from_intervals(3, 1, vec![2, 6, 21]).unwrap();
        m.valid[2] = false;
        let e = etfi(&m).unwrap();
        assert_eq!(e.raw[1], 1.0);
        assert_eq!(e.raw[0], 3.0);
        assert!(e.raw[2] < 1.0);

        m.valid = vec![false; 3];
        assert!(matches!(etfi(&m), Err(Error::NoValidPixels)));
    }

    #[test]
    fn gain_fixed_and_auto() {
        let m = IsiMap::from_intervals(2, 2, vec![2, 4, 8, 8]).unwrap();
        let e = etfi(&m).unwrap();
        assert_eq!(apply_gain(&e, Gain::Fixed(1.0)).unwrap(), e);

        let g = apply_gain(&e, Gain::Fixed(60.0)).unwrap();
        assert_eq!(g.image.pixels(), &[240, 120, 60, 60]);

        assert_eq!(resolve_gain(&e, Gain::Auto).unwrap(), 63.75);
        let a = apply_gain(&e, Gain::Auto).unwrap();
        assert_eq!(a.image.pixels()[0], 255);

        assert!(matches!(
            apply_gain(&e, Gain::Fixed(0.0)),
            Err(Error::InvalidGain(_))
        ));
        assert!(apply_gain(&e, Gain::Fixed(-2.0)).is_err());
    }

    #[test]
    fn percentile_nearest_rank() {
        assert_eq!(percentile(&[1.0, 1.0, 2.0, 4.0], 0.99), 4.0);
        let v: Vec<f64> = (1..=200).map(|i| i as f64).collect();
        assert_eq!(percentile(&v, 0.99), 198.0);
        assert_eq!(percentile(&[3.0], 0.99), 3.0);
    }
}
