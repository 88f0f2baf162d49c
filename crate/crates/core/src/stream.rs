//! Binary spike frames and streams.

use crate::error::{Error, Result};
use crate::sensor::SensorConfig;

/// Bytes per packed row: 8 pixels per byte, rows padded to a byte boundary.
#[inline]
pub fn row_bytes(width: usize) -> usize {
    width.div_ceil(8)
}

/// One `W×H` binary plane. Rows are packed least-significant-bit first, so
/// pixel `x` of a row lives in bit `x % 8` of byte `x / 8`. Padding bits are
/// always zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeFrame {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl SpikeFrame {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![0; row_bytes(width) * height],
        }
    }

    /// Wraps packed rows, clearing any padding bits.
    pub fn from_packed(width: usize, height: usize, mut bits: Vec<u8>) -> Result<Self> {
        let rb = row_bytes(width);
        if bits.len() != rb * height {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} frame needs {} packed bytes, got {}",
                rb * height,
                bits.len()
            )));
        }
        let tail = width % 8;
        if tail != 0 {
            let mask = (1u8 << tail) - 1;
            for row in bits.chunks_mut(rb) {
                row[rb - 1] &= mask;
            }
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut frame = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    frame.set(x, y, true);
                }
            }
        }
        frame
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn packed(&self) -> &[u8] {
        &self.bits
    }

    pub fn packed_row(&self, y: usize) -> &[u8] {
        let rb = row_bytes(self.width);
        &self.bits[y * rb..(y + 1) * rb]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        debug_assert!(x < self.width && y < self.height);
        let byte = self.bits[y * row_bytes(self.width) + x / 8];
        (byte >> (x % 8)) & 1 == 1
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        assert!(
            x < self.width && y < self.height,
            "pixel ({x}, {y}) out of range"
        );
        let idx = y * row_bytes(self.width) + x / 8;
        let bit = 1u8 << (x % 8);
        if on {
            self.bits[idx] |= bit;
        } else {
            self.bits[idx] &= !bit;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }
}

/// Ordered spike frames produced by one sensor, starting at absolute frame
/// index `start_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeStream {
    pub config: SensorConfig,
    pub start_index: i64,
    frames: Vec<SpikeFrame>,
}

impl SpikeStream {
    pub fn new(config: SensorConfig, start_index: i64, frames: Vec<SpikeFrame>) -> Result<Self> {
        for frame in &frames {
            if frame.width != config.width || frame.height != config.height {
                return Err(Error::ResolutionMismatch {
                    expected_width: config.width,
                    expected_height: config.height,
                    width: frame.width,
                    height: frame.height,
                });
            }
        }
        Ok(Self {
            config,
            start_index,
            frames,
        })
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    pub fn height(&self) -> usize {
        self.config.height
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[SpikeFrame] {
        &self.frames
    }

    /// Absolute index of the last frame, `start_index - 1` when empty.
    pub fn last_index(&self) -> i64 {
        self.start_index + self.frames.len() as i64 - 1
    }

    /// Position of absolute frame `k` inside `frames()`.
    pub fn position(&self, k: i64) -> Result<usize> {
        if self.frames.is_empty() || k < self.start_index || k > self.last_index() {
            return Err(Error::FrameOutOfBounds {
                k,
                first: self.start_index,
                last: self.last_index(),
            });
        }
        Ok((k - self.start_index) as usize)
    }

    pub fn frame(&self, k: i64) -> Result<&SpikeFrame> {
        Ok(&self.frames[self.position(k)?])
    }

    /// Absolute index of the middle frame.
    pub fn center_index(&self) -> Result<i64> {
        if self.frames.is_empty() {
            return Err(Error::Empty("spike stream"));
        }
        Ok(self.start_index + (self.frames.len() / 2) as i64)
    }

    pub fn total_spikes(&self) -> usize {
        self.frames.iter().map(SpikeFrame::count_ones).sum()
    }
}

/// Per-pixel spike rate in spikes per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMap {
    pub width: usize,
    pub height: usize,
    pub rates: Vec<f64>,
}

impl RateMap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.rates[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.rates.iter().sum::<f64>() / self.rates.len() as f64
    }
}

/// Per-pixel spike counts over every frame of the stream.
pub(crate) fn spike_counts(stream: &SpikeStream) -> Vec<u32> {
    let (w, h) = (stream.width(), stream.height());
    let rb = row_bytes(w);
    let mut counts = vec![0u32; w * h];
    for frame in stream.frames() {
        for y in 0..h {
            let row = &frame.bits[y * rb..(y + 1) * rb];
            let out = &mut counts[y * w..(y + 1) * w];
            for (bi, &byte) in row.iter().enumerate() {
                let mut b = byte;
                while b != 0 {
                    let bit = b.trailing_zeros() as usize;
                    out[bi * 8 + bit] += 1;
                    b &= b - 1;
                }
            }
        }
    }
    counts
}

pub fn firing_rate_map(stream: &SpikeStream) -> Result<RateMap> {
    if stream.is_empty() {
        return Err(Error::Empty("spike stream"));
    }
    let n = stream.len() as f64;
    let rates = spike_counts(stream)
        .into_iter()
        .map(|c| c as f64 / n)
        .collect();
    Ok(RateMap {
        width: stream.width(),
        height: stream.height(),
        rates,
    })
}

/// Extracts the `2·delta_t + 1` frames centred on absolute frame `k`.
pub fn slice_window(stream: &SpikeStream, k: i64, delta_t: usize) -> Result<SpikeStream> {
    let oob = || Error::WindowOutOfBounds {
        k,
        delta_t,
        first: stream.start_index,
        last: stream.last_index(),
    };
    let dt = i64::try_from(delta_t).map_err(|_| oob())?;
    let first = k.checked_sub(dt).ok_or_else(oob)?;
    let last = k.checked_add(dt).ok_or_else(oob)?;
    if stream.is_empty() || first < stream.start_index || last > stream.last_index() {
        return Err(oob());
    }
    let lo = (first - stream.start_index) as usize;
    let hi = (last - stream.start_index) as usize;
    Ok(SpikeStream {
        config: stream.config.clone(),
        start_index: first,
        frames: stream.frames[lo..=hi].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream_of(frames: usize, on: bool) -> SpikeStream {
        let cfg = SensorConfig::new(5, 3);
        let frames = (0..frames)
            .map(|i| SpikeFrame::from_fn(5, 3, |_, _| on || i % 7 == 3))
            .collect();
        SpikeStream::new(cfg, 0, frames).unwrap()
    }

    #[test]
    fn bit_layout_is_lsb_first() {
        let mut f = SpikeFrame::zeros(10, 2);
        f.set(0, 0, true);
        f.set(9, 1, true);
        assert_eq!(f.packed(), &[0x01, 0x00, 0x00, 0x02]);
        assert!(f.get(9, 1));
        f.set(9, 1, false);
        assert_eq!(f.count_ones(), 1);
    }

    #[test]
    fn from_packed_clears_padding() {
        let f = SpikeFrame::from_packed(3, 1, vec![0xFF]).unwrap();
        assert_eq!(f.packed(), &[0x07]);
        assert!(SpikeFrame::from_packed(3, 2, vec![0xFF]).is_err());
    }

    #[test]
    fn rates_of_constant_streams() {
        let zeros =
            SpikeStream::new(SensorConfig::new(5, 3), 0, vec![SpikeFrame::zeros(5, 3); 4]).unwrap();
        assert!(firing_rate_map(&zeros)
            .unwrap()
            .rates
            .iter()
            .all(|&r| r == 0.0));
        let ones = stream_of(9, true);
        assert!(firing_rate_map(&ones)
            .unwrap()
            .rates
            .iter()
            .all(|&r| r == 1.0));
        let empty = SpikeStream::new(SensorConfig::new(5, 3), 0, vec![]).unwrap();
        assert!(matches!(firing_rate_map(&empty), Err(Error::Empty(_))));
    }

    #[test]
    fn window_bounds() {
        let s = stream_of(20, false);
        let w = slice_window(&s, 10, 3).unwrap();
        assert_eq!(w.len(), 7);
        assert_eq!(w.start_index, 7);
        assert_eq!(w.frames()[0], s.frames()[7]);
        assert_eq!(w.frames()[6], s.frames()[13]);

        let single = slice_window(&s, 4, 0).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single.frames()[0], s.frames()[4]);

        assert!(matches!(
            slice_window(&s, 2, 5),
            Err(Error::WindowOutOfBounds { .. })
        ));
        assert!(slice_window(&s, 17, 3).is_err());
        assert!(slice_window(&s, 16, 3).is_ok());
        assert!(slice_window(&s, i64::MIN, 1).is_err());
    }

    #[test]
    fn mismatched_frames_rejected() {
        let cfg = SensorConfig::new(4, 4);
        let err = SpikeStream::new(cfg, 0, vec![SpikeFrame::zeros(3, 4)]).unwrap_err();
        assert!(matches!(err, Error::ResolutionMismatch { .. }));
    }
}
