//! Classic reconstructions: texture from ISI (TFI) and texture from playback
//! (TFP).

use crate::error::{Error, Result};
use crate::gray::{quantize, GrayImage};
use crate::isi::IsiMap;
use crate::sensor::SensorConfig;
use crate::stream::{slice_window, spike_counts, SpikeStream};

/// Firing rate that display gains map to 255.
pub const WHITE_RATE: f64 = 0.5;

/// TFP gain placing [`WHITE_RATE`] at 255.
pub const DEFAULT_TFP_GAIN: f64 = 255.0 / WHITE_RATE;

/// TFI gain placing the current that fires at [`WHITE_RATE`] at 255.
pub fn default_tfi_gain(config: &SensorConfig) -> f64 {
    255.0 / config.current_for_rate(WHITE_RATE)
}

fn check_gain(gain: f64) -> Result<()> {
    if gain > 0.0 && gain.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidGain(gain))
    }
}

/// Estimated input current `φ / (ISI·T)` per pixel.
pub fn tfi_current(isi: &IsiMap, config: &SensorConfig) -> Vec<f64> {
    isi.isi
        .iter()
        .map(|&i| config.threshold / (i as f64 * config.sample_period))
        .collect()
}

pub fn tfi(isi: &IsiMap, config: &SensorConfig, gain: f64) -> Result<GrayImage> {
    check_gain(gain)?;
    let pixels = tfi_current(isi, config)
        .into_iter()
        .map(|c| quantize(gain * c))
        .collect();
    GrayImage::new(isi.width, isi.height, pixels)
}

/// Mean spike count over `S_{k,δt}`, scaled by `gain`.
pub fn tfp(stream: &SpikeStream, k: i64, delta_t: usize, gain: f64) -> Result<GrayImage> {
    check_gain(gain)?;
    let window = slice_window(stream, k, delta_t)?;
    let n = window.len() as f64;
    let pixels = spike_counts(&window)
        .into_iter()
        .map(|c| quantize(gain * c as f64 / n))
        .collect();
    GrayImage::new(stream.width(), stream.height(), pixels)
}
