use clap::Args;
use spikeline_core::sensor::{DEFAULT_SAMPLE_PERIOD, DEFAULT_THRESHOLD};
use spikeline_core::{NoiseModel, SensorConfig};

/// Sensor and low-light noise flags shared by `simulate` and `synth`.
#[derive(Debug, Clone, Args)]
pub struct SensorArgs {
    /// Firing threshold φ.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,

    /// Sampling period T in seconds.
    #[arg(long, default_value_t = DEFAULT_SAMPLE_PERIOD)]
    pub sample_period: f64,

    /// Enable Poisson photon shot noise.
    #[arg(long)]
    pub shot_noise: bool,

    /// Photons per accumulation unit (sets the shot-noise scale).
    #[arg(long, default_value_t = 100.0)]
    pub photons_per_unit: f64,

    /// Dark current, accumulation units per second.
    #[arg(long, default_value_t = 0.0)]
    pub dark_current: f64,

    /// Fraction of hot pixels, in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    pub hot_pixels: f64,

    /// Hot pixel current, units per second [default: threshold / sample period].
    #[arg(long)]
    pub hot_pixel_current: Option<f64>,
}

impl SensorArgs {
    pub fn config(&self, width: usize, height: usize, seed: u64) -> SensorConfig {
        let noise = NoiseModel {
            shot_noise: self.shot_noise,
            photons_per_unit: self.photons_per_unit,
            dark_current: self.dark_current,
            hot_pixel_fraction: self.hot_pixels,
            hot_pixel_current: self
                .hot_pixel_current
                .unwrap_or(self.threshold / self.sample_period),
            seed,
        };
        SensorConfig {
            threshold: self.threshold,
            sample_period: self.sample_period,
            ..SensorConfig::new(width, height)
        }
        .with_noise(noise)
    }
}
