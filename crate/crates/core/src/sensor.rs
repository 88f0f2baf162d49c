//! Integrate-and-fire spike camera model.
//!
//! Each pixel integrates its input current. At every sampling instant `nT` the
//! accumulator is compared against the threshold `φ`; on a crossing the pixel
//! emits a spike and `φ` is subtracted, keeping the residual charge (the
//! accumulator follows `∫ I dτ mod φ`).

use rand_core::RngCore;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{hash3, unit_f64, CounterRng};
use crate::stream::{row_bytes, SpikeFrame, SpikeStream};

/// 20 kHz sampling.
pub const DEFAULT_SAMPLE_PERIOD: f64 = 50e-6;
pub const DEFAULT_THRESHOLD: f64 = 1.0;

/// Relative slack on the threshold comparison. Charge that reaches `φ` only
/// up to floating-point rounding of the running sum still fires.
pub const FIRE_TOLERANCE: f64 = 1e-9;

const HOT_PIXEL_STREAM: u64 = 0x686f_7470_6978_656c;

/// Low-light noise sources. All disabled by [`NoiseModel::off`].
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// Poisson photon shot noise on the per-step collected charge.
    pub shot_noise: bool,
    /// Photons per accumulation unit; sets the Poisson scale.
    pub photons_per_unit: f64,
    /// Constant dark current, units per second.
    pub dark_current: f64,
    /// Probability that a pixel is hot.
    pub hot_pixel_fraction: f64,
    /// Current of a hot pixel, units per second, regardless of the scene.
    pub hot_pixel_current: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn off() -> Self {
        Self {
            shot_noise: false,
            photons_per_unit: 100.0,
            dark_current: 0.0,
            hot_pixel_fraction: 0.0,
            hot_pixel_current: DEFAULT_THRESHOLD / DEFAULT_SAMPLE_PERIOD,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.hot_pixel_fraction) {
            return Err(Error::Config(format!(
                "hot pixel fraction {} outside [0, 1]",
                self.hot_pixel_fraction
            )));
        }
        if self.shot_noise && !(self.photons_per_unit > 0.0 && self.photons_per_unit.is_finite()) {
            return Err(Error::Config(format!(
                "photons per unit must be positive with shot noise, got {}",
                self.photons_per_unit
            )));
        }
        if !(self.dark_current >= 0.0 && self.dark_current.is_finite()) {
            return Err(Error::Config(format!(
                "dark current must be non-negative, got {}",
                self.dark_current
            )));
        }
        if !(self.hot_pixel_current >= 0.0 && self.hot_pixel_current.is_finite()) {
            return Err(Error::Config(format!(
                "hot pixel current must be non-negative, got {}",
                self.hot_pixel_current
            )));
        }
        Ok(())
    }

    /// Hot-pixel membership, fixed per pixel by the seed.
    #[inline]
    pub fn is_hot_pixel(&self, pixel: usize) -> bool {
        self.hot_pixel_fraction > 0.0
            && unit_f64(hash3(self.seed, HOT_PIXEL_STREAM, pixel as u64)) < self.hot_pixel_fraction
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::off()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorConfig {
    pub width: usize,
    pub height: usize,
    /// Firing threshold `φ`, accumulation units.
    pub threshold: f64,
    /// Sampling period `T`, seconds.
    pub sample_period: f64,
    pub noise: NoiseModel,
}

impl SensorConfig {
    /// Noise-free sensor with 20 kHz sampling and `φ = 1`.
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            threshold: DEFAULT_THRESHOLD,
            sample_period: DEFAULT_SAMPLE_PERIOD,
            noise: NoiseModel::off(),
        }
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = noise;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config(format!(
                "resolution {}x{} must be at least 1x1",
                self.width, self.height
            )));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::Config(format!(
                "threshold must be positive, got {}",
                self.threshold
            )));
        }
        if !(self.sample_period > 0.0 && self.sample_period.is_finite()) {
            return Err(Error::Config(format!(
                "sample period must be positive, got {}",
                self.sample_period
            )));
        }
        self.noise.validate()
    }

    /// Constant current whose noise-free firing rate is `rate` spikes per frame.
    pub fn current_for_rate(&self, rate: f64) -> f64 {
        rate * self.threshold / self.sample_period
    }
}

/// Accumulated charge of one pixel, kept in `[0, φ)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PixelAccumulator {
    value: f64,
}

impl PixelAccumulator {
    pub fn value(&self) -> f64 {
        self.value
    }

    /// Adds `charge` and reports whether the pixel fires at this sample.
    #[inline]
    pub fn integrate(&mut self, charge: f64, threshold: f64) -> bool {
        self.value += charge;
        let fired = self.value >= threshold * (1.0 - FIRE_TOLERANCE);
        if fired {
            let residual = self.value - threshold;
            self.value = if residual <= 0.0 {
                0.0
            } else if residual < threshold {
                residual
            } else {
                // More than one threshold per sample: the readout fires once.
                residual % threshold
            };
        }
        debug_assert!(self.value >= 0.0 && self.value < threshold);
        fired
    }
}

/// Input current of one pixel after applying the noise model.
///
/// Noise off yields `base + dark`. With shot noise the collected charge
/// `(base + dark)·T` is drawn as a Poisson photon count and rescaled. Hot
/// pixels ignore the scene and return `hot_pixel_current`.
pub fn effective_current<R: RngCore + ?Sized>(
    pixel: usize,
    base_current: f64,
    noise: &NoiseModel,
    sample_period: f64,
    rng: &mut R,
) -> f64 {
    if noise.is_hot_pixel(pixel) {
        return noise.hot_pixel_current;
    }
    let current = base_current + noise.dark_current;
    if !noise.shot_noise {
        return current;
    }
    let photons_per_current = sample_period * noise.photons_per_unit;
    let mean = current * photons_per_current;
    if mean <= 0.0 {
        return 0.0;
    }
    let photons: f64 = match Poisson::new(mean) {
        Ok(dist) => dist.sample(rng),
        // Means beyond the sampler's range are deterministic for our purposes.
        Err(_) => mean,
    };
    photons / photons_per_current
}

/// Scene radiance as per-pixel input current, piecewise constant over video
/// frames. Each video frame is held for `steps_per_frame` sampling steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LuminanceVideo {
    width: usize,
    height: usize,
    frames: Vec<Vec<f64>>,
    steps_per_frame: usize,
}

impl LuminanceVideo {
    pub fn new(
        width: usize,
        height: usize,
        frames: Vec<Vec<f64>>,
        steps_per_frame: usize,
    ) -> Result<Self> {
        if steps_per_frame == 0 {
            return Err(Error::Config("steps per frame must be at least 1".into()));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.len() != width * height {
                return Err(Error::DimensionMismatch(format!(
                    "video frame {i} has {} values, expected {}",
                    f.len(),
                    width * height
                )));
            }
        }
        Ok(Self {
            width,
            height,
            frames,
            steps_per_frame,
        })
    }

    /// A static scene of uniform current held for `steps` samples.
    pub fn constant(width: usize, height: usize, current: f64, steps: usize) -> Result<Self> {
        Self::new(width, height, vec![vec![current; width * height]], steps)
    }

    /// A static scene with current `level · current_per_level` per pixel.
    pub fn from_image(
        image: &crate::GrayImage,
        current_per_level: f64,
        steps: usize,
    ) -> Result<Self> {
        let frame = image
            .pixels()
            .iter()
            .map(|&v| v as f64 * current_per_level)
            .collect();
        Self::new(image.width(), image.height(), vec![frame], steps)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    pub fn steps_per_frame(&self) -> usize {
        self.steps_per_frame
    }

    pub fn total_steps(&self) -> usize {
        self.frames.len() * self.steps_per_frame
    }
}

/// Runs the sensor over the whole video, producing one spike frame per
/// sampling step.
///
/// Rows are simulated in parallel on the current rayon pool. Every random draw
/// is keyed by `(seed, pixel, step)`, so the output does not depend on the
/// number of workers.
pub fn simulate_stream(video: &LuminanceVideo, config: &SensorConfig) -> Result<SpikeStream> {
    config.validate()?;
    if video.width != config.width || video.height != config.height {
        return Err(Error::ResolutionMismatch {
            expected_width: config.width,
            expected_height: config.height,
            width: video.width,
            height: video.height,
        });
    }
    if video.frames.is_empty() {
        return Err(Error::Empty("luminance video"));
    }
    for (fi, frame) in video.frames.iter().enumerate() {
        for (pixel, &v) in frame.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteIntensity { frame: fi, pixel });
            }
            if v < 0.0 {
                return Err(Error::NegativeIntensity {
                    frame: fi,
                    pixel,
                    value: v,
                });
            }
        }
    }

    let (w, h) = (config.width, config.height);
    let rb = row_bytes(w);
    let steps = video.total_steps();
    let rows: Vec<Vec<u8>> = (0..h)
        .into_par_iter()
        .map(|y| simulate_row(video, config, y))
        .collect();

    let frames = (0..steps)
        .map(|s| {
            let mut bits = Vec::with_capacity(rb * h);
            for row in &rows {
                bits.extend_from_slice(&row[s * rb..(s + 1) * rb]);
            }
            SpikeFrame::from_packed(w, h, bits)
        })
        .collect::<Result<Vec<_>>>()?;
    SpikeStream::new(config.clone(), 0, frames)
}

/// Packed bits of row `y` for every step, laid out `[step][row byte]`.
fn simulate_row(video: &LuminanceVideo, config: &SensorConfig, y: usize) -> Vec<u8> {
    let w = config.width;
    let rb = row_bytes(w);
    let steps = video.total_steps();
    let spf = video.steps_per_frame;
    let noise = &config.noise;
    let period = config.sample_period;
    let phi = config.threshold;
    let deterministic = !noise.shot_noise;

    let mut out = vec![0u8; steps * rb];
    for x in 0..w {
        let pixel = y * w + x;
        let byte = x / 8;
        let mask = 1u8 << (x % 8);
        let mut acc = PixelAccumulator::default();
        let hot = noise.is_hot_pixel(pixel);
        for step in 0..steps {
            let base = video.frames[step / spf][pixel];
            let current = if hot {
                noise.hot_pixel_current
            } else if deterministic {
                base + noise.dark_current
            } else {
                let mut rng = CounterRng::new(noise.seed, pixel as u64, step as u64);
                effective_current(pixel, base, noise, period, &mut rng)
            };
            if acc.integrate(current * period, phi) {
                out[step * rb + byte] |= mask;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_pixel(charge_per_step: f64, phi: f64, steps: usize) -> SpikeStream {
        let mut cfg = SensorConfig::new(1, 1);
        cfg.threshold = phi;
        let video =
            LuminanceVideo::constant(1, 1, charge_per_step / cfg.sample_period, steps).unwrap();
        simulate_stream(&video, &cfg).unwrap()
    }

    fn spike_steps(s: &SpikeStream) -> Vec<usize> {
        (0..s.len())
            .filter(|&i| s.frames()[i].get(0, 0))
            .map(|i| i + 1)
            .collect()
    }

    /// Exact rational accumulation: charge and threshold as integer numerators
    /// over a common denominator.
    fn rational_oracle(charge_num: u64, phi_num: u64, steps: usize) -> (Vec<usize>, Vec<u64>) {
        let mut acc = 0u64;
        let mut spikes = vec![];
        let mut residuals = vec![];
        for n in 1..=steps {
            acc += charge_num;
            if acc >= phi_num {
                acc -= phi_num;
                spikes.push(n);
                residuals.push(acc);
            }
        }
        (spikes, residuals)
    }

    #[test]
    fn half_unit_charge_against_threshold_two() {
        let (expected, _) = rational_oracle(1, 4, 12);
        assert_eq!(expected, vec![4, 8, 12]);
        assert_eq!(spike_steps(&one_pixel(0.5, 2.0, 12)), expected);
    }

    #[test]
    fn residual_is_retained() {
        let (expected, residuals) = rational_oracle(3, 10, 10);
        assert_eq!(expected, vec![4, 7, 10]);
        assert_eq!(residuals, vec![2, 1, 0]);
        assert_eq!(spike_steps(&one_pixel(0.3, 1.0, 10)), expected);

        let mut acc = PixelAccumulator::default();
        let mut seen = vec![];
        for _ in 0..10 {
            if acc.integrate(0.3, 1.0) {
                seen.push(acc.value());
            }
        }
        for (got, want) in seen.iter().zip([0.2, 0.1, 0.0]) {
            assert!((got - want).abs() < 1e-12, "{seen:?}");
        }
    }

    #[test]
    fn zero_current_is_silent() {
        let s = one_pixel(0.0, 1.0, 50);
        assert_eq!(s.total_spikes(), 0);
        let cfg = SensorConfig::new(9, 4);
        let v = LuminanceVideo::constant(9, 4, 0.0, 30).unwrap();
        assert_eq!(simulate_stream(&v, &cfg).unwrap().total_spikes(), 0);
    }

    #[test]
    fn saturating_current_fires_every_step() {
        let s = one_pixel(3.7, 1.0, 20);
        assert_eq!(s.total_spikes(), 20);
    }

    #[test]
    fn effective_current_without_noise() {
        let mut rng = CounterRng::new(0, 0, 0);
        let mut noise = NoiseModel::off();
        assert_eq!(effective_current(0, 3.0, &noise, 1e-4, &mut rng), 3.0);
        noise.dark_current = 0.5;
        assert_eq!(effective_current(0, 3.0, &noise, 1e-4, &mut rng), 3.5);
    }

    #[test]
    fn shot_noise_mean_matches_base_current() {
        let noise = NoiseModel {
            shot_noise: true,
            photons_per_unit: 50.0,
            ..NoiseModel::off()
        };
        let period = 1.0;
        let n = 100_000u64;
        let total: f64 = (0..n)
            .map(|step| {
                let mut rng = CounterRng::new(noise.seed, 3, step);
                effective_current(3, 2.0, &noise, period, &mut rng)
            })
            .sum();
        let mean = total / n as f64;
        assert!((mean - 2.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn hot_pixels_override_scene() {
        let noise = NoiseModel {
            hot_pixel_fraction: 1.0,
            hot_pixel_current: 7.0,
            ..NoiseModel::off()
        };
        let mut rng = CounterRng::new(0, 0, 0);
        assert_eq!(effective_current(5, 1000.0, &noise, 1e-3, &mut rng), 7.0);
    }

    #[test]
    fn hot_pixels_fire_at_their_own_rate() {
        let mut cfg = SensorConfig::new(8, 8);
        cfg.noise = NoiseModel {
            hot_pixel_fraction: 1.0,
            hot_pixel_current: cfg.current_for_rate(0.25),
            ..NoiseModel::off()
        };
        for scene in [0.0, cfg.current_for_rate(0.9)] {
            let video = LuminanceVideo::constant(8, 8, scene, 400).unwrap();
            let rates = crate::firing_rate_map(&simulate_stream(&video, &cfg).unwrap()).unwrap();
            assert!(rates.rates.iter().all(|&r| (r - 0.25).abs() <= 1.0 / 400.0));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = SensorConfig::new(2, 2);
        let wrong = LuminanceVideo::constant(3, 2, 1.0, 4).unwrap();
        assert!(matches!(
            simulate_stream(&wrong, &cfg),
            Err(Error::ResolutionMismatch { .. })
        ));
        let nan = LuminanceVideo::new(2, 2, vec![vec![0.0, f64::NAN, 0.0, 0.0]], 1).unwrap();
        assert!(matches!(
            simulate_stream(&nan, &cfg),
            Err(Error::NonFiniteIntensity { pixel: 1, .. })
        ));
        let empty = LuminanceVideo::new(2, 2, vec![], 1).unwrap();
        assert!(simulate_stream(&empty, &cfg).is_err());
        let mut bad = cfg.clone();
        bad.threshold = 0.0;
        let ok = LuminanceVideo::constant(2, 2, 1.0, 4).unwrap();
        assert!(matches!(simulate_stream(&ok, &bad), Err(Error::Config(_))));
        assert!(LuminanceVideo::constant(2, 2, 1.0, 0).is_err());
    }

    #[test]
    fn video_frames_are_held() {
        let cfg = SensorConfig::new(1, 1);
        let c = cfg.current_for_rate(1.0);
        let video = LuminanceVideo::new(1, 1, vec![vec![0.0], vec![c]], 3).unwrap();
        let s = simulate_stream(&video, &cfg).unwrap();
        assert_eq!(spike_steps(&s), vec![4, 5, 6]);
    }
}
