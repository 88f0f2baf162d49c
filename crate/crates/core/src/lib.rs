//! Spike camera stream toolkit.
//!
//! Simulates integrate-and-fire spike cameras under low-light noise, stores the
//! resulting binary streams in a compact bit-packed format and reconstructs
//! intensity images from them with inter-spike-interval methods (ETFI, TFI) and
//! spike playback (TFP).

pub mod codec;
pub mod error;
pub mod gray;
pub mod isi;
pub mod metrics;
pub mod recon;
pub mod resample;
pub mod rng;
pub mod sensor;
pub mod stream;
pub mod synth;

pub use error::{CodecError, Error, PgmError, Result};
pub use gray::GrayImage;
pub use isi::{apply_gain, etfi, isi_search, EtfiImage, Gain, IsiMap};
pub use sensor::{simulate_stream, LuminanceVideo, NoiseModel, SensorConfig};
pub use stream::{firing_rate_map, slice_window, RateMap, SpikeFrame, SpikeStream};
