use std::path::PathBuf;

use anyhow::Context;
use clap::ValueEnum;
use spikeline_core::codec::{decode_stream, write_pgm};
use spikeline_core::isi::{percentile, AUTO_GAIN_PERCENTILE};
use spikeline_core::recon::{default_tfi_gain, tfi, tfi_current, tfp, DEFAULT_TFP_GAIN};
use spikeline_core::{
    apply_gain, etfi, firing_rate_map, isi_search, slice_window, Gain, SpikeStream,
};

use super::write_file;
use crate::exit::{require_input, usage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Intensity from the inter-spike interval.
    Tfi,
    /// Windowed spike count.
    Tfp,
    /// Enhanced texture from the inter-spike interval.
    Etfi,
}

/// Reconstruct one frame from a `.spk` stream.
#[derive(Debug, clap::Args)]
pub struct Args {
    /// Input `.spk` file.
    pub input: PathBuf,

    #[arg(long, value_enum, default_value_t = Method::Etfi)]
    pub method: Method,

    /// Reference frame index [default: stream centre].
    #[arg(long, allow_negative_numbers = true)]
    pub k: Option<i64>,

    /// Half window δt; frames k-δt..=k+δt are used [default: largest that fits].
    #[arg(long)]
    pub window: Option<usize>,

    /// Fixed output gain.
    #[arg(long, conflicts_with = "auto_gain")]
    pub gain: Option<f64>,

    /// Scale so the 99th percentile maps to 255.
    #[arg(long)]
    pub auto_gain: bool,

    /// Output PGM.
    #[arg(long)]
    pub out: PathBuf,
}

fn auto_gain(values: &[f64]) -> anyhow::Result<f64> {
    let p = percentile(values, AUTO_GAIN_PERCENTILE);
    if p > 0.0 {
        Ok(255.0 / p)
    } else {
        Err(usage("auto gain undefined: reconstruction is all zero"))
    }
}

pub fn run(args: Args) -> anyhow::Result<()> {
    require_input(&args.input)?;
    let bytes =
        std::fs::read(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let stream: SpikeStream =
        decode_stream(&bytes).with_context(|| format!("decoding {}", args.input.display()))?;
    let k = match args.k {
        Some(k) => k,
        None => stream.center_index()?,
    };
    let window = match args.window {
        Some(w) => w,
        None => {
            stream.position(k)?;
            (k - stream.start_index).min(stream.last_index() - k) as usize
        }
    };
    let win = slice_window(&stream, k, window)?;
    let image = match args.method {
        Method::Etfi => {
            let raw = etfi(&isi_search(&win, k)?)?;
            let gain = match (args.gain, args.auto_gain) {
                (Some(g), _) => Gain::Fixed(g),
                (None, true) => Gain::Auto,
                (None, false) => Gain::Fixed(1.0),
            };
            let out = apply_gain(&raw, gain)?;
            eprintln!("overexposure={:.6}", out.overexposure_ratio);
            out.image
        }
        Method::Tfi => {
            let isi = isi_search(&win, k)?;
            let gain = match (args.gain, args.auto_gain) {
                (Some(g), _) => g,
                (None, true) => auto_gain(&tfi_current(&isi, &win.config))?,
                (None, false) => default_tfi_gain(&win.config),
            };
            tfi(&isi, &win.config, gain)?
        }
        Method::Tfp => {
            let gain = match (args.gain, args.auto_gain) {
                (Some(g), _) => g,
                (None, true) => auto_gain(&firing_rate_map(&win)?.rates)?,
                (None, false) => DEFAULT_TFP_GAIN,
            };
            tfp(&stream, k, window, gain)?
        }
    };
    write_file(&args.out, &write_pgm(&image))?;
    eprintln!(
        "method={:?} k={k} window={window} out={}",
        args.method,
        args.out.display()
    );
    Ok(())
}
