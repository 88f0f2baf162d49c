pub mod bench;
pub mod ddpm;
pub mod reconstruct;
pub mod simulate;
pub mod synth;
pub mod train;

use std::path::Path;

use anyhow::Context;
use spikeline_core::GrayImage;

use crate::exit::{require_input, usage};

/// Default for every `--seed`.
pub const SEED_ENV: &str = "SPIKELINE_SEED";

pub fn read_gray(path: &Path) -> anyhow::Result<GrayImage> {
    require_input(path)?;
    spikeline_core::synth::load_gray(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn positive(name: &str, v: usize) -> anyhow::Result<usize> {
    if v == 0 {
        Err(usage(format!("{name} must be at least 1")))
    } else {
        Ok(v)
    }
}
