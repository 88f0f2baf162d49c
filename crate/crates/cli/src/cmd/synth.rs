use std::path::PathBuf;

use spikeline_core::synth::{synth_dataset, SynthConfig};

use super::SEED_ENV;
use crate::exit::usage;
use crate::sensor_args::SensorArgs;

/// Build (ETFI, ground truth) training pairs from an image corpus.
#[derive(Debug, clap::Args)]
pub struct Args {
    /// Directory of source images.
    #[arg(long)]
    pub corpus: PathBuf,

    /// Output directory; rerunning resumes from its manifest.
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long, default_value_t = 512)]
    pub crop_size: usize,

    /// Down/up-scale ratio applied before simulation.
    #[arg(long, default_value_t = 2.0)]
    pub degrade_factor: f64,

    /// Sampling steps simulated per image.
    #[arg(long, default_value_t = 256)]
    pub frames: usize,

    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,

    #[command(flatten)]
    pub sensor: SensorArgs,
}

pub fn run(args: Args) -> anyhow::Result<()> {
    if !args.corpus.is_dir() {
        return Err(usage(format!(
            "input not found: corpus directory {}",
            args.corpus.display()
        )));
    }
    let cfg = SynthConfig {
        crop_size: args.crop_size,
        degrade_factor: args.degrade_factor,
        stream_frames: args.frames,
        sensor: args.sensor.config(1, 1, args.seed),
        seed: args.seed,
    };
    let report = synth_dataset(&args.corpus, &args.out, &cfg)?;
    for (path, why) in &report.skipped {
        eprintln!("skipped {}: {why}", path.display());
    }
    eprintln!(
        "written={} resumed={} skipped={} manifest_lines={}",
        report.written,
        report.resumed,
        report.skipped.len(),
        report.manifest.entries.len()
    );
    Ok(())
}
