use std::path::{Path, PathBuf};

use anyhow::Context;
use log::info;
use spikeline_core::codec::encode_stream;
use spikeline_core::recon::WHITE_RATE;
use spikeline_core::{firing_rate_map, simulate_stream, GrayImage, LuminanceVideo, SpikeStream};

use super::{positive, read_gray, write_file, SEED_ENV};
use crate::exit::{require_input, usage};
use crate::sensor_args::SensorArgs;

/// Simulate a spike stream from an image, or from a directory of frames
/// played in name order.
#[derive(Debug, clap::Args)]
pub struct Args {
    /// Image file, or a directory of equally sized frames.
    pub input: PathBuf,

    /// Output `.spk` file.
    #[arg(long)]
    pub out: PathBuf,

    /// Sampling steps to simulate.
    #[arg(long, default_value_t = 2000)]
    pub frames: usize,

    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,

    #[command(flatten)]
    pub sensor: SensorArgs,
}

fn frame_paths(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(usage(format!("no frames in {}", dir.display())));
    }
    Ok(paths)
}

pub fn run(args: Args) -> anyhow::Result<()> {
    positive("--frames", args.frames)?;
    require_input(&args.input)?;
    let images: Vec<GrayImage> = if args.input.is_dir() {
        frame_paths(&args.input)?
            .iter()
            .map(|p| read_gray(p))
            .collect::<anyhow::Result<_>>()?
    } else {
        vec![read_gray(&args.input)?]
    };
    let (w, h) = (images[0].width(), images[0].height());
    let config = args.sensor.config(w, h, args.seed);
    // Gray level 255 fires at the reference white rate.
    let per_level = config.current_for_rate(WHITE_RATE) / 255.0;
    let mut planes = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        if (img.width(), img.height()) != (w, h) {
            return Err(usage(format!(
                "frame {i} is {}x{}, expected {w}x{h}",
                img.width(),
                img.height()
            )));
        }
        planes.push(img.pixels().iter().map(|&v| v as f64 * per_level).collect());
    }
    let hold = args.frames.div_ceil(planes.len());
    let video = LuminanceVideo::new(w, h, planes, hold)?;
    let mut stream = simulate_stream(&video, &config)?;
    if stream.len() > args.frames {
        let frames = stream.frames()[..args.frames].to_vec();
        stream = SpikeStream::new(stream.config.clone(), stream.start_index, frames)?;
    }
    write_file(&args.out, &encode_stream(&stream))?;
    let rate = firing_rate_map(&stream)?.mean();
    info!("wrote {}", args.out.display());
    eprintln!(
        "frames={} resolution={w}x{h} mean_rate={rate:.6}",
        stream.len()
    );
    Ok(())
}
