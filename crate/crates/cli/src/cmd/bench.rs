use std::time::Instant;

use serde::Serialize;
use spikeline_core::recon::WHITE_RATE;
use spikeline_core::{
    isi_search, simulate_stream, GrayImage, IsiMap, LuminanceVideo, NoiseModel, SensorConfig,
    SpikeStream,
};

use crate::exit::usage;

pub const SCHEMA: &str = "spikeline.bench/1";

/// Time simulation and ISI search, single- and multi-worker. Prints JSON.
#[derive(Debug, clap::Args)]
pub struct Args {
    /// Square side, or WIDTHxHEIGHT.
    #[arg(long, default_value = "256")]
    pub resolution: String,

    #[arg(long, default_value_t = 2000)]
    pub frames: usize,

    /// Enable shot noise and 0.1% hot pixels in the synthetic scene.
    #[arg(long)]
    pub noise: bool,
}

#[derive(Debug, Serialize)]
pub struct Timing {
    pub workers: usize,
    pub simulate_seconds: f64,
    pub simulate_pixel_frames_per_sec: f64,
    pub isi_seconds: f64,
    pub isi_pixel_frames_per_sec: f64,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub noise: bool,
    pub single: Timing,
    pub multi: Timing,
    /// Multi-worker stream and ISI map equal the single-worker ones.
    pub identical: bool,
}

fn parse_resolution(s: &str) -> anyhow::Result<(usize, usize)> {
    let bad = || usage(format!("bad --resolution {s:?}; expected N or WxH"));
    let (w, h) = match s.split_once(['x', 'X']) {
        Some((w, h)) => (
            w.trim().parse().map_err(|_| bad())?,
            h.trim().parse().map_err(|_| bad())?,
        ),
        None => {
            let n = s.trim().parse().map_err(|_| bad())?;
            (n, n)
        }
    };
    if w == 0 || h == 0 {
        return Err(usage("resolution must be positive"));
    }
    Ok((w, h))
}

fn timed_run(
    video: &LuminanceVideo,
    config: &SensorConfig,
    workers: usize,
) -> anyhow::Result<(Timing, SpikeStream, IsiMap)> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()?;
    pool.install(|| {
        let t0 = Instant::now();
        let stream = simulate_stream(video, config)?;
        let sim = t0.elapsed().as_secs_f64();
        let t0 = Instant::now();
        let isi = isi_search(&stream, stream.center_index()?)?;
        let isi_t = t0.elapsed().as_secs_f64();
        let work = (video.width() * video.height() * stream.len()) as f64;
        let timing = Timing {
            workers,
            simulate_seconds: sim,
            simulate_pixel_frames_per_sec: work / sim.max(1e-12),
            isi_seconds: isi_t,
            isi_pixel_frames_per_sec: work / isi_t.max(1e-12),
        };
        Ok((timing, stream, isi))
    })
}

pub fn run(args: Args, workers: Option<usize>) -> anyhow::Result<()> {
    let (w, h) = parse_resolution(&args.resolution)?;
    if args.frames == 0 {
        return Err(usage("--frames must be at least 1"));
    }
    let multi =
        workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let mut config = SensorConfig::new(w, h);
    if args.noise {
        config = config.with_noise(NoiseModel {
            shot_noise: true,
            hot_pixel_fraction: 1e-3,
            seed: 1,
            ..NoiseModel::off()
        });
    }
    // Diagonal gradient: every rate from dark to the reference white.
    let scene = GrayImage::from_fn(w, h, |x, y| (16 + (x + y) * 239 / (w + h).max(2)) as u8);
    let per_level = config.current_for_rate(WHITE_RATE) / 255.0;
    let video = LuminanceVideo::from_image(&scene, per_level, args.frames)?;

    let (single, s1, i1) = timed_run(&video, &config, 1)?;
    eprintln!(
        "single worker: simulate {:.3}s, isi {:.3}s",
        single.simulate_seconds, single.isi_seconds
    );
    let (multi_t, s2, i2) = timed_run(&video, &config, multi)?;
    eprintln!(
        "{multi} workers: simulate {:.3}s, isi {:.3}s",
        multi_t.simulate_seconds, multi_t.isi_seconds
    );
    let report = Report {
        schema: SCHEMA,
        width: w,
        height: h,
        frames: args.frames,
        noise: args.noise,
        single,
        multi: multi_t,
        identical: s1 == s2 && i1 == i2,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    if !report.identical {
        anyhow::bail!("multi-worker output differs from single-worker output");
    }
    Ok(())
}
