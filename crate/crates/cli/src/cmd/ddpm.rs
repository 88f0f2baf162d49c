use std::path::PathBuf;

use clap::ValueEnum;
use log::warn;
use spikeline_core::codec::write_pgm;
use spikeline_core::resample::resize;
use spikeline_core::GrayImage;
use spikeline_diffusion::latent::latent_from_gray;
use spikeline_diffusion::schedule::{
    DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_CFG_SCALE, DEFAULT_SAMPLING_STEPS,
    DEFAULT_TRAIN_STEPS,
};
use spikeline_diffusion::{
    make_schedule, sample_latent, BlockParams, Checkpoint, Denoiser, ModelConfig, NoiseSchedule,
    OracleDenoiser, VarianceMode,
};

use super::{read_gray, write_file, SEED_ENV};
use crate::exit::usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DenoiserKind {
    /// Predicts exactly the noise that leads back to `--target`.
    Oracle,
    /// Trained weights from `--checkpoint`.
    Checkpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variance {
    Zero,
    Beta,
}

/// Run the conditional sampling loop on an ETFI condition image.
#[derive(Debug, clap::Args)]
pub struct Args {
    /// Sampling steps.
    #[arg(long, default_value_t = DEFAULT_SAMPLING_STEPS)]
    pub steps: usize,

    /// Length of the training schedule the sampling steps are taken from.
    #[arg(long, default_value_t = DEFAULT_TRAIN_STEPS)]
    pub train_steps: usize,

    /// Classifier-free guidance scale.
    #[arg(long, default_value_t = DEFAULT_CFG_SCALE, allow_negative_numbers = true)]
    pub cfg_scale: f64,

    /// Run only the conditional branch.
    #[arg(long)]
    pub no_cfg: bool,

    /// Condition image (ETFI, PGM or any decodable format).
    #[arg(long)]
    pub cond: PathBuf,

    #[arg(long, value_enum, default_value_t = DenoiserKind::Oracle)]
    pub denoiser: DenoiserKind,

    /// Weights for `--denoiser checkpoint`.
    #[arg(long, required_if_eq("denoiser", "checkpoint"))]
    pub checkpoint: Option<PathBuf>,

    /// Oracle target image [default: the condition].
    #[arg(long)]
    pub target: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = Variance::Beta)]
    pub variance: Variance,

    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,

    /// Output PGM.
    #[arg(long)]
    pub out: PathBuf,
}

/// Largest patch in {4, 2, 1} dividing both sides.
fn patch_for(w: usize, h: usize) -> usize {
    [4, 2, 1]
        .into_iter()
        .find(|p| w.is_multiple_of(*p) && h.is_multiple_of(*p))
        .unwrap_or(1)
}

fn fit(img: GrayImage, w: usize, h: usize, what: &str) -> GrayImage {
    if (img.width(), img.height()) == (w, h) {
        img
    } else {
        warn!(
            "resizing {what} from {}x{} to {w}x{h}",
            img.width(),
            img.height()
        );
        resize(&img, w, h)
    }
}

pub fn schedule(
    steps: usize,
    train_steps: usize,
    variance: Variance,
) -> anyhow::Result<NoiseSchedule> {
    let mode = match variance {
        Variance::Zero => VarianceMode::Zero,
        Variance::Beta => VarianceMode::Beta,
    };
    let train = make_schedule(train_steps, DEFAULT_BETA_START, DEFAULT_BETA_END, mode)?;
    Ok(NoiseSchedule::strided(&train, steps)?)
}

pub fn run(args: Args) -> anyhow::Result<()> {
    if args.steps == 0 || args.steps > args.train_steps {
        return Err(usage(format!(
            "--steps must be in 1..={} (the training schedule length)",
            args.train_steps
        )));
    }
    let sched = schedule(args.steps, args.train_steps, args.variance)?;
    let cond_img = read_gray(&args.cond)?;
    let (blocks, denoiser): (BlockParams, Box<dyn Denoiser>) = match args.denoiser {
        DenoiserKind::Oracle => {
            let (w, h) = (cond_img.width(), cond_img.height());
            let config = ModelConfig {
                height: h,
                width: w,
                patch: patch_for(w, h),
                ..ModelConfig::default()
            };
            let blocks = BlockParams::new(config, args.seed)?;
            let target = match &args.target {
                Some(p) => fit(read_gray(p)?, w, h, "target"),
                None => cond_img.clone(),
            };
            let oracle = OracleDenoiser::new(latent_from_gray(&target, config.channels));
            (blocks, Box::new(oracle))
        }
        DenoiserKind::Checkpoint => {
            let path = args.checkpoint.as_ref().expect("required by clap");
            crate::exit::require_input(path)?;
            let ckpt = Checkpoint::load(path)
                .map_err(|e| usage(format!("bad checkpoint {}: {e}", path.display())))?;
            let den = ckpt.denoiser.ok_or_else(|| {
                usage(format!(
                    "checkpoint {} holds no noise predictor",
                    path.display()
                ))
            })?;
            (ckpt.blocks, Box::new(den))
        }
    };
    let cfg = blocks.config;
    let cond_img = fit(cond_img, cfg.width, cfg.height, "condition");
    let cond = latent_from_gray(&cond_img, cfg.channels);
    let scale = (!args.no_cfg).then_some(args.cfg_scale);

    let cfg_label = scale.map_or("off".to_string(), |s| s.to_string());
    eprintln!(
        "ddpm-demo steps={} cfg={cfg_label} denoiser={:?} seed={} latent={}x{}",
        args.steps, args.denoiser, args.seed, cfg.width, cfg.height
    );
    let out = sample_latent(denoiser.as_ref(), &cond, &blocks, &sched, scale, args.seed)?;
    for s in &out.trace {
        eprintln!("t={:>4} eps_rms={:.6} z_rms={:.6}", s.t, s.eps_rms, s.z_rms);
    }
    write_file(&args.out, &write_pgm(&out.image))?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}
