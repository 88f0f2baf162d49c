use std::path::PathBuf;

use spikeline_core::resample::resize;
use spikeline_diffusion::latent::latent_from_gray;
use spikeline_diffusion::schedule::{DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_TRAIN_STEPS};
use spikeline_diffusion::train::{train, TrainConfig, TrainModel};
use spikeline_diffusion::{
    make_schedule, BlockParams, Checkpoint, ModelConfig, ToyDenoiser, VarianceMode,
};

use super::{positive, read_gray, SEED_ENV};

/// Fit the toy model to one (condition, ground truth) pair and save a checkpoint.
#[derive(Debug, clap::Args)]
pub struct Args {
    /// Condition image (ETFI).
    #[arg(long)]
    pub cond: PathBuf,

    /// Ground-truth image.
    #[arg(long)]
    pub target: PathBuf,

    /// Square latent size both images are resized to.
    #[arg(long, default_value_t = 16)]
    pub size: usize,

    #[arg(long, default_value_t = 200)]
    pub iterations: usize,

    #[arg(long, default_value_t = 3e-3)]
    pub lr: f64,

    /// Hidden channels of the noise predictor.
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,

    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,

    /// Output checkpoint.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: Args) -> anyhow::Result<()> {
    let size = positive("--size", args.size)?;
    positive("--iterations", args.iterations)?;
    positive("--hidden", args.hidden)?;
    let cond = resize(&read_gray(&args.cond)?, size, size);
    let target = resize(&read_gray(&args.target)?, size, size);
    let config = ModelConfig {
        height: size,
        width: size,
        patch: [4, 2, 1].into_iter().find(|p| size % p == 0).unwrap_or(1),
        ..ModelConfig::default()
    };
    let mut model = TrainModel {
        blocks: BlockParams::new(config, args.seed)?,
        denoiser: ToyDenoiser::new(
            config.channels,
            args.hidden,
            config.time_dim,
            args.seed.wrapping_add(1),
        )?,
    };
    let sched = make_schedule(
        DEFAULT_TRAIN_STEPS,
        DEFAULT_BETA_START,
        DEFAULT_BETA_END,
        VarianceMode::Beta,
    )?;
    let report = train(
        &mut model,
        &latent_from_gray(&cond, 1),
        &latent_from_gray(&target, 1),
        &sched,
        &TrainConfig {
            iterations: args.iterations,
            lr: args.lr,
            seed: args.seed,
            ..TrainConfig::default()
        },
    )?;
    let ckpt = Checkpoint {
        blocks: model.blocks,
        denoiser: Some(model.denoiser),
    };
    ckpt.save(&args.out)?;
    eprintln!(
        "loss {:.6} -> {:.6} ({:.1}% of initial); wrote {}",
        report.initial_loss,
        report.final_loss,
        100.0 * report.final_loss / report.initial_loss,
        args.out.display()
    );
    Ok(())
}
