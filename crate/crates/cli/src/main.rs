use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod cmd;
mod exit;
mod sensor_args;

/// Spike camera simulation, reconstruction and conditional diffusion demos.
///
/// Human-readable progress goes to stderr; machine output (bench JSON) goes
/// to stdout. Exit codes: 0 success, 2 usage or configuration error,
/// 3 unreadable or malformed data.
#[derive(Debug, Parser)]
#[command(name = "spikeline", version)]
struct Cli {
    /// Worker threads for row-parallel stages. Output does not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    workers: Option<u32>,

    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    Simulate(cmd::simulate::Args),
    Reconstruct(cmd::reconstruct::Args),
    DdpmDemo(cmd::ddpm::Args),
    Train(cmd::train::Args),
    Synth(cmd::synth::Args),
    Bench(cmd::bench::Args),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let workers = cli.workers.map(|w| w as usize);
    if let Command::Bench(args) = cli.command {
        // Bench manages its own pools.
        return cmd::bench::run(args, workers);
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    pool.install(|| match cli.command {
        Command::Simulate(a) => cmd::simulate::run(a),
        Command::Reconstruct(a) => cmd::reconstruct::run(a),
        Command::DdpmDemo(a) => cmd::ddpm::run(a),
        Command::Train(a) => cmd::train::run(a),
        Command::Synth(a) => cmd::synth::run(a),
        Command::Bench(_) => unreachable!(),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e))
        }
    }
}
