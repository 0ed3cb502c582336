//! `acid-lab` command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use acid_core::io::read_f64grid;
use acid_core::MetricsReport;
use acid_lab::run::{write_forward, write_phantom};
use acid_lab::{run_config, ConfigError, ExperimentConfig, Protocol, RunError};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "acid-lab", version, about = "Run ACID reconstruction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (flat `key = value`); a previous manifest.txt also works.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the phantom seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the configured phantom.
    Phantom(Common),
    /// Write the measurement of the configured phantom.
    Forward(Common),
    Reconstruct(Common),
    Ablate(Common),
    Sweep(Common),
    AttackNet(Common),
    AttackAcid(Common),
    Contraction(Common),
    NoiseStability(Common),
    /// PSNR and SSIM between two F64GRID images.
    Metrics {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        peak: f64,
    },
}

fn load(common: &Common, protocol: Option<Protocol>) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::parse(&fs::read_to_string(p)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.phantom_seed = s;
    }
    if let Some(p) = protocol {
        cfg.protocol = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn runtime(e: acid_core::Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(3)
}

fn config_fail(e: ConfigError) -> ExitCode {
    eprintln!("config error: {e}");
    ExitCode::from(2)
}

fn protocol(common: &Common, protocol: Protocol) -> ExitCode {
    let cfg = match load(common, Some(protocol)) {
        Ok(c) => c,
        Err(e) => return config_fail(e),
    };
    match run_config(&cfg, &common.out) {
        Ok(m) => {
            for (k, v) in &m.results {
                println!("{k} = {v}");
            }
            println!("manifest: {}", common.out.join(acid_lab::run::MANIFEST_NAME).display());
            ExitCode::SUCCESS
        }
        Err(e @ RunError::Config(_)) => {
            eprintln!("config error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn metrics(reference: &Path, candidate: &Path, peak: f64) -> acid_core::Result<()> {
    let r = MetricsReport::compute(&read_f64grid(reference)?, &read_f64grid(candidate)?, peak)?;
    println!("psnr = {}", r.psnr);
    println!("ssim = {}", r.ssim);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let emit = |common: &Common, f: fn(&ExperimentConfig, &Path) -> acid_core::Result<Vec<PathBuf>>| match load(common, None)
    {
        Ok(cfg) => match f(&cfg, &common.out) {
            Ok(paths) => {
                print_paths(&paths);
                ExitCode::SUCCESS
            }
            Err(e) => runtime(e),
        },
        Err(e) => config_fail(e),
    };
    match &cli.command {
        Command::Phantom(c) => emit(c, write_phantom),
        Command::Forward(c) => emit(c, write_forward),
        Command::Reconstruct(c) => protocol(c, Protocol::Reconstruct),
        Command::Ablate(c) => protocol(c, Protocol::Ablate),
        Command::Sweep(c) => protocol(c, Protocol::Sweep),
        Command::AttackNet(c) => protocol(c, Protocol::AttackNet),
        Command::AttackAcid(c) => protocol(c, Protocol::AttackAcid),
        Command::Contraction(c) => protocol(c, Protocol::Contraction),
        Command::NoiseStability(c) => protocol(c, Protocol::NoiseStability),
        Command::Metrics { reference, candidate, peak } => match metrics(reference, candidate, *peak) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => runtime(e),
        },
    }
}
