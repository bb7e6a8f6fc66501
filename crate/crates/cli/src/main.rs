//! Experiments in diffraction tomography of rotating objects.
//!
//! ```text
//! rotodt forward      --config exp.json --output run/ [--seed 7]
//! rotodt reconstruct  --output run/ [--config exp.json] [--samples run/samples.bin] [--slice 40]
//! rotodt compare      truth.vol test.vol
//! rotodt validate     [--config oracle.json] [--output run/]
//! rotodt design-dump  --config exp.json --output run/
//! ```
//!
//! `--threads K` sizes the worker pool for any subcommand. Results do not
//! depend on it.

mod commands;
mod config;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::ExperimentConfig;
use rotodt::validation::OracleConfig;

#[derive(Parser)]
#[command(name = "rotodt", version, about = "Diffraction tomography of rotating objects")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "K")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize k-space samples and write them with a JSON sidecar.
    Forward {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        #[arg(long, value_name = "DIR")]
        output: PathBuf,
        /// Noise seed, overriding the config.
        #[arg(long, value_name = "U64")]
        seed: Option<u64>,
    },
    /// Reconstruct a volume from samples; writes the volume, the averaged truth
    /// and a JSON report.
    Reconstruct {
        /// Defaults to the config recorded with the samples.
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        output: PathBuf,
        /// Defaults to DIR/samples.bin.
        #[arg(long, value_name = "PATH")]
        samples: Option<PathBuf>,
        /// Also export the slice j1 = INDEX (0-based) as an 8-bit PNG.
        #[arg(long, value_name = "INDEX")]
        slice: Option<usize>,
    },
    /// Print PSNR, SSIM and RMSE of TEST against TRUTH as JSON.
    Compare { truth: PathBuf, test: PathBuf },
    /// Check the Fourier diffraction relation against a direct Born simulation.
    Validate {
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        output: Option<PathBuf>,
    },
    /// Write every sample position as CSV (j1,j2,s,k1,k2,t,y1,y2,y3).
    DesignDump {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        #[arg(long, value_name = "DIR")]
        output: PathBuf,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global().context("configuring threads")?;
    }
    match cli.command {
        Command::Forward { config, output, seed } => {
            let cfg = ExperimentConfig::load(&config)?.with_seed(seed);
            let path = commands::forward(&cfg, &output)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Reconstruct { config, output, samples, slice } => {
            let cfg = config.as_deref().map(ExperimentConfig::load).transpose()?;
            let samples = samples.unwrap_or_else(|| output.join(commands::SAMPLES_FILE));
            commands::reconstruct(cfg, &samples, &output, slice)?;
        }
        Command::Compare { truth, test } => {
            let q = commands::compare(&truth, &test)?;
            println!("{}", serde_json::to_string_pretty(&q)?);
        }
        Command::Validate { config, output } => {
            let cfg: OracleConfig = match config {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => OracleConfig::default(),
            };
            let v = commands::validate(&cfg, output.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&v)?);
        }
        Command::DesignDump { config, output } => {
            commands::design_dump(&ExperimentConfig::load(&config)?, &output)?;
        }
    }
    Ok(())
}
