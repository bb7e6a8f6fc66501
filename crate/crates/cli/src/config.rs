//! The experiment description read by every subcommand.

use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use rotodt::phantoms::Phantom;
use rotodt::recon::{IndicatrixMode, ReconConfig};
use rotodt::sampling::{default_angle_count, SampleDesign};
use rotodt::{build_design, GridSpec, LatticeRule, Sign, Trajectory, TrajectoryConfig, WaveParameters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    /// Closed-form Fourier transform of the phantom.
    Analytic,
    /// Fast NDFT of the phantom sampled on a grid `factor` times finer.
    FineGrid {
        #[serde(default = "default_factor")]
        factor: usize,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    /// Samples from an existing sample file (with sidecar).
    File { path: PathBuf },
}

fn default_factor() -> usize {
    5
}

fn default_eps() -> f64 {
    1e-6
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::FineGrid { factor: default_factor(), eps: default_eps() }
    }
}

/// Noise relative to `max |F f|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub relative: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub complex: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "one")]
    pub wavelength: f64,
    pub n: usize,
    /// Defaults to the sampling bound `wavelength n / (4 sqrt 2)`.
    #[serde(default)]
    pub support_radius: Option<f64>,
    /// Defaults to twice the support radius.
    #[serde(default)]
    pub detector_distance: Option<f64>,
    /// Defaults to `ceil(4 n / pi)`.
    #[serde(default)]
    pub angles: Option<usize>,
    #[serde(default)]
    pub lattice: LatticeRule,
    #[serde(default = "transmission")]
    pub sign: Sign,
    pub trajectory: TrajectoryConfig,
    #[serde(default)]
    pub phantom: Option<Phantom>,
    #[serde(default)]
    pub source: DataSource,
    #[serde(default)]
    pub noise: Option<NoiseConfig>,
    #[serde(default)]
    pub recon: ReconConfig,
    /// Subsampling factor of the reference volume used for metrics.
    #[serde(default = "default_factor")]
    pub truth_oversample: usize,
}

fn one() -> f64 {
    1.0
}

fn transmission() -> Sign {
    Sign::Transmission
}

/// Everything derived from a validated config.
pub struct Setup {
    pub waves: WaveParameters,
    pub grid: GridSpec,
    pub trajectory: Trajectory,
    pub design: SampleDesign,
}

impl Setup {
    pub fn indicatrix(&self, cfg: &ExperimentConfig) -> IndicatrixMode {
        cfg.recon.indicatrix.unwrap_or_else(|| IndicatrixMode::default_for(&self.trajectory))
    }
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let (Some(seed), Some(noise)) = (seed, self.noise.as_mut()) {
            noise.seed = seed;
        }
        self
    }

    /// Checks the whole config and builds the geometry. Nothing is written
    /// before this succeeds.
    pub fn setup(&self) -> Result<Setup> {
        ensure!(self.n >= 2 && self.n.is_multiple_of(2), "n must be even and at least 2, got {}", self.n);
        let rs = self.support_radius.unwrap_or(self.wavelength * self.n as f64 / (4.0 * 2f64.sqrt()));
        let waves = WaveParameters::new(self.wavelength, rs, self.detector_distance.unwrap_or(2.0 * rs), 1.0)?;
        let min = waves.min_grid_size();
        ensure!(
            self.n >= min,
            "n = {} violates the sampling bound n >= 2 sqrt(2) k0 r_s / pi (needs {min})",
            self.n
        );
        let grid = GridSpec::new(self.n, rs)?;
        let trajectory = self.trajectory.build()?;
        let angles = self.angles.unwrap_or_else(|| default_angle_count(self.n));
        let design = build_design(self.n, angles, &waves, trajectory.duration(), self.lattice)?;
        self.recon.validate()?;
        ensure!(self.truth_oversample % 2 == 1, "truth_oversample must be odd, got {}", self.truth_oversample);
        if let Some(p) = &self.phantom {
            p.validate()?;
            ensure!(
                p.support_radius() <= rs,
                "phantom extends to {} beyond the support radius {rs}",
                p.support_radius()
            );
        }
        match &self.source {
            DataSource::Analytic | DataSource::FineGrid { .. } if self.phantom.is_none() => {
                bail!("a phantom is required to synthesize data")
            }
            DataSource::FineGrid { factor, eps } => {
                ensure!(*factor >= 1, "fine-grid factor must be at least 1");
                ensure!((1e-12..=1e-2).contains(eps), "fine-grid eps must lie in [1e-12, 1e-2]");
            }
            _ => {}
        }
        if let Some(noise) = &self.noise {
            ensure!(
                noise.relative >= 0.0 && noise.relative.is_finite(),
                "relative noise level must be nonnegative, got {}",
                noise.relative
            );
        }
        Ok(Setup { waves, grid, trajectory, design })
    }
}
