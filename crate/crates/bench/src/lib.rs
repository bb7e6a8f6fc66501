//! Shared fixtures for the benchmarks.

use rotodt::phantoms::{rasterize, Phantom};
use rotodt::recon::IndicatrixMode;
use rotodt::sampling::default_angle_count;
use rotodt::{
    build_design, build_kspace_points, GridSpec, KSpaceSamples, LatticeRule, SampleDesign, Sign, Trajectory,
    Vec3, Volume, WaveParameters,
};

/// A full rotation about `e1` at the sampling bound, with exact ball data.
pub struct Fixture {
    pub waves: WaveParameters,
    pub grid: GridSpec,
    pub trajectory: Trajectory,
    pub design: SampleDesign,
    pub samples: KSpaceSamples,
    pub volume: Volume<f64>,
    pub indicatrix: IndicatrixMode,
}

impl Fixture {
    /// `angles` defaults to `ceil(4n/pi)`; fewer angles keep direct sums affordable.
    pub fn new(n: usize, angles: Option<usize>) -> Fixture {
        let waves = WaveParameters::for_grid(n, 1.0).unwrap();
        let grid = GridSpec::new(n, waves.support_radius).unwrap();
        let trajectory = Trajectory::full_rotation(Vec3::x()).unwrap();
        let angles = angles.unwrap_or_else(|| default_angle_count(n));
        let design = build_design(n, angles, &waves, trajectory.duration(), LatticeRule::Linspace).unwrap();
        let points = build_kspace_points(&design, &trajectory, &waves, Sign::Transmission).unwrap();
        let phantom = Phantom::ball(0.6 * waves.support_radius);
        let values = rotodt::forward::analytic_kspace(&phantom, &points).unwrap();
        let samples = KSpaceSamples::new(points, values, Sign::Transmission).unwrap();
        let volume = rasterize(&phantom, grid, 1).unwrap();
        let indicatrix = IndicatrixMode::default_for(&trajectory);
        Fixture { waves, grid, trajectory, design, samples, volume, indicatrix }
    }
}
