use std::f64::consts::PI;

use rotodt::forward::{add_noise, analytic_kspace, synthesize_kspace, NoiseSpec};
use rotodt::io::{read_volume, write_volume};
use rotodt::metrics::{averaged_truth, psnr, rmse, QualityReport};
use rotodt::phantoms::Phantom;
use rotodt::recon::{backpropagate, reconstruct_cgne, IndicatrixMode, ReconConfig, Stopping};
use rotodt::sampling::default_angle_count;
use rotodt::{
    build_design, build_kspace_points, GridSpec, KSpaceSamples, LatticeRule, SampleDesign, Sign, Trajectory, Vec3,
    WaveParameters,
};

struct Case {
    waves: WaveParameters,
    grid: GridSpec,
    traj: Trajectory,
    design: SampleDesign,
    points: Vec<Vec3>,
}

fn case(n: usize, traj: Trajectory, sign: Sign) -> Case {
    let waves = WaveParameters::for_grid(n, 1.0).unwrap();
    let grid = GridSpec::new(n, waves.support_radius).unwrap();
    let design = build_design(n, default_angle_count(n), &waves, traj.duration(), LatticeRule::Linspace).unwrap();
    let points = build_kspace_points(&design, &traj, &waves, sign).unwrap();
    Case { waves, grid, traj, design, points }
}

#[test]
fn fine_grid_data_converge_to_the_analytic_transform() {
    let c = case(32, Trajectory::full_rotation(Vec3::x()).unwrap(), Sign::Transmission);
    let ball = Phantom::ball(0.6 * c.grid.support_radius);
    let exact = analytic_kspace(&ball, &c.points).unwrap();
    let errs: Vec<f64> = [1, 2, 4]
        .iter()
        .map(|f| {
            let fine = GridSpec::new(f * 32, c.grid.support_radius).unwrap();
            rmse(&synthesize_kspace(&ball, fine, &c.points, 1e-8).unwrap(), &exact).unwrap()
        })
        .collect();
    assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    // roughly second order in the fine spacing
    assert!(errs[0] / errs[2] > 8.0, "{errs:?}");
}

#[test]
fn cgne_beats_backprop_on_exact_data() {
    let c = case(32, Trajectory::full_rotation(Vec3::x()).unwrap(), Sign::Transmission);
    let ball = Phantom::ball(0.6 * c.grid.support_radius);
    let samples = KSpaceSamples::new(c.points.clone(), analytic_kspace(&ball, &c.points).unwrap(), Sign::Transmission)
        .unwrap();
    let truth = averaged_truth(&ball, c.grid, 5).unwrap();
    let cg = reconstruct_cgne(&samples, c.grid, &ReconConfig::default()).unwrap();
    let bp =
        backpropagate(&samples, &c.design, &c.traj, c.grid, &c.waves, IndicatrixMode::Analytic, 1e-6).unwrap();
    let qc = QualityReport::compute(&truth, cg.volume()).unwrap();
    let qb = QualityReport::compute(&truth, bp.volume()).unwrap();
    assert!(qc.psnr > qb.psnr + 2.0, "cgne {qc:?} backprop {qb:?}");
    assert!(qc.ssim > qb.ssim);
    assert!(qb.psnr > 15.0);
}

#[test]
fn reflection_data_lie_outside_the_reconstruction_band() {
    let c = case(24, Trajectory::full_rotation(Vec3::x()).unwrap(), Sign::Reflection);
    let ball = Phantom::ball(0.6 * c.grid.support_radius);
    let samples =
        KSpaceSamples::new(c.points.clone(), analytic_kspace(&ball, &c.points).unwrap(), Sign::Reflection).unwrap();
    let err = reconstruct_cgne(&samples, c.grid, &ReconConfig::default()).unwrap_err();
    assert!(matches!(err, rotodt::Error::OutOfBand { .. }), "{err:?}");
}

#[test]
fn stopping_rules_pick_iterates_of_the_same_run() {
    let c = case(24, Trajectory::full_rotation(Vec3::x()).unwrap(), Sign::Transmission);
    let ball = Phantom::ball(0.6 * c.grid.support_radius);
    let clean = KSpaceSamples::new(c.points.clone(), analytic_kspace(&ball, &c.points).unwrap(), Sign::Transmission)
        .unwrap();
    let (noisy, rec) = add_noise(&clean, &NoiseSpec::relative_to(&clean, 0.02, 4)).unwrap();
    let base = ReconConfig { max_iters: 25, ..ReconConfig::default() };
    let disc = reconstruct_cgne(
        &noisy,
        c.grid,
        &ReconConfig { stopping: Stopping::Discrepancy { delta: Some(rec.delta), tau: 1.0 }, ..base },
    )
    .unwrap();
    let k = disc.chosen.unwrap().index;
    assert!(!disc.chosen.unwrap().flagged && k > 1 && k < 25);
    let fixed = reconstruct_cgne(&noisy, c.grid, &ReconConfig { max_iters: k, ..base }).unwrap();
    assert_eq!(fixed.volume().data(), disc.volume().data());

    let lc = reconstruct_cgne(&noisy, c.grid, &ReconConfig { stopping: Stopping::LCurve, ..base }).unwrap();
    let kl = lc.chosen.unwrap().index;
    let fixed = reconstruct_cgne(&noisy, c.grid, &ReconConfig { max_iters: kl, ..base }).unwrap();
    assert_eq!(fixed.volume().data(), lc.volume().data());
}

#[test]
fn half_rotation_backprop_uses_the_piecewise_indicatrix() {
    let c = case(24, Trajectory::half_rotation(Vec3::x()).unwrap(), Sign::Transmission);
    let ball = Phantom::ball(0.6 * c.grid.support_radius);
    let samples = KSpaceSamples::new(c.points.clone(), analytic_kspace(&ball, &c.points).unwrap(), Sign::Transmission)
        .unwrap();
    assert_eq!(IndicatrixMode::default_for(&c.traj), IndicatrixMode::Analytic);
    let truth = averaged_truth(&ball, c.grid, 3).unwrap();
    let analytic =
        backpropagate(&samples, &c.design, &c.traj, c.grid, &c.waves, IndicatrixMode::Analytic, 1e-6).unwrap();
    let numeric =
        backpropagate(&samples, &c.design, &c.traj, c.grid, &c.waves, IndicatrixMode::Numeric, 1e-6).unwrap();
    let wrong = backpropagate(
        &samples,
        &c.design,
        &c.traj,
        c.grid,
        &c.waves,
        IndicatrixMode::Constant { value: 2.0 },
        1e-6,
    )
    .unwrap();
    let pa = psnr(&truth, analytic.volume()).unwrap();
    let pn = psnr(&truth, numeric.volume()).unwrap();
    let pw = psnr(&truth, wrong.volume()).unwrap();
    assert!((pa - pn).abs() < 0.2, "analytic {pa} numeric {pn}");
    assert!(pa > pw + 1.0, "analytic {pa} constant-2 {pw}");
}

#[test]
fn volume_file_preserves_metrics() {
    let c = case(16, Trajectory::fixed_axis(Vec3::x(), 2.0 * PI).unwrap(), Sign::Transmission);
    let ball = Phantom::ball(0.6 * c.grid.support_radius);
    let truth = averaged_truth(&ball, c.grid, 3).unwrap();
    let samples = KSpaceSamples::new(c.points.clone(), analytic_kspace(&ball, &c.points).unwrap(), Sign::Transmission)
        .unwrap();
    let rec = reconstruct_cgne(&samples, c.grid, &ReconConfig { max_iters: 5, ..ReconConfig::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (pt, pr) = (dir.path().join("t.vol"), dir.path().join("r.vol"));
    write_volume(&pt, &truth).unwrap();
    write_volume(&pr, rec.volume()).unwrap();
    let before = QualityReport::compute(&truth, rec.volume()).unwrap();
    let after = QualityReport::compute(&read_volume(&pt).unwrap(), &read_volume(&pr).unwrap()).unwrap();
    assert!((before.psnr - after.psnr).abs() < 1e-4);
    assert!((before.ssim - after.ssim).abs() < 1e-5);
}
