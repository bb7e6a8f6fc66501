use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use serde::Serialize;
use serde_json::json;

use rotodt::forward::{add_noise, analytic_kspace, synthesize_kspace, NoiseRecord, NoiseSpec};
use rotodt::io::{read_samples, read_volume, write_samples, write_volume};
use rotodt::metrics::{averaged_truth, QualityReport};
use rotodt::recon::{backpropagate, reconstruct_cgne, IndicatrixMode, Method, ReconReport, Stopping};
use rotodt::sampling::write_design_csv;
use rotodt::transform::rms;
use rotodt::validation::{run_oracle, OracleConfig};
use rotodt::{build_kspace_points, GridSpec, KSpaceSamples, Volume};

use crate::config::{DataSource, ExperimentConfig, Setup};

pub const SAMPLES_FILE: &str = "samples.bin";
pub const VOLUME_FILE: &str = "reconstruction.vol";
pub const TRUTH_FILE: &str = "truth.vol";
pub const REPORT_FILE: &str = "report.json";
pub const SLICE_FILE: &str = "slice.png";

const NDFT_CONVENTION: &str = "F f(y) = (2 pi)^(-3/2) h^3 sum_j f_j exp(-i h j.y)";

fn conventions(cfg: &ExperimentConfig, setup: &Setup) -> serde_json::Value {
    json!({
        "ndft": NDFT_CONVENTION,
        "lattice": cfg.lattice.describe(),
        "times": "t_s = L s / S, s = 0..S-1",
        "noise": "delta = relative * max|F f|; real N(0, delta^2) on the real part unless complex",
        "k0": setup.waves.k0(),
    })
}

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

/// Samples at the design points from the configured source, noise added.
pub fn forward(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let setup = cfg.setup()?;
    let points = build_kspace_points(&setup.design, &setup.trajectory, &setup.waves, cfg.sign)?;
    let values = match &cfg.source {
        DataSource::Analytic => analytic_kspace(phantom(cfg)?, &points)?,
        DataSource::FineGrid { factor, eps } => {
            let fine = GridSpec::new(factor * cfg.n, setup.grid.support_radius)?;
            synthesize_kspace(phantom(cfg)?, fine, &points, *eps)?
        }
        DataSource::File { path } => {
            let (ext, _) = read_samples(path).with_context(|| format!("reading {}", path.display()))?;
            check_points(&ext, &points, &setup)?;
            ensure!(ext.sign == cfg.sign, "sample file has sign {:?}, config {:?}", ext.sign, cfg.sign);
            ext.values
        }
    };
    let clean = KSpaceSamples::new(points, values, cfg.sign)?.with_design(setup.design.info());
    let (samples, noise) = match cfg.noise {
        Some(n) => {
            let spec = NoiseSpec { complex: n.complex, ..NoiseSpec::relative_to(&clean, n.relative, n.seed) };
            let (s, rec) = add_noise(&clean, &spec)?;
            (s, Some(rec))
        }
        None => (clean, None),
    };
    let metadata = json!({
        "config": cfg,
        "waves": setup.waves,
        "trajectory": setup.trajectory.describe(),
        "noise": noise,
        "conventions": conventions(cfg, &setup),
    });
    create_dir(out)?;
    let path = out.join(SAMPLES_FILE);
    write_samples(&path, &samples, metadata)?;
    Ok(path)
}

fn phantom(cfg: &ExperimentConfig) -> Result<&rotodt::phantoms::Phantom> {
    cfg.phantom.as_ref().ok_or_else(|| anyhow!("config has no phantom"))
}

fn check_points(samples: &KSpaceSamples, points: &[rotodt::Vec3], setup: &Setup) -> Result<()> {
    ensure!(
        samples.len() == points.len(),
        "{} samples for a design of {} points",
        samples.len(),
        points.len()
    );
    let tol = 1e-9 * setup.waves.k0();
    if let Some(i) = samples.points.iter().zip(points).position(|(a, b)| (a - b).norm() > tol) {
        bail!("sample {i} lies at {:?}, the design expects {:?}", samples.points[i], points[i]);
    }
    Ok(())
}

#[derive(Serialize)]
struct ReconOutput<'a> {
    samples: &'a Path,
    indicatrix: Option<IndicatrixMode>,
    /// Noise level used by the discrepancy rule.
    delta: Option<f64>,
    quality: Option<QualityReport>,
    truth_oversample: usize,
    report: &'a ReconReport,
    config: &'a ExperimentConfig,
}

/// Reconstructs from a sample file. Without `--config` the config recorded in
/// the sidecar is used.
pub fn reconstruct(
    cfg: Option<ExperimentConfig>,
    samples_path: &Path,
    out: &Path,
    slice: Option<usize>,
) -> Result<()> {
    let (samples, sidecar) =
        read_samples(samples_path).with_context(|| format!("reading {}", samples_path.display()))?;
    let cfg = match cfg {
        Some(c) => c,
        None => serde_json::from_value(sidecar.metadata["config"].clone())
            .context("no --config given and the sample sidecar carries no usable config")?,
    };
    let setup = cfg.setup()?;
    let points = build_kspace_points(&setup.design, &setup.trajectory, &setup.waves, cfg.sign)?;
    check_points(&samples, &points, &setup)?;
    ensure!(samples.sign == cfg.sign, "samples have sign {:?}, config {:?}", samples.sign, cfg.sign);
    if let Some(i) = slice {
        ensure!(i < cfg.n, "slice index {i} outside 0..{}", cfg.n);
    }

    let mut recon = cfg.recon;
    let mut delta = None;
    if let Stopping::Discrepancy { delta: d, tau } = recon.stopping {
        let d = match d {
            Some(d) => d,
            None => {
                let rec: Option<NoiseRecord> = serde_json::from_value(sidecar.metadata["noise"].clone())
                    .context("malformed noise record in the sidecar")?;
                rec.map(|r| r.delta).ok_or_else(|| {
                    anyhow!("discrepancy rule needs delta: set recon.stopping.delta or add noise metadata")
                })?
            }
        };
        delta = Some(d);
        recon.stopping = Stopping::Discrepancy { delta: Some(d), tau };
    }

    let (report, indicatrix) = match recon.method {
        Method::Backprop => {
            let mode = setup.indicatrix(&cfg);
            let r = backpropagate(
                &samples,
                &setup.design,
                &setup.trajectory,
                setup.grid,
                &setup.waves,
                mode,
                recon.eps,
            )?;
            (r, Some(mode))
        }
        Method::Cgne => (reconstruct_cgne(&samples, setup.grid, &recon)?, None),
    };
    if report.imaginary_ratio > 1e-3 {
        eprintln!("note: imaginary part of the reconstruction is {:.2e} of the real part", report.imaginary_ratio);
    }
    let volume = report.volume();
    let truth = match &cfg.phantom {
        Some(p) => Some(averaged_truth(p, setup.grid, cfg.truth_oversample)?),
        None => None,
    };
    let quality = match &truth {
        Some(t) if t.max_abs() > 0.0 => Some(QualityReport::compute(t, volume)?),
        _ => None,
    };

    create_dir(out)?;
    write_volume(&out.join(VOLUME_FILE), volume)?;
    if let Some(t) = &truth {
        write_volume(&out.join(TRUTH_FILE), t)?;
    }
    if let Some(i) = slice {
        write_slice_png(&out.join(SLICE_FILE), volume, i)?;
    }
    let output = ReconOutput {
        samples: samples_path,
        indicatrix,
        delta,
        quality,
        truth_oversample: cfg.truth_oversample,
        report: &report,
        config: &cfg,
    };
    fs::write(out.join(REPORT_FILE), serde_json::to_vec_pretty(&output)?)?;
    if let Some(q) = quality {
        eprintln!("psnr {:.2} dB, ssim {:.4}, rmse {:.4e}", q.psnr, q.ssim, q.rmse);
    }
    if let (Some(h), Some(c)) = (&report.history, report.chosen) {
        let res = h.residual.get(c.index - 1).copied().unwrap_or(f64::NAN);
        eprintln!(
            "stopped at iteration {}{} (rms residual {res:.3e}, data rms {:.3e})",
            c.index,
            if c.flagged { " (fallback)" } else { "" },
            rms(&samples.values)
        );
    }
    Ok(())
}

/// Slice `j1 = index` as 8-bit grayscale, rows `j2`, columns `j3`, scaled to
/// the slice's own range.
pub fn write_slice_png(path: &Path, vol: &Volume<f64>, index: usize) -> Result<()> {
    let n = vol.n();
    let plane = vol.slice(index)?;
    let (lo, hi) = plane.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let bytes: Vec<u8> = plane.iter().map(|v| ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    let img = image::GrayImage::from_raw(n as u32, n as u32, bytes).expect("plane is n x n");
    img.save_with_format(path, image::ImageFormat::Png).with_context(|| format!("writing {}", path.display()))
}

pub fn compare(truth: &Path, test: &Path) -> Result<QualityReport> {
    let a = read_volume(truth).with_context(|| format!("reading {}", truth.display()))?;
    let b = read_volume(test).with_context(|| format!("reading {}", test.display()))?;
    Ok(QualityReport::compute(&a, &b)?)
}

pub fn validate(cfg: &OracleConfig, out: Option<&Path>) -> Result<serde_json::Value> {
    cfg.validate()?;
    let report = run_oracle(cfg)?;
    let value = json!({ "config": cfg, "report": report });
    if let Some(out) = out {
        create_dir(out)?;
        fs::write(out.join("oracle.json"), serde_json::to_vec_pretty(&value)?)?;
    }
    eprintln!("{:>4} {:>12} {:>12}", "n_o", "rel l2", "worst");
    for r in &report.runs {
        eprintln!("{:>4} {:>12.4e} {:>12.4e}", r.grid_size, r.relative_l2, r.worst_pointwise);
    }
    if !report.decreasing {
        eprintln!("warning: error does not decrease with n_o");
    }
    Ok(value)
}

/// `design.csv` with one row per sample and `design.json` with the conventions.
pub fn design_dump(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let setup = cfg.setup()?;
    let points = build_kspace_points(&setup.design, &setup.trajectory, &setup.waves, cfg.sign)?;
    create_dir(out)?;
    write_design_csv(&setup.design, &points, BufWriter::new(File::create(out.join("design.csv"))?))?;
    let info = json!({
        "design": setup.design.info(),
        "sign": cfg.sign,
        "waves": setup.waves,
        "trajectory": setup.trajectory.describe(),
        "conventions": conventions(cfg, &setup),
        "columns": "j1,j2,s,k1,k2,t,y1,y2,y3",
    });
    fs::write(out.join("design.json"), serde_json::to_vec_pretty(&info)?)?;
    eprintln!("{} points ({} per angle, {} angles)", setup.design.len(), setup.design.per_angle(), setup.design.angles());
    Ok(())
}
