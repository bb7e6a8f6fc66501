//! Independent check of the diffraction relation: the Born field is summed
//! directly from the Green's function, measured on a half-wavelength detector
//! and converted to k-space, then compared with a known Fourier transform.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{field_to_kspace, PlanarField};
use crate::geometry::{Sign, Trajectory, Vec3, WaveParameters};
use crate::phantoms::{rasterize, Phantom};
use crate::sampling::{build_design, GridSpec, LatticeRule, SampleDesign};
use crate::transform::{DirectNdft, FourierOperator, KSpaceSamples};
use crate::volume::Volume;

/// Largest oracle grid; the direct sum costs `O(n_o³ · pixels²)`.
pub const MAX_ORACLE_GRID: usize = 48;

/// Outgoing Green's function `exp(i k0 |r|) / (4 pi |r|)`.
pub fn green_kernel(r: &Vec3, k0: f64) -> Result<Complex64> {
    let d = r.norm();
    if d == 0.0 {
        return Err(Error::Singular("Green's function evaluated at r = 0".into()));
    }
    Ok(Complex64::cis(k0 * d) / (4.0 * PI * d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrature {
    /// One node per voxel centre, weight `h³`.
    #[default]
    Midpoint,
}

/// Scattered Born field `u = (f u_inc) * G` on the plane `r3 = ±r_M`, by
/// midpoint quadrature over the voxels of `f_vol`.
pub fn born_direct_scatter(
    f_vol: &Volume<f64>,
    w: &WaveParameters,
    sign: Sign,
    detector_pixels: usize,
) -> Result<PlanarField> {
    if detector_pixels < 2 || !detector_pixels.is_multiple_of(2) {
        return Err(Error::invalid(format!("detector size must be even, got {detector_pixels}")));
    }
    let grid = f_vol.grid();
    let h = grid.spacing();
    let k0 = w.k0();
    let r_m = w.detector_distance;
    let mut sources = Vec::new();
    for (i, &v) in f_vol.data().iter().enumerate() {
        if v != 0.0 {
            let p = grid.point(i);
            if p[2].abs() + 0.5 * h >= r_m {
                return Err(Error::Support(format!(
                    "scatterer voxel at r3 = {} reaches the detector plane |r3| = {r_m}",
                    p[2]
                )));
            }
            sources.push((p, Complex64::cis(k0 * p[2]) * (v * h * h * h)));
        }
    }
    let mut field = PlanarField::zeros(detector_pixels, w, sign);
    let positions: Vec<Vec3> = (0..field.values.len()).map(|i| field.position(i)).collect();
    field.values.par_iter_mut().zip(&positions).for_each(|(u, x)| {
        // The plane lies outside the support, so |x - p| > 0.
        *u = sources
            .iter()
            .map(|(p, g)| {
                let d = (x - p).norm();
                g * Complex64::cis(k0 * d) / (4.0 * PI * d)
            })
            .sum();
    });
    Ok(field)
}

/// Multiplies the field by a separable Tukey window that is flat on the inner
/// `1 - fraction` of the aperture and falls to zero at its edge. This keeps
/// the aperture cut-off of the slowly decaying field out of the spectrum.
pub fn taper_field(field: &mut PlanarField, fraction: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("taper fraction must lie in [0, 1], got {fraction}")));
    }
    if fraction == 0.0 {
        return Ok(());
    }
    let n = field.n;
    let half = (n / 2) as f64;
    let profile: Vec<f64> = (0..n)
        .map(|i| {
            let t = (i as f64 - half).abs() / half;
            if t > 1.0 - fraction {
                (0.5 * PI * (t - (1.0 - fraction)) / fraction).cos().powi(2)
            } else {
                1.0
            }
        })
        .collect();
    for (i, v) in field.values.iter_mut().enumerate() {
        *v *= profile[i / n] * profile[i % n];
    }
    Ok(())
}

/// How the detector field is read out and compared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FdtOptions {
    pub detector_pixels: usize,
    /// Compared frequencies satisfy `k1² + k2² ≤ (band · k0)²`.
    pub band: f64,
    /// Tukey taper fraction applied to the field, see [`taper_field`].
    pub taper: f64,
}

impl Default for FdtOptions {
    fn default() -> Self {
        Self { detector_pixels: 64, band: 0.8, taper: 0.5 }
    }
}

/// Oracle field for `f_vol` at plane `sign`, tapered and converted to k-space
/// samples on the detector's DFT lattice (single view, identity rotation).
pub fn oracle_kspace(
    f_vol: &Volume<f64>,
    w: &WaveParameters,
    sign: Sign,
    opts: &FdtOptions,
) -> Result<(SampleDesign, KSpaceSamples)> {
    let mut field = born_direct_scatter(f_vol, w, sign, opts.detector_pixels)?;
    taper_field(&mut field, opts.taper)?;
    let design = build_design(opts.detector_pixels, 1, w, 1.0, LatticeRule::HalfOpen)?;
    let traj = Trajectory::fixed_axis(Vec3::x(), 1.0)?;
    let data = field_to_kspace(&field, 0, &design, &traj, w)?;
    Ok((design, data))
}

/// What the oracle data are compared with.
#[derive(Debug, Clone, Copy)]
pub enum Reference<'a> {
    /// Closed-form transform of the continuous phantom.
    Analytic(&'a Phantom),
    /// Exact discrete transform of the voxel volume itself.
    Volume,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdtReport {
    pub grid_size: usize,
    pub detector_pixels: usize,
    pub sign: Sign,
    /// Compared frequencies satisfy `k1² + k2² ≤ (band · k0)²`.
    pub band: f64,
    pub frequencies: usize,
    /// `‖measured − predicted‖ / ‖predicted‖` over the band.
    pub relative_l2: f64,
    /// Worst `|measured − predicted|`, relative to `max |predicted|`.
    pub worst_pointwise: f64,
}

/// Runs the oracle on `f_vol`, converts the detector field to k-space values
/// and compares them with the reference transform on the band.
pub fn fdt_check(
    f_vol: &Volume<f64>,
    w: &WaveParameters,
    sign: Sign,
    opts: &FdtOptions,
    reference: Reference,
) -> Result<FdtReport> {
    let band = opts.band;
    if !(band > 0.0 && band < 1.0) {
        return Err(Error::invalid(format!("band must lie in (0, 1), got {band}")));
    }
    let (design, measured) = oracle_kspace(f_vol, w, sign, opts)?;

    let k0 = w.k0();
    let keep: Vec<usize> = design
        .lattice()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.k1 * l.k1 + l.k2 * l.k2 <= (band * k0).powi(2))
        .map(|(i, _)| i)
        .collect();
    let points: Vec<Vec3> = keep.iter().map(|&i| measured.points[i]).collect();
    let predicted: Vec<Complex64> = match reference {
        Reference::Analytic(ph) => {
            let ev = ph.evaluator();
            points
                .iter()
                .map(|y| {
                    ev.fourier(y).ok_or_else(|| {
                        Error::Unsupported(format!("no analytic Fourier transform for {}", ph.describe()))
                    })
                })
                .collect::<Result<_>>()?
        }
        Reference::Volume => DirectNdft::new(f_vol.grid(), &points).apply(f_vol.to_complex().data())?,
    };

    let mut err2 = 0.0;
    let mut ref2 = 0.0;
    let mut worst: f64 = 0.0;
    let mut peak: f64 = 0.0;
    for (&i, p) in keep.iter().zip(&predicted) {
        let e = (measured.values[i] - p).norm();
        err2 += e * e;
        ref2 += p.norm_sqr();
        worst = worst.max(e);
        peak = peak.max(p.norm());
    }
    let ratio = |num: f64, den: f64| {
        if den > 0.0 {
            num / den
        } else if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    };
    Ok(FdtReport {
        grid_size: f_vol.n(),
        detector_pixels: opts.detector_pixels,
        sign,
        band,
        frequencies: keep.len(),
        relative_l2: ratio(err2.sqrt(), ref2.sqrt()),
        worst_pointwise: ratio(worst, peak),
    })
}

/// Oracle setup: a phantom on small grids of side `2 r_s`, a detector of
/// `detector_pixels²` half-wavelength pixels at distance `r_M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub grid_sizes: Vec<usize>,
    pub support_radius: f64,
    pub detector_distance: f64,
    pub wavelength: f64,
    #[serde(flatten)]
    pub readout: FdtOptions,
    pub sign: Sign,
    pub quadrature: Quadrature,
    pub phantom: Phantom,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            grid_sizes: vec![16, 24, 32],
            support_radius: 2.5,
            detector_distance: 3.0,
            wavelength: 1.0,
            readout: FdtOptions::default(),
            sign: Sign::Transmission,
            quadrature: Quadrature::Midpoint,
            phantom: Phantom::ball(2.0),
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_sizes.is_empty() {
            return Err(Error::invalid("oracle needs at least one grid size"));
        }
        if let Some(&n) = self.grid_sizes.iter().find(|&&n| n < 2 || n % 2 != 0 || n > MAX_ORACLE_GRID) {
            return Err(Error::invalid(format!(
                "oracle grid sizes must be even and at most {MAX_ORACLE_GRID}, got {n}"
            )));
        }
        self.phantom.validate()?;
        if self.phantom.support_radius() > self.support_radius {
            return Err(Error::Support(format!(
                "phantom radius {} exceeds the oracle support radius {}",
                self.phantom.support_radius(),
                self.support_radius
            )));
        }
        self.waves().map(|_| ())
    }

    pub fn waves(&self) -> Result<WaveParameters> {
        WaveParameters::new(self.wavelength, self.support_radius, self.detector_distance, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub phantom: String,
    pub runs: Vec<FdtReport>,
    /// Whether the error shrinks with every refinement of the grid.
    pub decreasing: bool,
}

/// Refinement study: [`fdt_check`] against the analytic transform on each grid size.
pub fn run_oracle(cfg: &OracleConfig) -> Result<OracleReport> {
    cfg.validate()?;
    let w = cfg.waves()?;
    let mut sizes = cfg.grid_sizes.clone();
    sizes.sort_unstable();
    let runs = sizes
        .iter()
        .map(|&n| {
            let grid = GridSpec::new(n, cfg.support_radius)?;
            let f = rasterize(&cfg.phantom, grid, 1)?;
            fdt_check(&f, &w, cfg.sign, &cfg.readout, Reference::Analytic(&cfg.phantom))
        })
        .collect::<Result<Vec<_>>>()?;
    let decreasing = runs.windows(2).all(|r| r[1].relative_l2 < r[0].relative_l2);
    Ok(OracleReport { phantom: cfg.phantom.describe(), runs, decreasing })
}
