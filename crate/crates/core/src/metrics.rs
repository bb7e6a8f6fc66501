use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantoms::{rasterize, Phantom};
use crate::sampling::GridSpec;
use crate::volume::Volume;

/// Gaussian SSIM window: σ = 1.5, truncated at 3.5σ (11 taps per axis).
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_RADIUS: usize = 5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    /// dB; `inf` when the volumes coincide.
    #[serde(with = "extended_f64")]
    pub psnr: f64,
    pub ssim: f64,
    pub rmse: f64,
}

impl QualityReport {
    pub fn compute(truth: &Volume<f64>, test: &Volume<f64>) -> Result<Self> {
        Ok(Self {
            psnr: psnr(truth, test)?,
            ssim: ssim3d(truth, test)?,
            rmse: rmse_real(truth.data(), test.data())?,
        })
    }
}

/// JSON has no infinity, so non-finite values are written as strings.
pub(crate) mod extended_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}

fn same_grid<A, B>(a: &Volume<A>, b: &Volume<B>) -> Result<()> {
    if a.grid() != b.grid() {
        return Err(Error::Mismatch(format!(
            "volumes on different grids ({:?} vs {:?})",
            a.grid(),
            b.grid()
        )));
    }
    Ok(())
}

pub fn psnr(truth: &Volume<f64>, test: &Volume<f64>) -> Result<f64> {
    same_grid(truth, test)?;
    let peak = truth.max_abs();
    if peak == 0.0 {
        return Err(Error::invalid("PSNR undefined for an all-zero reference"));
    }
    let mse = truth.data().iter().zip(test.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        / truth.data().len() as f64;
    Ok(10.0 * (peak * peak / mse).log10())
}

pub fn rmse(a: &[Complex64], b: &[Complex64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Mismatch(format!("{} vs {} values", a.len(), b.len())));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok((a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>() / a.len() as f64).sqrt())
}

fn rmse_real(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Mismatch(format!("{} vs {} values", a.len(), b.len())));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok((a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt())
}

fn gaussian_taps() -> [f64; 2 * SSIM_RADIUS + 1] {
    let mut w = [0.0; 2 * SSIM_RADIUS + 1];
    for (i, wi) in w.iter_mut().enumerate() {
        let x = i as f64 - SSIM_RADIUS as f64;
        *wi = (-0.5 * x * x / (SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

// Half-sample symmetric extension: d c b a | a b c d | d c b a.
fn reflect(i: i64, n: i64) -> usize {
    let period = 2 * n;
    let mut k = i.rem_euclid(period);
    if k >= n {
        k = period - 1 - k;
    }
    k as usize
}

/// Separable 3D filter with the SSIM window.
fn gaussian_filter(data: &[f64], n: usize) -> Vec<f64> {
    let taps = gaussian_taps();
    let r = SSIM_RADIUS as i64;
    let ni = n as i64;
    let mut cur = data.to_vec();
    let mut next = vec![0.0; data.len()];
    for stride in [n * n, n, 1] {
        next.par_chunks_mut(n * n).enumerate().for_each(|(a, plane)| {
            for (off, out) in plane.iter_mut().enumerate() {
                let idx = a * n * n + off;
                let pos = ((idx / stride) % n) as i64;
                let base = idx - pos as usize * stride;
                *out = taps
                    .iter()
                    .enumerate()
                    .map(|(t, w)| w * cur[base + reflect(pos + t as i64 - r, ni) * stride])
                    .sum();
            }
        });
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Mean local SSIM over the interior (voxels at least the window radius away
/// from the boundary). The dynamic range is taken from the reference volume.
pub fn ssim3d(truth: &Volume<f64>, test: &Volume<f64>) -> Result<f64> {
    same_grid(truth, test)?;
    let n = truth.n();
    if n <= 2 * SSIM_RADIUS {
        return Err(Error::invalid(format!("SSIM needs N > {}, got {n}", 2 * SSIM_RADIUS)));
    }
    let (x, y) = (truth.data(), test.data());
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = hi - lo;
    // A constant reference has no dynamic range; fall back to unit constants
    // so that equal inputs still score 1.
    let d = if range > 0.0 { range } else { 1.0 };
    let c1 = (K1 * d).powi(2);
    let c2 = (K2 * d).powi(2);

    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { x.iter().zip(y).map(|(a, b)| f(*a, *b)).collect() };
    let ux = gaussian_filter(x, n);
    let uy = gaussian_filter(y, n);
    let uxx = gaussian_filter(&prod(&|a, _| a * a), n);
    let uyy = gaussian_filter(&prod(&|_, b| b * b), n);
    let uxy = gaussian_filter(&prod(&|a, b| a * b), n);

    let lo_i = SSIM_RADIUS;
    let hi_i = n - SSIM_RADIUS;
    let total: f64 = (lo_i..hi_i)
        .into_par_iter()
        .map(|a| {
            let mut s = 0.0;
            for b in lo_i..hi_i {
                for c in lo_i..hi_i {
                    let i = (a * n + b) * n + c;
                    let vx = uxx[i] - ux[i] * ux[i];
                    let vy = uyy[i] - uy[i] * uy[i];
                    let cxy = uxy[i] - ux[i] * uy[i];
                    s += (2.0 * ux[i] * uy[i] + c1) * (2.0 * cxy + c2)
                        / ((ux[i] * ux[i] + uy[i] * uy[i] + c1) * (vx + vy + c2));
                }
            }
            s
        })
        .sum();
    Ok(total / ((hi_i - lo_i).pow(3)) as f64)
}

/// Ground truth used for all quality figures: the phantom averaged over an
/// odd `factor³` sub-lattice of each voxel.
pub fn averaged_truth(phantom: &Phantom, grid: GridSpec, factor: usize) -> Result<Volume<f64>> {
    if factor.is_multiple_of(2) {
        return Err(Error::invalid(format!("averaging factor must be odd, got {factor}")));
    }
    rasterize(phantom, grid, factor)
}
