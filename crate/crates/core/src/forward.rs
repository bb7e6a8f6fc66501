//! Data synthesis and conversion between detector fields and k-space values.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotate_unchecked, Sign, Trajectory, Vec3, WaveParameters};
use crate::phantoms::{check_support, Phantom};
use crate::sampling::{GridSpec, LatticeRule, SampleDesign};
use crate::transform::{FourierOperator, KSpaceSamples, Nufft};
use crate::volume::Volume;

/// Fourier transform of the indicator of the ball of radius `a`:
/// `sqrt(2/pi) (sin(a|y|) - a|y| cos(a|y|)) / |y|³`.
pub fn analytic_ball_ft(y: &Vec3, a: f64) -> f64 {
    let r = y.norm();
    let x = a * r;
    let c = (2.0 / PI).sqrt();
    if x < 1e-4 {
        c * a.powi(3) * (1.0 / 3.0 - x * x / 30.0)
    } else {
        c * (x.sin() - x * x.cos()) / (r * r * r)
    }
}

/// Fast NDFT of the phantom sampled pointwise on `fine`, generated one plane at
/// a time so that fine grids far larger than memory are usable.
pub fn synthesize_kspace(phantom: &Phantom, fine: GridSpec, points: &[Vec3], eps: f64) -> Result<Vec<Complex64>> {
    phantom.validate()?;
    check_support(phantom, fine.support_radius)?;
    let op = Nufft::new(fine, points, eps)?;
    let ev = phantom.evaluator();
    let n = fine.n;
    Ok(op.apply_planes(&|a, plane: &mut [Complex64]| {
        for (i, v) in plane.iter_mut().enumerate() {
            *v = Complex64::new(ev.value(&fine.point(a * n * n + i)), 0.0);
        }
    }))
}

/// Fast NDFT of a volume already held in memory.
pub fn synthesize_from_volume(vol: &Volume<f64>, points: &[Vec3], eps: f64) -> Result<Vec<Complex64>> {
    Nufft::new(vol.grid(), points, eps)?.apply(vol.to_complex().data())
}

/// Exact data `F f(y)` from the phantom's analytic transform.
pub fn analytic_kspace(phantom: &Phantom, points: &[Vec3]) -> Result<Vec<Complex64>> {
    phantom.validate()?;
    let ev = phantom.evaluator();
    if ev.fourier(&Vec3::zeros()).is_none() {
        return Err(Error::Unsupported(format!("no analytic Fourier transform for {}", phantom.describe())));
    }
    Ok(points.par_iter().map(|y| ev.fourier(y).expect("checked above")).collect())
}

/// Field on the plane `r3 = ±r_M` at pixels `(pi/k0) · I_N²` (`r1` slowest).
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarField {
    pub n: usize,
    pub pixel: f64,
    pub sign: Sign,
    pub detector_distance: f64,
    pub values: Vec<Complex64>,
}

impl PlanarField {
    pub fn zeros(n: usize, w: &WaveParameters, sign: Sign) -> Self {
        Self {
            n,
            pixel: PI / w.k0(),
            sign,
            detector_distance: w.detector_distance,
            values: vec![Complex64::new(0.0, 0.0); n * n],
        }
    }

    pub fn position(&self, idx: usize) -> Vec3 {
        let half = (self.n / 2) as i64;
        let (i1, i2) = ((idx / self.n) as i64 - half, (idx % self.n) as i64 - half);
        Vec3::new(
            i1 as f64 * self.pixel,
            i2 as f64 * self.pixel,
            self.sign.value() * self.detector_distance,
        )
    }
}

fn require_dft_lattice(design: &SampleDesign) -> Result<()> {
    if design.rule() != LatticeRule::HalfOpen {
        return Err(Error::Unsupported(
            "field conversion needs the half-open lattice (2 k0/N) I_N, which is the DFT lattice of a \
             half-wavelength detector; rebuild the design with LatticeRule::HalfOpen"
                .into(),
        ));
    }
    Ok(())
}

/// Centered 2D DFT `Σ_m v_m exp(∓2 pi i j·m / N)` over signed indices.
fn dft2(values: &[Complex64], n: usize, inverse: bool) -> Vec<Complex64> {
    let half = n / 2;
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    let mut buf = vec![Complex64::new(0.0, 0.0); n * n];
    for a in 0..n {
        for b in 0..n {
            buf[((a + half) % n) * n + (b + half) % n] = values[a * n + b];
        }
    }
    for row in buf.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for b in 0..n {
        for a in 0..n {
            col[a] = buf[a * n + b];
        }
        fft.process(&mut col);
        for a in 0..n {
            buf[a * n + b] = col[a];
        }
    }
    let mut out = vec![Complex64::new(0.0, 0.0); n * n];
    for a in 0..n {
        for b in 0..n {
            out[a * n + b] = buf[((a + half) % n) * n + (b + half) % n];
        }
    }
    out
}

/// Field on the detector from the k-space values of one angle, given in the
/// design's lattice order: `F_{1,2} u(k) = sqrt(pi/2) i exp(i kappa r_M) / kappa · F f(T(k))`.
pub fn kspace_to_field(values: &[Complex64], design: &SampleDesign, w: &WaveParameters, sign: Sign) -> Result<PlanarField> {
    require_dft_lattice(design)?;
    if values.len() != design.per_angle() {
        return Err(Error::Mismatch(format!(
            "{} values for a lattice of {}",
            values.len(),
            design.per_angle()
        )));
    }
    let n = design.n();
    let half = (n / 2) as i64;
    let r_m = w.detector_distance;
    let mut spec = vec![Complex64::new(0.0, 0.0); n * n];
    for (l, v) in design.lattice().iter().zip(values) {
        if !(l.kappa > 0.0) {
            return Err(Error::Singular(format!("kappa = 0 at (k1, k2) = ({}, {})", l.k1, l.k2)));
        }
        let factor = Complex64::i() * Complex64::cis(l.kappa * r_m) * ((PI / 2.0).sqrt() / l.kappa);
        spec[((l.j1 as i64 + half) as usize) * n + (l.j2 as i64 + half) as usize] = factor * v;
    }
    let mut field = PlanarField::zeros(n, w, sign);
    let dx = field.pixel;
    // u_m = (2 pi / dx²) N⁻² Σ_j F(k_j) exp(2 pi i j·m / N)
    let scale = 2.0 * PI / (dx * dx * (n * n) as f64);
    field.values = dft2(&spec, n, true).into_iter().map(|z| z * scale).collect();
    Ok(field)
}

/// Inverse of [`kspace_to_field`]: DFT of the field, multiplied by
/// `-i sqrt(2/pi) kappa exp(-i kappa r_M)`, returned with the points `T(k, t_s)`.
pub fn field_to_kspace(
    field: &PlanarField,
    s: usize,
    design: &SampleDesign,
    traj: &Trajectory,
    w: &WaveParameters,
) -> Result<KSpaceSamples> {
    require_dft_lattice(design)?;
    let n = design.n();
    if field.n != n || field.values.len() != n * n {
        return Err(Error::Mismatch(format!("field of size {} for a design with N = {n}", field.n)));
    }
    if s >= design.angles() {
        return Err(Error::invalid(format!("angle index {s} outside 0..{}", design.angles())));
    }
    let half = (n / 2) as i64;
    let dx = field.pixel;
    let spec = dft2(&field.values, n, false);
    let k0 = w.k0();
    let r_m = w.detector_distance;
    let m = traj.motion(design.time(s));
    let mut points = Vec::with_capacity(design.per_angle());
    let mut values = Vec::with_capacity(design.per_angle());
    for l in design.lattice() {
        let f12 = spec[((l.j1 as i64 + half) as usize) * n + (l.j2 as i64 + half) as usize] * (dx * dx / (2.0 * PI));
        let factor = -Complex64::i() * Complex64::cis(-l.kappa * r_m) * ((2.0 / PI).sqrt() * l.kappa);
        values.push(factor * f12);
        let hsph = Vec3::new(l.k1, l.k2, field.sign.value() * l.kappa - k0);
        points.push(rotate_unchecked(&m.axis, m.angle, &hsph));
    }
    KSpaceSamples::new(points, values, field.sign)
}

/// `u_inc · log(u_tot / u_inc)` with `u_inc = exp(i k0 r3)` on the detector plane.
pub fn rytov_to_born(total: &PlanarField, w: &WaveParameters) -> Result<PlanarField> {
    let u_inc = Complex64::cis(w.k0() * total.sign.value() * total.detector_distance);
    let mut out = total.clone();
    for (i, (o, u)) in out.values.iter_mut().zip(&total.values).enumerate() {
        if u.norm() == 0.0 {
            return Err(Error::Singular(format!("total field vanishes at detector pixel {i}")));
        }
        *o = u_inc * (u / u_inc).ln();
    }
    Ok(out)
}

/// Gaussian white noise `delta · N(0, 1)` per sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub level: f64,
    pub seed: u64,
    /// Draw `delta (N(0,1) + i N(0,1)) / sqrt 2` instead of a real draw.
    #[serde(default)]
    pub complex: bool,
}

impl NoiseSpec {
    /// `delta = relative · max |F f|` over the clean samples.
    pub fn relative_to(samples: &KSpaceSamples, relative: f64, seed: u64) -> Self {
        Self { level: relative * samples.max_abs(), seed, complex: false }
    }
}

/// What was added, for the output metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub delta: f64,
    pub relative: f64,
    pub seed: u64,
    pub complex: bool,
}

const NOISE_CHUNK: usize = 4096;

/// Adds seeded noise. Chunk `c` of 4096 consecutive samples draws from ChaCha8
/// stream `c` of the seed, so the result does not depend on thread count.
pub fn add_noise(samples: &KSpaceSamples, spec: &NoiseSpec) -> Result<(KSpaceSamples, NoiseRecord)> {
    if !(spec.level >= 0.0 && spec.level.is_finite()) {
        return Err(Error::invalid(format!("noise level must be nonnegative, got {}", spec.level)));
    }
    let max = samples.max_abs();
    let record = NoiseRecord {
        delta: spec.level,
        relative: if max > 0.0 { spec.level / max } else { 0.0 },
        seed: spec.seed,
        complex: spec.complex,
    };
    let mut out = samples.clone();
    if spec.level == 0.0 {
        return Ok((out, record));
    }
    out.values.par_chunks_mut(NOISE_CHUNK).enumerate().for_each(|(c, chunk)| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(c as u64);
        for v in chunk {
            if spec.complex {
                let (a, b): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
                *v += Complex64::new(a, b) * (spec.level / 2f64.sqrt());
            } else {
                let a: f64 = StandardNormal.sample(&mut rng);
                v.re += spec.level * a;
            }
        }
    });
    Ok((out, record))
}
