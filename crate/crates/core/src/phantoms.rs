//! Test scattering potentials, their rasterization, and the analytic Fourier
//! transforms used as exact data.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::analytic_ball_ft;
use crate::geometry::{Vec3, WaveParameters};
use crate::sampling::GridSpec;
use crate::volume::Volume;

/// Ellipsoid geometry of the 3D Shepp–Logan head: semi-axes `(a, b, c)`,
/// center `(x0, y0, z0)` and Euler angles `(phi, theta, psi)` in degrees, in
/// units of the head's half height.
const SHEPP_LOGAN_GEOMETRY: [[f64; 9]; 10] = [
    [0.69, 0.92, 0.81, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.6624, 0.874, 0.78, 0.0, -0.0184, 0.0, 0.0, 0.0, 0.0],
    [0.11, 0.31, 0.22, 0.22, 0.0, 0.0, -18.0, 0.0, 10.0],
    [0.16, 0.41, 0.28, -0.22, 0.0, 0.0, 18.0, 0.0, 10.0],
    [0.21, 0.25, 0.41, 0.0, 0.35, -0.15, 0.0, 0.0, 0.0],
    [0.046, 0.046, 0.05, 0.0, 0.1, 0.25, 0.0, 0.0, 0.0],
    [0.046, 0.046, 0.05, 0.0, -0.1, 0.25, 0.0, 0.0, 0.0],
    [0.046, 0.023, 0.05, -0.08, -0.605, 0.0, 0.0, 0.0, 0.0],
    [0.023, 0.023, 0.02, 0.0, -0.606, 0.0, 0.0, 0.0, 0.0],
    [0.023, 0.046, 0.02, 0.06, -0.605, 0.0, 0.0, 0.0, 0.0],
];

/// Half height of the outer ellipsoid, the extent the table is normalized to.
const SHEPP_LOGAN_EXTENT: f64 = 0.92;

/// Additive intensities of the ten ellipsoids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SheppLoganContrast {
    /// Toft's higher-contrast values `1, -0.8, -0.2, -0.2, 0.1, ...`.
    Modified,
    /// The original head values `2, -0.98, -0.02, -0.02, 0.01, ...`.
    Original,
    /// Original values with a unit skull: `1, -0.98, -0.02, -0.02, 0.01, ...`.
    /// Peak value 1 with the low-contrast interior of the original table.
    #[default]
    UnitSkull,
}

impl SheppLoganContrast {
    pub fn intensities(self) -> [f64; 10] {
        match self {
            SheppLoganContrast::Modified => [1.0, -0.8, -0.2, -0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1],
            SheppLoganContrast::Original => [2.0, -0.98, -0.02, -0.02, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01],
            SheppLoganContrast::UnitSkull => [1.0, -0.98, -0.02, -0.02, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PhantomKind {
    /// Characteristic function of the ball of radius `radius`.
    Ball { radius: f64 },
    /// Ball with the slab `|r2| < half_width` removed.
    BallWithGap { radius: f64, half_width: f64 },
    /// Ten-ellipsoid head phantom; the outer ellipsoid's half height is `0.92 scale`.
    SheppLogan3d {
        scale: f64,
        #[serde(default)]
        contrast: SheppLoganContrast,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    #[serde(flatten)]
    pub kind: PhantomKind,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

struct Ellipsoid {
    value: f64,
    axes: Vec3,
    center: Vec3,
    rot: [[f64; 3]; 3],
}

impl Ellipsoid {
    fn local(&self, p: &Vec3) -> Vec3 {
        let r = &self.rot;
        let q = Vec3::new(
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2],
        );
        (q - self.center).component_div(&self.axes)
    }
}

fn euler(phi: f64, theta: f64, psi: f64) -> [[f64; 3]; 3] {
    let (sp, cp) = phi.to_radians().sin_cos();
    let (st, ct) = theta.to_radians().sin_cos();
    let (ss, cs) = psi.to_radians().sin_cos();
    [
        [cs * cp - ct * sp * ss, cs * sp + ct * cp * ss, ss * st],
        [-ss * cp - ct * sp * cs, -ss * sp + ct * cp * cs, cs * st],
        [st * sp, -st * cp, ct],
    ]
}

fn shepp_logan(contrast: SheppLoganContrast) -> Vec<Ellipsoid> {
    SHEPP_LOGAN_GEOMETRY
        .iter()
        .zip(contrast.intensities())
        .map(|(g, value)| Ellipsoid {
            value,
            axes: Vec3::new(g[0], g[1], g[2]),
            center: Vec3::new(g[3], g[4], g[5]),
            rot: euler(g[6], g[7], g[8]),
        })
        .collect()
}

impl Phantom {
    pub fn ball(radius: f64) -> Self {
        Self { kind: PhantomKind::Ball { radius }, amplitude: 1.0 }
    }

    pub fn ball_with_gap(radius: f64, half_width: f64) -> Self {
        Self { kind: PhantomKind::BallWithGap { radius, half_width }, amplitude: 1.0 }
    }

    /// Shepp–Logan head scaled so its outer ellipsoid reaches `0.9 r_s`.
    pub fn shepp_logan_fitted(support_radius: f64, contrast: SheppLoganContrast) -> Self {
        Self {
            kind: PhantomKind::SheppLogan3d {
                scale: 0.9 * support_radius / SHEPP_LOGAN_EXTENT,
                contrast,
            },
            amplitude: 1.0,
        }
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            PhantomKind::Ball { radius } => radius > 0.0,
            PhantomKind::BallWithGap { radius, half_width } => radius > 0.0 && half_width >= 0.0,
            PhantomKind::SheppLogan3d { scale, .. } => scale > 0.0,
        };
        if !ok || !self.amplitude.is_finite() {
            return Err(Error::invalid(format!("bad phantom parameters: {self:?}")));
        }
        Ok(())
    }

    /// Radius of a centered ball containing the support.
    pub fn support_radius(&self) -> f64 {
        match self.kind {
            PhantomKind::Ball { radius } | PhantomKind::BallWithGap { radius, .. } => radius,
            PhantomKind::SheppLogan3d { scale, .. } => {
                SHEPP_LOGAN_GEOMETRY
                    .iter()
                    .map(|g| Vec3::new(g[3], g[4], g[5]).norm() + g[0].max(g[1]).max(g[2]))
                    .fold(0.0, f64::max)
                    * scale
            }
        }
    }

    pub fn describe(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }

    /// A point evaluator for this phantom.
    pub fn evaluator(&self) -> PhantomEval {
        let ellipsoids = match self.kind {
            PhantomKind::SheppLogan3d { contrast, .. } => shepp_logan(contrast),
            _ => Vec::new(),
        };
        PhantomEval { phantom: self.clone(), ellipsoids }
    }

    /// Analytic Fourier transform `(2 pi)^(-3/2) ∫ f(r) exp(-i r·y) dr`, where known.
    pub fn fourier(&self, y: &Vec3) -> Option<Complex64> {
        self.evaluator().fourier(y)
    }
}

/// Precomputed evaluation state for a [`Phantom`].
pub struct PhantomEval {
    phantom: Phantom,
    ellipsoids: Vec<Ellipsoid>,
}

impl PhantomEval {
    pub fn value(&self, p: &Vec3) -> f64 {
        self.value_if_uniform(p, 0.0).unwrap_or(0.0)
    }

    /// The value at `p` if the phantom is provably constant on the ball of
    /// radius `rho` around `p`.
    pub fn value_if_uniform(&self, p: &Vec3, rho: f64) -> Option<f64> {
        let amp = self.phantom.amplitude;
        match self.phantom.kind {
            PhantomKind::Ball { radius } => {
                let r = p.norm();
                if rho > 0.0 && (r - radius).abs() <= rho {
                    return None;
                }
                Some(if r <= radius { amp } else { 0.0 })
            }
            PhantomKind::BallWithGap { radius, half_width } => {
                let r = p.norm();
                let d = p[1].abs();
                if rho > 0.0 && ((r - radius).abs() <= rho || (d - half_width).abs() <= rho) {
                    return None;
                }
                Some(if r <= radius && d >= half_width { amp } else { 0.0 })
            }
            PhantomKind::SheppLogan3d { scale, .. } => {
                let q = p / scale;
                let mut v = 0.0;
                for e in &self.ellipsoids {
                    let l = e.local(&q);
                    let s = l.norm();
                    if rho > 0.0 {
                        let min_axis = e.axes.min();
                        if (s - 1.0).abs() <= rho / (scale * min_axis) {
                            return None;
                        }
                    }
                    if s <= 1.0 {
                        v += e.value;
                    }
                }
                Some(amp * v)
            }
        }
    }

    pub fn fourier(&self, y: &Vec3) -> Option<Complex64> {
        let amp = self.phantom.amplitude;
        match self.phantom.kind {
            PhantomKind::Ball { radius } => Some(Complex64::new(amp * analytic_ball_ft(y, radius), 0.0)),
            PhantomKind::BallWithGap { .. } => None,
            PhantomKind::SheppLogan3d { scale, .. } => {
                let mut acc = Complex64::new(0.0, 0.0);
                for e in &self.ellipsoids {
                    let r = &e.rot;
                    let ry = Vec3::new(
                        r[0][0] * y[0] + r[0][1] * y[1] + r[0][2] * y[2],
                        r[1][0] * y[0] + r[1][1] * y[1] + r[1][2] * y[2],
                        r[2][0] * y[0] + r[2][1] * y[1] + r[2][2] * y[2],
                    );
                    let q = e.axes.component_mul(&ry) * scale;
                    let vol = e.axes.product() * scale.powi(3);
                    // Center in world coordinates is scale · Rᵀ c, so the phase is y·(scale Rᵀ c) = scale (R y)·c.
                    let phase = -scale * ry.dot(&e.center);
                    acc += Complex64::cis(phase) * (e.value * vol * analytic_ball_ft(&q, 1.0));
                }
                Some(acc * amp)
            }
        }
    }
}

/// Mean of `f` over the `oversample³` sub-grid of each voxel, with no support check.
pub fn rasterize_fn(
    grid: GridSpec,
    oversample: usize,
    f: &(dyn Fn(&Vec3) -> f64 + Sync),
    uniform: Option<&(dyn Fn(&Vec3, f64) -> Option<f64> + Sync)>,
) -> Result<Volume<f64>> {
    if oversample == 0 || oversample.is_multiple_of(2) {
        return Err(Error::invalid(format!("oversample factor must be odd and positive, got {oversample}")));
    }
    let n = grid.n;
    let h = grid.spacing();
    let step = h / oversample as f64;
    let half_o = (oversample / 2) as i64;
    let offsets: Vec<f64> = (-half_o..=half_o).map(|k| k as f64 * step).collect();
    let count = (oversample * oversample * oversample) as f64;
    let rho = if oversample == 1 { 0.0 } else { 0.5 * 3f64.sqrt() * h };
    let mut data = vec![0.0; grid.len()];
    data.par_chunks_mut(n * n).enumerate().for_each(|(a, slab)| {
        for (i, v) in slab.iter_mut().enumerate() {
            let center = grid.point(a * n * n + i);
            if let Some(val) = uniform.and_then(|u| u(&center, rho)) {
                *v = val;
                continue;
            }
            if oversample == 1 {
                *v = f(&center);
                continue;
            }
            let mut acc = 0.0;
            for dx in &offsets {
                for dy in &offsets {
                    for dz in &offsets {
                        acc += f(&(center + Vec3::new(*dx, *dy, *dz)));
                    }
                }
            }
            *v = acc / count;
        }
    });
    Volume::from_vec(grid, data)
}

/// Voxel averages of the phantom over an `oversample³` sub-grid; `oversample = 5`
/// gives the five-point-neighborhood average used as ground truth.
pub fn rasterize(phantom: &Phantom, grid: GridSpec, oversample: usize) -> Result<Volume<f64>> {
    phantom.validate()?;
    check_support(phantom, grid.support_radius)?;
    let ev = phantom.evaluator();
    rasterize_fn(grid, oversample, &|p| ev.value(p), Some(&|p, rho| ev.value_if_uniform(p, rho)))
}

pub(crate) fn check_support(phantom: &Phantom, support_radius: f64) -> Result<()> {
    let r = phantom.support_radius();
    if r > support_radius {
        return Err(Error::Support(format!(
            "phantom extends to radius {r}, beyond the support radius {support_radius}"
        )));
    }
    Ok(())
}

/// `f = k0² (n / n0)² - k0²`.
pub fn potential_from_index(index: &Volume<f64>, w: &WaveParameters) -> Result<Volume<f64>> {
    if let Some(i) = index.data().iter().position(|&v| !(v > 0.0)) {
        return Err(Error::invalid(format!(
            "refractive index must be positive, got {} at flat index {i}",
            index.data()[i]
        )));
    }
    let k0 = w.k0();
    let n0 = w.background_index;
    Ok(index.map(|&v| k0 * k0 * ((v / n0).powi(2) - 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_function_rasterizes_to_one() {
        let grid = GridSpec::new(6, 2.0).unwrap();
        for o in [1, 3, 5] {
            let v = rasterize_fn(grid, o, &|_| 1.0, None).unwrap();
            assert!(v.data().iter().all(|&x| (x - 1.0).abs() < 1e-15));
        }
        assert!(rasterize_fn(grid, 2, &|_| 1.0, None).is_err());
    }

    #[test]
    fn ball_interior_exterior_and_boundary() {
        let n = 80;
        let rs = n as f64 / (4.0 * 2f64.sqrt());
        let grid = GridSpec::new(n, rs).unwrap();
        let ball = Phantom::ball(9.0);
        let v = rasterize(&ball, grid, 5).unwrap();
        let h = grid.spacing();
        let half_diag = 0.5 * 3f64.sqrt() * h;
        for (i, &x) in v.data().iter().enumerate() {
            let r = grid.point(i).norm();
            assert!((0.0..=1.0).contains(&x));
            if r + half_diag < 9.0 {
                assert_eq!(x, 1.0);
            } else if r - half_diag > 9.0 {
                assert_eq!(x, 0.0);
            }
        }
    }

    #[test]
    fn uniform_shortcut_agrees_with_brute_force() {
        let grid = GridSpec::new(24, 6.0).unwrap();
        for ph in [
            Phantom::ball_with_gap(5.0, 0.5),
            Phantom::shepp_logan_fitted(6.0, SheppLoganContrast::Modified),
        ] {
            let fast = rasterize(&ph, grid, 3).unwrap();
            let ev = ph.evaluator();
            let slow = rasterize_fn(grid, 3, &|p| ev.value(p), None).unwrap();
            let worst = fast.data().iter().zip(slow.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(worst < 1e-12, "{worst}");
        }
    }

    #[test]
    fn ball_symmetric_under_cube_symmetries() {
        let n = 16;
        let grid = GridSpec::new(n, 4.0).unwrap();
        let v = rasterize(&Phantom::ball(3.1), grid, 3).unwrap();
        let m = (n / 2 - 1) as i64;
        for a in -m..=m {
            for b in -m..=m {
                for c in -m..=m {
                    let x = *v.get([a, b, c]).unwrap();
                    for p in [[a, c, b], [b, a, c], [c, b, a], [-a, b, c], [a, -b, -c], [-c, -a, b]] {
                        assert_eq!(x, *v.get(p).unwrap());
                    }
                }
            }
        }
    }

    #[test]
    fn support_escape_rejected() {
        let grid = GridSpec::new(8, 2.0).unwrap();
        assert!(matches!(rasterize(&Phantom::ball(2.5), grid, 1), Err(Error::Support(_))));
        let sl = Phantom::shepp_logan_fitted(2.0, SheppLoganContrast::Original);
        assert!(sl.support_radius() <= 2.0);
        assert!(rasterize(&sl, grid, 1).is_ok());
    }

    #[test]
    fn gap_is_empty() {
        let ev = Phantom::ball_with_gap(9.0, 1.0).evaluator();
        assert_eq!(ev.value(&Vec3::new(3.0, 0.5, 0.0)), 0.0);
        assert_eq!(ev.value(&Vec3::new(3.0, 1.5, 0.0)), 1.0);
        assert_eq!(ev.value(&Vec3::new(3.0, 9.5, 0.0)), 0.0);
    }

    #[test]
    fn shepp_logan_values() {
        let ph = Phantom::shepp_logan_fitted(10.0, SheppLoganContrast::Modified);
        let ev = ph.evaluator();
        let s = match ph.kind {
            PhantomKind::SheppLogan3d { scale, .. } => scale,
            _ => unreachable!(),
        };
        // brain matter at the origin: 1 - 0.8
        assert!((ev.value(&Vec3::zeros()) - 0.2).abs() < 1e-12);
        // skull between the two outer ellipsoids on the r2 axis
        assert!((ev.value(&Vec3::new(0.0, 0.9 * s, 0.0)) - 1.0).abs() < 1e-12);
        assert_eq!(ev.value(&Vec3::new(0.0, 0.95 * s, 0.0)), 0.0);
    }

    #[test]
    fn ellipsoid_transform_matches_quadrature() {
        let ph = Phantom::shepp_logan_fitted(3.0, SheppLoganContrast::Modified);
        let grid = GridSpec::new(64, 3.0).unwrap();
        let vol = rasterize(&ph, grid, 3).unwrap();
        let h = grid.spacing();
        for y in [Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.7, -0.3, 0.4), Vec3::new(-1.1, 0.2, 0.9)] {
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, v) in vol.data().iter().enumerate() {
                if *v != 0.0 {
                    acc += Complex64::cis(-grid.point(i).dot(&y)) * *v;
                }
            }
            acc *= h.powi(3) * (2.0 * PI).powf(-1.5);
            let exact = ph.fourier(&y).unwrap();
            assert!((acc - exact).norm() < 2e-3 * exact.norm().max(0.1), "{y:?}: {acc} vs {exact}");
        }
    }

    #[test]
    fn potential_from_index_algebra() {
        let grid = GridSpec::new(2, 1.0).unwrap();
        let w = WaveParameters::new(1.0, 1.0, 2.0, 1.33).unwrap();
        let mut idx = Volume::from_vec(grid, vec![1.33; 8]).unwrap();
        let f = potential_from_index(&idx, &w).unwrap();
        assert!(f.data().iter().all(|&v| v.abs() < 1e-12));
        idx.data_mut()[3] = 1.33 * 2f64.sqrt();
        idx.data_mut()[4] = 1.4;
        let f = potential_from_index(&idx, &w).unwrap();
        assert!((f.data()[3] - w.k0().powi(2)).abs() < 1e-9);
        assert!(f.data()[4] > 0.0 && f.data()[4] < f.data()[3]);
        idx.data_mut()[0] = 0.0;
        assert!(potential_from_index(&idx, &w).is_err());
    }
}
