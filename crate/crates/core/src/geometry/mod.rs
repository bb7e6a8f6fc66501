//! Rotations, the k-space sampling map and its Jacobian.
//!
//! The object rotation at time `t` is described by an axis `n(t)` on the unit
//! sphere and an angle `alpha(t)`. A detector frequency pair `(k1, k2)` seen at
//! time `t` probes the Fourier transform of the scattering potential at
//!
//! ```text
//! T(k1, k2, t) = R(n(t), alpha(t)) (k1, k2, ±kappa - k0)
//! ```
//!
//! where `R(n, a) y = (1 - cos a)(n·y) n + cos a y - sin a (n × y)`.

mod indicatrix;
mod trajectory;

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use indicatrix::{indicatrix_analytic, indicatrix_numeric, indicatrix_numeric_with, torus_contains, RootSearch};
pub use trajectory::{Motion, TabulatedMotion, Trajectory, TrajectoryConfig, TrajectoryKind};

pub type Vec3 = Vector3<f64>;

const UNIT_TOL: f64 = 1e-9;

/// Physical constants of the imaging setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveParameters {
    pub wavelength: f64,
    pub wave_number: f64,
    pub support_radius: f64,
    pub detector_distance: f64,
    pub background_index: f64,
}

impl WaveParameters {
    pub fn new(
        wavelength: f64,
        support_radius: f64,
        detector_distance: f64,
        background_index: f64,
    ) -> Result<Self> {
        if !(wavelength > 0.0 && wavelength.is_finite()) {
            return Err(Error::invalid(format!("wavelength must be positive, got {wavelength}")));
        }
        if !(support_radius > 0.0) {
            return Err(Error::invalid(format!(
                "support radius must be positive, got {support_radius}"
            )));
        }
        if !(detector_distance > support_radius) {
            return Err(Error::invalid(format!(
                "detector distance {detector_distance} must exceed the support radius {support_radius}"
            )));
        }
        if !(background_index > 0.0) {
            return Err(Error::invalid(format!(
                "background index must be positive, got {background_index}"
            )));
        }
        Ok(Self {
            wavelength,
            wave_number: 2.0 * PI / wavelength,
            support_radius,
            detector_distance,
            background_index,
        })
    }

    /// Parameters for an `n`-point grid at the sampling bound
    /// `n = 2 sqrt(2) k0 r_s / pi`, i.e. `r_s = wavelength n / (4 sqrt 2)`.
    /// The detector sits at twice the support radius.
    pub fn for_grid(n: usize, wavelength: f64) -> Result<Self> {
        let rs = wavelength * n as f64 / (4.0 * 2f64.sqrt());
        Self::new(wavelength, rs, 2.0 * rs, 1.0)
    }

    pub fn k0(&self) -> f64 {
        self.wave_number
    }

    /// Smallest even grid size satisfying the sampling bound.
    pub fn min_grid_size(&self) -> usize {
        let bound = 2.0 * 2f64.sqrt() * self.wave_number * self.support_radius / PI;
        let n = (bound - 1e-9).ceil().max(2.0) as usize;
        n + n % 2
    }
}

/// Illumination side: transmission measures at `r3 = +r_M`, reflection at `r3 = -r_M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Transmission,
    Reflection,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Transmission => 1.0,
            Sign::Reflection => -1.0,
        }
    }
}

/// A detector frequency pair observed at trajectory time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KPoint {
    pub k1: f64,
    pub k2: f64,
    pub t: f64,
    pub sign: Sign,
}

impl KPoint {
    pub fn new(k1: f64, k2: f64, t: f64, sign: Sign) -> Self {
        Self { k1, k2, t, sign }
    }

    /// Membership in the propagating set `k1² + k2² < k0²`.
    pub fn is_admissible(&self, k0: f64) -> bool {
        self.k1 * self.k1 + self.k2 * self.k2 < k0 * k0
    }

    /// The unrotated hemisphere point `(k1, k2, ±kappa - k0)`.
    pub fn hemisphere(&self, k0: f64) -> Vec3 {
        let kap = kappa(self.k1, self.k2, k0).re;
        Vec3::new(self.k1, self.k2, self.sign.value() * kap - k0)
    }
}

/// Axial frequency `sqrt(k0² - k1² - k2²)`, continued as `i sqrt(k1² + k2² - k0²)`
/// outside the disk.
pub fn kappa(k1: f64, k2: f64, k0: f64) -> Complex64 {
    let d = k0 * k0 - k1 * k1 - k2 * k2;
    if d >= 0.0 {
        Complex64::new(d.sqrt(), 0.0)
    } else {
        Complex64::new(0.0, (-d).sqrt())
    }
}

/// Rodrigues rotation of `y` about the unit axis `n` by `alpha`, in the
/// transposed convention used for the object motion.
pub fn rotate(n: &Vec3, alpha: f64, y: &Vec3) -> Result<Vec3> {
    let norm = n.norm();
    if (norm - 1.0).abs() > UNIT_TOL {
        return Err(Error::NonUnitAxis { norm });
    }
    Ok(rotate_unchecked(n, alpha, y))
}

#[inline]
pub(crate) fn rotate_unchecked(n: &Vec3, alpha: f64, y: &Vec3) -> Vec3 {
    let (s, c) = alpha.sin_cos();
    n * ((1.0 - c) * n.dot(y)) + y * c - n.cross(y) * s
}

/// Matrix form of [`rotate`].
pub fn rotation_matrix(n: &Vec3, alpha: f64) -> Matrix3<f64> {
    let (s, c) = alpha.sin_cos();
    let (n1, n2, n3) = (n[0], n[1], n[2]);
    let k = 1.0 - c;
    Matrix3::new(
        n1 * n1 * k + c,
        n1 * n2 * k + n3 * s,
        n1 * n3 * k - n2 * s,
        n1 * n2 * k - n3 * s,
        n2 * n2 * k + c,
        n2 * n3 * k + n1 * s,
        n1 * n3 * k + n2 * s,
        n2 * n3 * k - n1 * s,
        n3 * n3 * k + c,
    )
}

/// The sampling map `T±(k1, k2, t)`.
pub fn t_map(p: &KPoint, traj: &Trajectory, w: &WaveParameters) -> Vec3 {
    debug_assert!(p.is_admissible(w.k0()), "k-point outside the propagating disk");
    let m = traj.motion(p.t);
    rotate_unchecked(&m.axis, m.angle, &p.hemisphere(w.k0()))
}

/// Magnitude of the Jacobian determinant of `T±` at `p`.
pub fn jacobian(p: &KPoint, traj: &Trajectory, w: &WaveParameters) -> Result<f64> {
    let k0 = w.k0();
    let kap = kappa(p.k1, p.k2, k0);
    if kap.im != 0.0 || kap.re <= 0.0 {
        return Err(Error::Singular(format!(
            "kappa vanishes at (k1, k2) = ({}, {}); the Jacobian diverges on the disk boundary",
            p.k1, p.k2
        )));
    }
    let m = traj.motion(p.t);
    Ok(jacobian_with(p, kap.re, &m, k0))
}

#[inline]
pub(crate) fn jacobian_with(p: &KPoint, kap: f64, m: &Motion, k0: f64) -> f64 {
    let h = Vec3::new(p.k1, p.k2, p.sign.value() * kap - k0);
    let n = &m.axis;
    let dn = &m.axis_rate;
    let (s, c) = m.angle.sin_cos();
    let nh = n.dot(&h);
    let term = (1.0 - c) * (n[2] * dn.dot(&h) - dn[2] * nh) - n[2] * n.dot(&dn.cross(&h)) * s
        - m.angle_rate * (n[0] * p.k2 - n[1] * p.k1)
        + nh * (n[0] * dn[1] - n[1] * dn[0]) * s;
    k0 / kap * term.abs()
}
