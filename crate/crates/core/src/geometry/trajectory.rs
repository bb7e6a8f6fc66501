use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{rotate_unchecked, Vec3, UNIT_TOL};
use crate::error::{Error, Result};

/// Axis, angle and their time derivatives at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Motion {
    pub axis: Vec3,
    pub axis_rate: Vec3,
    pub angle: f64,
    pub angle_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryKind {
    /// Constant axis, `alpha(t) = alpha0 + t`.
    FixedAxis { axis: Vec3, alpha0: f64 },
    /// `n(t) = (cos(c sin t), sin(c sin t), 0)`, `alpha(t) = t` on `[0, 2 pi]`.
    OscillatingAxis { c: f64 },
    Tabulated(TabulatedMotion),
}

/// Rotation history `(n(t), alpha(t))` on `[0, duration]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    kind: TrajectoryKind,
    duration: f64,
}

/// Declarative trajectory description as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrajectoryConfig {
    FixedAxis { axis: [f64; 3], range: [f64; 2] },
    OscillatingAxis { c: f64 },
    Tabulated { file: PathBuf },
}

impl TrajectoryConfig {
    pub fn build(&self) -> Result<Trajectory> {
        match self {
            TrajectoryConfig::FixedAxis { axis, range } => {
                let len = range[1] - range[0];
                let mut traj = Trajectory::fixed_axis(Vec3::from(*axis), len)?;
                if let TrajectoryKind::FixedAxis { alpha0, .. } = &mut traj.kind {
                    *alpha0 = range[0];
                }
                Ok(traj)
            }
            TrajectoryConfig::OscillatingAxis { c } => Trajectory::oscillating_axis(*c),
            TrajectoryConfig::Tabulated { file } => Trajectory::from_csv(file),
        }
    }
}

impl Trajectory {
    pub fn fixed_axis(axis: Vec3, duration: f64) -> Result<Self> {
        let norm = axis.norm();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::NonUnitAxis { norm });
        }
        if !(duration > 0.0) {
            return Err(Error::invalid(format!("trajectory duration must be positive, got {duration}")));
        }
        Ok(Self { kind: TrajectoryKind::FixedAxis { axis, alpha0: 0.0 }, duration })
    }

    pub fn full_rotation(axis: Vec3) -> Result<Self> {
        Self::fixed_axis(axis, 2.0 * PI)
    }

    pub fn half_rotation(axis: Vec3) -> Result<Self> {
        Self::fixed_axis(axis, PI)
    }

    pub fn oscillating_axis(c: f64) -> Result<Self> {
        if !(c > 0.0 && c < PI / 2.0) {
            return Err(Error::invalid(format!("oscillation amplitude must lie in (0, pi/2), got {c}")));
        }
        Ok(Self { kind: TrajectoryKind::OscillatingAxis { c }, duration: 2.0 * PI })
    }

    pub fn tabulated(motion: TabulatedMotion) -> Self {
        let duration = motion.duration();
        Self { kind: TrajectoryKind::Tabulated(motion), duration }
    }

    /// Reads a CSV with header `t,n1,n2,n3,alpha`. Times are shifted to start at 0.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for rec in rdr.deserialize() {
            let row: TabulatedRow = rec?;
            rows.push(row);
        }
        let motion = TabulatedMotion::new(
            rows.iter().map(|r| r.t).collect(),
            rows.iter().map(|r| Vec3::new(r.n1, r.n2, r.n3)).collect(),
            rows.iter().map(|r| r.alpha).collect(),
        )
        .map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })?;
        Ok(Self::tabulated(motion))
    }

    pub fn kind(&self) -> &TrajectoryKind {
        &self.kind
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn motion(&self, t: f64) -> Motion {
        match &self.kind {
            TrajectoryKind::FixedAxis { axis, alpha0 } => Motion {
                axis: *axis,
                axis_rate: Vec3::zeros(),
                angle: alpha0 + t,
                angle_rate: 1.0,
            },
            TrajectoryKind::OscillatingAxis { c } => {
                let (st, ct) = t.sin_cos();
                let phi = c * st;
                let dphi = c * ct;
                let (sp, cp) = phi.sin_cos();
                Motion {
                    axis: Vec3::new(cp, sp, 0.0),
                    axis_rate: Vec3::new(-sp * dphi, cp * dphi, 0.0),
                    angle: t,
                    angle_rate: 1.0,
                }
            }
            TrajectoryKind::Tabulated(m) => m.eval(t),
        }
    }

    /// Image of the illumination direction `e3` under the rotation at time `t`.
    pub fn beam_direction(&self, t: f64) -> Vec3 {
        let m = self.motion(t);
        rotate_unchecked(&m.axis, m.angle, &Vec3::z())
    }

    /// True if the orientation at `t = duration` coincides with the one at `t = 0`.
    pub fn is_closed(&self) -> bool {
        let a = self.motion(0.0);
        let b = self.motion(self.duration);
        let probe = [Vec3::x(), Vec3::y(), Vec3::z()];
        probe.iter().all(|v| {
            (rotate_unchecked(&a.axis, a.angle, v) - rotate_unchecked(&b.axis, b.angle, v)).norm() < 1e-9
        })
    }

    /// Fixed axis and `alpha(t) = t` on `[0, 2 pi]`, with axis not parallel to `e3`.
    pub(crate) fn is_full_fixed_rotation(&self) -> Option<Vec3> {
        match &self.kind {
            TrajectoryKind::FixedAxis { axis, alpha0 }
                if *alpha0 == 0.0
                    && (self.duration - 2.0 * PI).abs() < 1e-12
                    && axis[0].hypot(axis[1]) > 1e-12 =>
            {
                Some(*axis)
            }
            _ => None,
        }
    }

    pub(crate) fn is_half_rotation_about_e1(&self) -> bool {
        match &self.kind {
            TrajectoryKind::FixedAxis { axis, alpha0 } => {
                *alpha0 == 0.0 && (self.duration - PI).abs() < 1e-12 && (axis - Vec3::x()).norm() < 1e-12
            }
            _ => false,
        }
    }

    pub fn describe(&self) -> String {
        match &self.kind {
            TrajectoryKind::FixedAxis { axis, alpha0 } => format!(
                "fixed-axis n=({:.4},{:.4},{:.4}) alpha in [{:.4},{:.4}]",
                axis[0],
                axis[1],
                axis[2],
                alpha0,
                alpha0 + self.duration
            ),
            TrajectoryKind::OscillatingAxis { c } => format!("oscillating-axis c={c}"),
            TrajectoryKind::Tabulated(m) => format!("tabulated ({} samples)", m.times.len()),
        }
    }
}

#[derive(Debug, Deserialize)]
struct TabulatedRow {
    t: f64,
    n1: f64,
    n2: f64,
    n3: f64,
    alpha: f64,
}

/// Sampled axis/angle history, interpolated by C¹ piecewise-cubic Hermite
/// splines with finite-difference slopes. The interpolated axis is
/// renormalized onto the sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedMotion {
    times: Vec<f64>,
    axes: Vec<Vec3>,
    axis_slopes: Vec<Vec3>,
    angles: Vec<f64>,
    angle_slopes: Vec<f64>,
}

impl TabulatedMotion {
    pub fn new(times: Vec<f64>, axes: Vec<Vec3>, angles: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times.len() != axes.len() || times.len() != angles.len() {
            return Err(Error::invalid("tabulated trajectory needs at least two consistent rows"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("tabulated times must be strictly increasing"));
        }
        if let Some((i, a)) = axes.iter().enumerate().find(|(_, a)| (a.norm() - 1.0).abs() > 1e-6) {
            return Err(Error::invalid(format!("axis sample {i} is not unit (|n| = {})", a.norm())));
        }
        let t0 = times[0];
        let times: Vec<f64> = times.iter().map(|t| t - t0).collect();
        let axis_slopes = slopes(&times, &axes, |a, b| a - b, |v, s| v * s);
        let angle_slopes = slopes(&times, &angles, |a, b| a - b, |v, s| v * s);
        Ok(Self { times, axes, axis_slopes, angles, angle_slopes })
    }

    pub fn duration(&self) -> f64 {
        *self.times.last().unwrap()
    }

    fn eval(&self, t: f64) -> Motion {
        let n = self.times.len();
        let t = t.clamp(0.0, self.duration());
        let i = match self.times.partition_point(|&x| x <= t) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        };
        let dt = self.times[i + 1] - self.times[i];
        let s = (t - self.times[i]) / dt;
        let (h00, h10, h01, h11) = hermite(s);
        let (d00, d10, d01, d11) = hermite_deriv(s);

        let p = self.axes[i] * h00
            + self.axis_slopes[i] * (h10 * dt)
            + self.axes[i + 1] * h01
            + self.axis_slopes[i + 1] * (h11 * dt);
        let dp = (self.axes[i] * d00
            + self.axis_slopes[i] * (d10 * dt)
            + self.axes[i + 1] * d01
            + self.axis_slopes[i + 1] * (d11 * dt))
            / dt;
        let norm = p.norm();
        let axis = p / norm;
        let axis_rate = (dp - axis * axis.dot(&dp)) / norm;

        let angle = self.angles[i] * h00
            + self.angle_slopes[i] * h10 * dt
            + self.angles[i + 1] * h01
            + self.angle_slopes[i + 1] * h11 * dt;
        let angle_rate = (self.angles[i] * d00
            + self.angle_slopes[i] * d10 * dt
            + self.angles[i + 1] * d01
            + self.angle_slopes[i + 1] * d11 * dt)
            / dt;
        Motion { axis, axis_rate, angle, angle_rate }
    }
}

fn slopes<T: Copy>(
    t: &[f64],
    v: &[T],
    sub: impl Fn(T, T) -> T,
    scale: impl Fn(T, f64) -> T,
) -> Vec<T> {
    let n = t.len();
    (0..n)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                i if i == n - 1 => (n - 2, n - 1),
                i => (i - 1, i + 1),
            };
            scale(sub(v[b], v[a]), 1.0 / (t[b] - t[a]))
        })
        .collect()
}

fn hermite(s: f64) -> (f64, f64, f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0, s3 - 2.0 * s2 + s, -2.0 * s3 + 3.0 * s2, s3 - s2)
}

fn hermite_deriv(s: f64) -> (f64, f64, f64, f64) {
    let s2 = s * s;
    (6.0 * s2 - 6.0 * s, 3.0 * s2 - 4.0 * s + 1.0, -6.0 * s2 + 6.0 * s, 3.0 * s2 - 2.0 * s)
}
