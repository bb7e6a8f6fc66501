//! Banach indicatrix: how many times the sampling map covers a k-space point.

use super::{t_map, KPoint, Sign, Trajectory, Vec3, WaveParameters};
use crate::error::{Error, Result};

/// Closed-form indicatrix for the supported presets: a full fixed-axis
/// rotation (axis not parallel to `e3`) and a half rotation about `e1`
/// (transmission only).
pub fn indicatrix_analytic(p: &KPoint, traj: &Trajectory, w: &WaveParameters) -> Result<u32> {
    if traj.is_full_fixed_rotation().is_some() {
        return Ok(2);
    }
    if traj.is_half_rotation_about_e1() {
        if p.sign != Sign::Transmission {
            return Err(Error::NoAnalyticIndicatrix("half rotation in reflection".into()));
        }
        let y = t_map(p, traj, w);
        return Ok(half_rotation_count(&y, w.k0()));
    }
    Err(Error::NoAnalyticIndicatrix(traj.describe()))
}

/// Piecewise count for `alpha(t) = t` on `[0, pi]` about `e1`.
pub(crate) fn half_rotation_count(y: &Vec3, k0: f64) -> u32 {
    let r2 = y.norm_squared();
    let lhs = 2.0 * k0 * y[2].abs();
    if y[1] < 0.0 {
        if lhs <= r2 && r2 <= 2.0 * k0 * y[1].hypot(y[2]) {
            2
        } else if lhs > r2 {
            1
        } else {
            0
        }
    } else if y[1] > 0.0 {
        if lhs >= r2 {
            1
        } else {
            0
        }
    } else {
        1
    }
}

/// Root-search resolution for [`indicatrix_numeric`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootSearch {
    pub samples: usize,
    pub bisection_tol: f64,
    /// Roots closer than `merge_rel * duration` count once.
    pub merge_rel: f64,
}

impl Default for RootSearch {
    fn default() -> Self {
        Self { samples: 4096, bisection_tol: 1e-10, merge_rel: 1e-6 }
    }
}

/// Counts the solutions `t` in `[0, L]` of `y · e(t) = -|y|² / (2 k0)`, where
/// `e(t)` is the rotated illumination direction. Valid for transmission
/// points with `|y| < sqrt(2) k0`.
pub fn indicatrix_numeric(y: &Vec3, traj: &Trajectory, w: &WaveParameters) -> Result<u32> {
    indicatrix_numeric_with(y, traj, w, RootSearch::default())
}

pub fn indicatrix_numeric_with(
    y: &Vec3,
    traj: &Trajectory,
    w: &WaveParameters,
    search: RootSearch,
) -> Result<u32> {
    let k0 = w.k0();
    let r2 = y.norm_squared();
    if r2 == 0.0 {
        return Err(Error::Degenerate(
            "y = 0 is reached for every t; the indicatrix is infinite".into(),
        ));
    }
    if r2 >= 2.0 * k0 * k0 {
        return Err(Error::invalid(format!(
            "|y| = {} is outside the transmission ball of radius sqrt(2) k0 = {}",
            r2.sqrt(),
            2f64.sqrt() * k0
        )));
    }
    let target = -r2 / (2.0 * k0);
    let residual = |t: f64| y.dot(&traj.beam_direction(t)) - target;
    let len = traj.duration();
    let n = search.samples.max(8);
    let ts: Vec<f64> = (0..=n).map(|i| len * i as f64 / n as f64).collect();
    let gs: Vec<f64> = ts.iter().map(|&t| residual(t)).collect();
    let scale = y.norm();
    let touch_tol = 1e-9 * scale;

    let mut roots = Vec::new();
    for i in 0..n {
        let (a, b) = (gs[i], gs[i + 1]);
        if a == 0.0 {
            roots.push(ts[i]);
            continue;
        }
        if a * b < 0.0 {
            roots.push(bisect(&residual, ts[i], ts[i + 1], a, search.bisection_tol));
        }
    }
    if gs[n] == 0.0 {
        roots.push(ts[n]);
    }
    // Tangential roots: local minima of |g| without a sign change.
    for i in 1..n {
        let (a, b, c) = (gs[i - 1], gs[i], gs[i + 1]);
        if a * b > 0.0 && b * c > 0.0 && b.abs() <= a.abs() && b.abs() <= c.abs() {
            let t = golden_min(&|t: f64| residual(t).abs(), ts[i - 1], ts[i + 1], search.bisection_tol);
            if residual(t).abs() <= touch_tol {
                roots.push(t);
            }
        }
    }
    roots.sort_by(f64::total_cmp);
    let merge = search.merge_rel * len;
    let mut distinct: Vec<f64> = Vec::with_capacity(roots.len());
    for r in roots {
        if distinct.last().is_none_or(|&last| r - last > merge) {
            distinct.push(r);
        }
    }
    if traj.is_closed() && distinct.len() > 1 {
        let first = distinct[0];
        let last = *distinct.last().unwrap();
        if first < merge && len - last < merge {
            distinct.pop();
        }
    }
    Ok(distinct.len() as u32)
}

fn bisect(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, mut flo: f64, tol: f64) -> f64 {
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if flo * fm < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    0.5 * (lo + hi)
}

fn golden_min(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    while b - a > tol {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    0.5 * (a + b)
}

/// Membership in the k-space coverage of a full rotation about `e1`:
/// the solid horn torus `(|(y2, y3)| - k0)² + y1² <= k0²`, split by the
/// sphere of radius `sqrt(2) k0` into its transmission (inner) and
/// reflection (outer) parts.
pub fn torus_contains(y: &Vec3, w: &WaveParameters, sign: Sign) -> bool {
    let k0 = w.k0();
    let r2 = y.norm_squared();
    let rho = y[1].hypot(y[2]);
    let in_torus = (rho - k0).powi(2) + y[0] * y[0] <= k0 * k0 * (1.0 + 1e-12);
    match sign {
        Sign::Transmission => r2 < 2.0 * k0 * k0 && in_torus,
        Sign::Reflection => r2 > 2.0 * k0 * k0 && in_torus,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn waves() -> WaveParameters {
        WaveParameters::for_grid(80, 1.0).unwrap()
    }

    #[test]
    fn full_rotation_is_two() {
        let w = waves();
        let traj = Trajectory::full_rotation(Vec3::x()).unwrap();
        let p = KPoint::new(1.0, 2.5, 0.4, Sign::Transmission);
        assert_eq!(indicatrix_analytic(&p, &traj, &w).unwrap(), 2);
        let y = t_map(&p, &traj, &w);
        assert_eq!(indicatrix_numeric(&y, &traj, &w).unwrap(), 2);
    }

    #[test]
    fn unsupported_trajectory_errors() {
        let w = waves();
        let traj = Trajectory::oscillating_axis(0.3).unwrap();
        let p = KPoint::new(1.0, 2.5, 0.4, Sign::Transmission);
        assert!(matches!(
            indicatrix_analytic(&p, &traj, &w),
            Err(Error::NoAnalyticIndicatrix(_))
        ));
        let about_e3 = Trajectory::full_rotation(Vec3::z()).unwrap();
        assert!(indicatrix_analytic(&p, &about_e3, &w).is_err());
    }

    #[test]
    fn half_rotation_cases() {
        let k0 = waves().k0();
        // y2 < 0, 2k0|y3| <= |y|² <= 2k0 sqrt(y2² + y3²)
        let y = Vec3::new(0.0, -3.0, 0.5);
        assert!(2.0 * k0 * 0.5 <= y.norm_squared());
        assert_eq!(half_rotation_count(&y, k0), 2);
        // y2 > 0, 2k0|y3| >= |y|²
        let y = Vec3::new(0.0, 0.5, 3.0);
        assert_eq!(half_rotation_count(&y, k0), 1);
        // y2 < 0, 2k0|y3| > |y|²
        let y = Vec3::new(0.0, -0.5, 3.0);
        assert_eq!(half_rotation_count(&y, k0), 1);
        assert_eq!(half_rotation_count(&Vec3::new(0.3, 0.0, 1.0), k0), 1);
        assert_eq!(half_rotation_count(&Vec3::new(0.0, 3.0, 0.5), k0), 0);
    }

    #[test]
    fn moving_axis_regions() {
        let w = waves();
        let k0 = w.k0();
        let c = PI / 8.0;
        let traj = Trajectory::oscillating_axis(c).unwrap();
        let y = Vec3::new(0.5 * 2.0 * k0 * c.sin(), 0.0, 0.0);
        assert_eq!(indicatrix_numeric(&y, &traj, &w).unwrap(), 4);
        let y = Vec3::new(0.0, 0.0, 0.6 * k0);
        assert_eq!(indicatrix_numeric(&y, &traj, &w).unwrap(), 2);
    }

    #[test]
    fn numeric_rejects_degenerate_and_out_of_range() {
        let w = waves();
        let traj = Trajectory::full_rotation(Vec3::x()).unwrap();
        assert!(matches!(
            indicatrix_numeric(&Vec3::zeros(), &traj, &w),
            Err(Error::Degenerate(_))
        ));
        let far = Vec3::new(0.0, 0.0, 1.5 * w.k0());
        assert!(indicatrix_numeric(&far, &traj, &w).is_err());
    }

    #[test]
    fn torus_membership() {
        let w = waves();
        let k0 = w.k0();
        assert!(torus_contains(&Vec3::zeros(), &w, Sign::Transmission));
        assert!(!torus_contains(&Vec3::new(0.0, 2f64.sqrt() * k0, 0.0), &w, Sign::Transmission));
        assert!(torus_contains(&Vec3::new(0.0, 1.9 * k0, 0.0), &w, Sign::Reflection));
        assert!(!torus_contains(&Vec3::new(0.0, 0.5 * k0, 0.0), &w, Sign::Reflection));
    }
}
