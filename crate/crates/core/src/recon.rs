//! Backpropagation and CGNE inversion of the k-space data, with stopping rules.

use std::f64::consts::PI;
use std::ops::ControlFlow;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    indicatrix_analytic, indicatrix_numeric_with, jacobian_with, KPoint, RootSearch, Trajectory, TrajectoryKind,
    WaveParameters,
};
use crate::sampling::{GridSpec, SampleDesign};
use crate::transform::{
    cgne_solve, CgneOptions, FourierOperator, KSpaceSamples, Nufft, ResidualHistory, Unknowns,
};
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Backprop,
    #[default]
    Cgne,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum Stopping {
    /// Run exactly `max_iters` iterations.
    #[default]
    Fixed,
    /// `delta` is the absolute noise level; left out, it is taken from the
    /// noise metadata of the samples.
    Discrepancy {
        #[serde(default)]
        delta: Option<f64>,
        #[serde(default = "default_tau")]
        tau: f64,
    },
    LCurve,
}

fn default_tau() -> f64 {
    1.0
}

/// How the multiplicity `Card T⁻¹(y)` in the backprojection weight is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum IndicatrixMode {
    Analytic,
    Numeric,
    Constant { value: f64 },
}

impl IndicatrixMode {
    /// Analytic where a closed form exists, the constant 2 for the oscillating
    /// axis, and root counting otherwise.
    pub fn default_for(traj: &Trajectory) -> Self {
        if traj.is_full_fixed_rotation().is_some() || traj.is_half_rotation_about_e1() {
            IndicatrixMode::Analytic
        } else if matches!(traj.kind(), TrajectoryKind::OscillatingAxis { .. }) {
            IndicatrixMode::Constant { value: 2.0 }
        } else {
            IndicatrixMode::Numeric
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    pub method: Method,
    pub max_iters: usize,
    pub stopping: Stopping,
    /// `None` selects [`IndicatrixMode::default_for`] the trajectory.
    pub indicatrix: Option<IndicatrixMode>,
    pub unknowns: Unknowns,
    /// Accuracy of the fast transform.
    pub eps: f64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            method: Method::Cgne,
            max_iters: 20,
            stopping: Stopping::Fixed,
            indicatrix: None,
            unknowns: Unknowns::Real,
            eps: 1e-6,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if let Stopping::Discrepancy { delta, tau } = self.stopping {
            if delta.is_some_and(|d| !(d >= 0.0 && d.is_finite())) {
                return Err(Error::invalid(format!("discrepancy delta must be nonnegative, got {delta:?}")));
            }
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::invalid(format!("discrepancy tau must be positive, got {tau}")));
            }
        }
        if let Some(IndicatrixMode::Constant { value }) = self.indicatrix {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::invalid(format!("indicatrix constant must be positive, got {value}")));
            }
        }
        if !(1e-12..=1e-2).contains(&self.eps) {
            return Err(Error::invalid(format!("eps must lie in [1e-12, 1e-2], got {}", self.eps)));
        }
        Ok(())
    }
}

/// Iteration picked by a stopping rule (1-based). `flagged` marks a fallback:
/// the discrepancy was never reached or the L-curve has no corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopChoice {
    pub index: usize,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    #[serde(skip)]
    pub volume: Option<Volume<f64>>,
    pub method: Method,
    pub config: ReconConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub history: Option<ResidualHistory>,
    /// Iteration whose iterate is returned (CGNE only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chosen: Option<StopChoice>,
    /// `max |Im| / max |Re|` of the volume before the real part was taken.
    pub imaginary_ratio: f64,
    pub timings: Vec<StageTiming>,
}

impl ReconReport {
    pub fn volume(&self) -> &Volume<f64> {
        self.volume.as_ref().expect("report carries its volume until serialized")
    }
}

struct Stopwatch(Vec<StageTiming>);

impl Stopwatch {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.0.push(StageTiming { stage: stage.into(), seconds: start.elapsed().as_secs_f64() });
        Ok(out)
    }
}

fn imaginary_ratio(v: &[Complex64]) -> f64 {
    let (re, im) = v.iter().fold((0.0f64, 0.0f64), |(r, i), z| (r.max(z.re.abs()), i.max(z.im.abs())));
    if re > 0.0 {
        im / re
    } else if im > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

fn real_volume(grid: GridSpec, x: &[Complex64]) -> Result<Volume<f64>> {
    Volume::from_vec(grid, x.iter().map(|z| z.re).collect())
}

/// Per-sample quadrature weight `|det ∇T| / Card T⁻¹(y)`, in design order.
pub fn backprop_weights(
    samples: &KSpaceSamples,
    design: &SampleDesign,
    traj: &Trajectory,
    w: &WaveParameters,
    mode: IndicatrixMode,
) -> Result<Vec<f64>> {
    if samples.len() != design.len() {
        return Err(Error::Mismatch(format!(
            "{} samples for a design of {} points",
            samples.len(),
            design.len()
        )));
    }
    if (design.k0() - w.k0()).abs() > 1e-12 * w.k0() {
        return Err(Error::Mismatch("design and wave parameters disagree on k0".into()));
    }
    let k0 = w.k0();
    let sign = samples.sign;
    // Coarser than the default search; adequate for a quadrature weight.
    let search = RootSearch { samples: 1024, ..RootSearch::default() };
    let per = design.per_angle();
    let mut out = vec![0.0; design.len()];
    out.par_chunks_mut(per.max(1)).enumerate().try_for_each(|(s, chunk)| -> Result<()> {
        let t = design.time(s);
        let m = traj.motion(t);
        for (i, (dst, l)) in chunk.iter_mut().zip(design.lattice()).enumerate() {
            let p = KPoint::new(l.k1, l.k2, t, sign);
            let jac = jacobian_with(&p, l.kappa, &m, k0);
            let card = match mode {
                IndicatrixMode::Analytic => indicatrix_analytic(&p, traj, w)? as f64,
                IndicatrixMode::Numeric => {
                    indicatrix_numeric_with(&samples.points[s * per + i], traj, w, search)? as f64
                }
                IndicatrixMode::Constant { value } => value,
            };
            // A zero count only happens on the boundary of the coverage.
            *dst = if card > 0.0 { jac / card } else { 0.0 };
        }
        Ok(())
    })?;
    Ok(out)
}

/// Discretized inversion integral: the adjoint transform of the weighted data,
/// scaled by the `(k1, k2, t)` cell volume `(2 k0 / N)² L / S`.
pub fn backpropagate(
    samples: &KSpaceSamples,
    design: &SampleDesign,
    traj: &Trajectory,
    grid: GridSpec,
    w: &WaveParameters,
    mode: IndicatrixMode,
    eps: f64,
) -> Result<ReconReport> {
    let config = ReconConfig { method: Method::Backprop, indicatrix: Some(mode), eps, ..ReconConfig::default() };
    config.validate()?;
    let mut watch = Stopwatch(Vec::new());
    let weights = watch.time("weights", || backprop_weights(samples, design, traj, w, mode))?;
    let q = design.cell_volume();
    let weighted: Vec<Complex64> =
        samples.values.par_iter().zip(&weights).map(|(v, wt)| v * (wt * q)).collect();
    let op = watch.time("plan", || Nufft::new(grid, &samples.points, eps))?;
    let mut x = watch.time("adjoint", || op.apply_adjoint(&weighted))?;
    // The adjoint carries the grid quadrature (2 pi)^(-3/2) h³; backprojection
    // needs only (2 pi)^(-3/2).
    let h3 = grid.spacing().powi(3);
    x.iter_mut().for_each(|z| *z /= h3);
    let imaginary_ratio = imaginary_ratio(&x);
    Ok(ReconReport {
        volume: Some(real_volume(grid, &x)?),
        method: Method::Backprop,
        config,
        history: None,
        chosen: None,
        imaginary_ratio,
        timings: watch.0,
    })
}

/// [`reconstruct_cgne_observed`] without an observer.
pub fn reconstruct_cgne(samples: &KSpaceSamples, grid: GridSpec, config: &ReconConfig) -> Result<ReconReport> {
    reconstruct_cgne_observed(samples, grid, config, |_, _| {})
}

/// CGNE on the fast transform. `observer` sees every iterate of the main run
/// (1-based index). For the L-curve rule the iteration is repeated up to the
/// chosen index, which reproduces the same iterate since the run is
/// deterministic.
pub fn reconstruct_cgne_observed(
    samples: &KSpaceSamples,
    grid: GridSpec,
    config: &ReconConfig,
    mut observer: impl FnMut(usize, &[Complex64]),
) -> Result<ReconReport> {
    config.validate()?;
    let mut watch = Stopwatch(Vec::new());
    let op = watch.time("plan", || Nufft::new(grid, &samples.points, config.eps))?;
    let opts = CgneOptions { max_iters: config.max_iters, unknowns: config.unknowns };
    let solve = |iters: usize, rec: &mut dyn FnMut(&crate::transform::IterationState) -> ControlFlow<()>| {
        cgne_solve(
            |v| op.apply(v),
            |v| op.apply_adjoint(v),
            &samples.values,
            grid.len(),
            CgneOptions { max_iters: iters, ..opts },
            rec,
        )
    };

    let (x, history, chosen) = match config.stopping {
        Stopping::Fixed => {
            let (x, hist) = watch.time("cgne", || {
                solve(config.max_iters, &mut |s| {
                    observer(s.k, s.x);
                    ControlFlow::Continue(())
                })
            })?;
            let k = hist.len();
            (x, hist, StopChoice { index: k, flagged: false })
        }
        Stopping::Discrepancy { delta, tau } => {
            let delta = delta.ok_or_else(|| Error::invalid("discrepancy rule needs the noise level delta"))?;
            let (x, hist) = watch.time("cgne", || {
                solve(config.max_iters, &mut |s| {
                    observer(s.k, s.x);
                    if s.residual <= tau * delta {
                        ControlFlow::Break(())
                    } else {
                        ControlFlow::Continue(())
                    }
                })
            })?;
            let choice = stop_discrepancy(&hist, delta, tau)?;
            (x, hist, choice)
        }
        Stopping::LCurve => {
            let (x, hist) = watch.time("cgne", || {
                solve(config.max_iters, &mut |s| {
                    observer(s.k, s.x);
                    ControlFlow::Continue(())
                })
            })?;
            let choice = stop_lcurve(&hist)?;
            let x = if choice.index < hist.len() {
                watch.time("cgne-rerun", || solve(choice.index, &mut |_| ControlFlow::Continue(())))?.0
            } else {
                x
            };
            (x, hist, choice)
        }
    };
    let imaginary_ratio = imaginary_ratio(&x);
    Ok(ReconReport {
        volume: Some(real_volume(grid, &x)?),
        method: Method::Cgne,
        config: *config,
        history: Some(history),
        chosen: Some(chosen),
        imaginary_ratio,
        timings: watch.0,
    })
}

/// Smallest `k` with RMS residual `≤ tau · delta`; the last index, flagged, if
/// no iterate qualifies.
pub fn stop_discrepancy(history: &ResidualHistory, delta: f64, tau: f64) -> Result<StopChoice> {
    if history.is_empty() {
        return Err(Error::invalid("empty residual history"));
    }
    Ok(match history.residual.iter().position(|&r| r <= tau * delta) {
        Some(i) => StopChoice { index: i + 1, flagged: false },
        None => StopChoice { index: history.len(), flagged: true },
    })
}

/// Corner of the discrete L-curve `(log ‖F x_k − b‖, log ‖x_k‖)` by adaptive
/// pruning (Hansen, Jensen & Rodriguez 2007). Curves without a convex corner
/// fall back to the last index, flagged.
pub fn stop_lcurve(history: &ResidualHistory) -> Result<StopChoice> {
    if history.len() < 4 {
        return Err(Error::invalid(format!("L-curve needs at least 4 iterations, got {}", history.len())));
    }
    let fallback = StopChoice { index: history.len(), flagged: true };
    Ok(lcurve_corner(&history.residual, &history.solution_norm)
        .map_or(fallback, |k| StopChoice { index: k + 1, flagged: false }))
}

// Wedge products below this count as zero (straight segments).
const WEDGE_TOL: f64 = 1e-10;

/// Zero-based corner index, or `None` if no pruned curve is convex.
fn lcurve_corner(rho: &[f64], eta: &[f64]) -> Option<usize> {
    let kept: Vec<usize> = (0..rho.len())
        .filter(|&i| rho[i].is_finite() && eta[i].is_finite() && rho[i] > 0.0 && eta[i] > 0.0)
        .collect();
    if kept.len() < 3 {
        return None;
    }
    let pts: Vec<[f64; 2]> = kept.iter().map(|&i| [rho[i].log10(), eta[i].log10()]).collect();
    let np = pts.len();
    let vecs: Vec<[f64; 2]> = pts.windows(2).map(|p| [p[1][0] - p[0][0], p[1][1] - p[0][1]]).collect();
    let lens: Vec<f64> = vecs.iter().map(|v| v[0].hypot(v[1])).collect();
    if lens.contains(&0.0) {
        return None;
    }
    let unit: Vec<[f64; 2]> = vecs.iter().zip(&lens).map(|(v, l)| [v[0] / l, v[1] / l]).collect();

    // Vector indices by decreasing length (stable ascending sort, reversed).
    let mut order: Vec<usize> = (0..np - 1).collect();
    order.sort_by(|&a, &b| lens[a].total_cmp(&lens[b]));
    order.reverse();

    let mut candidates: Vec<usize> = Vec::new();
    let mut convex = false;
    let mut p = 5.min(np - 1);
    while p < (np - 1) * 2 {
        let mut elmts: Vec<usize> = order[..p.min(np - 1)].to_vec();
        elmts.sort_unstable();
        let w: Vec<[f64; 2]> = elmts.iter().map(|&e| unit[e]).collect();

        if let Some(c) = corner_by_angles(&w, &elmts) {
            convex = true;
            if !candidates.contains(&c) {
                candidates.push(c);
            }
        }
        let c = corner_by_global_behavior(&pts, &w, &elmts);
        if !candidates.contains(&c) {
            candidates.push(c);
        }
        p *= 2;
    }
    if !convex {
        return None;
    }
    if !candidates.contains(&0) {
        candidates.push(0);
    }
    candidates.sort_unstable();

    // Rightmost candidate from which moving on gains more in solution norm
    // than it saves in residual, at a convex point; else the leftmost one.
    let cl = &candidates;
    let mut vz: Vec<usize> = (0..cl.len() - 1)
        .filter(|&d| pts[cl[d + 1]][1] - pts[cl[d]][1] >= (pts[cl[d + 1]][0] - pts[cl[d]][0]).abs())
        .collect();
    if vz.first() == Some(&0) {
        vz.remove(0);
    }
    let index = if vz.is_empty() {
        *cl.last().unwrap()
    } else {
        let dirs: Vec<[f64; 2]> = cl
            .windows(2)
            .map(|c| {
                let v = [pts[c[1]][0] - pts[c[0]][0], pts[c[1]][1] - pts[c[0]][1]];
                let l = v[0].hypot(v[1]);
                [v[0] / l, v[1] / l]
            })
            .collect();
        let wedge = |i: usize| dirs[i][0] * dirs[i + 1][1] - dirs[i + 1][0] * dirs[i][1];
        match vz.iter().find(|&&d| wedge(d - 1) <= 0.0) {
            Some(&d) => cl[d],
            None => cl[*vz.last().unwrap()],
        }
    };
    Some(kept[index])
}

/// Point after the sharpest left turn of the pruned curve, if there is one.
fn corner_by_angles(w: &[[f64; 2]], elmts: &[usize]) -> Option<usize> {
    let (kk, mm) = w
        .windows(2)
        .map(|p| p[0][0] * p[1][1] - p[1][0] * p[0][1])
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, v)| if v < bv { (i, v) } else { (bi, bv) });
    (mm < -WEDGE_TOL).then(|| elmts[kk] + 1)
}

/// Point closest to the intersection of the flattest and steepest segments.
fn corner_by_global_behavior(pts: &[[f64; 2]], w: &[[f64; 2]], elmts: &[usize]) -> usize {
    let mut by_slope: Vec<usize> = (0..w.len()).collect();
    by_slope.sort_by(|&a, &b| w[a][1].abs().total_cmp(&w[b][1].abs()));
    let ln = by_slope.len();
    let mut count = 1;
    let mut mn = by_slope[0];
    let mut mx = by_slope[ln - 1];
    while mn >= mx && count < ln {
        mx = mx.max(by_slope[ln - 1 - count]);
        count += 1;
        mn = mn.min(by_slope[count - 1]);
    }
    let (i_flat, j_steep) = if count > 1 {
        let mut found = (by_slope[0], by_slope[ln - 1]);
        'outer: for i in 0..count {
            for j in (ln - count..ln).rev() {
                if by_slope[i] < by_slope[j] {
                    found = (by_slope[i], by_slope[j]);
                    break 'outer;
                }
            }
        }
        found
    } else {
        (by_slope[0], by_slope[ln - 1])
    };
    let a = pts[elmts[j_steep]];
    let b = pts[elmts[j_steep] + 1];
    let y0 = pts[elmts[i_flat]][1];
    let x3 = b[0] + (y0 - b[1]) / (b[1] - a[1]) * (b[0] - a[0]);
    let origin = [x3, y0];
    pts.iter()
        .map(|p| (origin[0] - p[0]).powi(2) + (origin[1] - p[1]).powi(2))
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, v)| if v < bv { (i, v) } else { (bi, bv) })
        .0
}

/// `π L k0² / N³`: the asymptotic form of the cell volume when `S = 4N/π`.
pub fn asymptotic_cell_volume(design: &SampleDesign) -> f64 {
    PI * design.duration() * design.k0().powi(2) / (design.n() as f64).powi(3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::analytic_kspace;
    use crate::geometry::{Sign, Vec3};
    use crate::metrics::{averaged_truth, psnr};
    use crate::phantoms::Phantom;
    use crate::sampling::{build_design, build_kspace_points, default_angle_count, LatticeRule};
    use std::f64::consts::PI;

    fn hist(residual: Vec<f64>, solution_norm: Vec<f64>) -> ResidualHistory {
        ResidualHistory { residual, solution_norm }
    }

    #[test]
    fn discrepancy_first_crossing() {
        let d = 0.01;
        let h = hist(vec![5.0 * d, 2.0 * d, 0.9 * d, 0.5 * d], vec![1.0; 4]);
        assert_eq!(stop_discrepancy(&h, d, 1.0).unwrap(), StopChoice { index: 3, flagged: false });
        assert_eq!(stop_discrepancy(&h, 0.0, 1.0).unwrap(), StopChoice { index: 4, flagged: true });
        assert!(stop_discrepancy(&ResidualHistory::default(), d, 1.0).is_err());
    }

    #[test]
    fn lcurve_finds_constructed_knee() {
        // Residual falls fast with flat norm up to k = 7, then stalls while the
        // norm grows.
        let mut rho = Vec::new();
        let mut eta = Vec::new();
        for k in 1..=20 {
            if k <= 7 {
                rho.push(10f64.powf(-0.5 * k as f64));
                eta.push(10f64.powf(0.01 * k as f64));
            } else {
                rho.push(10f64.powf(-3.5 - 0.01 * (k - 7) as f64));
                eta.push(10f64.powf(0.07 + 0.4 * (k - 7) as f64));
            }
        }
        let c = stop_lcurve(&hist(rho, eta)).unwrap();
        assert_eq!(c, StopChoice { index: 7, flagged: false });
    }

    #[test]
    fn lcurve_straight_line_is_flagged() {
        let rho: Vec<f64> = (1..=12).map(|k| 10f64.powf(-0.3 * k as f64)).collect();
        let eta: Vec<f64> = (1..=12).map(|k| 10f64.powf(0.2 * k as f64)).collect();
        let c = stop_lcurve(&hist(rho, eta)).unwrap();
        assert_eq!(c, StopChoice { index: 12, flagged: true });
        assert!(stop_lcurve(&hist(vec![1.0; 3], vec![1.0; 3])).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ReconConfig::default().validate().is_ok());
        assert!(ReconConfig { max_iters: 0, ..Default::default() }.validate().is_err());
        let bad = ReconConfig {
            stopping: Stopping::Discrepancy { delta: Some(-1.0), tau: 1.0 },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let json = r#"{"method":"cgne","stopping":{"rule":"discrepancy","delta":0.5},"indicatrix":{"mode":"constant","value":2.0}}"#;
        let c: ReconConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.stopping, Stopping::Discrepancy { delta: Some(0.5), tau: 1.0 });
        assert_eq!(c.max_iters, 20);
        assert_eq!(c.indicatrix, Some(IndicatrixMode::Constant { value: 2.0 }));
    }

    struct Setup {
        design: SampleDesign,
        traj: Trajectory,
        w: WaveParameters,
        grid: GridSpec,
        samples: KSpaceSamples,
    }

    fn small_ball(n: usize, axis: Vec3) -> Setup {
        let w = WaveParameters::for_grid(n, 1.0).unwrap();
        let rs = n as f64 / (4.0 * 2f64.sqrt());
        let grid = GridSpec::new(n, rs).unwrap();
        let traj = Trajectory::full_rotation(axis).unwrap();
        let design = build_design(n, default_angle_count(n), &w, 2.0 * PI, LatticeRule::Linspace).unwrap();
        let pts = build_kspace_points(&design, &traj, &w, Sign::Transmission).unwrap();
        let vals = analytic_kspace(&Phantom::ball(0.6 * rs), &pts).unwrap();
        let samples = KSpaceSamples::new(pts, vals, Sign::Transmission).unwrap();
        Setup { design, traj, w, grid, samples }
    }

    #[test]
    fn fixed_axis_weight_is_k0_k2_over_kappa() {
        let s = small_ball(16, Vec3::x());
        let wts = backprop_weights(&s.samples, &s.design, &s.traj, &s.w, IndicatrixMode::Constant { value: 1.0 })
            .unwrap();
        let k0 = s.w.k0();
        for (p, wt) in s.design.points().zip(&wts) {
            let kap = (k0 * k0 - p.k1 * p.k1 - p.k2 * p.k2).sqrt();
            let want = k0 * p.k2.abs() / kap;
            assert!((wt - want).abs() <= 1e-12 * want.max(1.0), "{wt} vs {want}");
        }
    }

    #[test]
    fn backprop_zero_and_linear() {
        let s = small_ball(16, Vec3::x());
        let mode = IndicatrixMode::Analytic;
        let zero = KSpaceSamples::new(
            s.samples.points.clone(),
            vec![Complex64::new(0.0, 0.0); s.samples.len()],
            Sign::Transmission,
        )
        .unwrap();
        let r = backpropagate(&zero, &s.design, &s.traj, s.grid, &s.w, mode, 1e-6).unwrap();
        assert!(r.volume().data().iter().all(|&v| v == 0.0));

        let a = backpropagate(&s.samples, &s.design, &s.traj, s.grid, &s.w, mode, 1e-6).unwrap();
        let mut scaled = s.samples.clone();
        scaled.values.iter_mut().for_each(|v| *v *= 2.5);
        let b = backpropagate(&scaled, &s.design, &s.traj, s.grid, &s.w, mode, 1e-6).unwrap();
        for (x, y) in a.volume().data().iter().zip(b.volume().data()) {
            assert!((2.5 * x - y).abs() <= 1e-10 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn backprop_rejects_missing_indicatrix() {
        let mut s = small_ball(16, Vec3::x());
        s.traj = Trajectory::oscillating_axis(0.3).unwrap();
        let res = backprop_weights(&s.samples, &s.design, &s.traj, &s.w, IndicatrixMode::Analytic);
        assert!(matches!(res, Err(Error::NoAnalyticIndicatrix(_))));
        assert!(backprop_weights(&s.samples, &s.design, &s.traj, &s.w, IndicatrixMode::Constant { value: 2.0 })
            .is_ok());
    }

    #[test]
    fn cell_volume_relates_to_asymptotic_form() {
        let w = WaveParameters::for_grid(16, 1.0).unwrap();
        let d = build_design(16, 21, &w, 2.0 * PI, LatticeRule::Linspace).unwrap();
        let ratio = d.cell_volume() / asymptotic_cell_volume(&d);
        assert!((ratio - 4.0 * 16.0 / (PI * 21.0)).abs() < 1e-12);
    }

    #[test]
    fn cgne_beats_backprop_and_improves_early() {
        let s = small_ball(24, Vec3::x());
        let ph = Phantom::ball(0.6 * s.grid.support_radius);
        let truth = averaged_truth(&ph, s.grid, 5).unwrap();
        let bp = backpropagate(&s.samples, &s.design, &s.traj, s.grid, &s.w, IndicatrixMode::Analytic, 1e-6).unwrap();
        let mut per_iter = Vec::new();
        let cfg = ReconConfig { max_iters: 6, ..Default::default() };
        let report = reconstruct_cgne_observed(&s.samples, s.grid, &cfg, |_, x| {
            let v = real_volume(s.grid, x).unwrap();
            per_iter.push(psnr(&truth, &v).unwrap());
        })
        .unwrap();
        let p_bp = psnr(&truth, bp.volume()).unwrap();
        let p_cg = psnr(&truth, report.volume()).unwrap();
        assert!(p_cg > p_bp, "cgne {p_cg} vs backprop {p_bp}");
        assert!(per_iter.windows(2).all(|w| w[1] >= w[0] - 1e-9), "{per_iter:?}");
        assert_eq!(report.chosen, Some(StopChoice { index: 6, flagged: false }));
        assert_eq!(report.history.as_ref().unwrap().len(), 6);
    }

    #[test]
    fn lcurve_rerun_reproduces_iterate() {
        let s = small_ball(16, Vec3::x());
        let mut iterates = Vec::new();
        let cfg = ReconConfig { max_iters: 12, stopping: Stopping::LCurve, ..Default::default() };
        let report = reconstruct_cgne_observed(&s.samples, s.grid, &cfg, |_, x| iterates.push(x.to_vec())).unwrap();
        let k = report.chosen.unwrap().index;
        let want: Vec<f64> = iterates[k - 1].iter().map(|z| z.re).collect();
        assert_eq!(report.volume().data(), &want[..]);
    }

    #[test]
    fn discrepancy_stops_at_first_crossing() {
        let s = small_ball(16, Vec3::x());
        let full = reconstruct_cgne(&s.samples, s.grid, &ReconConfig { max_iters: 10, ..Default::default() }).unwrap();
        let h = full.history.unwrap();
        let delta = h.residual[4] * 1.0001;
        let cfg = ReconConfig {
            max_iters: 10,
            stopping: Stopping::Discrepancy { delta: Some(delta), tau: 1.0 },
            ..Default::default()
        };
        let r = reconstruct_cgne(&s.samples, s.grid, &cfg).unwrap();
        assert_eq!(r.chosen, Some(StopChoice { index: 5, flagged: false }));
        assert_eq!(r.history.unwrap().len(), 5);
    }
}
