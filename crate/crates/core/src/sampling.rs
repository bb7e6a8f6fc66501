//! Spatial grid and the k-space sampling design.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotate_unchecked, KPoint, Sign, Trajectory, Vec3, WaveParameters};

/// Cubic grid `(2 r_s / N) · I_N³` with `I_N = {-N/2, ..., N/2 - 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub support_radius: f64,
}

impl GridSpec {
    pub fn new(n: usize, support_radius: f64) -> Result<Self> {
        if n == 0 || !n.is_multiple_of(2) {
            return Err(Error::invalid(format!("grid size must be even and positive, got {n}")));
        }
        if !(support_radius > 0.0) {
            return Err(Error::invalid(format!("support radius must be positive, got {support_radius}")));
        }
        Ok(Self { n, support_radius })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.support_radius / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// One-dimensional factor `(2 r_s / N) · I_N`.
    pub fn axis(&self) -> Vec<f64> {
        let h = self.spacing();
        let half = (self.n / 2) as i64;
        (0..self.n as i64).map(|i| (i - half) as f64 * h).collect()
    }

    /// Multi-index `j ∈ I_N³` of the flat position `idx` (j1 slowest).
    pub fn multi_index(&self, idx: usize) -> [i64; 3] {
        let n = self.n;
        let half = (n / 2) as i64;
        [(idx / (n * n)) as i64 - half, ((idx / n) % n) as i64 - half, (idx % n) as i64 - half]
    }

    pub fn point(&self, idx: usize) -> Vec3 {
        let j = self.multi_index(idx);
        Vec3::new(j[0] as f64, j[1] as f64, j[2] as f64) * self.spacing()
    }

    /// Flat index of the multi-index `j`, if it lies in the grid.
    pub fn flat_index(&self, j: [i64; 3]) -> Option<usize> {
        let half = (self.n / 2) as i64;
        let n = self.n as i64;
        let mut idx = 0i64;
        for c in j {
            let u = c + half;
            if !(0..n).contains(&u) {
                return None;
            }
            idx = idx * n + u;
        }
        Some(idx as usize)
    }
}

/// `build_grid` from the operation list: grid spec plus its explicit 1D factor.
pub fn build_grid(n: usize, support_radius: f64) -> Result<(GridSpec, Vec<f64>)> {
    let g = GridSpec::new(n, support_radius)?;
    let axis = g.axis();
    Ok((g, axis))
}

/// How the detector frequency lattice is laid out over `[-k0, k0]²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatticeRule {
    /// `N` equispaced values from `-k0` to `k0` inclusive per axis, disk
    /// `k1² + k2² < k0²`. Gives 4872 points per angle at `N = 80`.
    #[default]
    Linspace,
    /// `(2 k0 / N) · I_N` per axis, disk `j1² + j2² < (N/2)²`. Coincides with
    /// the DFT lattice of an `N`-pixel detector at half-wavelength pitch.
    HalfOpen,
}

impl LatticeRule {
    pub fn describe(self) -> &'static str {
        match self {
            LatticeRule::Linspace => "k = -k0 + 2 k0 i/(N-1), i = 0..N-1; keep k1^2+k2^2 < k0^2",
            LatticeRule::HalfOpen => "k = (2 k0/N) j, j in I_N; keep j1^2+j2^2 < (N/2)^2",
        }
    }
}

/// Default number of angles `ceil(4 N / pi)`.
pub fn default_angle_count(n: usize) -> usize {
    (4.0 * n as f64 / PI).ceil() as usize
}

/// One detector frequency `(k1, k2)` with its lattice labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticePoint {
    pub j1: i32,
    pub j2: i32,
    pub k1: f64,
    pub k2: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignPoint {
    pub j1: i32,
    pub j2: i32,
    pub s: u32,
    pub k1: f64,
    pub k2: f64,
    pub t: f64,
}

/// Sampling set `U_{N,S}`: a disk of detector frequencies observed at `S`
/// equispaced times `t_s = L s / S`, ordered by `(s, j1, j2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDesign {
    n: usize,
    angles: usize,
    duration: f64,
    k0: f64,
    rule: LatticeRule,
    lattice: Vec<LatticePoint>,
}

/// Serializable summary of a design, echoed into output metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignInfo {
    pub n: usize,
    pub angles: usize,
    pub duration: f64,
    pub lattice: LatticeRule,
    pub per_angle: usize,
    pub total: usize,
    pub convention: String,
}

pub fn build_design(
    n: usize,
    angles: usize,
    w: &WaveParameters,
    duration: f64,
    rule: LatticeRule,
) -> Result<SampleDesign> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::invalid(format!("grid size must be even and positive, got {n}")));
    }
    if angles == 0 {
        return Err(Error::invalid("angle count must be at least 1"));
    }
    if !(duration > 0.0) {
        return Err(Error::invalid("trajectory duration must be positive"));
    }
    let k0 = w.k0();
    let half = (n / 2) as i32;
    let coord = |i: i32| -> f64 {
        match rule {
            LatticeRule::Linspace => -k0 + 2.0 * k0 * i as f64 / (n - 1) as f64,
            LatticeRule::HalfOpen => 2.0 * k0 * (i - half) as f64 / n as f64,
        }
    };
    let mut lattice = Vec::new();
    for i1 in 0..n as i32 {
        for i2 in 0..n as i32 {
            let keep = match rule {
                LatticeRule::Linspace => {
                    let (a, b) = (coord(i1), coord(i2));
                    a * a + b * b < k0 * k0
                }
                LatticeRule::HalfOpen => {
                    let (a, b) = (i1 - half, i2 - half);
                    a * a + b * b < half * half
                }
            };
            if keep {
                let (k1, k2) = (coord(i1), coord(i2));
                let kappa = (k0 * k0 - k1 * k1 - k2 * k2).sqrt();
                debug_assert!(kappa > 0.0);
                lattice.push(LatticePoint { j1: i1 - half, j2: i2 - half, k1, k2, kappa });
            }
        }
    }
    Ok(SampleDesign { n, angles, duration, k0, rule, lattice })
}

impl SampleDesign {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn angles(&self) -> usize {
        self.angles
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn rule(&self) -> LatticeRule {
        self.rule
    }

    pub fn k0(&self) -> f64 {
        self.k0
    }

    pub fn lattice(&self) -> &[LatticePoint] {
        &self.lattice
    }

    pub fn per_angle(&self) -> usize {
        self.lattice.len()
    }

    /// `M = |U_{N,S}|`.
    pub fn len(&self) -> usize {
        self.lattice.len() * self.angles
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time(&self, s: usize) -> f64 {
        self.duration * s as f64 / self.angles as f64
    }

    /// Time step `L / S`.
    pub fn time_step(&self) -> f64 {
        self.duration / self.angles as f64
    }

    /// Nominal frequency step `2 k0 / N`.
    pub fn frequency_step(&self) -> f64 {
        2.0 * self.k0 / self.n as f64
    }

    /// Volume element of the `(k1, k2, t)` quadrature.
    pub fn cell_volume(&self) -> f64 {
        self.frequency_step().powi(2) * self.time_step()
    }

    pub fn points(&self) -> impl Iterator<Item = DesignPoint> + '_ {
        (0..self.angles).flat_map(move |s| {
            let t = self.time(s);
            self.lattice.iter().map(move |l| DesignPoint {
                j1: l.j1,
                j2: l.j2,
                s: s as u32,
                k1: l.k1,
                k2: l.k2,
                t,
            })
        })
    }

    pub fn info(&self) -> DesignInfo {
        DesignInfo {
            n: self.n,
            angles: self.angles,
            duration: self.duration,
            lattice: self.rule,
            per_angle: self.per_angle(),
            total: self.len(),
            convention: self.rule.describe().to_string(),
        }
    }
}

/// `Y_N^± = T±(U_N)` in design order.
pub fn build_kspace_points(
    design: &SampleDesign,
    traj: &Trajectory,
    w: &WaveParameters,
    sign: Sign,
) -> Result<Vec<Vec3>> {
    let last = design.time(design.angles - 1);
    if last > traj.duration() * (1.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "design time {last} exceeds trajectory duration {}",
            traj.duration()
        )));
    }
    if (design.k0 - w.k0()).abs() > 1e-12 * w.k0() {
        return Err(Error::Mismatch("design and wave parameters disagree on k0".into()));
    }
    let k0 = w.k0();
    let per = design.per_angle();
    let mut out = vec![Vec3::zeros(); design.len()];
    out.par_chunks_mut(per.max(1)).enumerate().for_each(|(s, chunk)| {
        let m = traj.motion(design.time(s));
        for (dst, l) in chunk.iter_mut().zip(&design.lattice) {
            let h = Vec3::new(l.k1, l.k2, sign.value() * l.kappa - k0);
            *dst = rotate_unchecked(&m.axis, m.angle, &h);
        }
    });
    Ok(out)
}

/// The design points as [`KPoint`]s.
pub fn design_kpoints(design: &SampleDesign, sign: Sign) -> Vec<KPoint> {
    design.points().map(|p| KPoint::new(p.k1, p.k2, p.t, sign)).collect()
}

/// Writes `j1,j2,s,k1,k2,t,y1,y2,y3` rows.
pub fn write_design_csv<W: Write>(design: &SampleDesign, points: &[Vec3], out: W) -> Result<()> {
    if points.len() != design.len() {
        return Err(Error::Mismatch(format!(
            "{} points for a design of {}",
            points.len(),
            design.len()
        )));
    }
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["j1", "j2", "s", "k1", "k2", "t", "y1", "y2", "y3"])?;
    for (p, y) in design.points().zip(points) {
        wtr.write_record(&[
            p.j1.to_string(),
            p.j2.to_string(),
            p.s.to_string(),
            format!("{:.17e}", p.k1),
            format!("{:.17e}", p.k2),
            format!("{:.17e}", p.t),
            format!("{:.17e}", y[0]),
            format!("{:.17e}", y[1]),
            format!("{:.17e}", y[2]),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
