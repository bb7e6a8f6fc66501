//! The nonuniform discrete Fourier transform on the spatial grid, its fast
//! approximation, and the CGNE least-squares inverter.
//!
//! For a volume `f` on `h · I_N³`, `h = 2 r_s / N`, the operator is
//!
//! ```text
//! (F_N f)(y) = (2 pi)^(-3/2) h³ Σ_j f_j exp(-i h j·y)
//! ```
//!
//! which is the midpoint rule for the unitary Fourier transform
//! `F f(y) = (2 pi)^(-3/2) ∫ f(r) exp(-i r·y) dr`.

mod cg;
mod nufft;
mod quadrature;

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Sign, Vec3};
use crate::sampling::{DesignInfo, GridSpec};
use crate::volume::Volume;

pub use cg::{cgne_solve, CgneOptions, IterationState, ResidualHistory, Unknowns};
pub use nufft::{EsKernel, Nufft};
pub use quadrature::gauss_legendre;

/// Data vector: Fourier samples at nonuniform k-space points.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceSamples {
    pub points: Vec<Vec3>,
    pub values: Vec<Complex64>,
    pub sign: Sign,
    pub design: Option<DesignInfo>,
}

impl KSpaceSamples {
    pub fn new(points: Vec<Vec3>, values: Vec<Complex64>, sign: Sign) -> Result<Self> {
        if points.len() != values.len() {
            return Err(Error::Mismatch(format!(
                "{} points but {} values",
                points.len(),
                values.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(format!("sample point {i}")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sample value {i}")));
        }
        Ok(Self { points, values, sign, design: None })
    }

    pub fn with_design(mut self, design: DesignInfo) -> Self {
        self.design = Some(design);
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }
}

/// Root mean square of a complex vector.
pub fn rms(v: &[Complex64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|z| z.norm_sqr()).sum::<f64>() / v.len() as f64).sqrt()
}

/// A linear map from grid values to values at fixed k-space points, with its adjoint.
pub trait FourierOperator: Sync {
    fn grid(&self) -> GridSpec;
    fn num_points(&self) -> usize;
    fn apply(&self, f: &[Complex64]) -> Result<Vec<Complex64>>;
    fn apply_adjoint(&self, g: &[Complex64]) -> Result<Vec<Complex64>>;
}

/// `(2 pi)^(-3/2) h³`.
pub fn ndft_scale(grid: &GridSpec) -> f64 {
    (2.0 * PI).powf(-1.5) * grid.spacing().powi(3)
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Mismatch(format!("{what}: expected {want} values, got {got}")));
    }
    Ok(())
}

/// Exact summation, `O(M N³)`. Reference implementation for the fast path.
#[derive(Debug, Clone)]
pub struct DirectNdft {
    grid: GridSpec,
    x: Vec<Vec3>,
}

impl DirectNdft {
    pub fn new(grid: GridSpec, points: &[Vec3]) -> Self {
        let h = grid.spacing();
        Self { grid, x: points.iter().map(|y| y * h).collect() }
    }

    fn phases(&self, x: f64, sign: f64) -> Vec<Complex64> {
        let half = (self.grid.n / 2) as i64;
        (0..self.grid.n as i64).map(|a| Complex64::cis(sign * (a - half) as f64 * x)).collect()
    }
}

impl FourierOperator for DirectNdft {
    fn grid(&self) -> GridSpec {
        self.grid
    }

    fn num_points(&self) -> usize {
        self.x.len()
    }

    fn apply(&self, f: &[Complex64]) -> Result<Vec<Complex64>> {
        check_len("volume", f.len(), self.grid.len())?;
        let n = self.grid.n;
        let c = ndft_scale(&self.grid);
        Ok(self
            .x
            .par_iter()
            .map(|x| {
                let (e1, e2, e3) = (self.phases(x[0], -1.0), self.phases(x[1], -1.0), self.phases(x[2], -1.0));
                let mut acc = Complex64::new(0.0, 0.0);
                for a in 0..n {
                    let mut s2 = Complex64::new(0.0, 0.0);
                    for b in 0..n {
                        let row = &f[(a * n + b) * n..(a * n + b + 1) * n];
                        let s3: Complex64 = row.iter().zip(&e3).map(|(v, e)| v * e).sum();
                        s2 += e2[b] * s3;
                    }
                    acc += e1[a] * s2;
                }
                acc * c
            })
            .collect())
    }

    fn apply_adjoint(&self, g: &[Complex64]) -> Result<Vec<Complex64>> {
        check_len("samples", g.len(), self.x.len())?;
        let n = self.grid.n;
        let half = (n / 2) as i64;
        let c = ndft_scale(&self.grid);
        let mut out = vec![Complex64::new(0.0, 0.0); self.grid.len()];
        out.par_chunks_mut(n * n).enumerate().for_each(|(a, slab)| {
            let j1 = (a as i64 - half) as f64;
            for (x, v) in self.x.iter().zip(g) {
                let base = v * Complex64::cis(j1 * x[0]);
                let e2 = self.phases(x[1], 1.0);
                let e3 = self.phases(x[2], 1.0);
                for b in 0..n {
                    let w = base * e2[b];
                    for (o, e) in slab[b * n..(b + 1) * n].iter_mut().zip(&e3) {
                        *o += w * e;
                    }
                }
            }
            for o in slab.iter_mut() {
                *o *= c;
            }
        });
        Ok(out)
    }
}

pub fn ndft_direct(vol: &Volume<Complex64>, points: &[Vec3]) -> Result<Vec<Complex64>> {
    DirectNdft::new(vol.grid(), points).apply(vol.data())
}

pub fn ndft_adjoint_direct(samples: &KSpaceSamples, grid: GridSpec) -> Result<Volume<Complex64>> {
    let data = DirectNdft::new(grid, &samples.points).apply_adjoint(&samples.values)?;
    Volume::from_vec(grid, data)
}

pub fn nufft_forward(vol: &Volume<Complex64>, points: &[Vec3], eps: f64) -> Result<Vec<Complex64>> {
    Nufft::new(vol.grid(), points, eps)?.apply(vol.data())
}

pub fn nufft_adjoint(samples: &KSpaceSamples, grid: GridSpec, eps: f64) -> Result<Volume<Complex64>> {
    let data = Nufft::new(grid, &samples.points, eps)?.apply_adjoint(&samples.values)?;
    Volume::from_vec(grid, data)
}
