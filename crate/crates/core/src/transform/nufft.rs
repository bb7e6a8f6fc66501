//! Gridding NUFFT with the exponential-of-semicircle window.
//!
//! Forward (type 2): deconvolve, zero-pad to the oversampled grid of size `m`,
//! FFT axis by axis, interpolate with the window. Adjoint (type 1): spread,
//! inverse FFT, crop, deconvolve. The forward path only keeps FFT outputs in
//! the index band the points actually touch, so large input grids whose
//! points cluster near the origin need far less than `m³` memory; the input
//! itself may be generated one `j1`-plane at a time.

use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use super::{check_len, ndft_scale, quadrature::gauss_legendre, FourierOperator};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::sampling::GridSpec;

const MAX_WIDTH: usize = 16;
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const SPREAD_BLOCK: usize = 8;

/// `psi(z) = exp(beta (sqrt(1 - (2z/w)²) - 1))` on `|z| < w/2` fine-grid cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsKernel {
    pub width: usize,
    pub beta: f64,
}

impl EsKernel {
    /// Width `ceil(log10(1/eps)) + 2`, `beta = 2.30 w`, for oversampling 2. One
    /// cell wider than the usual rule so the relative l2 error stays below `eps`.
    pub fn for_tolerance(eps: f64) -> Result<Self> {
        if !(1e-12..=1e-2).contains(&eps) {
            return Err(Error::invalid(format!("NUFFT tolerance must lie in [1e-12, 1e-2], got {eps}")));
        }
        let width = ((1.0 / eps).log10().ceil() as usize + 2).clamp(2, MAX_WIDTH);
        Ok(Self { width, beta: 2.30 * width as f64 })
    }

    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        let s = 2.0 * z / self.width as f64;
        let q = 1.0 - s * s;
        if q <= 0.0 {
            0.0
        } else {
            (self.beta * (q.sqrt() - 1.0)).exp()
        }
    }

    /// `∫ psi(z) cos(2 pi xi z) dz` for each `xi`.
    pub fn fourier(&self, xi: &[f64]) -> Vec<f64> {
        let (nodes, weights) = gauss_legendre(4 * self.width + 20);
        let half = self.width as f64 / 2.0;
        let vals: Vec<f64> = nodes.iter().map(|s| self.eval(half * s)).collect();
        xi.iter()
            .map(|x| {
                half * nodes
                    .iter()
                    .zip(&weights)
                    .zip(&vals)
                    .map(|((s, w), v)| w * v * (2.0 * PI * x * half * s).cos())
                    .sum::<f64>()
            })
            .collect()
    }

    /// Window values at the `w` fine-grid indices starting at the returned one.
    #[inline]
    fn weights(&self, u: f64, out: &mut [f64; MAX_WIDTH]) -> i64 {
        let w = self.width;
        let l0 = (u - w as f64 / 2.0).ceil() as i64;
        for (k, o) in out.iter_mut().take(w).enumerate() {
            *o = self.eval(u - (l0 + k as i64) as f64);
        }
        l0
    }
}

/// Contiguous range of fine-grid indices `lo .. lo + len` (periodic mod `m`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Band {
    lo: i64,
    len: usize,
    m: usize,
}

impl Band {
    #[inline]
    fn bin(&self, q: usize) -> usize {
        (self.lo + q as i64).rem_euclid(self.m as i64) as usize
    }

    #[inline]
    fn pos(&self, l: i64) -> usize {
        (l - self.lo).rem_euclid(self.m as i64) as usize
    }
}

fn next_smooth(mut x: usize) -> usize {
    x += x % 2;
    loop {
        let mut r = x;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return x;
        }
        x += 2;
    }
}

#[inline]
fn wrap(j: i64, m: usize) -> usize {
    j.rem_euclid(m as i64) as usize
}

/// Fast NDFT plan for a fixed grid and point set.
pub struct Nufft {
    grid: GridSpec,
    kernel: EsKernel,
    m: usize,
    u: Vec<[f64; 3]>,
    bands: [Band; 3],
    order: Vec<u32>,
    buckets: Vec<usize>,
    inv_deconv: Vec<f64>,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl std::fmt::Debug for Nufft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Nufft")
            .field("grid", &self.grid)
            .field("kernel", &self.kernel)
            .field("m", &self.m)
            .field("points", &self.u.len())
            .finish()
    }
}

impl Nufft {
    pub fn new(grid: GridSpec, points: &[Vec3], eps: f64) -> Result<Self> {
        let kernel = EsKernel::for_tolerance(eps)?;
        let n = grid.n;
        let w = kernel.width;
        let m = next_smooth((2 * n).max(2 * w));
        let h = grid.spacing();
        let to_fine = m as f64 / (2.0 * PI);
        let mut u = Vec::with_capacity(points.len());
        for (i, y) in points.iter().enumerate() {
            let x = y * h;
            let worst = x.iter().fold(0.0f64, |a, c| a.max(c.abs()));
            if !(worst <= PI) {
                return Err(Error::OutOfBand { index: i, value: worst });
            }
            u.push([x[0] * to_fine, x[1] * to_fine, x[2] * to_fine]);
        }

        let half_w = w as f64 / 2.0;
        let mut bands = [Band { lo: 0, len: m, m }; 3];
        for (axis, band) in bands.iter_mut().enumerate() {
            let (mut lo, mut hi) = (i64::MAX, i64::MIN);
            for p in &u {
                let l0 = (p[axis] - half_w).ceil() as i64;
                lo = lo.min(l0);
                hi = hi.max(l0 + w as i64 - 1);
            }
            if !u.is_empty() && ((hi - lo + 1) as usize) < m {
                *band = Band { lo, len: (hi - lo + 1) as usize, m };
            }
        }

        // Counting sort by the first fine index along axis 2 for slab-local spreading.
        let start = |p: &[f64; 3]| wrap((p[1] - half_w).ceil() as i64, m);
        let mut buckets = vec![0usize; m + 1];
        for p in &u {
            buckets[start(p) + 1] += 1;
        }
        for s in 0..m {
            buckets[s + 1] += buckets[s];
        }
        let mut fill = buckets.clone();
        let mut order = vec![0u32; u.len()];
        for (i, p) in u.iter().enumerate() {
            let s = start(p);
            order[fill[s]] = i as u32;
            fill[s] += 1;
        }

        let half = (n / 2) as i64;
        let xi: Vec<f64> = (0..n as i64).map(|a| (a - half) as f64 / m as f64).collect();
        let inv_deconv = kernel.fourier(&xi).into_iter().map(|v| 1.0 / v).collect();

        let mut planner = FftPlanner::new();
        Ok(Self {
            grid,
            kernel,
            m,
            u,
            bands,
            order,
            buckets,
            inv_deconv,
            fft_fwd: planner.plan_fft_forward(m),
            fft_inv: planner.plan_fft_inverse(m),
            scale: ndft_scale(&grid),
        })
    }

    pub fn kernel(&self) -> EsKernel {
        self.kernel
    }

    pub fn oversampled_size(&self) -> usize {
        self.m
    }

    /// Forward transform of a volume supplied plane by plane: `source(a, plane)`
    /// fills the `N × N` values at `j1 = a - N/2` (`j2` slowest).
    pub fn apply_planes(&self, source: &(dyn Fn(usize, &mut [Complex64]) + Sync)) -> Vec<Complex64> {
        let n = self.grid.n;
        let m = self.m;
        let half = (n / 2) as i64;
        let [b1, b2, b3] = self.bands;
        let plane_len = b2.len * b3.len;
        let scratch_len = self.fft_fwd.get_inplace_scratch_len();
        let inv = &self.inv_deconv;

        let mut t = vec![ZERO; n * plane_len];
        t.par_chunks_mut(plane_len).enumerate().for_each_init(
            || (vec![ZERO; n * n], vec![ZERO; n * b3.len], vec![ZERO; m], vec![ZERO; scratch_len]),
            |(plane, mid, row, scratch), (a, out)| {
                source(a, plane);
                for b in 0..n {
                    let d = inv[a] * inv[b];
                    row.fill(ZERO);
                    for c in 0..n {
                        row[wrap(c as i64 - half, m)] = plane[b * n + c] * (d * inv[c]);
                    }
                    self.fft_fwd.process_with_scratch(row, scratch);
                    for q in 0..b3.len {
                        mid[b * b3.len + q] = row[b3.bin(q)];
                    }
                }
                for q3 in 0..b3.len {
                    row.fill(ZERO);
                    for b in 0..n {
                        row[wrap(b as i64 - half, m)] = mid[b * b3.len + q3];
                    }
                    self.fft_fwd.process_with_scratch(row, scratch);
                    for q2 in 0..b2.len {
                        out[q2 * b3.len + q3] = row[b2.bin(q2)];
                    }
                }
            },
        );

        let mut g = vec![ZERO; b2.len * b3.len * b1.len];
        g.par_chunks_mut(b3.len * b1.len).enumerate().for_each_init(
            || (vec![ZERO; m], vec![ZERO; scratch_len]),
            |(row, scratch), (q2, out)| {
                for q3 in 0..b3.len {
                    row.fill(ZERO);
                    for a in 0..n {
                        row[wrap(a as i64 - half, m)] = t[a * plane_len + q2 * b3.len + q3];
                    }
                    self.fft_fwd.process_with_scratch(row, scratch);
                    for q1 in 0..b1.len {
                        out[q3 * b1.len + q1] = row[b1.bin(q1)];
                    }
                }
            },
        );
        drop(t);

        let w = self.kernel.width;
        let (s2, s3) = (b3.len * b1.len, b1.len);
        self.u
            .par_iter()
            .map(|u| {
                let (mut w1, mut w2, mut w3) = ([0.0; MAX_WIDTH], [0.0; MAX_WIDTH], [0.0; MAX_WIDTH]);
                let l1 = self.kernel.weights(u[0], &mut w1);
                let l2 = self.kernel.weights(u[1], &mut w2);
                let l3 = self.kernel.weights(u[2], &mut w3);
                let mut i1 = [0usize; MAX_WIDTH];
                for (k, i) in i1.iter_mut().take(w).enumerate() {
                    *i = b1.pos(l1 + k as i64);
                }
                let mut acc = ZERO;
                for k2 in 0..w {
                    let base2 = b2.pos(l2 + k2 as i64) * s2;
                    let mut acc2 = ZERO;
                    for k3 in 0..w {
                        let base = base2 + b3.pos(l3 + k3 as i64) * s3;
                        let mut acc3 = ZERO;
                        for k1 in 0..w {
                            acc3 += g[base + i1[k1]] * w1[k1];
                        }
                        acc2 += acc3 * w3[k3];
                    }
                    acc += acc2 * w2[k2];
                }
                acc * self.scale
            })
            .collect()
    }

    fn spread(&self, g: &[Complex64]) -> Vec<Mutex<Vec<Complex64>>> {
        let m = self.m;
        let w = self.kernel.width;
        let slab = m * m;
        let slabs: Vec<Mutex<Vec<Complex64>>> = (0..m).map(|_| Mutex::new(vec![ZERO; slab])).collect();
        let nblocks = m.div_ceil(SPREAD_BLOCK);
        (0..nblocks).into_par_iter().for_each_init(
            || vec![ZERO; (SPREAD_BLOCK + w - 1) * slab],
            |local, blk| {
                let s0 = blk * SPREAD_BLOCK;
                let s1 = (s0 + SPREAD_BLOCK).min(m);
                let ids = &self.order[self.buckets[s0]..self.buckets[s1]];
                if ids.is_empty() {
                    return;
                }
                let used = s1 - s0 + w - 1;
                local[..used * slab].fill(ZERO);
                let (mut w1, mut w2, mut w3) = ([0.0; MAX_WIDTH], [0.0; MAX_WIDTH], [0.0; MAX_WIDTH]);
                let mut i1 = [0usize; MAX_WIDTH];
                for &p in ids {
                    let u = &self.u[p as usize];
                    let l1 = self.kernel.weights(u[0], &mut w1);
                    let l2 = self.kernel.weights(u[1], &mut w2);
                    let l3 = self.kernel.weights(u[2], &mut w3);
                    for (k, i) in i1.iter_mut().take(w).enumerate() {
                        *i = wrap(l1 + k as i64, m);
                    }
                    let off = wrap(l2, m) - s0;
                    let v = g[p as usize];
                    for k2 in 0..w {
                        let sl = &mut local[(off + k2) * slab..(off + k2 + 1) * slab];
                        let v2 = v * w2[k2];
                        for k3 in 0..w {
                            let row = &mut sl[wrap(l3 + k3 as i64, m) * m..];
                            let v3 = v2 * w3[k3];
                            for k1 in 0..w {
                                row[i1[k1]] += v3 * w1[k1];
                            }
                        }
                    }
                }
                for k in 0..used {
                    let mut target = slabs[(s0 + k) % m].lock().expect("spreading slab lock poisoned");
                    for (t, l) in target.iter_mut().zip(&local[k * slab..(k + 1) * slab]) {
                        *t += l;
                    }
                }
            },
        );
        slabs
    }
}

impl FourierOperator for Nufft {
    fn grid(&self) -> GridSpec {
        self.grid
    }

    fn num_points(&self) -> usize {
        self.u.len()
    }

    fn apply(&self, f: &[Complex64]) -> Result<Vec<Complex64>> {
        check_len("volume", f.len(), self.grid.len())?;
        let nn = self.grid.n * self.grid.n;
        Ok(self.apply_planes(&|a, plane: &mut [Complex64]| {
            plane.copy_from_slice(&f[a * nn..(a + 1) * nn])
        }))
    }

    fn apply_adjoint(&self, g: &[Complex64]) -> Result<Vec<Complex64>> {
        check_len("samples", g.len(), self.u.len())?;
        let n = self.grid.n;
        let m = self.m;
        let half = (n / 2) as i64;
        let scratch_len = self.fft_inv.get_inplace_scratch_len();
        let slabs = self.spread(g);

        let mut tp = vec![ZERO; m * m * n];
        tp.par_chunks_mut(m * n).zip(slabs.into_par_iter()).for_each_init(
            || vec![ZERO; scratch_len],
            |scratch, (out, slab)| {
                let mut slab = slab.into_inner().expect("spreading slab lock poisoned");
                for l3 in 0..m {
                    let row = &mut slab[l3 * m..(l3 + 1) * m];
                    self.fft_inv.process_with_scratch(row, scratch);
                    for a in 0..n {
                        out[l3 * n + a] = row[wrap(a as i64 - half, m)];
                    }
                }
            },
        );

        let inv = &self.inv_deconv;
        let mut out = vec![ZERO; n * n * n];
        out.par_chunks_mut(n * n).enumerate().for_each_init(
            || (vec![ZERO; m], vec![ZERO; n * m], vec![ZERO; scratch_len]),
            |(col, tmp, scratch), (a, o)| {
                for l3 in 0..m {
                    for (l2, c) in col.iter_mut().enumerate() {
                        *c = tp[l2 * m * n + l3 * n + a];
                    }
                    self.fft_inv.process_with_scratch(col, scratch);
                    for b in 0..n {
                        tmp[b * m + l3] = col[wrap(b as i64 - half, m)];
                    }
                }
                for b in 0..n {
                    let row = &mut tmp[b * m..(b + 1) * m];
                    self.fft_inv.process_with_scratch(row, scratch);
                    let d = self.scale * inv[a] * inv[b];
                    for c in 0..n {
                        o[b * n + c] = row[wrap(c as i64 - half, m)] * (d * inv[c]);
                    }
                }
            },
        );
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::DirectNdft;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_complex(rng: &mut ChaCha8Rng, len: usize) -> Vec<Complex64> {
        (0..len).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    fn random_points(rng: &mut ChaCha8Rng, grid: &GridSpec, len: usize, frac: f64) -> Vec<Vec3> {
        let band = frac * PI / grid.spacing();
        (0..len)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-band..band),
                    rng.random_range(-band..band),
                    rng.random_range(-band..band),
                )
            })
            .collect()
    }

    fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    #[test]
    fn smooth_sizes() {
        assert_eq!(next_smooth(32), 32);
        assert_eq!(next_smooth(34), 36);
        assert_eq!(next_smooth(98), 100);
        assert_eq!(next_smooth(160), 160);
    }

    #[test]
    fn kernel_fourier_matches_trapezoid() {
        let k = EsKernel::for_tolerance(1e-6).unwrap();
        let xi = [0.0, 0.1, 0.23];
        let f = k.fourier(&xi);
        let steps = 200_000;
        let half = k.width as f64 / 2.0;
        for (x, v) in xi.iter().zip(f) {
            let dz = 2.0 * half / steps as f64;
            let t: f64 = (0..steps)
                .map(|i| {
                    let z = -half + (i as f64 + 0.5) * dz;
                    k.eval(z) * (2.0 * PI * x * z).cos() * dz
                })
                .sum();
            assert!((t - v).abs() < 1e-8 * v.abs().max(1.0), "xi={x}: {t} vs {v}");
        }
    }

    #[test]
    fn matches_direct_at_requested_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let grid = GridSpec::new(16, 5.0).unwrap();
        let pts = random_points(&mut rng, &grid, 2000, 1.0);
        let direct = DirectNdft::new(grid, &pts);
        let f = random_complex(&mut rng, grid.len());
        let g = random_complex(&mut rng, pts.len());
        let ref_fwd = direct.apply(&f).unwrap();
        let ref_adj = direct.apply_adjoint(&g).unwrap();
        for eps in [1e-4, 1e-6, 1e-8] {
            let fast = Nufft::new(grid, &pts, eps).unwrap();
            let e_fwd = rel_err(&fast.apply(&f).unwrap(), &ref_fwd);
            let e_adj = rel_err(&fast.apply_adjoint(&g).unwrap(), &ref_adj);
            assert!(e_fwd <= eps, "forward eps={eps}: {e_fwd}");
            assert!(e_adj <= eps, "adjoint eps={eps}: {e_adj}");
        }
    }

    #[test]
    fn pruned_band_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = GridSpec::new(20, 2.0).unwrap();
        let pts = random_points(&mut rng, &grid, 300, 0.2);
        let fast = Nufft::new(grid, &pts, 1e-8).unwrap();
        assert!(fast.bands.iter().all(|b| b.len < fast.m));
        let f = random_complex(&mut rng, grid.len());
        let e = rel_err(&fast.apply(&f).unwrap(), &DirectNdft::new(grid, &pts).apply(&f).unwrap());
        assert!(e < 1e-8, "{e}");
    }

    #[test]
    fn fast_adjoint_identity_and_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let grid = GridSpec::new(12, 3.0).unwrap();
        let pts = random_points(&mut rng, &grid, 500, 1.0);
        let eps = 1e-6;
        let op = Nufft::new(grid, &pts, eps).unwrap();
        let x = random_complex(&mut rng, grid.len());
        let y = random_complex(&mut rng, pts.len());
        let fx = op.apply(&x).unwrap();
        let fy = op.apply_adjoint(&y).unwrap();
        let lhs: Complex64 = fx.iter().zip(&y).map(|(a, b)| a * b.conj()).sum();
        let rhs: Complex64 = x.iter().zip(&fy).map(|(a, b)| a * b.conj()).sum();
        let nx = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let ny = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!((lhs - rhs).norm() <= 10.0 * eps * nx * ny * op.scale);

        let x2 = random_complex(&mut rng, grid.len());
        let (a, b) = (Complex64::new(0.3, -1.2), Complex64::new(2.0, 0.5));
        let comb: Vec<Complex64> = x.iter().zip(&x2).map(|(u, v)| a * u + b * v).collect();
        let lin = op.apply(&comb).unwrap();
        let fx2 = op.apply(&x2).unwrap();
        let expect: Vec<Complex64> = fx.iter().zip(&fx2).map(|(u, v)| a * u + b * v).collect();
        assert!(rel_err(&lin, &expect) < 1e-13);
    }

    #[test]
    fn rejects_points_outside_band() {
        let grid = GridSpec::new(8, 1.0).unwrap();
        let band = PI / grid.spacing();
        let pts = [Vec3::zeros(), Vec3::new(0.0, 1.01 * band, 0.0)];
        assert!(matches!(Nufft::new(grid, &pts, 1e-6), Err(Error::OutOfBand { index: 1, .. })));
        assert!(Nufft::new(grid, &pts[..1], 1e-13).is_err());
    }
}
