use std::ops::ControlFlow;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::rms;
use crate::error::{Error, Result};

/// Per-iteration RMS residual `‖F x_k - b‖` and RMS solution norm `‖x_k‖`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualHistory {
    pub residual: Vec<f64>,
    pub solution_norm: Vec<f64>,
}

impl ResidualHistory {
    pub fn len(&self) -> usize {
        self.residual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residual.is_empty()
    }
}

/// Whether the unknowns are restricted to real values; the adjoint is then
/// followed by taking the real part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unknowns {
    #[default]
    Real,
    Complex,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgneOptions {
    pub max_iters: usize,
    pub unknowns: Unknowns,
}

impl Default for CgneOptions {
    fn default() -> Self {
        Self { max_iters: 20, unknowns: Unknowns::Real }
    }
}

/// What the recorder sees after iteration `k` (1-based).
pub struct IterationState<'a> {
    pub k: usize,
    pub x: &'a [Complex64],
    pub residual: f64,
    pub solution_norm: f64,
}

fn dot(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// CG on `F* F x = F* b` from `x0 = 0` (the CGLS recursion). The recorder may
/// stop the iteration early by returning `Break`.
pub fn cgne_solve<A, B>(
    forward: A,
    adjoint: B,
    data: &[Complex64],
    n_unknowns: usize,
    opts: CgneOptions,
    mut recorder: impl FnMut(&IterationState) -> ControlFlow<()>,
) -> Result<(Vec<Complex64>, ResidualHistory)>
where
    A: Fn(&[Complex64]) -> Result<Vec<Complex64>>,
    B: Fn(&[Complex64]) -> Result<Vec<Complex64>>,
{
    if opts.max_iters == 0 {
        return Err(Error::invalid("CGNE needs at least one iteration"));
    }
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("data value {i}")));
    }
    let project = |mut v: Vec<Complex64>| {
        if opts.unknowns == Unknowns::Real {
            v.iter_mut().for_each(|z| z.im = 0.0);
        }
        v
    };

    let mut x = vec![Complex64::new(0.0, 0.0); n_unknowns];
    let mut r = data.to_vec();
    let mut s = project(adjoint(&r)?);
    if s.len() != n_unknowns {
        return Err(Error::Mismatch(format!("adjoint returned {} values, expected {n_unknowns}", s.len())));
    }
    let mut p = s.clone();
    let mut gamma = dot(&s);
    let mut history = ResidualHistory::default();

    for k in 1..=opts.max_iters {
        if gamma > 0.0 {
            let q = forward(&p)?;
            let qq = dot(&q);
            let alpha = gamma / qq;
            if !alpha.is_finite() {
                return Err(Error::NonFinite(format!(
                    "CGNE step length at iteration {k} (|F p|² = {qq:e})"
                )));
            }
            x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += pi * alpha);
            r.iter_mut().zip(&q).for_each(|(ri, qi)| *ri -= qi * alpha);
            s = project(adjoint(&r)?);
            let gamma_new = dot(&s);
            let beta = gamma_new / gamma;
            p.iter_mut().zip(&s).for_each(|(pi, si)| *pi = si + *pi * beta);
            gamma = gamma_new;
        }
        let residual = rms(&r);
        let solution_norm = rms(&x);
        if !residual.is_finite() || !solution_norm.is_finite() {
            return Err(Error::NonFinite(format!("CGNE iterate {k}")));
        }
        history.residual.push(residual);
        history.solution_norm.push(solution_norm);
        if recorder(&IterationState { k, x: &x, residual, solution_norm }).is_break() {
            break;
        }
    }
    Ok((x, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::sampling::GridSpec;
    use crate::transform::{DirectNdft, FourierOperator};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn system(seed: u64) -> (DirectNdft, Vec<Complex64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = GridSpec::new(8, 2.0).unwrap();
        let band = PI / grid.spacing();
        let pts: Vec<Vec3> = (0..2000)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-band..band),
                    rng.random_range(-band..band),
                    rng.random_range(-band..band),
                )
            })
            .collect();
        let mut x = vec![Complex64::new(0.0, 0.0); grid.len()];
        for _ in 0..40 {
            let i = rng.random_range(0..grid.len());
            x[i] = Complex64::new(rng.random_range(-1.0..1.0), 0.0);
        }
        (DirectNdft::new(grid, &pts), x)
    }

    #[test]
    fn recovers_consistent_system() {
        let (op, truth) = system(9);
        let b = op.apply(&truth).unwrap();
        let opts = CgneOptions { max_iters: 50, unknowns: Unknowns::Real };
        let (x, hist) = cgne_solve(
            |v| op.apply(v),
            |v| op.apply_adjoint(v),
            &b,
            truth.len(),
            opts,
            |_| ControlFlow::Continue(()),
        )
        .unwrap();
        let err: f64 = x.iter().zip(&truth).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let nt: f64 = truth.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!(err / nt <= 1e-6, "relative error {}", err / nt);
        assert!(hist.residual.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        assert_eq!(hist.len(), 50);
    }

    #[test]
    fn zero_data_stays_zero() {
        let (op, truth) = system(1);
        let b = vec![Complex64::new(0.0, 0.0); op.num_points()];
        let mut seen = 0;
        let (x, hist) = cgne_solve(
            |v| op.apply(v),
            |v| op.apply_adjoint(v),
            &b,
            truth.len(),
            CgneOptions { max_iters: 4, unknowns: Unknowns::Complex },
            |s| {
                assert!(s.x.iter().all(|z| z.norm() == 0.0));
                seen += 1;
                ControlFlow::Continue(())
            },
        )
        .unwrap();
        assert_eq!(seen, 4);
        assert!(x.iter().all(|z| z.norm() == 0.0));
        assert!(hist.residual.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn recorder_can_stop_early() {
        let (op, truth) = system(4);
        let b = op.apply(&truth).unwrap();
        let (_, hist) = cgne_solve(
            |v| op.apply(v),
            |v| op.apply_adjoint(v),
            &b,
            truth.len(),
            CgneOptions::default(),
            |s| if s.k == 3 { ControlFlow::Break(()) } else { ControlFlow::Continue(()) },
        )
        .unwrap();
        assert_eq!(hist.len(), 3);
    }

    #[test]
    fn rejects_non_finite_data() {
        let (op, truth) = system(4);
        let mut b = vec![Complex64::new(0.0, 0.0); op.num_points()];
        b[3].re = f64::INFINITY;
        let res = cgne_solve(
            |v| op.apply(v),
            |v| op.apply_adjoint(v),
            &b,
            truth.len(),
            CgneOptions::default(),
            |_| ControlFlow::Continue(()),
        );
        assert!(matches!(res, Err(Error::NonFinite(_))));
    }
}
