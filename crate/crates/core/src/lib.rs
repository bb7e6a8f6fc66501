//! Diffraction tomography of rotating objects.
//!
//! The measured far field of a weakly scattering object, rotated along a
//! trajectory `(n(t), alpha(t))`, determines its Fourier transform on a union of
//! rotated hemispheres. This crate builds that sampling geometry, synthesizes
//! and converts data, and reconstructs the scattering potential either by
//! discrete backpropagation or by a least-squares inverse of the nonuniform
//! discrete Fourier transform.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod forward;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod phantoms;
pub mod recon;
pub mod sampling;
pub mod transform;
pub mod validation;
pub mod volume;

pub use error::{Error, Result};
pub use geometry::{
    jacobian, kappa, rotate, t_map, KPoint, Sign, Trajectory, TrajectoryConfig, Vec3, WaveParameters,
};
pub use num_complex::Complex64;
pub use sampling::{build_design, build_kspace_points, GridSpec, LatticeRule, SampleDesign};
pub use transform::{FourierOperator, KSpaceSamples, ResidualHistory};
pub use volume::Volume;
