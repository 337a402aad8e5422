//! Meshless quasi-conformal geometry on point clouds.
//!
//! The crate is organised bottom-up:
//!
//! * [`pointcloud`]: storage, exact neighborhood queries, density statistics, local covariance.
//! * [`mls`]: moving least squares fits with a quadratic basis, diffuse and standard derivatives.
//! * [`beltrami2d`]: Beltrami coefficients of planar point-cloud maps and the distortion
//!   statistics they predict.
//! * [`surface`]: Beltrami coefficients of maps into 3D, conformality grades and Beltrami
//!   representations of surface maps.
//! * [`solvers`]: recovery of a map from a prescribed Beltrami coefficient.
//! * [`parameterization`]: harmonic parameterization of point-cloud surfaces.
//! * [`harness`]: builtin instances, convergence experiments, file formats.

pub mod beltrami2d;
pub mod error;
pub mod harness;
pub mod mls;
pub mod parameterization;
pub mod pointcloud;
pub mod solvers;
pub mod sparse;
pub mod surface;

pub use error::{Error, ErrorClass, Result};
pub use num_complex::Complex64;
