//! Level-set topology optimisation on uniform Cartesian meshes.
//!
//! The crate is organised bottom-up:
//!
//! - [`mesh`]: structured grids, node/element numbering, boundary tags.
//! - [`fem`]: Q1 elements, quadrature, sparse assembly and SPD solvers.
//! - [`interp`]: smoothed Heaviside and ersatz material interpolation.
//! - [`evolve`]: Godunov upwind Hamilton-Jacobi evolution and reinitialisation.
//! - [`sens`]: state maps, dual-number adjoint sensitivities, analytic shape
//!   gradients and the Hilbertian velocity extension.
//! - [`opt`]: augmented Lagrangian optimiser.
//! - [`problems`]: thermal compliance, elastic compliance and inverse
//!   homogenisation benchmarks.

pub mod error;
pub mod evolve;
pub mod fem;
pub mod interp;
pub mod mesh;
pub mod opt;
pub mod problems;
pub mod scalar;
pub mod sens;

pub use error::{Error, Result};
pub use mesh::{BoundaryTagSet, CartesianMesh};
pub use scalar::{Dual, Scalar};
