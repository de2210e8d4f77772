//! Q1 finite elements on Cartesian meshes.
//!
//! Weak forms are written as [`Integrand`]s: pointwise expressions of the
//! level set `φ`, its gradient, and the values/gradients of a list of fields
//! at a quadrature point. The same integrand is used for
//!
//! - bilinear forms (fields `[u, v]`, trial then test),
//! - linear forms (fields `[v]`),
//! - functionals (fields are the state solutions).
//!
//! Because integrands are generic over [`Scalar`], the assembly routines can
//! also evaluate them with dual numbers to obtain exact element-local
//! derivatives with respect to `φ` or to a field.

mod assembly;
mod basis;
mod solver;
mod sparse;

pub use assembly::{
    assemble_bilinear, assemble_field_derivative, assemble_linear, assemble_phi_derivative,
    integrate, Assembler, AssembledMatrix, DirichletBC, Domain, FeSpace, LinearTerm, Q1Context,
    SurfaceLoad,
};
pub use basis::{q1_shape, PointSet, QuadratureRule};
pub use solver::{
    pcg, solve_spd, CgOptions, DenseCholesky, SolveStats, SolverKind, SpdSolver,
};
pub use sparse::CsrMatrix;

use crate::error::{Error, Result};
use crate::mesh::{CartesianMesh, MAX_DIM};
use crate::scalar::{Dual, Scalar};

/// Nodal values of a scalar or vector field, components interleaved per node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    pub values: Vec<f64>,
    pub ncomp: usize,
}

impl NodalField {
    pub fn new(values: Vec<f64>, ncomp: usize) -> Result<Self> {
        if ncomp == 0 || values.len() % ncomp != 0 {
            return Err(Error::invalid(format!(
                "field length {} is not divisible by {ncomp} components",
                values.len()
            )));
        }
        Ok(NodalField { values, ncomp })
    }

    pub fn zeros(n_nodes: usize, ncomp: usize) -> Self {
        NodalField {
            values: vec![0.0; n_nodes * ncomp],
            ncomp,
        }
    }

    pub fn scalar(values: Vec<f64>) -> Self {
        NodalField { values, ncomp: 1 }
    }

    /// Interpolate a coordinate function (returning `ncomp` values) at the nodes.
    pub fn from_fn<F>(mesh: &CartesianMesh, ncomp: usize, f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]),
    {
        let mut values = vec![0.0; mesh.n_nodes() * ncomp];
        for n in 0..mesh.n_nodes() {
            let x = mesh.node_coords(n);
            f(&x[..mesh.dim()], &mut values[n * ncomp..(n + 1) * ncomp]);
        }
        NodalField { values, ncomp }
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len() / self.ncomp
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Value and gradient of a (up to 3-component) field at a point.
/// `grad[c][i]` is `∂u_c/∂x_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldValue<T> {
    pub val: [T; MAX_DIM],
    pub grad: [[T; MAX_DIM]; MAX_DIM],
}

impl<T: Scalar> FieldValue<T> {
    pub fn zero() -> Self {
        FieldValue {
            val: [T::zero(); MAX_DIM],
            grad: [[T::zero(); MAX_DIM]; MAX_DIM],
        }
    }

    /// `∇u·∇w` of the first component.
    pub fn grad_dot(&self, other: &Self, dim: usize) -> T {
        let mut s = T::zero();
        for i in 0..dim {
            s += self.grad[0][i] * other.grad[0][i];
        }
        s
    }

    /// Symmetric gradient `ε(u) = (∇u + ∇uᵀ)/2`.
    pub fn strain(&self, dim: usize) -> [[T; MAX_DIM]; MAX_DIM] {
        let mut e = [[T::zero(); MAX_DIM]; MAX_DIM];
        for i in 0..dim {
            for j in 0..dim {
                e[i][j] = (self.grad[i][j] + self.grad[j][i]) * 0.5;
            }
        }
        e
    }
}

impl FieldValue<f64> {
    /// Promote to dual numbers with zero tangent.
    pub fn to_dual(&self) -> FieldValue<Dual> {
        let mut out = FieldValue::<Dual>::zero();
        for c in 0..MAX_DIM {
            out.val[c] = Dual::constant(self.val[c]);
            for i in 0..MAX_DIM {
                out.grad[c][i] = Dual::constant(self.grad[c][i]);
            }
        }
        out
    }
}

/// Everything an integrand may depend on at one quadrature point.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint<'a, T> {
    pub dim: usize,
    pub x: [f64; MAX_DIM],
    /// Outward unit normal on facets, zero inside the volume.
    pub normal: [f64; MAX_DIM],
    pub phi: T,
    pub phi_grad: [T; MAX_DIM],
    pub fields: &'a [FieldValue<T>],
}

impl<T: Scalar> QuadPoint<'_, T> {
    /// `|∇φ|` with a zero tangent where the gradient vanishes.
    pub fn phi_grad_norm(&self) -> T {
        let mut s = T::zero();
        for i in 0..self.dim {
            s += self.phi_grad[i] * self.phi_grad[i];
        }
        s.sqrt()
    }

    pub fn field(&self, k: usize) -> &FieldValue<T> {
        &self.fields[k]
    }
}

/// A pointwise integrand, generic over the scalar type.
pub trait Integrand: Send + Sync {
    fn eval<T: Scalar>(&self, q: &QuadPoint<'_, T>) -> T;
}

/// Object-safe view of an [`Integrand`] at the two scalar types in use.
pub trait DynIntegrand: Send + Sync {
    fn eval_f64(&self, q: &QuadPoint<'_, f64>) -> f64;
    fn eval_dual(&self, q: &QuadPoint<'_, Dual>) -> Dual;
}

impl<I: Integrand> DynIntegrand for I {
    fn eval_f64(&self, q: &QuadPoint<'_, f64>) -> f64 {
        self.eval(q)
    }
    fn eval_dual(&self, q: &QuadPoint<'_, Dual>) -> Dual {
        self.eval(q)
    }
}
