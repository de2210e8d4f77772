//! Level sets, the smoothed Heaviside function and ersatz material
//! interpolation.
//!
//! The material domain is `Ω = {φ < 0}`. Domain integrals `∫_Ω f` are relaxed
//! to `∫_D f (1 − H_η(φ))`, and the state operator is weighted with the
//! ersatz coefficient `I(φ) = (1 − H_η(φ)) + ε H_η(φ)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fem::{integrate, Domain, Integrand, Q1Context, QuadPoint};
use crate::mesh::CartesianMesh;
use crate::scalar::Scalar;

/// Default ersatz stiffness floor.
pub const DEFAULT_EPS: f64 = 1e-3;

/// Nodal values of a level-set function.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSet {
    values: Vec<f64>,
}

impl LevelSet {
    pub fn new(mesh: &CartesianMesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.n_nodes() {
            return Err(Error::invalid(format!(
                "level set has {} values, mesh has {} nodes",
                values.len(),
                mesh.n_nodes()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("level set value at node {i}")));
        }
        Ok(LevelSet { values })
    }

    /// Sample a coordinate function at the nodes.
    pub fn from_fn<F: Fn(&[f64]) -> f64>(mesh: &CartesianMesh, f: F) -> Self {
        let values = (0..mesh.n_nodes())
            .map(|n| f(&mesh.node_coords(n)[..mesh.dim()]))
            .collect();
        LevelSet { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Smoothed Heaviside `H_η`.
pub fn heaviside<T: Scalar>(phi: T, eta: f64) -> T {
    let p = phi.re();
    if p < -eta {
        T::zero()
    } else if p > eta {
        T::cst(1.0)
    } else {
        phi / (2.0 * eta) + 0.5 + (phi * (PI / eta)).sin() / (2.0 * PI)
    }
}

/// `H′_η`, supported on `|φ| ≤ η`.
pub fn heaviside_deriv<T: Scalar>(phi: T, eta: f64) -> T {
    let p = phi.re();
    if p.abs() > eta {
        T::zero()
    } else {
        ((phi * (PI / eta)).cos() + 1.0) / (2.0 * eta)
    }
}

/// Transition half-width and ersatz floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErsatzInterpolation {
    pub eta: f64,
    pub eps: f64,
}

impl ErsatzInterpolation {
    pub fn new(eta: f64, eps: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::invalid(format!("eta must be positive, got {eta}")));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::invalid(format!("eps must lie in (0, 1), got {eps}")));
        }
        Ok(ErsatzInterpolation { eta, eps })
    }

    /// `η = 2·max(delta)` and the default ersatz floor.
    pub fn for_mesh(mesh: &CartesianMesh) -> Self {
        ErsatzInterpolation {
            eta: 2.0 * mesh.max_delta(),
            eps: DEFAULT_EPS,
        }
    }

    pub fn heaviside<T: Scalar>(&self, phi: T) -> T {
        heaviside(phi, self.eta)
    }

    pub fn heaviside_deriv<T: Scalar>(&self, phi: T) -> T {
        heaviside_deriv(phi, self.eta)
    }

    /// `I(φ) = (1 − H) + εH`.
    pub fn ersatz<T: Scalar>(&self, phi: T) -> T {
        let h = self.heaviside(phi);
        -h + 1.0 + h * self.eps
    }

    /// Material density `ρ(φ) = 1 − H(φ)`.
    pub fn density<T: Scalar>(&self, phi: T) -> T {
        -self.heaviside(phi) + 1.0
    }
}

/// `x ↦ −¼ ∏ cos(ξπx_i) − a/4`: a periodic array of holes.
pub fn initial_lsf(xi: f64, a: f64) -> impl Fn(&[f64]) -> f64 + Clone {
    move |x: &[f64]| -0.25 * x.iter().map(|&xi_| (xi * PI * xi_).cos()).product::<f64>() - a / 4.0
}

/// Integrand `ρ(φ)`.
#[derive(Debug, Clone, Copy)]
pub struct DensityIntegrand(pub ErsatzInterpolation);

impl Integrand for DensityIntegrand {
    fn eval<T: Scalar>(&self, q: &QuadPoint<'_, T>) -> T {
        self.0.density(q.phi)
    }
}

/// Relaxed `Vol(Ω) / Vol(D)`.
pub fn volume_fraction(ctx: &Q1Context, phi: &[f64], interp: &ErsatzInterpolation) -> Result<f64> {
    let v = integrate(ctx, Domain::Volume, &DensityIntegrand(*interp), phi, &[])?;
    Ok(v / ctx.mesh().volume())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::BoundaryTagSet;
    use crate::scalar::Dual;
    use proptest::prelude::*;

    const ETA: f64 = 0.3;

    #[test]
    fn heaviside_values() {
        assert_eq!(heaviside(0.0, ETA), 0.5);
        assert_eq!(heaviside(-2.0 * ETA, ETA), 0.0);
        assert_eq!(heaviside(2.0 * ETA, ETA), 1.0);
        let expect = 0.75 + 1.0 / (2.0 * PI);
        assert!((heaviside(ETA / 2.0, ETA) - expect).abs() < 1e-15);
        assert!((expect - 0.909155).abs() < 1e-6);
    }

    #[test]
    fn heaviside_is_c1_at_band_edges() {
        let d = 1e-9;
        assert!(heaviside(ETA - d, ETA) > 1.0 - 1e-12);
        assert!(heaviside(-ETA + d, ETA) < 1e-12);
        assert!(heaviside_deriv(ETA, ETA).abs() < 1e-15);
        assert!(heaviside_deriv(-ETA, ETA).abs() < 1e-15);
    }

    #[test]
    fn derivative_values() {
        assert!((heaviside_deriv(0.0, ETA) - 1.0 / ETA).abs() < 1e-14);
        let x = 0.3 * ETA;
        let h = 1e-6;
        let fd = (heaviside(x + h, ETA) - heaviside(x - h, ETA)) / (2.0 * h);
        assert!((fd - heaviside_deriv(x, ETA)).abs() < 1e-8);
        let dual = heaviside(Dual::variable(x), ETA);
        assert!((dual.eps - heaviside_deriv(x, ETA)).abs() < 1e-13);
    }

    #[test]
    fn derivative_integrates_to_one() {
        let n = 100_000;
        let h = 2.0 * ETA / n as f64;
        // Midpoint rule.
        let s: f64 = (0..n)
            .map(|i| heaviside_deriv(-ETA + (i as f64 + 0.5) * h, ETA) * h)
            .sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn heaviside_is_monotone() {
        let mut prev = -1.0;
        for i in 0..10_000 {
            let x = -2.0 * ETA + 4.0 * ETA * i as f64 / 9999.0;
            let v = heaviside(x, ETA);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn ersatz_values() {
        let it = ErsatzInterpolation::new(ETA, 1e-3).unwrap();
        assert_eq!(it.ersatz(-2.0 * ETA), 1.0);
        assert!((it.ersatz(2.0 * ETA) - 1e-3).abs() < 1e-16);
        assert!((it.ersatz(0.0) - (1.0 + 1e-3) / 2.0).abs() < 1e-15);
        assert!(ErsatzInterpolation::new(0.0, 1e-3).is_err());
        assert!(ErsatzInterpolation::new(0.1, 1.0).is_err());
    }

    #[test]
    fn initial_lsf_values() {
        let f = initial_lsf(4.0, 0.2);
        assert!((f(&[0.0, 0.0]) + 0.3).abs() < 1e-15);
        // A cosine zero leaves only the shift term.
        let g = initial_lsf(4.0, -1.0);
        assert!((g(&[0.125, 0.3]) - 0.25).abs() < 1e-15);
        let (x, y) = (0.137, 0.61);
        assert!((f(&[x, y]) - f(&[x + 0.5, y])).abs() < 1e-14);
        assert!((f(&[x, y]) - f(&[x, y + 0.5])).abs() < 1e-14);
    }

    #[test]
    fn volume_fraction_limits() {
        let mesh = CartesianMesh::unit(&[20, 20]).unwrap();
        let it = ErsatzInterpolation::for_mesh(&mesh);
        let ctx = Q1Context::new(mesh.clone(), BoundaryTagSet::new());
        let solid = vec![-10.0 * it.eta; mesh.n_nodes()];
        let void = vec![10.0 * it.eta; mesh.n_nodes()];
        let vs = volume_fraction(&ctx, &solid, &it).unwrap();
        assert!((vs - 1.0).abs() < 1e-13, "{vs:e}");
        assert!(volume_fraction(&ctx, &void, &it).unwrap().abs() < 1e-14);
        let half = LevelSet::from_fn(&mesh, |x| x[0] - 0.5);
        let vf = volume_fraction(&ctx, half.values(), &it).unwrap();
        assert!((vf - 0.5).abs() < it.eta);
    }

    #[test]
    fn level_set_rejects_non_finite() {
        let mesh = CartesianMesh::unit(&[1, 1]).unwrap();
        assert!(LevelSet::new(&mesh, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(LevelSet::new(&mesh, vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn heaviside_odd_symmetry(t in -1.0f64..1.0) {
            prop_assert!((heaviside(-t, ETA) + heaviside(t, ETA) - 1.0).abs() < 1e-14);
        }

        #[test]
        fn ersatz_identity(p in -1.0f64..1.0, eps in 1e-6f64..0.5) {
            let it = ErsatzInterpolation::new(ETA, eps).unwrap();
            let s = it.ersatz(p) + (1.0 - eps) * it.heaviside(p);
            prop_assert!((s - 1.0).abs() < 1e-14);
            prop_assert!(it.ersatz(p) >= eps - 1e-15 && it.ersatz(p) <= 1.0 + 1e-15);
            prop_assert_eq!(it.density(p), 1.0 - it.heaviside(p));
        }
    }
}
