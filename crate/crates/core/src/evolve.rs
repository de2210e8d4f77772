//! First-order Godunov upwind schemes on the node grid: Hamilton-Jacobi
//! advection `φ_t + v|∇φ| = 0` and reinitialisation towards a signed
//! distance function, `φ_t + S(φ)(|∇φ| − 1) = 0`.
//!
//! At non-periodic grid boundaries the missing one-sided difference is
//! replaced by the interior one; periodic axes wrap around.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{CartesianMesh, MAX_DIM};

/// Hard cap on reinitialisation steps.
pub const REINIT_STEP_CAP: usize = 2000;

/// Nodes per parallel chunk in stencil sweeps.
const CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveParams {
    /// CFL number for advection.
    pub gamma: f64,
    /// CFL number for reinitialisation.
    pub gamma_reinit: f64,
    /// Advection steps per call to [`evolve`].
    pub max_steps: usize,
    /// Reinitialisation stops once `max |Δφ| < reinit_tol · min(delta)`.
    pub reinit_tol: f64,
    pub reinit_step_cap: usize,
}

impl EvolveParams {
    /// `γ = 0.1`, `γ_reinit = 0.5`, `max_steps = ceil(10·min(el_size)/100)`,
    /// `tol = 1e-3`.
    pub fn for_mesh(mesh: &CartesianMesh) -> Self {
        let min_el = *mesh.el_size().iter().min().unwrap_or(&1);
        EvolveParams {
            gamma: 0.1,
            gamma_reinit: 0.5,
            max_steps: (10 * min_el).div_ceil(100).max(1),
            reinit_tol: 1e-3,
            reinit_step_cap: REINIT_STEP_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.gamma_reinit > 0.0 && self.gamma_reinit <= 1.0) {
            return Err(Error::invalid(format!(
                "gamma_reinit must lie in (0, 1], got {}",
                self.gamma_reinit
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps must be at least 1"));
        }
        if !(self.reinit_tol > 0.0) {
            return Err(Error::invalid(format!(
                "reinit_tol must be positive, got {}",
                self.reinit_tol
            )));
        }
        Ok(())
    }
}

/// Grid geometry and scratch buffers for stencil sweeps.
#[derive(Debug, Clone)]
pub struct StencilWorkspace {
    dim: usize,
    counts: [usize; MAX_DIM],
    strides: [usize; MAX_DIM],
    h: [f64; MAX_DIM],
    periodic: [bool; MAX_DIM],
    min_h: f64,
    grad_plus: Vec<f64>,
    grad_minus: Vec<f64>,
}

impl StencilWorkspace {
    pub fn new(mesh: &CartesianMesh) -> Self {
        let dim = mesh.dim();
        let mut counts = [1; MAX_DIM];
        let mut strides = [0; MAX_DIM];
        let mut h = [1.0; MAX_DIM];
        let mut periodic = [false; MAX_DIM];
        let mut stride = 1;
        for i in 0..dim {
            counts[i] = mesh.nodes_per_axis()[i];
            strides[i] = stride;
            stride *= counts[i];
            h[i] = mesh.delta()[i];
            periodic[i] = mesh.is_periodic(i);
        }
        let n = mesh.n_nodes();
        StencilWorkspace {
            dim,
            counts,
            strides,
            h,
            periodic,
            min_h: mesh.min_delta(),
            grad_plus: vec![0.0; n],
            grad_minus: vec![0.0; n],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.grad_plus.len()
    }

    /// `(D⁻φ, D⁺φ)` at node `n` along `axis`.
    #[inline]
    fn diffs(&self, phi: &[f64], n: usize, axis: usize) -> (f64, f64) {
        let s = self.strides[axis];
        let m = self.counts[axis];
        let k = (n / s) % m;
        let h = self.h[axis];
        let fwd = if k + 1 < m {
            Some(n + s)
        } else if self.periodic[axis] {
            Some(n - k * s)
        } else {
            None
        };
        let bwd = if k > 0 {
            Some(n - s)
        } else if self.periodic[axis] {
            Some(n + (m - 1) * s)
        } else {
            None
        };
        let dp = fwd.map(|f| (phi[f] - phi[n]) / h);
        let dm = bwd.map(|b| (phi[n] - phi[b]) / h);
        match (dm, dp) {
            (Some(a), Some(b)) => (a, b),
            (None, Some(b)) => (b, b),
            (Some(a), None) => (a, a),
            (None, None) => (0.0, 0.0),
        }
    }

    /// Godunov norms `(∇⁺, ∇⁻)` at one node.
    #[inline]
    fn godunov(&self, phi: &[f64], n: usize) -> (f64, f64) {
        let mut gp = 0.0;
        let mut gm = 0.0;
        for axis in 0..self.dim {
            let (dm, dp) = self.diffs(phi, n, axis);
            gp += dm.max(0.0).powi(2) + dp.min(0.0).powi(2);
            gm += dm.min(0.0).powi(2) + dp.max(0.0).powi(2);
        }
        (gp.sqrt(), gm.sqrt())
    }

    /// Centred-difference gradient magnitude (one-sided at open boundaries).
    #[inline]
    fn central_norm(&self, phi: &[f64], n: usize) -> f64 {
        let mut s = 0.0;
        for axis in 0..self.dim {
            let (dm, dp) = self.diffs(phi, n, axis);
            s += (0.5 * (dm + dp)).powi(2);
        }
        s.sqrt()
    }

    /// Fill the `∇⁺` and `∇⁻` buffers for `phi`.
    pub fn upwind_norms(&mut self, phi: &[f64]) -> (&[f64], &[f64]) {
        assert_eq!(phi.len(), self.n_nodes());
        let this = &*self;
        let out: Vec<(f64, f64)> = (0..phi.len())
            .into_par_iter()
            .with_min_len(CHUNK)
            .map(|n| this.godunov(phi, n))
            .collect();
        for (n, (gp, gm)) in out.into_iter().enumerate() {
            self.grad_plus[n] = gp;
            self.grad_minus[n] = gm;
        }
        (&self.grad_plus, &self.grad_minus)
    }

    /// Centred-difference `|∇φ|` at every node.
    pub fn gradient_norms(&self, phi: &[f64]) -> Vec<f64> {
        (0..phi.len())
            .into_par_iter()
            .with_min_len(CHUNK)
            .map(|n| self.central_norm(phi, n))
            .collect()
    }
}

/// Outcome of one [`evolve`] call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveReport {
    pub steps: usize,
    pub dt: f64,
}

/// Advance `φ_t + v|∇φ| = 0` by `max_steps` explicit Euler steps with
/// `Δt = γ·min(delta)/max|v|`. A zero velocity leaves `φ` untouched.
pub fn evolve(
    ws: &mut StencilWorkspace,
    phi: &mut [f64],
    velocity: &[f64],
    gamma: f64,
    max_steps: usize,
) -> Result<EvolveReport> {
    check_len(ws, phi.len(), "level set")?;
    check_len(ws, velocity.len(), "velocity")?;
    let vmax = velocity.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !vmax.is_finite() {
        return Err(Error::NonFinite("velocity".into()));
    }
    if vmax == 0.0 {
        return Ok(EvolveReport { steps: 0, dt: 0.0 });
    }
    let dt = gamma * ws.min_h / vmax;
    for _ in 0..max_steps {
        let this = &*ws;
        let src = &*phi;
        let next: Vec<f64> = (0..src.len())
            .into_par_iter()
            .with_min_len(CHUNK)
            .map(|n| {
                let v = velocity[n];
                let (gp, gm) = this.godunov(src, n);
                src[n] - dt * (v.max(0.0) * gp + v.min(0.0) * gm)
            })
            .collect();
        phi.copy_from_slice(&next);
    }
    Ok(EvolveReport {
        steps: max_steps,
        dt,
    })
}

/// Outcome of one [`reinit`] call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReinitReport {
    pub steps: usize,
    /// False when the step cap was reached first.
    pub converged: bool,
    /// `max |Δφ|` of the last step.
    pub last_change: f64,
}

/// Drive `φ` towards the signed distance to its zero level set.
pub fn reinit(
    ws: &mut StencilWorkspace,
    phi: &mut [f64],
    gamma_reinit: f64,
    tol: f64,
    step_cap: usize,
) -> Result<ReinitReport> {
    check_len(ws, phi.len(), "level set")?;
    let h = ws.min_h;
    let dt = gamma_reinit * h;
    let eps_s = h;
    let threshold = tol * h;
    let mut last_change = f64::INFINITY;
    for step in 1..=step_cap {
        let this = &*ws;
        let src = &*phi;
        let next: Vec<f64> = (0..src.len())
            .into_par_iter()
            .with_min_len(CHUNK)
            .map(|n| {
                let p = src[n];
                if p == 0.0 {
                    return p;
                }
                // With the upwind norm in S a step never carries φ across zero.
                let (gp, gm) = this.godunov(src, n);
                let grad = if p > 0.0 { gp } else { gm };
                let s = p / (p * p + eps_s * eps_s * grad * grad).sqrt();
                if !s.is_finite() {
                    return p;
                }
                p - dt * s * (grad - 1.0)
            })
            .collect();
        let mut change = 0.0f64;
        for (n, v) in next.iter().enumerate() {
            change = change.max((v - phi[n]).abs());
        }
        phi.copy_from_slice(&next);
        if !change.is_finite() {
            return Err(Error::NonFinite("reinitialisation update".into()));
        }
        last_change = change;
        if change < threshold {
            return Ok(ReinitReport {
                steps: step,
                converged: true,
                last_change,
            });
        }
    }
    Ok(ReinitReport {
        steps: step_cap,
        converged: false,
        last_change,
    })
}

/// [`reinit`] with the tolerances of `params`.
pub fn reinit_with(
    ws: &mut StencilWorkspace,
    phi: &mut [f64],
    params: &EvolveParams,
) -> Result<ReinitReport> {
    reinit(ws, phi, params.gamma_reinit, params.reinit_tol, params.reinit_step_cap)
}

fn check_len(ws: &StencilWorkspace, len: usize, what: &str) -> Result<()> {
    if len != ws.n_nodes() {
        return Err(Error::invalid(format!(
            "{what} has {len} values, grid has {} nodes",
            ws.n_nodes()
        )));
    }
    Ok(())
}
