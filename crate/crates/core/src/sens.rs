//! State solves and sensitivities.
//!
//! An [`AffineStateMap`] owns the ersatz-weighted bilinear form and one or
//! more load cases sharing it. [`Functional`]s are integrands of `φ` and the
//! state solutions; their derivatives with respect to the nodal values of `φ`
//! are available along two paths:
//!
//! - [`adjoint_gradient`]: the discrete total derivative, with the partial
//!   derivatives assembled by dual numbers and one adjoint solve per load case;
//! - [`analytic_shape_gradient`]: a relaxed shape derivative
//!   `∫_D q N_j H′_η(φ)|∇φ|`, where `q` is the functional's shape density.
//!
//! Both return the right-hand side of the extension problem, so advecting with
//! the extended field decreases the functional.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{
    assemble_field_derivative, assemble_linear, assemble_phi_derivative, integrate, Assembler,
    DirichletBC, Domain, DynIntegrand, FeSpace, Integrand, LinearTerm,
    NodalField, Q1Context, QuadPoint, SolveStats, SolverKind, SpdSolver,
};
use crate::interp::ErsatzInterpolation;
use crate::mesh::CartesianMesh;
use crate::scalar::Scalar;

/// Where a load term is integrated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoadDomain {
    Volume,
    Boundary(String),
}

/// One term of a linear form `l(v, φ)`; the integrand sees fields `[v]`.
#[derive(Clone)]
pub struct LoadTerm {
    pub domain: LoadDomain,
    pub integrand: Arc<dyn DynIntegrand>,
}

impl LoadTerm {
    pub fn volume(integrand: Arc<dyn DynIntegrand>) -> Self {
        LoadTerm {
            domain: LoadDomain::Volume,
            integrand,
        }
    }

    pub fn boundary(tag: &str, integrand: Arc<dyn DynIntegrand>) -> Self {
        LoadTerm {
            domain: LoadDomain::Boundary(tag.to_string()),
            integrand,
        }
    }

    fn as_linear(&self) -> LinearTerm<'_> {
        match &self.domain {
            LoadDomain::Volume => LinearTerm::Volume(&*self.integrand),
            LoadDomain::Boundary(tag) => LinearTerm::Boundary(tag, &*self.integrand),
        }
    }

    fn domain(&self) -> Domain<'_> {
        match &self.domain {
            LoadDomain::Volume => Domain::Volume,
            LoadDomain::Boundary(tag) => Domain::Tag(tag),
        }
    }
}

struct Solved {
    phi: Vec<f64>,
    solver: SpdSolver,
    solutions: Vec<NodalField>,
    stats: Vec<SolveStats>,
}

/// `a(u, v, φ) = l_k(v, φ)` for load cases `k = 1..m`, one shared stiffness.
pub struct AffineStateMap {
    asm: Assembler,
    bilinear: Arc<dyn DynIntegrand>,
    cases: Vec<Vec<LoadTerm>>,
    solver: SolverKind,
    solved: Option<Solved>,
    warm: Vec<Vec<f64>>,
}

impl AffineStateMap {
    pub fn new(
        space: FeSpace,
        bilinear: Arc<dyn DynIntegrand>,
        cases: Vec<Vec<LoadTerm>>,
        solver: SolverKind,
    ) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::invalid("a state map needs at least one load case"));
        }
        for term in cases.iter().flatten() {
            if let LoadDomain::Boundary(tag) = &term.domain {
                space.context().tags().require(tag)?;
            }
        }
        Ok(AffineStateMap {
            asm: Assembler::new(space),
            bilinear,
            cases,
            solver,
            solved: None,
            warm: Vec::new(),
        })
    }

    pub fn space(&self) -> &FeSpace {
        self.asm.space()
    }

    pub fn context(&self) -> &Arc<Q1Context> {
        self.asm.space().context()
    }

    pub fn n_cases(&self) -> usize {
        self.cases.len()
    }

    pub fn solver_kind(&self) -> SolverKind {
        self.solver
    }

    pub fn set_solver_kind(&mut self, kind: SolverKind) {
        self.solver = kind;
        self.solved = None;
    }

    /// Assemble the stiffness at `φ` and solve every load case. Results for
    /// an unchanged `φ` are reused.
    pub fn solve(&mut self, phi: &[f64]) -> Result<&[NodalField]> {
        if self.solved.as_ref().is_some_and(|s| s.phi == phi) {
            return Ok(&self.solved.as_ref().expect("cached state").solutions);
        }
        self.solved = None;
        let space = self.asm.space().clone();
        let k = self.asm.bilinear(&*self.bilinear, phi)?;
        let lift = k.lift.clone();
        let solver = SpdSolver::new(k.matrix, self.solver)
            .map_err(|e| e.in_context("stiffness factorisation"))?;
        let mut solutions = Vec::with_capacity(self.cases.len());
        let mut stats = Vec::with_capacity(self.cases.len());
        for (c, case) in self.cases.iter().enumerate() {
            let terms: Vec<LinearTerm<'_>> = case.iter().map(LoadTerm::as_linear).collect();
            let raw = assemble_linear(&space, &terms, phi)?;
            let b = space.constrained_rhs(&lift, &raw);
            let x0 = self.warm.get(c).map(Vec::as_slice);
            let (u, st) = solver
                .solve(&b, x0)
                .map_err(|e| e.in_context(&format!("state solve, load case {}", c + 1)))?;
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("state, load case {}", c + 1)));
            }
            solutions.push(NodalField {
                values: u,
                ncomp: space.ncomp(),
            });
            stats.push(st);
        }
        self.warm = solutions.iter().map(|s| s.values.clone()).collect();
        self.solved = Some(Solved {
            phi: phi.to_vec(),
            solver,
            solutions,
            stats,
        });
        Ok(&self.solved.as_ref().expect("cached state").solutions)
    }

    /// Solutions of the last [`solve`](Self::solve).
    pub fn solutions(&self) -> Result<&[NodalField]> {
        Ok(&self.current()?.solutions)
    }

    /// Solver statistics of the last solve, one entry per load case.
    pub fn stats(&self) -> &[SolveStats] {
        self.solved.as_ref().map_or(&[], |s| &s.stats)
    }

    fn current(&self) -> Result<&Solved> {
        self.solved
            .as_ref()
            .ok_or_else(|| Error::invalid("state map has not been solved"))
    }

    fn check_current(&self, phi: &[f64]) -> Result<&Solved> {
        let s = self.current()?;
        if s.phi != phi {
            return Err(Error::invalid("state map was solved at a different level set"));
        }
        Ok(s)
    }

    /// Solve `K λ = rhs` with homogeneous Dirichlet conditions.
    pub fn solve_adjoint(&self, rhs: &[f64]) -> Result<(Vec<f64>, SolveStats)> {
        let s = self.current()?;
        let mut b = rhs.to_vec();
        self.space().zero_fixed(&mut b);
        s.solver
            .solve(&b, None)
            .map_err(|e| e.in_context("adjoint solve"))
    }

    /// `∂/∂φ [a(u, λ, φ) − l_case(λ, φ)]` at fixed `u` and `λ`.
    pub fn residual_phi_derivative(
        &self,
        phi: &[f64],
        case: usize,
        u: &NodalField,
        lambda: &NodalField,
    ) -> Result<Vec<f64>> {
        let ctx = self.context();
        let mut d =
            assemble_phi_derivative(ctx, Domain::Volume, &*self.bilinear, phi, &[u, lambda])?;
        for term in &self.cases[case] {
            let dl = assemble_phi_derivative(ctx, term.domain(), &*term.integrand, phi, &[lambda])?;
            for (a, b) in d.iter_mut().zip(&dl) {
                *a -= b;
            }
        }
        Ok(d)
    }
}

/// A functional `F(u_1..u_m, φ) = ∫_D f`, where the integrand sees the state
/// solutions of every load case as fields.
#[derive(Clone)]
pub struct Functional {
    pub name: String,
    pub integrand: Arc<dyn DynIntegrand>,
    /// Shape density `q` of the relaxed analytic derivative `∫ q N_j H′|∇φ|`.
    pub shape_density: Option<Arc<dyn DynIntegrand>>,
}

impl Functional {
    pub fn new(name: &str, integrand: Arc<dyn DynIntegrand>) -> Self {
        Functional {
            name: name.to_string(),
            integrand,
            shape_density: None,
        }
    }

    pub fn with_shape_density(mut self, q: Arc<dyn DynIntegrand>) -> Self {
        self.shape_density = Some(q);
        self
    }
}

pub fn functional_value(
    ctx: &Q1Context,
    f: &Functional,
    phi: &[f64],
    states: &[NodalField],
) -> Result<f64> {
    let fields: Vec<&NodalField> = states.iter().collect();
    integrate(ctx, Domain::Volume, &*f.integrand, phi, &fields)
}

/// Adjoint-solve statistics accumulated by [`adjoint_gradient`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdjointStats {
    pub solves: usize,
    pub iterations: usize,
}

/// Total derivative `dF/dφ` through the state map, which must have been
/// solved at `phi`.
pub fn adjoint_gradient(
    f: &Functional,
    map: &AffineStateMap,
    phi: &[f64],
) -> Result<(Vec<f64>, AdjointStats)> {
    let solved = map.check_current(phi)?;
    let ctx = map.context();
    let states: Vec<&NodalField> = solved.solutions.iter().collect();
    let mut grad = assemble_phi_derivative(ctx, Domain::Volume, &*f.integrand, phi, &states)?;
    let mut stats = AdjointStats::default();
    for case in 0..states.len() {
        let dfdu = assemble_field_derivative(ctx, Domain::Volume, &*f.integrand, phi, &states, case)?;
        let mut rhs = dfdu;
        map.space().zero_fixed(&mut rhs);
        if rhs.iter().all(|&v| v == 0.0) {
            continue;
        }
        let (lambda, st) = map.solve_adjoint(&rhs)?;
        stats.solves += 1;
        stats.iterations += st.iterations;
        let lambda = NodalField {
            values: lambda,
            ncomp: map.space().ncomp(),
        };
        let dr = map.residual_phi_derivative(phi, case, states[case], &lambda)?;
        for (g, r) in grad.iter_mut().zip(&dr) {
            *g -= r;
        }
    }
    Ok((grad, stats))
}

/// `q · w · H′_η(φ)|∇φ|` where `w` is the last field; differentiating with
/// respect to `w` yields the band integrals `∫ q N_j H′|∇φ|`.
struct BandWeighted<'a> {
    q: &'a dyn DynIntegrand,
    interp: ErsatzInterpolation,
    n_states: usize,
}

impl BandWeighted<'_> {
    fn weight<T: Scalar>(&self, q: &QuadPoint<'_, T>) -> T {
        self.interp.heaviside_deriv(q.phi) * q.phi_grad_norm() * q.fields[self.n_states].val[0]
    }
}

impl DynIntegrand for BandWeighted<'_> {
    fn eval_f64(&self, q: &QuadPoint<'_, f64>) -> f64 {
        let inner = QuadPoint {
            fields: &q.fields[..self.n_states],
            ..*q
        };
        self.q.eval_f64(&inner) * self.weight(q)
    }

    fn eval_dual(&self, q: &QuadPoint<'_, crate::scalar::Dual>) -> crate::scalar::Dual {
        let inner = QuadPoint {
            fields: &q.fields[..self.n_states],
            ..*q
        };
        self.q.eval_dual(&inner) * self.weight(q)
    }
}

/// Relaxed analytic shape gradient `∫_D q N_j H′_η(φ)|∇φ|`.
pub fn analytic_shape_gradient(
    ctx: &Q1Context,
    f: &Functional,
    phi: &[f64],
    states: &[NodalField],
    interp: &ErsatzInterpolation,
) -> Result<Vec<f64>> {
    let q = f.shape_density.as_deref().ok_or_else(|| {
        Error::invalid(format!("functional '{}' has no analytic shape derivative", f.name))
    })?;
    let w = NodalField::zeros(ctx.mesh().n_nodes(), 1);
    let mut fields: Vec<&NodalField> = states.iter().collect();
    fields.push(&w);
    let band = BandWeighted {
        q,
        interp: *interp,
        n_states: states.len(),
    };
    assemble_field_derivative(ctx, Domain::Volume, &band, phi, &fields, states.len())
}

/// Central differences `(F(φ + h e_j) − F(φ − h e_j)) / 2h` at sampled nodes.
pub fn fd_gradient_oracle<F>(mut pipeline: F, phi: &[f64], nodes: &[usize], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let mut p = phi.to_vec();
    let mut out = Vec::with_capacity(nodes.len());
    for &j in nodes {
        if j >= p.len() {
            return Err(Error::invalid(format!("node {j} out of range")));
        }
        p[j] = phi[j] + h;
        let fp = pipeline(&p)?;
        p[j] = phi[j] - h;
        let fm = pipeline(&p)?;
        p[j] = phi[j];
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(out)
}

/// `α = 4 · max_steps · γ · max(delta)`.
pub fn alpha_rule(max_steps: usize, gamma: f64, mesh: &CartesianMesh) -> f64 {
    alpha_from(max_steps, gamma, mesh.max_delta())
}

pub fn alpha_from(max_steps: usize, gamma: f64, max_delta: f64) -> f64 {
    4.0 * max_steps as f64 * gamma * max_delta
}

/// `α² ∇u·∇v + u v`.
#[derive(Debug, Clone, Copy)]
pub struct H1Product {
    pub alpha: f64,
}

impl Integrand for H1Product {
    fn eval<T: Scalar>(&self, q: &QuadPoint<'_, T>) -> T {
        let (u, v) = (&q.fields[0], &q.fields[1]);
        u.grad_dot(v, q.dim) * (self.alpha * self.alpha) + u.val[0] * v.val[0]
    }
}

/// Hilbertian extension-regularisation: solve `M g = b` with
/// `M = ∫ α²∇u·∇v + uv` and `g = 0` on the given tags.
pub struct VelocityExtension {
    alpha: f64,
    space: FeSpace,
    solver: SpdSolver,
}

impl VelocityExtension {
    pub fn new(
        ctx: Arc<Q1Context>,
        alpha: f64,
        zero_tags: &[String],
        solver: SolverKind,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
        }
        let bcs: Vec<DirichletBC> = zero_tags.iter().map(|t| DirichletBC::zero(t, 1)).collect();
        let space = FeSpace::new(ctx, 1, &bcs)?;
        let phi = vec![0.0; space.mesh().n_nodes()];
        let m = Assembler::new(space.clone()).bilinear(&H1Product { alpha }, &phi)?;
        let solver = SpdSolver::new(m.matrix, solver)?;
        Ok(VelocityExtension {
            alpha,
            space,
            solver,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn matrix(&self) -> &crate::fem::CsrMatrix {
        self.solver.matrix()
    }

    pub fn space(&self) -> &FeSpace {
        &self.space
    }

    /// Extended, regularised velocity for the raw derivative vector `b`.
    pub fn extend(&self, b: &[f64]) -> Result<(Vec<f64>, SolveStats)> {
        let mut rhs = b.to_vec();
        self.space.zero_fixed(&mut rhs);
        self.solver
            .solve(&rhs, None)
            .map_err(|e| e.in_context("velocity extension"))
    }
}

/// Which derivative path a [`FunctionalSet`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeMode {
    /// Dual-number partial derivatives plus adjoint solves.
    Adjoint,
    /// Relaxed analytic shape derivatives.
    Analytic,
}

/// Values and nodal derivatives of the objective and constraints at one `φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub j: f64,
    pub c: Vec<f64>,
    pub dj: Vec<f64>,
    pub dc: Vec<Vec<f64>>,
    /// Linear-solver iterations spent on state solves.
    pub state_iterations: usize,
    /// Linear-solver iterations spent on adjoint solves.
    pub adjoint_iterations: usize,
}

/// Objective, constraints, and the state map they depend on.
pub struct FunctionalSet {
    pub state: AffineStateMap,
    pub objective: Functional,
    pub constraints: Vec<Functional>,
    pub interp: ErsatzInterpolation,
    pub mode: DerivativeMode,
}

impl FunctionalSet {
    pub fn context(&self) -> Arc<Q1Context> {
        self.state.context().clone()
    }

    /// Solve the state and evaluate `J` and every `C_i`.
    pub fn values(&mut self, phi: &[f64]) -> Result<(f64, Vec<f64>)> {
        let ctx = self.context();
        let states = self.state.solve(phi)?.to_vec();
        let j = functional_value(&ctx, &self.objective, phi, &states)?;
        let c = self
            .constraints
            .iter()
            .map(|f| functional_value(&ctx, f, phi, &states))
            .collect::<Result<Vec<_>>>()?;
        Ok((j, c))
    }

    /// Values and derivatives along the configured path.
    pub fn evaluate(&mut self, phi: &[f64]) -> Result<Evaluation> {
        let (j, c) = self.values(phi)?;
        let state_iterations = self.state.stats().iter().map(|s| s.iterations).sum();
        let mut adjoint_iterations = 0;
        let mut grad = |f: &Functional| -> Result<Vec<f64>> {
            match self.mode {
                DerivativeMode::Adjoint => {
                    let (g, st) = adjoint_gradient(f, &self.state, phi)?;
                    adjoint_iterations += st.iterations;
                    Ok(g)
                }
                DerivativeMode::Analytic => {
                    let states = self.state.solutions()?;
                    analytic_shape_gradient(self.state.context(), f, phi, states, &self.interp)
                }
            }
        };
        let dj = grad(&self.objective)?;
        let dc = self.constraints.iter().map(&mut grad).collect::<Result<Vec<_>>>()?;
        Ok(Evaluation {
            j,
            c,
            dj,
            dc,
            state_iterations,
            adjoint_iterations,
        })
    }

    /// State solutions of the last evaluation.
    pub fn states(&self) -> Result<&[NodalField]> {
        self.state.solutions()
    }
}
