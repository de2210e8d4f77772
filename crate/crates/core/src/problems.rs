//! Benchmark problems: 2D thermal compliance, 2D plane-strain elastic
//! compliance and 2D inverse homogenisation (bulk-modulus maximisation).
//!
//! Each builder turns a [`ProblemSpec`] into a [`Problem`]: a tagged mesh, an
//! affine state map, the objective and volume constraint with their analytic
//! shape densities, the tags on which the extended velocity vanishes, and an
//! initial level set. Material is `φ < 0`.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{
    DirichletBC, Domain, FeSpace, Integrand, NodalField, Q1Context, QuadPoint, SolverKind,
    SurfaceLoad, integrate,
};
use crate::interp::{initial_lsf, ErsatzInterpolation, DEFAULT_EPS};
use crate::mesh::{BoundaryTagSet, CartesianMesh, MAX_DIM};
use crate::scalar::Scalar;
use crate::sens::{
    AffineStateMap, DerivativeMode, Functional, FunctionalSet, LoadTerm, VelocityExtension,
};

pub const GAMMA_D: &str = "gamma_d";
pub const GAMMA_N: &str = "gamma_n";
pub const PIN: &str = "pin";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Thermal2d,
    Elastic2d,
    Homog2d,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Thermal2d => "thermal2d",
            ProblemKind::Elastic2d => "elastic2d",
            ProblemKind::Homog2d => "homog2d",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "thermal2d" => Some(ProblemKind::Thermal2d),
            "elastic2d" => Some(ProblemKind::Elastic2d),
            "homog2d" => Some(ProblemKind::Homog2d),
            _ => None,
        }
    }

    pub fn default_lengths(self) -> Vec<f64> {
        match self {
            ProblemKind::Elastic2d => vec![2.0, 1.0],
            _ => vec![1.0, 1.0],
        }
    }
}

/// Initial level-set family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialShape {
    /// `−¼ ∏ cos(ξπx_i) − a/4`.
    Cosine { xi: f64, a: f64 },
    /// `cos(2πx/L_x) + cos(2πy/L_y) + shift`.
    Lattice { shift: f64 },
}

/// Problem parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub el_size: Vec<usize>,
    pub lengths: Vec<f64>,
    pub vf: f64,
    /// Conductivity (thermal).
    pub kappa: f64,
    /// Load magnitude: heat flux or traction.
    pub g: f64,
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub prop_gamma_n: f64,
    pub prop_gamma_d: f64,
    /// Heaviside half-width; `None` means `2·max(delta)`.
    pub eta: Option<f64>,
    pub eps_ersatz: f64,
    pub derivative: DerivativeMode,
    /// `None` picks the problem's default family.
    pub initial: Option<InitialShape>,
    pub solver: SolverKind,
    /// Pinned point of the periodic cell (homogenisation).
    pub pin: Vec<f64>,
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind, el_size: &[usize], vf: f64) -> Self {
        ProblemSpec {
            kind,
            el_size: el_size.to_vec(),
            lengths: kind.default_lengths(),
            vf,
            kappa: 1.0,
            g: 1.0,
            youngs_modulus: 1.0,
            poisson_ratio: 0.3,
            prop_gamma_n: 0.2,
            prop_gamma_d: 0.2,
            eta: None,
            eps_ersatz: DEFAULT_EPS,
            derivative: DerivativeMode::Adjoint,
            initial: None,
            solver: SolverKind::default(),
            pin: vec![0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.el_size.len() != 2 || self.el_size.iter().any(|&n| n == 0) {
            errs.push(format!("el_size must be two positive integers, got {:?}", self.el_size));
        }
        if self.lengths.len() != 2 || self.lengths.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            errs.push(format!("lengths must be two positive numbers, got {:?}", self.lengths));
        }
        if !(self.vf > 0.0 && self.vf < 1.0) {
            errs.push(format!("vf must lie in (0, 1), got {}", self.vf));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            errs.push(format!("kappa must be positive, got {}", self.kappa));
        }
        if !self.g.is_finite() {
            errs.push(format!("g must be finite, got {}", self.g));
        }
        if !(self.youngs_modulus > 0.0 && self.youngs_modulus.is_finite()) {
            errs.push(format!("youngs_modulus must be positive, got {}", self.youngs_modulus));
        }
        if !(self.poisson_ratio > -1.0 && self.poisson_ratio < 0.5) {
            errs.push(format!("poisson_ratio must lie in (-1, 0.5), got {}", self.poisson_ratio));
        }
        for (name, p) in [("prop_gamma_n", self.prop_gamma_n), ("prop_gamma_d", self.prop_gamma_d)] {
            if !(0.0..=1.0).contains(&p) {
                errs.push(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                errs.push(format!("eta must be positive, got {eta}"));
            }
        }
        if !(self.eps_ersatz > 0.0 && self.eps_ersatz < 1.0) {
            errs.push(format!("eps_ersatz must lie in (0, 1), got {}", self.eps_ersatz));
        }
        if self.pin.len() != 2 || self.pin.iter().any(|x| !x.is_finite()) {
            errs.push(format!("pin must be a finite 2D point, got {:?}", self.pin));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs.join("; ")))
        }
    }

    fn mesh(&self) -> Result<CartesianMesh> {
        let periodic = if self.kind == ProblemKind::Homog2d {
            vec![true, true]
        } else {
            vec![]
        };
        CartesianMesh::new(2, &self.el_size, &[0.0, 0.0], &self.lengths, &periodic)
            .map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    fn interp(&self, mesh: &CartesianMesh) -> Result<ErsatzInterpolation> {
        let eta = self.eta.unwrap_or(2.0 * mesh.max_delta());
        ErsatzInterpolation::new(eta, self.eps_ersatz)
    }

    fn initial_shape(&self) -> InitialShape {
        self.initial.unwrap_or(match self.kind {
            ProblemKind::Homog2d => InitialShape::Lattice { shift: 0.0 },
            _ => InitialShape::Cosine { xi: 4.0, a: 0.2 },
        })
    }
}

/// Isotropic elasticity tensor `Cε = λ tr(ε) I + 2με` (plane strain in 2D).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StiffnessTensor {
    pub dim: usize,
    pub lambda: f64,
    pub mu: f64,
}

impl StiffnessTensor {
    pub fn isotropic(dim: usize, youngs_modulus: f64, poisson_ratio: f64) -> Result<Self> {
        if !(youngs_modulus > 0.0) || !(poisson_ratio > -1.0 && poisson_ratio < 0.5) {
            return Err(Error::invalid(format!(
                "need E > 0 and -1 < nu < 0.5, got E = {youngs_modulus}, nu = {poisson_ratio}"
            )));
        }
        let (e, nu) = (youngs_modulus, poisson_ratio);
        Ok(StiffnessTensor {
            dim,
            lambda: e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)),
            mu: e / (2.0 * (1.0 + nu)),
        })
    }

    pub fn entry(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let d = |a: usize, b: usize| f64::from(u8::from(a == b));
        self.lambda * d(i, j) * d(k, l) + self.mu * (d(i, k) * d(j, l) + d(i, l) * d(j, k))
    }

    /// `Ca : b`.
    pub fn contract<T: Scalar>(&self, a: &[[T; MAX_DIM]; MAX_DIM], b: &[[T; MAX_DIM]; MAX_DIM]) -> T {
        let mut tr_a = T::zero();
        let mut tr_b = T::zero();
        let mut ab = T::zero();
        for i in 0..self.dim {
            tr_a += a[i][i];
            tr_b += b[i][i];
            for j in 0..self.dim {
                ab += a[i][j] * b[i][j];
            }
        }
        tr_a * tr_b * self.lambda + ab * (2.0 * self.mu)
    }

    /// Plane bulk modulus `λ + μ`, i.e. `(C₁₁₁₁ + C₂₂₂₂ + 2C₁₁₂₂)/4`.
    pub fn bulk_modulus_2d(&self) -> f64 {
        self.lambda + self.mu
    }
}

/// Unit macroscopic strains `ε̄^{(kl)} = ½(δ_ik δ_jl + δ_il δ_jk)` for
/// `(k, l) = (1,1), (2,2), (1,2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroStrainSet;

impl MacroStrainSet {
    pub const PAIRS: [(usize, usize); 3] = [(0, 0), (1, 1), (0, 1)];

    pub fn strain(case: usize) -> [[f64; MAX_DIM]; MAX_DIM] {
        let (k, l) = Self::PAIRS[case];
        let mut e = [[0.0; MAX_DIM]; MAX_DIM];
        for (i, row) in e.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let d = |a: usize, b: usize| f64::from(u8::from(a == b));
                *v = 0.5 * (d(i, k) * d(j, l) + d(i, l) * d(j, k));
            }
        }
        e
    }

    pub fn len(&self) -> usize {
        3
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// `cos(2πx/L_x) + cos(2πy/L_y) + shift`: periodic cosine lattice.
pub fn lattice_lsf(lengths: [f64; 2], shift: f64) -> impl Fn(&[f64]) -> f64 + Clone {
    move |x: &[f64]| (2.0 * PI * x[0] / lengths[0]).cos() + (2.0 * PI * x[1] / lengths[1]).cos() + shift
}

fn cst<T: Scalar>(m: &[[f64; MAX_DIM]; MAX_DIM]) -> [[T; MAX_DIM]; MAX_DIM] {
    let mut out = [[T::zero(); MAX_DIM]; MAX_DIM];
    for i in 0..MAX_DIM {
        for j in 0..MAX_DIM {
            out[i][j] = T::cst(m[i][j]);
        }
    }
    out
}

fn add<T: Scalar>(a: &[[T; MAX_DIM]; MAX_DIM], b: &[[T; MAX_DIM]; MAX_DIM]) -> [[T; MAX_DIM]; MAX_DIM] {
    let mut out = *a;
    for i in 0..MAX_DIM {
        for j in 0..MAX_DIM {
            out[i][j] += b[i][j];
        }
    }
    out
}

/// `I(φ) κ ∇u·∇v`.
struct Conduction {
    interp: ErsatzInterpolation,
    kappa: f64,
}

impl Integrand for Conduction {
    fn eval<T: Scalar>(&self, q: &QuadPoint<'_, T>) -> T {
        self.interp.ersatz(q.phi) * self.kappa * q.fields[0].grad_dot(&q.fields[1], q.dim)
    }
}

/// `I(φ) κ |∇u|²`.
struct ThermalCompliance {
    interp: ErsatzInterpolation,
    kappa: f64,
}

impl Integrand for ThermalCompliance {
    fn eval<T: Scalar>(&self, q: &QuadPoint<'_, T>) -> T {
        self.interp.ersatz(q.phi) * self.kappa * q.fields[0].grad_dot(&q.fields[0], q.dim)
    }
}

/// `κ |∇u|²`.
struct ThermalShape {
    kappa: f64,
}

impl Integrand for ThermalShape {
    fn eval<T: Scalar>(&self, q: &QuadPoint<'_, T>) -> T {
        q.fields[0].grad_dot(&q.fields[0], q.dim) * self.kappa
    }
}

/// `(ρ(φ) − V_f) / Vol(D)`.
struct VolumeConstraint {
    interp: ErsatzInterpolation,
    vf: f64,
    volume: f64,
}

impl Integrand for VolumeConstraint {
    fn eval<T: Scalar>(&self, q: &QuadPoint<'_, T>) -> T {
        (self.interp.density(q.phi) - self.vf) / self.volume
    }
}

/// Constant shape density.
struct ConstantDensity(f64);

impl Integrand for ConstantDensity {
    fn eval<T: Scalar>(&self, _q: &QuadPoint<'_, T>) -> T {
        T::cst(self.0)
    }
}

/// `I(φ) Cε(u):ε(v)`.
struct Elasticity {
    interp: ErsatzInterpolation,
    c: StiffnessTensor,
}

impl Integrand for Elasticity {
    fn eval<T: Scalar>(&self, q: &QuadPoint<'_, T>) -> T {
        let eu = q.fields[0].strain(q.dim);
        let ev = q.fields[1].strain(q.dim);
        self.interp.ersatz(q.phi) * self.c.contract(&eu, &ev)
    }
}

/// `I(φ) Cε(u):ε(u)`.
struct ElasticCompliance {
    interp: ErsatzInterpolation,
    c: StiffnessTensor,
}

impl Integrand for ElasticCompliance {
    fn eval<T: Scalar>(&self, q: &QuadPoint<'_, T>) -> T {
        let eu = q.fields[0].strain(q.dim);
        self.interp.ersatz(q.phi) * self.c.contract(&eu, &eu)
    }
}

/// `Cε(u):ε(u)`.
struct ElasticShape {
    c: StiffnessTensor,
}

impl Integrand for ElasticShape {
    fn eval<T: Scalar>(&self, q: &QuadPoint<'_, T>) -> T {
        let eu = q.fields[0].strain(q.dim);
        self.c.contract(&eu, &eu)
    }
}

/// `−I(φ) Cε̄:ε(v)`.
struct MacroLoad {
    interp: ErsatzInterpolation,
    c: StiffnessTensor,
    strain: [[f64; MAX_DIM]; MAX_DIM],
}

impl Integrand for MacroLoad {
    fn eval<T: Scalar>(&self, q: &QuadPoint<'_, T>) -> T {
        let ev = q.fields[0].strain(q.dim);
        -(self.interp.ersatz(q.phi) * self.c.contract(&cst::<T>(&self.strain), &ev))
    }
}

/// `I(φ) C(ε(u_r) + ε̄_r):ε̄_s / Vol(D)`.
struct EffectiveEntry {
    interp: ErsatzInterpolation,
    c: StiffnessTensor,
    r: usize,
    s: usize,
    volume: f64,
}

impl Integrand for EffectiveEntry {
    fn eval<T: Scalar>(&self, q: &QuadPoint<'_, T>) -> T {
        let total = add(&q.fields[self.r].strain(q.dim), &cst(&MacroStrainSet::strain(self.r)));
        let es = cst::<T>(&MacroStrainSet::strain(self.s));
        self.interp.ersatz(q.phi) * self.c.contract(&total, &es) / self.volume
    }
}

/// `−κ̄ = −(C̄₁₁₁₁ + C̄₂₂₂₂ + 2C̄₁₁₂₂)/4`.
struct NegBulkModulus {
    interp: ErsatzInterpolation,
    c: StiffnessTensor,
    volume: f64,
}

impl Integrand for NegBulkModulus {
    fn eval<T: Scalar>(&self, q: &QuadPoint<'_, T>) -> T {
        let t0 = add(&q.fields[0].strain(q.dim), &cst(&MacroStrainSet::strain(0)));
        let t1 = add(&q.fields[1].strain(q.dim), &cst(&MacroStrainSet::strain(1)));
        let e0 = cst::<T>(&MacroStrainSet::strain(0));
        let e1 = cst::<T>(&MacroStrainSet::strain(1));
        let sum = self.c.contract(&t0, &e0) + self.c.contract(&t1, &e1) + self.c.contract(&t0, &e1) * 2.0;
        -(self.interp.ersatz(q.phi) * sum) / (4.0 * self.volume)
    }
}

/// `Ce:e / (4 Vol(D))` with `e = ε(u₁₁) + ε̄₁₁ + ε(u₂₂) + ε̄₂₂`.
struct BulkShape {
    c: StiffnessTensor,
    volume: f64,
}

impl Integrand for BulkShape {
    fn eval<T: Scalar>(&self, q: &QuadPoint<'_, T>) -> T {
        let t0 = add(&q.fields[0].strain(q.dim), &cst(&MacroStrainSet::strain(0)));
        let t1 = add(&q.fields[1].strain(q.dim), &cst(&MacroStrainSet::strain(1)));
        let e = add(&t0, &t1);
        self.c.contract(&e, &e) / (4.0 * self.volume)
    }
}

/// A problem ready for the optimiser.
pub struct Problem {
    pub spec: ProblemSpec,
    pub functionals: FunctionalSet,
    /// Tags on which the extended velocity is held at zero.
    pub extension_tags: Vec<String>,
    pub phi0: Vec<f64>,
    pub stiffness: Option<StiffnessTensor>,
}

impl Problem {
    pub fn context(&self) -> Arc<Q1Context> {
        self.functionals.context()
    }

    pub fn kind(&self) -> ProblemKind {
        self.spec.kind
    }

    pub fn interp(&self) -> ErsatzInterpolation {
        self.functionals.interp
    }

    pub fn extension(&self, alpha: f64, solver: SolverKind) -> Result<VelocityExtension> {
        VelocityExtension::new(self.context(), alpha, &self.extension_tags, solver)
    }

    /// Effective tensor `C̄_rs` over the macro-strain cases at `phi`.
    pub fn effective_tensor(&mut self, phi: &[f64]) -> Result<[[f64; 3]; 3]> {
        let c = self
            .stiffness
            .filter(|_| self.spec.kind == ProblemKind::Homog2d)
            .ok_or_else(|| Error::invalid("effective tensor needs a homogenisation problem"))?;
        let ctx = self.context();
        let interp = self.interp();
        let states = self.functionals.state.solve(phi)?.to_vec();
        effective_tensor(&ctx, &interp, &c, phi, &states)
    }

    /// Plane bulk modulus of the homogenised tensor.
    pub fn bulk_modulus(&mut self, phi: &[f64]) -> Result<f64> {
        let t = self.effective_tensor(phi)?;
        Ok((t[0][0] + t[1][1] + 2.0 * t[0][1]) / 4.0)
    }
}

/// `C̄_rs = ∫ I C(ε(u_r) + ε̄_r):ε̄_s / Vol(D)`.
pub fn effective_tensor(
    ctx: &Q1Context,
    interp: &ErsatzInterpolation,
    c: &StiffnessTensor,
    phi: &[f64],
    states: &[NodalField],
) -> Result<[[f64; 3]; 3]> {
    let fields: Vec<&NodalField> = states.iter().collect();
    let mut out = [[0.0; 3]; 3];
    for (r, row) in out.iter_mut().enumerate() {
        for (s, v) in row.iter_mut().enumerate() {
            let f = EffectiveEntry {
                interp: *interp,
                c: *c,
                r,
                s,
                volume: ctx.mesh().volume(),
            };
            *v = integrate(ctx, Domain::Volume, &f, phi, &fields)?;
        }
    }
    Ok(out)
}

fn require_nonempty(tags: &BoundaryTagSet, name: &str) -> Result<()> {
    match tags.get(name) {
        Some(t) if !t.is_empty() => Ok(()),
        _ => Err(Error::InvalidConfig(format!("boundary tag '{name}' matched no nodes"))),
    }
}

/// A load patch needs at least one whole facet, otherwise the load vanishes.
fn require_facets(tags: &BoundaryTagSet, name: &str) -> Result<()> {
    match tags.get(name) {
        Some(t) if !t.facets.is_empty() => Ok(()),
        _ => Err(Error::InvalidConfig(format!(
            "boundary tag '{name}' covers no whole facet; widen the patch or refine the mesh"
        ))),
    }
}

fn volume_functional(interp: ErsatzInterpolation, vf: f64, volume: f64) -> Functional {
    Functional::new("C_vol", Arc::new(VolumeConstraint { interp, vf, volume }))
        .with_shape_density(Arc::new(ConstantDensity(-1.0 / volume)))
}

fn initial_phi(spec: &ProblemSpec, mesh: &CartesianMesh) -> Vec<f64> {
    let nodes = 0..mesh.n_nodes();
    match spec.initial_shape() {
        InitialShape::Cosine { xi, a } => {
            let f = initial_lsf(xi, a);
            nodes.map(|n| f(&mesh.node_coords(n)[..2])).collect()
        }
        InitialShape::Lattice { shift } => {
            let f = lattice_lsf([spec.lengths[0], spec.lengths[1]], shift);
            nodes.map(|n| f(&mesh.node_coords(n)[..2])).collect()
        }
    }
}

/// Thermal `Γ_D`: two segments of the left edge, each `prop_D` of its height.
pub fn thermal_dirichlet_indicator(mesh: &CartesianMesh, prop_d: f64) -> impl Fn(&[f64]) -> bool + '_ {
    let tol = mesh.tol();
    let ymax = mesh.lengths()[1];
    move |x: &[f64]| {
        mesh.approx_eq(x[0], 0.0)
            && (x[1] <= prop_d * ymax + tol || x[1] >= ymax - prop_d * ymax - tol)
    }
}

/// Right-edge patch centred at mid-height, `prop_N` of the edge height.
pub fn right_patch_indicator(mesh: &CartesianMesh, prop_n: f64) -> impl Fn(&[f64]) -> bool + '_ {
    let tol = mesh.tol();
    let xmax = mesh.lengths()[0];
    let ymax = mesh.lengths()[1];
    move |x: &[f64]| {
        mesh.approx_eq(x[0], xmax) && (x[1] - ymax / 2.0).abs() <= prop_n * ymax / 2.0 + tol
    }
}

/// Thermal compliance: `κ∇u·∇v` with flux `g` on `Γ_N` and `u = 0` on `Γ_D`.
pub fn thermal_problem(spec: &ProblemSpec) -> Result<Problem> {
    spec.validate()?;
    let mesh = spec.mesh()?;
    let mut tags = BoundaryTagSet::new();
    tags.tag_boundary(&mesh, GAMMA_D, thermal_dirichlet_indicator(&mesh, spec.prop_gamma_d));
    tags.tag_boundary(&mesh, GAMMA_N, right_patch_indicator(&mesh, spec.prop_gamma_n));
    require_nonempty(&tags, GAMMA_D)?;
    require_facets(&tags, GAMMA_N)?;
    let interp = spec.interp(&mesh)?;
    let phi0 = initial_phi(spec, &mesh);
    let volume = mesh.volume();
    let ctx = Q1Context::new(mesh, tags);
    let space = FeSpace::new(ctx, 1, &[DirichletBC::zero(GAMMA_D, 1)])?;
    let load = LoadTerm::boundary(GAMMA_N, Arc::new(SurfaceLoad { g: [spec.g, 0.0, 0.0] }));
    let state = AffineStateMap::new(
        space,
        Arc::new(Conduction { interp, kappa: spec.kappa }),
        vec![vec![load]],
        spec.solver,
    )?;
    let objective = Functional::new("J", Arc::new(ThermalCompliance { interp, kappa: spec.kappa }))
        .with_shape_density(Arc::new(ThermalShape { kappa: spec.kappa }));
    Ok(Problem {
        spec: spec.clone(),
        functionals: FunctionalSet {
            state,
            objective,
            constraints: vec![volume_functional(interp, spec.vf, volume)],
            interp,
            mode: spec.derivative,
        },
        extension_tags: vec![GAMMA_N.to_string()],
        phi0,
        stiffness: None,
    })
}

/// Plane-strain cantilever: clamped left edge, traction `(0, −g)` on a
/// right-edge patch.
pub fn elastic_problem(spec: &ProblemSpec) -> Result<Problem> {
    spec.validate()?;
    let mesh = spec.mesh()?;
    let mut tags = BoundaryTagSet::new();
    let tol = mesh.tol();
    tags.tag_boundary(&mesh, GAMMA_D, |x| x[0].abs() <= tol);
    tags.tag_boundary(&mesh, GAMMA_N, right_patch_indicator(&mesh, spec.prop_gamma_n));
    require_nonempty(&tags, GAMMA_D)?;
    require_facets(&tags, GAMMA_N)?;
    let c = StiffnessTensor::isotropic(2, spec.youngs_modulus, spec.poisson_ratio)?;
    let interp = spec.interp(&mesh)?;
    let phi0 = initial_phi(spec, &mesh);
    let volume = mesh.volume();
    let ctx = Q1Context::new(mesh, tags);
    let space = FeSpace::new(ctx, 2, &[DirichletBC::zero(GAMMA_D, 2)])?;
    let load = LoadTerm::boundary(GAMMA_N, Arc::new(SurfaceLoad { g: [0.0, -spec.g, 0.0] }));
    let state = AffineStateMap::new(space, Arc::new(Elasticity { interp, c }), vec![vec![load]], spec.solver)?;
    let objective = Functional::new("J", Arc::new(ElasticCompliance { interp, c }))
        .with_shape_density(Arc::new(ElasticShape { c }));
    Ok(Problem {
        spec: spec.clone(),
        functionals: FunctionalSet {
            state,
            objective,
            constraints: vec![volume_functional(interp, spec.vf, volume)],
            interp,
            mode: spec.derivative,
        },
        extension_tags: vec![GAMMA_N.to_string()],
        phi0,
        stiffness: Some(c),
    })
}

/// Periodic unit cell with three macro-strain load cases; minimises `−κ̄`.
pub fn homogenisation_problem(spec: &ProblemSpec) -> Result<Problem> {
    spec.validate()?;
    let mesh = spec.mesh()?;
    if !mesh.periodic().iter().all(|&p| p) {
        return Err(Error::InvalidConfig("homogenisation needs a fully periodic mesh".into()));
    }
    let mut tags = BoundaryTagSet::new();
    let pin = mesh.nearest_node(&spec.pin);
    tags.tag_nodes(&mesh, PIN, |x| mesh.nearest_node(x) == pin, true);
    require_nonempty(&tags, PIN)?;
    let c = StiffnessTensor::isotropic(2, spec.youngs_modulus, spec.poisson_ratio)?;
    let interp = spec.interp(&mesh)?;
    let phi0 = initial_phi(spec, &mesh);
    let volume = mesh.volume();
    let ctx = Q1Context::new(mesh, tags);
    let space = FeSpace::new(ctx, 2, &[DirichletBC::zero(PIN, 2)])?;
    let cases = (0..3)
        .map(|k| {
            vec![LoadTerm::volume(Arc::new(MacroLoad {
                interp,
                c,
                strain: MacroStrainSet::strain(k),
            }))]
        })
        .collect();
    let state = AffineStateMap::new(space, Arc::new(Elasticity { interp, c }), cases, spec.solver)?;
    let objective = Functional::new("J", Arc::new(NegBulkModulus { interp, c, volume }))
        .with_shape_density(Arc::new(BulkShape { c, volume }));
    Ok(Problem {
        spec: spec.clone(),
        functionals: FunctionalSet {
            state,
            objective,
            constraints: vec![volume_functional(interp, spec.vf, volume)],
            interp,
            mode: spec.derivative,
        },
        extension_tags: vec![],
        phi0,
        stiffness: Some(c),
    })
}

pub fn build_problem(spec: &ProblemSpec) -> Result<Problem> {
    match spec.kind {
        ProblemKind::Thermal2d => thermal_problem(spec),
        ProblemKind::Elastic2d => elastic_problem(spec),
        ProblemKind::Homog2d => homogenisation_problem(spec),
    }
}

/// True when some node of `from` reaches some node of `to` through nodes
/// with `φ < 0`, moving along mesh edges (wrapping on periodic axes).
pub fn material_connects(mesh: &CartesianMesh, phi: &[f64], from: &[usize], to: &[usize]) -> bool {
    let mut target = vec![false; mesh.n_nodes()];
    for &n in to {
        target[n] = true;
    }
    let mut seen = vec![false; mesh.n_nodes()];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for &n in from {
        if phi[n] < 0.0 && !seen[n] {
            seen[n] = true;
            queue.push_back(n);
        }
    }
    let dim = mesh.dim();
    let per_axis = mesh.nodes_per_axis();
    while let Some(n) = queue.pop_front() {
        if target[n] {
            return true;
        }
        let idx = mesh.node_index(n);
        for axis in 0..dim {
            for forward in [false, true] {
                let mut j = idx;
                let k = idx[axis];
                let next = if forward {
                    if k + 1 < per_axis[axis] {
                        Some(k + 1)
                    } else if mesh.is_periodic(axis) {
                        Some(0)
                    } else {
                        None
                    }
                } else if k > 0 {
                    Some(k - 1)
                } else if mesh.is_periodic(axis) {
                    Some(per_axis[axis] - 1)
                } else {
                    None
                };
                let Some(k2) = next else { continue };
                j[axis] = k2;
                let m = mesh.node_id(&j[..dim]);
                if phi[m] < 0.0 && !seen[m] {
                    seen[m] = true;
                    queue.push_back(m);
                }
            }
        }
    }
    false
}
