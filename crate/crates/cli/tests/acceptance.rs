//! Acceptance suite. Every criterion prints one `PASS`/`FAIL` line straight
//! to stdout (bypassing the test harness capture) and then asserts.
//!
//! The end-to-end optimisation runs take several minutes in total.

use std::io::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use topopt_cli::config::{parse_config, RunConfig};
use topopt_cli::driver::{run_optimisation, RunSummary};
use topopt_core::evolve::{evolve, reinit_with, EvolveParams, StencilWorkspace};
use topopt_core::fem::{assemble_phi_derivative, Domain, Integrand, Q1Context, QuadPoint, SolverKind};
use topopt_core::interp::ErsatzInterpolation;
use topopt_core::mesh::BoundaryTagSet;
use topopt_core::opt::{
    lagrangian_gradient, lagrangian_value, CflController, CflEvent, LagrangianState, Termination,
};
use topopt_core::problems::{
    build_problem, material_connects, InitialShape, Problem, ProblemKind, ProblemSpec, GAMMA_D, GAMMA_N,
};
use topopt_core::scalar::Scalar;
use topopt_core::sens::{
    analytic_shape_gradient, fd_gradient_oracle, functional_value, DerivativeMode, Functional, VelocityExtension,
};
use topopt_core::CartesianMesh;

fn report(id: u32, title: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "[{verdict}] criterion {id:>2}: {title}: {detail}");
    let _ = out.flush();
}

fn info(id: u32, detail: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "[INFO] criterion {id:>2}: {detail}");
}

fn single_threaded<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn config(text: &str) -> RunConfig {
    parse_config(text).unwrap()
}

fn optimise(cfg: &RunConfig) -> (RunSummary, Duration) {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let summary = single_threaded(|| run_optimisation(cfg, dir.path(), &mut std::io::sink()).unwrap());
    (summary, start.elapsed())
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn unit_square(n: usize) -> CartesianMesh {
    CartesianMesh::new(2, &[n, n], &[0.0, 0.0], &[1.0, 1.0], &[]).unwrap()
}

fn reinitialised(mesh: &CartesianMesh, phi: &mut [f64]) -> topopt_core::evolve::ReinitReport {
    let mut ws = StencilWorkspace::new(mesh);
    reinit_with(&mut ws, phi, &EvolveParams::for_mesh(mesh)).unwrap()
}

/// Points where the zero contour crosses mesh edges, by linear interpolation.
fn zero_crossings(mesh: &CartesianMesh, phi: &[f64]) -> Vec<[f64; 2]> {
    let [nx, ny] = [mesh.nodes_per_axis()[0], mesh.nodes_per_axis()[1]];
    let mut pts = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let a = mesh.node_id(&[i, j]);
            let xa = mesh.node_coords(a);
            for (di, dj) in [(1, 0), (0, 1)] {
                if i + di >= nx || j + dj >= ny {
                    continue;
                }
                let b = mesh.node_id(&[i + di, j + dj]);
                if (phi[a] < 0.0) != (phi[b] < 0.0) {
                    let xb = mesh.node_coords(b);
                    let t = phi[a] / (phi[a] - phi[b]);
                    pts.push([xa[0] + t * (xb[0] - xa[0]), xa[1] + t * (xb[1] - xa[1])]);
                }
            }
        }
    }
    pts
}

fn band_nodes(p: &Problem, phi: &[f64], count: usize, seed: u64) -> Vec<usize> {
    let eta = p.interp().eta;
    let mut band: Vec<usize> = (0..phi.len()).filter(|&n| phi[n].abs() < eta).collect();
    band.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    band.truncate(count);
    band
}

/// Max relative error per functional; `step` is the central-difference step
/// relative to `max|φ|`.
fn gradient_error(kind: ProblemKind, el: &[usize], step: f64) -> Vec<(String, f64)> {
    let mut spec = ProblemSpec::new(kind, el, 0.4);
    // Wide enough that the load patch spans whole facets on coarse meshes.
    spec.prop_gamma_n = 0.5;
    let mut p = build_problem(&spec).unwrap();
    let ctx = p.context();
    let mut phi = p.phi0.clone();
    reinitialised(ctx.mesh(), &mut phi);
    let nodes = band_nodes(&p, &phi, 20, 11);
    assert_eq!(nodes.len(), 20);
    let ev = p.functionals.evaluate(&phi).unwrap();
    let h = step * inf_norm(&phi);
    let functionals: Vec<Functional> = std::iter::once(p.functionals.objective.clone())
        .chain(p.functionals.constraints.iter().cloned())
        .collect();
    let grads: Vec<Vec<f64>> = std::iter::once(ev.dj).chain(ev.dc).collect();
    functionals
        .iter()
        .zip(&grads)
        .map(|(f, g)| {
            let fd = fd_gradient_oracle(
                |x| {
                    let states = p.functionals.state.solve(x)?.to_vec();
                    functional_value(&ctx, f, x, &states)
                },
                &phi,
                &nodes,
                h,
            )
            .unwrap();
            let scale = inf_norm(&fd);
            let diff = nodes.iter().zip(&fd).fold(0.0f64, |m, (&n, d)| m.max((g[n] - d).abs()));
            // A vanishing derivative would make the comparison vacuous.
            let err = if scale > 0.0 && diff.is_finite() { diff / scale } else { f64::INFINITY };
            (f.name.clone(), err)
        })
        .collect()
}

#[test]
fn criterion_01_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    // The elastic solve leaves ~1e-11 relative roundoff in J, so its oracle
    // needs a larger step; the 1e-6 figure is printed alongside.
    for (kind, el, step) in [
        (ProblemKind::Thermal2d, [20, 20], 1e-6),
        (ProblemKind::Elastic2d, [16, 8], 1e-5),
        (ProblemKind::Homog2d, [16, 16], 1e-6),
    ] {
        for (name, err) in gradient_error(kind, &el, step) {
            worst = worst.max(err);
            parts.push(format!("{} {name} {err:.2e} (step {step:.0e})", kind.name()));
        }
    }
    for (name, err) in gradient_error(ProblemKind::Elastic2d, &[16, 8], 1e-6) {
        parts.push(format!("elastic2d {name} {err:.2e} at step 1e-6, roundoff-limited"));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-5 && secs <= 60.0;
    report(
        1,
        "adjoint gradients vs central FD (tol 1e-5, <= 60 s)",
        pass,
        &format!("max rel error {worst:.2e} in {secs:.1} s [{}]", parts.join(", ")),
    );
    assert!(pass);
}

/// `∫ (1 − H(φ)) f` for `f = 1` or `f = x₁`.
struct WeightedVolume {
    interp: ErsatzInterpolation,
    linear: bool,
}

impl WeightedVolume {
    fn weight<T: Scalar>(&self, q: &QuadPoint<'_, T>) -> T {
        T::cst(if self.linear { q.x[0] } else { 1.0 })
    }
}

impl Integrand for WeightedVolume {
    fn eval<T: Scalar>(&self, q: &QuadPoint<'_, T>) -> T {
        self.interp.density(q.phi) * self.weight(q)
    }
}

struct Weight(bool);

impl Integrand for Weight {
    fn eval<T: Scalar>(&self, q: &QuadPoint<'_, T>) -> T {
        T::cst(if self.0 { q.x[0] } else { 1.0 })
    }
}

#[test]
fn criterion_02_relaxed_and_frechet_derivatives_agree() {
    let mesh = unit_square(64);
    let mut phi: Vec<f64> = (0..mesh.n_nodes())
        .map(|n| {
            let x = mesh.node_coords(n);
            (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2) - 0.3 * 0.3
        })
        .collect();
    reinitialised(&mesh, &mut phi);
    let interp = ErsatzInterpolation::for_mesh(&mesh);
    let ctx = Q1Context::new(mesh.clone(), BoundaryTagSet::new());
    let params = EvolveParams::for_mesh(&mesh);
    let alpha = topopt_core::sens::alpha_rule(params.max_steps, params.gamma, &mesh);
    let ext = VelocityExtension::new(ctx.clone(), alpha, &[], SolverKind::Direct).unwrap();
    let band: Vec<usize> = (0..phi.len()).filter(|&n| phi[n].abs() < interp.eta).collect();
    let mut nodal = 0.0f64;
    let mut extended = 0.0f64;
    for linear in [false, true] {
        let vol = WeightedVolume { interp, linear };
        // d/dφ ∫(1 − H)f = −∫ f H′ N_j; the shape derivative along −v n is −∫_Γ f v.
        let frechet: Vec<f64> = assemble_phi_derivative(&ctx, Domain::Volume, &vol, &phi, &[])
            .unwrap()
            .into_iter()
            .map(|g| -g)
            .collect();
        let f = Functional::new("vol", Arc::new(WeightedVolume { interp, linear }))
            .with_shape_density(Arc::new(Weight(linear)));
        let relaxed = analytic_shape_gradient(&ctx, &f, &phi, &[], &interp).unwrap();
        for &n in &band {
            nodal = nodal.max((frechet[n] - relaxed[n]).abs() / relaxed[n].abs().max(1e-300));
        }
        let (ef, _) = ext.extend(&frechet).unwrap();
        let (er, _) = ext.extend(&relaxed).unwrap();
        let diff: Vec<f64> = ef.iter().zip(&er).map(|(a, b)| a - b).collect();
        extended = extended.max(inf_norm(&diff) / inf_norm(&er));
    }
    let pass = nodal <= 0.05 && extended <= 0.02;
    report(
        2,
        "relaxed analytic vs Frechet derivative on 64x64 (nodewise 5%, extended 2%)",
        pass,
        &format!("nodewise {nodal:.3e} over {} band nodes, extended {extended:.3e}", band.len()),
    );
    assert!(pass);
}

/// Max `||∇φ| − 1|` at nodes more than `2h` from the boundary of `D` and
/// from `singular`, for the Godunov norm (selected by the sign of `φ`) and
/// for central differences.
fn eikonal_errors(mesh: &CartesianMesh, phi: &[f64], singular: Option<[f64; 2]>) -> (f64, f64) {
    let mut ws = StencilWorkspace::new(mesh);
    let central = ws.gradient_norms(phi);
    let (plus, minus) = ws.upwind_norms(phi);
    let h = mesh.max_delta();
    let mut worst = (0.0f64, 0.0f64);
    for n in 0..phi.len() {
        let x = mesh.node_coords(n);
        let inside = (0..2).all(|a| x[a] > 2.0 * h + 1e-12 && x[a] < mesh.lengths()[a] - 2.0 * h - 1e-12);
        let away = singular.map_or(true, |c| (x[0] - c[0]).hypot(x[1] - c[1]) > 2.0 * h + 1e-12);
        if inside && away {
            let g = if phi[n] > 0.0 { plus[n] } else { minus[n] };
            worst.0 = worst.0.max((g - 1.0).abs());
            worst.1 = worst.1.max((central[n] - 1.0).abs());
        }
    }
    worst
}

#[test]
fn criterion_03_reinitialisation_recovers_distance() {
    let mesh = unit_square(64);
    let h = mesh.max_delta();
    let mut pass = true;
    let mut parts = Vec::new();

    let mut plane: Vec<f64> = (0..mesh.n_nodes()).map(|n| 2.0 * (mesh.node_coords(n)[0] - 0.5)).collect();
    let rep = reinitialised(&mesh, &mut plane);
    let (godunov, central) = eikonal_errors(&mesh, &plane, None);
    let shift = zero_crossings(&mesh, &plane)
        .iter()
        .map(|p| (p[0] - 0.5).abs())
        .fold(0.0, f64::max);
    pass &= rep.converged && godunov <= 0.1 && shift <= h;
    parts.push(format!(
        "plane: {} steps, grad err {godunov:.3e} (central {central:.3e}), shift {:.3}h",
        rep.steps,
        shift / h
    ));

    // Material outside (r = 0.5, φ = r² − |x − c|²) and inside (r = 0.3).
    for (r, sign) in [(0.5, -1.0), (0.3, 1.0)] {
        let mut circle: Vec<f64> = (0..mesh.n_nodes())
            .map(|n| {
                let x = mesh.node_coords(n);
                sign * ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2) - r * r)
            })
            .collect();
        let rep = reinitialised(&mesh, &mut circle);
        let (godunov, central) = eikonal_errors(&mesh, &circle, Some([0.5, 0.5]));
        let shift = zero_crossings(&mesh, &circle)
            .iter()
            .map(|p| ((p[0] - 0.5).hypot(p[1] - 0.5) - r).abs())
            .fold(0.0, f64::max);
        pass &= rep.converged && godunov <= 0.1 && shift <= h;
        parts.push(format!(
            "circle r={r}: {} steps, grad err {godunov:.3e} (central {central:.3e}), shift {:.3}h",
            rep.steps,
            shift / h
        ));
    }
    report(
        3,
        "reinitialisation of plane and circles on 64x64 (Godunov ||grad|-1| <= 0.1, contour shift <= h)",
        pass,
        &parts.join("; "),
    );
    assert!(pass);
}

#[test]
fn criterion_04_advection_moves_circle_by_elapsed_time() {
    let mesh = unit_square(128);
    let h = mesh.max_delta();
    let mut ws = StencilWorkspace::new(&mesh);
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (v, r0) in [(1.0, 0.2), (-1.0, 0.35)] {
        let mut phi: Vec<f64> = (0..mesh.n_nodes())
            .map(|n| {
                let x = mesh.node_coords(n);
                (x[0] - 0.5).hypot(x[1] - 0.5) - r0
            })
            .collect();
        let vel = vec![v; phi.len()];
        let rep = evolve(&mut ws, &mut phi, &vel, 0.1, 192).unwrap();
        let t = rep.steps as f64 * rep.dt;
        let expected = r0 + v * t;
        let err = zero_crossings(&mesh, &phi)
            .iter()
            .map(|p| ((p[0] - 0.5).hypot(p[1] - 0.5) - expected).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err);
        parts.push(format!("v={v:+}: r {r0} -> {expected:.4} (t={t:.4}), max error {:.3}h", err / h));
    }
    let pass = worst <= 2.0 * h;
    report(4, "HJ advection of a circle on 128x128 (radius within 2h)", pass, &parts.join("; "));
    assert!(pass);
}

#[test]
fn criterion_05_analytic_and_adjoint_thermal_gradients_agree() {
    let mut spec = ProblemSpec::new(ProblemKind::Thermal2d, &[50, 50], 0.4);
    spec.initial = Some(InitialShape::Cosine { xi: 2.0, a: 0.2 });
    let mut p = build_problem(&spec).unwrap();
    let ctx = p.context();
    let mut phi = p.phi0.clone();
    reinitialised(ctx.mesh(), &mut phi);
    let adj = p.functionals.evaluate(&phi).unwrap();
    p.functionals.mode = DerivativeMode::Analytic;
    let ana = p.functionals.evaluate(&phi).unwrap();
    let rel = |a: &[f64], b: &[f64]| {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        inf_norm(&d) / inf_norm(b)
    };
    let ej = rel(&ana.dj, &adj.dj);
    let ec = rel(&ana.dc[0], &adj.dc[0]);
    let pass = ej <= 0.05;
    report(
        5,
        "analytic vs adjoint thermal compliance gradient at 50x50 (5%)",
        pass,
        &format!("J {ej:.3e} (volume constraint {ec:.3e})"),
    );
    assert!(pass);
}

fn left_segments(p: &Problem) -> (Vec<usize>, Vec<usize>) {
    let ctx = p.context();
    let mesh = ctx.mesh();
    let nodes = &ctx.tags().get(GAMMA_D).unwrap().nodes;
    let mid = mesh.lengths()[1] / 2.0;
    nodes.iter().partition(|&&n| mesh.node_coords(n)[1] < mid)
}

const THERMAL: &str = "problem = thermal2d\nel_size = 100 100\nvf = 0.4\n";

#[test]
fn criterion_06_thermal_benchmark() {
    let cfg = config(THERMAL);
    let (s, time) = optimise(&cfg);
    let p = build_problem(&cfg.problem).unwrap();
    let mesh = p.context().mesh().clone();
    let last = s.last().unwrap();
    let j0 = s.records[0].j;
    let (lower, upper) = left_segments(&p);
    let source = &p.context().tags().get(GAMMA_N).unwrap().nodes.clone();
    let connected =
        material_connects(&mesh, &s.phi, source, &lower) && material_connects(&mesh, &s.phi, source, &upper);
    let converged = s.termination == Termination::Converged;
    let feasible = last.c.iter().all(|c| c.abs() < 0.01);
    let reduced = last.j < 0.5 * j0;
    let fast = time.as_secs_f64() <= 600.0;
    let pass = converged && last.iter <= 1000 && feasible && reduced && fast && connected;
    report(
        6,
        "thermal 100x100 benchmark (converged, |C| < 0.01, J < 0.5 J0, <= 10 min, connected)",
        pass,
        &format!(
            "{:?} at iteration {}, C {:?}, J {:.5e} vs 0.5 J0 {:.5e}, {:.1} s, connected {connected}",
            s.termination,
            last.iter,
            last.c,
            last.j,
            0.5 * j0,
            time.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_descent_probe_statistics() {
    let cfg = config("problem = thermal2d\nel_size = 50 50\nvf = 0.4\ndescent_probe = true\n");
    let (s, _) = optimise(&cfg);
    let probed: Vec<_> = s.records.iter().filter_map(|r| r.probe.map(|p| (p, r.l))).collect();
    let descended = probed.iter().filter(|(p, l)| *p <= l + 1e-8 * l.abs()).count();
    info(
        6,
        &format!(
            "half-step descent probe on thermal 50x50: {descended}/{} iterations descend ({:.1}%, target 90%)",
            probed.len(),
            100.0 * descended as f64 / probed.len().max(1) as f64
        ),
    );
}

#[test]
fn criterion_07_elastic_cantilever() {
    let cfg = config("problem = elastic2d\nel_size = 160 80\nvf = 0.4\n");
    let (s, time) = optimise(&cfg);
    let p = build_problem(&cfg.problem).unwrap();
    let ctx = p.context();
    let last = s.last().unwrap();
    let load = &ctx.tags().get(GAMMA_N).unwrap().nodes;
    let clamp = &ctx.tags().get(GAMMA_D).unwrap().nodes;
    let connected = material_connects(ctx.mesh(), &s.phi, load, clamp);
    let converged = s.termination == Termination::Converged;
    let feasible = last.c.iter().all(|c| c.abs() < 0.01);
    let pass = converged && feasible && connected;
    report(
        7,
        "elastic 160x80 cantilever (converged, |C| < 0.01, load connected to clamp)",
        pass,
        &format!(
            "{:?} at iteration {}, C {:?}, J {:.5e}, {:.1} s, connected {connected}",
            s.termination,
            last.iter,
            last.c,
            last.j,
            time.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_homogenisation() {
    let mut p = build_problem(&ProblemSpec::new(ProblemKind::Homog2d, &[16, 16], 0.4)).unwrap();
    let c = p.stiffness.unwrap();
    let solid = vec![-1.0; p.phi0.len()];
    let t = p.effective_tensor(&solid).unwrap();
    let exact = [
        [c.lambda + 2.0 * c.mu, c.lambda, 0.0],
        [c.lambda, c.lambda + 2.0 * c.mu, 0.0],
        [0.0, 0.0, c.mu],
    ];
    let tensor_err = (0..3)
        .flat_map(|r| (0..3).map(move |s| (r, s)))
        .map(|(r, s)| (t[r][s] - exact[r][s]).abs())
        .fold(0.0, f64::max);
    let kappa_solid = p.bulk_modulus(&solid).unwrap();
    let (e, nu) = (1.0, 0.3);
    let kappa_exact = e / (2.0 * (1.0 + nu) * (1.0 - 2.0 * nu));
    let kappa_err = (kappa_solid - kappa_exact).abs();

    let cfg = config("problem = homog2d\nel_size = 64 64\nvf = 0.4\n");
    let (s, time) = optimise(&cfg);
    let mut q = build_problem(&cfg.problem).unwrap();
    let kappa0 = q.bulk_modulus(&q.phi0.clone()).unwrap();
    let kappa_final = q.bulk_modulus(&s.phi).unwrap();
    let last = s.last().unwrap();
    let converged = s.termination == Termination::Converged;
    let feasible = last.c.iter().all(|c| c.abs() < 0.01);
    let pass = tensor_err <= 1e-10 && kappa_err <= 1e-8 && converged && feasible && kappa_final > kappa0;
    report(
        8,
        "homogenisation (solid C to 1e-10, kappa to 1e-8; 64x64 run converged, |C| < 0.01, kappa improves)",
        pass,
        &format!(
            "solid tensor err {tensor_err:.2e}, kappa err {kappa_err:.2e}; {:?} at iteration {}, C {:?}, kappa {kappa0:.5e} -> {kappa_final:.5e}, {:.1} s",
            s.termination,
            last.iter,
            last.c,
            time.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_optimiser_identities() {
    let mut ok = true;
    // L = J − Σ(λC + ½ΛC²) and dL = dJ − Σ(λ − ΛC)dC on hand values.
    let (j, c, lambda, pen) = (2.0, [0.5, -0.25], [1.0, -2.0], [4.0, 8.0]);
    let l = lagrangian_value(j, &c, &lambda, &pen);
    ok &= l == 2.0 - (0.5 + 0.5 * 4.0 * 0.25) - (0.5 + 0.5 * 8.0 * 0.0625);
    let dl = lagrangian_gradient(&[1.0, 0.0], &[vec![1.0, 2.0], vec![0.0, 4.0]], &c, &lambda, &pen);
    // λ − ΛC = [1 − 2, −2 + 2] = [−1, 0].
    ok &= dl == vec![2.0, 2.0];
    // λ ← λ − ΛC every iteration, Λ ← min(ξΛ, Λmax) every fifth.
    let mut st = LagrangianState::with_penalty(vec![1.0], 2.0, 5, 3.0);
    let mut lambdas = Vec::new();
    let mut penalties = Vec::new();
    for it in 1..=15 {
        st.update(&[0.5], it);
        lambdas.push(st.lambda[0]);
        penalties.push(st.penalty[0]);
    }
    ok &= lambdas[..5] == [-0.5, -1.0, -1.5, -2.0, -2.5];
    ok &= penalties[4] == 2.0 && penalties[9] == 3.0 && penalties[14] == 3.0;
    ok &= lambdas[5] == -2.5 - 2.0 * 0.5;
    let init = LagrangianState::initial(-4.0, &[0.5, 0.0, 10.0], 1.2, 5, 100.0);
    ok &= init.penalty == vec![1.6, 1e2, 1e-2] && init.penalty_max == vec![160.0, 1e4, 1.0];

    // Injected period-2 oscillations: γ follows γ₀·0.75ⁿ with a fresh window
    // between reductions, then stalls below γ₀/16.
    let gamma0 = 0.1;
    let mut cfl = CflController::new(gamma0, 8, 16.0);
    let mut l = Vec::new();
    let mut gammas = Vec::new();
    let mut stalled_at = None;
    for k in 0..200 {
        l.push(1.0 + if k % 2 == 0 { 0.01 } else { -0.01 });
        match cfl.check(&l) {
            CflEvent::Reduced => gammas.push(cfl.gamma),
            CflEvent::Stalled => {
                gammas.push(cfl.gamma);
                stalled_at = Some(k);
                break;
            }
            CflEvent::Unchanged => {}
        }
    }
    let seq_ok = gammas
        .iter()
        .enumerate()
        .all(|(n, g)| ((g - gamma0 * 0.75f64.powi(n as i32 + 1)) / g).abs() <= 1e-15);
    let n_expected = (1..).find(|&n| gamma0 * 0.75f64.powi(n) < gamma0 / 16.0).unwrap() as usize;
    ok &= seq_ok && gammas.len() == n_expected && stalled_at.is_some();
    report(
        9,
        "augmented Lagrangian identities and gamma reduction sequence",
        ok,
        &format!(
            "L = {l0}, dL = {dl:?}, {} reductions to gamma {:.4e}, stalled at sample {:?}",
            gammas.len(),
            gammas.last().copied().unwrap_or(gamma0),
            stalled_at,
            l0 = lagrangian_value(j, &c, &lambda, &pen)
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_10_histories_are_byte_identical() {
    let cfg = config(THERMAL);
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        single_threaded(|| run_optimisation(&cfg, dir.path(), &mut std::io::sink()).unwrap());
        std::fs::read(dir.path().join("history.txt")).unwrap()
    };
    let a = run();
    let b = run();
    let pass = a == b && !a.is_empty();
    report(
        10,
        "byte-identical single-threaded histories of the thermal benchmark",
        pass,
        &format!("{} and {} bytes, identical {}", a.len(), b.len(), a == b),
    );
    assert!(pass);
}
