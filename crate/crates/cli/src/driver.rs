//! Subcommand implementations, callable without the binary.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use topopt_core::evolve::{evolve, reinit_with, StencilWorkspace};
use topopt_core::fem::{CgOptions, SolverKind};
use topopt_core::opt::{run, IterationRecord, IterationView, Termination};
use topopt_core::problems::{build_problem, effective_tensor, ProblemKind};
use topopt_core::sens::{fd_gradient_oracle, functional_value, Functional};

use crate::config::{ConfigError, RunConfig};
use crate::history::HistoryTable;
use crate::vtk::{VtkError, VtkField, VtkFile};

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "TOPOPT_OUT_DIR";

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_MAX_ITER: i32 = 2;
pub const EXIT_STALLED: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;
pub const EXIT_SOLVER: i32 = 5;

/// Relative tolerance of `check-gradients`.
pub const GRADIENT_TOL: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot read {path}: {source}")]
    ReadConfig { path: String, source: io::Error },
    #[error(transparent)]
    Core(#[from] topopt_core::Error),
    #[error(transparent)]
    Vtk(#[from] VtkError),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::ReadConfig { .. } => EXIT_CONFIG,
            CliError::Core(topopt_core::Error::InvalidConfig(_)) => EXIT_CONFIG,
            _ => EXIT_SOLVER,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::ReadConfig {
        path: path.display().to_string(),
        source,
    })?;
    Ok(crate::config::parse_config(&text)?)
}

/// Output directory: command-line flag, then environment, then config.
pub fn resolve_out_dir(cfg: &RunConfig, flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => cfg.out_dir.clone(),
    }
}

pub fn termination_exit_code(t: Termination) -> i32 {
    match t {
        Termination::Converged => EXIT_CONVERGED,
        Termination::MaxIter => EXIT_MAX_ITER,
        Termination::Stalled => EXIT_STALLED,
    }
}

/// Outcome of [`run_optimisation`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub termination: Termination,
    pub history: HistoryTable,
    pub records: Vec<IterationRecord>,
    pub phi: Vec<f64>,
    pub phi0: Vec<f64>,
    pub history_path: PathBuf,
    pub vtk_files: Vec<PathBuf>,
}

impl RunSummary {
    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }
}

/// Run the optimiser, writing `history.txt` and VTK snapshots to `out_dir`.
pub fn run_optimisation(cfg: &RunConfig, out_dir: &Path, log: &mut dyn Write) -> Result<RunSummary, CliError> {
    let mut problem = build_problem(&cfg.problem)?;
    let ctx = problem.context();
    let mesh = ctx.mesh().clone();
    let ext = problem.extension(cfg.alpha(&mesh), cfg.solver_kind())?;
    let params = cfg.opt_params(&mesh);
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let history_path = out_dir.join("history.txt");
    let n_con = problem.functionals.constraints.len();
    let mut table = HistoryTable::new(n_con);
    let mut hist_file = BufWriter::new(File::create(&history_path).map_err(io_err(&history_path))?);
    writeln!(hist_file, "{}", table.header()).map_err(io_err(&history_path))?;

    let kind = problem.kind();
    let stiffness = problem.stiffness;
    let interp = problem.interp();
    let ws = StencilWorkspace::new(&mesh);
    let mut vtk_files = Vec::new();
    let mut records = Vec::new();
    let phi0 = problem.phi0.clone();
    let mut failure: Option<CliError> = None;

    let callback = |view: &IterationView<'_>| -> topopt_core::Result<()> {
        let r = view.record;
        let row = crate::history::HistoryRow {
            iter: r.iter,
            j: r.j,
            c: r.c.clone(),
            l: r.l,
            gamma: r.gamma,
        };
        let line = HistoryTable::format_row(&row);
        table.rows.push(row);
        records.push(r.clone());
        let mut extra = String::new();
        if kind == ProblemKind::Homog2d {
            if let Some(c) = stiffness {
                let t = effective_tensor(&ctx, &interp, &c, view.phi, view.states)?;
                let kappa = (t[0][0] + t[1][1] + 2.0 * t[0][1]) / 4.0;
                extra = format!(" kappa_bar {kappa:.6e}");
                if !tensor_is_valid(&t) {
                    let _ = writeln!(log, "warning: effective tensor at iteration {} is not symmetric positive definite: {t:?}", r.iter);
                }
            }
        }
        let cs: Vec<String> = r.c.iter().map(|c| format!("{c:+.4e}")).collect();
        let _ = writeln!(
            log,
            "iter {:4}  J {:.6e}  C [{}]  L {:.6e}  gamma {:.4}{extra}",
            r.iter,
            r.j,
            cs.join(", "),
            r.l,
            r.gamma
        );
        if failure.is_some() {
            return Ok(());
        }
        if let Err(e) = writeln!(hist_file, "{line}").and_then(|_| hist_file.flush()) {
            failure = Some(io_err(&history_path)(e));
            return Ok(());
        }
        if r.iter % cfg.iter_mod == 0 || view.is_final {
            let path = out_dir.join(format!("iter_{:05}.vtk", r.iter));
            let mut fields = vec![
                VtkField::scalars("phi", view.phi.to_vec()),
                VtkField::scalars("grad_phi_norm", ws.gradient_norms(view.phi)),
                VtkField::scalars("velocity", view.velocity.to_vec()),
            ];
            fields.extend(state_fields_from(kind, view));
            let title = format!("{} iteration {}", kind.name(), r.iter);
            match VtkFile::from_mesh(&mesh, &title, fields).and_then(|f| f.write(&path)) {
                Ok(()) => vtk_files.push(path),
                Err(e) => failure = Some(e.into()),
            }
        }
        Ok(())
    };
    let result = run(&mut problem.functionals, &ext, &phi0, &params, callback)?;
    if let Some(e) = failure {
        return Err(e);
    }
    drop(hist_file);
    let _ = writeln!(
        log,
        "{:?} after {} iterations",
        result.termination,
        result.history.len().saturating_sub(1)
    );
    Ok(RunSummary {
        termination: result.termination,
        history: table,
        records,
        phi: result.phi,
        phi0,
        history_path,
        vtk_files,
    })
}

fn state_fields_from(kind: ProblemKind, view: &IterationView<'_>) -> Vec<VtkField> {
    let names: &[&str] = match kind {
        ProblemKind::Homog2d => &["u_11", "u_22", "u_12"],
        _ => &["u"],
    };
    view.states
        .iter()
        .zip(names)
        .map(|(s, name)| {
            if s.ncomp == 1 {
                VtkField::scalars(name, s.values.clone())
            } else {
                VtkField::vectors(name, &s.values, s.ncomp)
            }
        })
        .collect()
}

/// Major symmetry to 1e-8 (relative) and positive leading minors.
pub fn tensor_is_valid(t: &[[f64; 3]; 3]) -> bool {
    let scale = t.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let sym = (0..3).all(|r| (0..3).all(|s| (t[r][s] - t[s][r]).abs() <= 1e-8 * scale));
    let m1 = t[0][0];
    let m2 = t[0][0] * t[1][1] - t[0][1] * t[1][0];
    let m3 = t[0][0] * (t[1][1] * t[2][2] - t[1][2] * t[2][1]) - t[0][1] * (t[1][0] * t[2][2] - t[1][2] * t[2][0])
        + t[0][2] * (t[1][0] * t[2][1] - t[1][1] * t[2][0]);
    sym && m1 > 0.0 && m2 > 0.0 && m3 > 0.0
}

/// One line of the gradient check report.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub functional: String,
    pub max_rel_error: f64,
    pub worst_node: usize,
    pub passed: bool,
}

/// Compare the configured derivative path with central differences at
/// random nodes of the interface band.
pub fn check_gradients(cfg: &RunConfig, log: &mut dyn Write) -> Result<Vec<GradientCheck>, CliError> {
    let mut spec = cfg.problem.clone();
    // Iterative solves must be far below the finite-difference noise floor.
    spec.solver = match spec.solver {
        SolverKind::Cg(o) => SolverKind::Cg(tight(o)),
        SolverKind::Auto { dense_limit, cg } => SolverKind::Auto {
            dense_limit,
            cg: tight(cg),
        },
        SolverKind::Direct => SolverKind::Direct,
    };
    let mut p = build_problem(&spec)?;
    let ctx = p.context();
    let mesh = ctx.mesh();
    let mut phi = p.phi0.clone();
    let mut ws = StencilWorkspace::new(mesh);
    reinit_with(&mut ws, &mut phi, &cfg.evolve_params(mesh))?;

    let eta = p.interp().eta;
    let mut nodes: Vec<usize> = (0..phi.len()).filter(|&n| phi[n].abs() < eta).collect();
    if nodes.is_empty() {
        nodes = (0..phi.len()).collect();
    }
    nodes.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.check_seed));
    nodes.truncate(cfg.check_nodes);
    if let Some(bad) = cfg.corrupt_gradient_node {
        if bad >= phi.len() {
            return Err(topopt_core::Error::InvalidConfig(format!(
                "corrupt_gradient_node {bad} is out of range ({} nodes)",
                phi.len()
            ))
            .into());
        }
        if !nodes.contains(&bad) {
            nodes[0] = bad;
        }
    }

    let ev = p.functionals.evaluate(&phi)?;
    let functionals: Vec<Functional> = std::iter::once(p.functionals.objective.clone())
        .chain(p.functionals.constraints.iter().cloned())
        .collect();
    let mut grads: Vec<Vec<f64>> = std::iter::once(ev.dj).chain(ev.dc).collect();
    if let Some(bad) = cfg.corrupt_gradient_node {
        for g in &mut grads {
            let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            g[bad] += 0.1 * scale + 1e-3;
        }
    }
    let h = cfg.check_step * phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = Vec::new();
    for (f, g) in functionals.iter().zip(&grads) {
        if !cfg.check_functionals.is_empty() && !cfg.check_functionals.contains(&f.name) {
            continue;
        }
        let fd = fd_gradient_oracle(
            |x| {
                let states = p.functionals.state.solve(x)?.to_vec();
                functional_value(&ctx, f, x, &states)
            },
            &phi,
            &nodes,
            h,
        )?;
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let (worst, err) = nodes
            .iter()
            .zip(&fd)
            .map(|(&n, d)| (n, (g[n] - d).abs() / scale))
            .fold((nodes[0], 0.0), |a, b| if b.1 > a.1 { b } else { a });
        let passed = err <= GRADIENT_TOL;
        let _ = writeln!(
            log,
            "{}: max relative error {err:.3e} at node {worst} over {} nodes  {}",
            f.name,
            nodes.len(),
            if passed { "PASS" } else { "FAIL" }
        );
        out.push(GradientCheck {
            functional: f.name.clone(),
            max_rel_error: err,
            worst_node: worst,
            passed,
        });
    }
    Ok(out)
}

fn tight(o: CgOptions) -> CgOptions {
    CgOptions {
        rel_tol: o.rel_tol.min(1e-13),
        ..o
    }
}

/// Statistics printed by [`reinit_demo`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReinitDemoReport {
    pub steps: usize,
    pub converged: bool,
    /// Mean `||∇φ| − 1|` over the band `|φ| < η`, before and after.
    pub band_mean_before: f64,
    pub band_mean_after: f64,
    /// Max of the same quantity; dominated by kinks of the distance function.
    pub band_max_before: f64,
    pub band_max_after: f64,
    pub vtk: PathBuf,
}

/// Reinitialise the initial level set, advect it one step with unit
/// velocity, and report how close `|∇φ|` is to one.
pub fn reinit_demo(cfg: &RunConfig, out_dir: &Path, log: &mut dyn Write) -> Result<ReinitDemoReport, CliError> {
    let p = build_problem(&cfg.problem)?;
    let ctx = p.context();
    let mesh = ctx.mesh();
    let ev = cfg.evolve_params(mesh);
    let eta = p.interp().eta;
    let mut ws = StencilWorkspace::new(mesh);
    let band_error = |ws: &StencilWorkspace, phi: &[f64]| {
        let g = ws.gradient_norms(phi);
        let errs: Vec<f64> = (0..phi.len())
            .filter(|&n| phi[n].abs() < eta)
            .map(|n| (g[n] - 1.0).abs())
            .collect();
        let mean = errs.iter().sum::<f64>() / errs.len().max(1) as f64;
        (mean, errs.iter().copied().fold(0.0f64, f64::max))
    };
    let phi0 = p.phi0.clone();
    let before = band_error(&ws, &phi0);
    let mut phi = phi0.clone();
    let rep = reinit_with(&mut ws, &mut phi, &ev)?;
    let after = band_error(&ws, &phi);
    let _ = writeln!(
        log,
        "reinit: {} steps, converged {}, band ||grad phi| - 1| mean {:.4e} -> {:.4e}, max {:.4e} -> {:.4e}",
        rep.steps, rep.converged, before.0, after.0, before.1, after.1
    );
    let mut moved = phi.clone();
    let v = vec![1.0; phi.len()];
    let er = evolve(&mut ws, &mut moved, &v, ev.gamma, ev.max_steps)?;
    let shift = phi.iter().zip(&moved).map(|(a, b)| (b - a).abs()).fold(0.0f64, f64::max);
    let _ = writeln!(
        log,
        "evolve: {} steps of dt {:.4e}, max |phi change| {shift:.4e}",
        er.steps, er.dt
    );
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let path = out_dir.join("reinit_demo.vtk");
    let grad = ws.gradient_norms(&phi);
    VtkFile::from_mesh(
        mesh,
        "reinit demo",
        vec![
            VtkField::scalars("phi0", phi0),
            VtkField::scalars("phi", phi),
            VtkField::scalars("grad_phi_norm", grad),
            VtkField::scalars("phi_advected", moved),
        ],
    )?
    .write(&path)?;
    Ok(ReinitDemoReport {
        steps: rep.steps,
        converged: rep.converged,
        band_mean_before: before.0,
        band_mean_after: after.0,
        band_max_before: before.1,
        band_max_after: after.1,
        vtk: path,
    })
}
