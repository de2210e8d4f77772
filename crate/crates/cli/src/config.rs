//! `key = value` run configuration.
//!
//! One assignment per line; `#` starts a comment. Parsing never stops at the
//! first problem: every bad line, duplicate and missing required key is
//! collected into a single [`ConfigError`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use topopt_core::evolve::{EvolveParams, REINIT_STEP_CAP};
use topopt_core::fem::{CgOptions, SolverKind};
use topopt_core::opt::OptParams;
use topopt_core::problems::{InitialShape, ProblemKind, ProblemSpec};
use topopt_core::sens::{alpha_rule, DerivativeMode};
use topopt_core::CartesianMesh;

/// One problem found while parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    /// 1-based line number, absent for missing keys and cross-key checks.
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.key, self.message),
            None => write!(f, "{}: {}", self.key, self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{}", format_issues(.issues))]
pub struct ConfigError {
    pub issues: Vec<ConfigIssue>,
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    let lines: Vec<String> = issues.iter().map(ToString::to_string).collect();
    format!("{} configuration error(s):\n  {}", issues.len(), lines.join("\n  "))
}

impl ConfigError {
    /// True when some issue concerns `key`.
    pub fn mentions(&self, key: &str) -> bool {
        self.issues.iter().any(|i| i.key == key)
    }
}

/// Which linear solver backs the state and extension solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    Auto,
    Cg,
    Direct,
}

/// Everything a run needs, with defaults applied.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub gamma: f64,
    pub gamma_reinit: f64,
    /// `None` means `ceil(10·min(el_size)/100)`.
    pub max_steps: Option<usize>,
    pub reinit_tol: f64,
    /// `None` means `4·max_steps·γ·max(delta)`.
    pub alpha: Option<f64>,
    pub max_iter: usize,
    pub iter_mod: usize,
    pub linear_solver: SolverChoice,
    pub cg_tol: f64,
    pub al_xi: f64,
    pub al_update_period: usize,
    pub al_penalty_cap: f64,
    pub oscillation_window: usize,
    pub descent_probe: bool,
    pub out_dir: PathBuf,
    /// Run single-threaded unless a thread count is given explicitly.
    pub deterministic: bool,
    pub check_nodes: usize,
    pub check_seed: u64,
    /// Central-difference step of `check-gradients`, relative to `max|φ|`.
    pub check_step: f64,
    /// Functional names checked by `check-gradients`; empty means all.
    pub check_functionals: Vec<String>,
    /// Test hook: perturb the computed gradient at this node.
    pub corrupt_gradient_node: Option<usize>,
}

pub const DEFAULT_OUT_DIR: &str = "results";

const KEYS: &[&str] = &[
    "problem",
    "el_size",
    "vf",
    "lengths",
    "kappa",
    "g",
    "youngs_modulus",
    "poisson_ratio",
    "prop_gamma_n",
    "prop_gamma_d",
    "eta",
    "eps_ersatz",
    "derivative",
    "lsf",
    "pin",
    "gamma",
    "gamma_reinit",
    "max_steps",
    "reinit_tol",
    "alpha",
    "max_iter",
    "iter_mod",
    "linear_solver",
    "cg_tol",
    "al_xi",
    "al_update_period",
    "al_penalty_cap",
    "oscillation_window",
    "descent_probe",
    "out_dir",
    "deterministic",
    "check_nodes",
    "check_seed",
    "check_step",
    "check_functionals",
    "corrupt_gradient_node",
];

const REQUIRED: &[&str] = &["problem", "el_size", "vf"];

struct Entries {
    values: BTreeMap<String, (usize, String)>,
    issues: Vec<ConfigIssue>,
}

impl Entries {
    fn issue(&mut self, line: Option<usize>, key: &str, message: impl Into<String>) {
        self.issues.push(ConfigIssue {
            line,
            key: key.to_string(),
            message: message.into(),
        });
    }

    fn get<T: FromStr>(&mut self, key: &str, what: &str) -> Option<T> {
        let (line, raw) = self.values.get(key).cloned()?;
        match raw.parse::<T>() {
            Ok(v) => Some(v),
            Err(_) => {
                self.issue(Some(line), key, format!("expected {what}, got '{raw}'"));
                None
            }
        }
    }

    fn get_or<T: FromStr>(&mut self, key: &str, what: &str, default: T) -> T {
        self.get(key, what).unwrap_or(default)
    }

    fn list<T: FromStr>(&mut self, key: &str, what: &str) -> Option<Vec<T>> {
        let (line, raw) = self.values.get(key).cloned()?;
        let parsed: Result<Vec<T>, _> = raw.split_whitespace().map(str::parse::<T>).collect();
        match parsed {
            Ok(v) if !v.is_empty() => Some(v),
            _ => {
                self.issue(Some(line), key, format!("expected a list of {what}, got '{raw}'"));
                None
            }
        }
    }

    fn line(&self, key: &str) -> Option<usize> {
        self.values.get(key).map(|(l, _)| *l)
    }

    /// Range check for a present key.
    fn check(&mut self, key: &str, ok: bool, message: &str) {
        if !ok {
            let line = self.line(key);
            self.issue(line, key, message.to_string());
        }
    }
}

fn split_line(raw: &str) -> Option<&str> {
    let text = raw.split('#').next().unwrap_or("").trim();
    (!text.is_empty()).then_some(text)
}

/// Parse and validate a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut e = Entries {
        values: BTreeMap::new(),
        issues: Vec::new(),
    };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let Some(text) = split_line(raw) else { continue };
        let Some((key, value)) = text.split_once('=') else {
            e.issue(Some(line), text, "expected 'key = value'");
            continue;
        };
        let key = key.trim();
        let value = value.trim();
        if !KEYS.contains(&key) {
            e.issue(Some(line), key, "unknown key");
            continue;
        }
        if value.is_empty() {
            e.issue(Some(line), key, "missing value");
            continue;
        }
        if let Some((first, _)) = e.values.get(key) {
            let first = *first;
            e.issue(Some(line), key, format!("duplicate key (first set on line {first})"));
            continue;
        }
        e.values.insert(key.to_string(), (line, value.to_string()));
    }
    for key in REQUIRED {
        if !e.values.contains_key(*key) {
            e.issue(None, key, "missing required key");
        }
    }

    let kind = match e.values.get("problem").cloned() {
        Some((line, raw)) => match ProblemKind::parse(&raw) {
            Some(k) => Some(k),
            None => {
                e.issue(
                    Some(line),
                    "problem",
                    format!("expected one of thermal2d, elastic2d, homog2d, got '{raw}'"),
                );
                None
            }
        },
        None => None,
    };
    let el_size: Option<Vec<usize>> = e.list("el_size", "positive integers");
    if let Some(el) = &el_size {
        let ok = el.len() == 2 && el.iter().all(|&n| n >= 2);
        e.check("el_size", ok, "expected two integers, each at least 2");
    }
    let vf: Option<f64> = e.get("vf", "a number");
    if let Some(vf) = vf {
        e.check("vf", vf > 0.0 && vf < 1.0, "must lie in (0, 1)");
    }
    let kind_or_default = kind.unwrap_or(ProblemKind::Thermal2d);
    let mut spec = ProblemSpec::new(kind_or_default, &el_size.clone().unwrap_or(vec![2, 2]), vf.unwrap_or(0.5));

    if let Some(l) = e.list::<f64>("lengths", "numbers") {
        let ok = l.len() == 2 && l.iter().all(|&x| x > 0.0 && x.is_finite());
        e.check("lengths", ok, "expected two positive numbers");
        spec.lengths = l;
    }
    spec.kappa = e.get_or("kappa", "a number", spec.kappa);
    e.check("kappa", spec.kappa > 0.0 && spec.kappa.is_finite(), "must be positive");
    spec.g = e.get_or("g", "a number", spec.g);
    e.check("g", spec.g.is_finite(), "must be finite");
    spec.youngs_modulus = e.get_or("youngs_modulus", "a number", spec.youngs_modulus);
    e.check("youngs_modulus", spec.youngs_modulus > 0.0 && spec.youngs_modulus.is_finite(), "must be positive");
    spec.poisson_ratio = e.get_or("poisson_ratio", "a number", spec.poisson_ratio);
    e.check("poisson_ratio", spec.poisson_ratio > -1.0 && spec.poisson_ratio < 0.5, "must lie in (-1, 0.5)");
    spec.prop_gamma_n = e.get_or("prop_gamma_n", "a number", spec.prop_gamma_n);
    e.check("prop_gamma_n", (0.0..=1.0).contains(&spec.prop_gamma_n), "must lie in [0, 1]");
    spec.prop_gamma_d = e.get_or("prop_gamma_d", "a number", spec.prop_gamma_d);
    e.check("prop_gamma_d", (0.0..=1.0).contains(&spec.prop_gamma_d), "must lie in [0, 1]");
    spec.eta = e.get("eta", "a number");
    if let Some(eta) = spec.eta {
        e.check("eta", eta > 0.0 && eta.is_finite(), "must be positive");
    }
    spec.eps_ersatz = e.get_or("eps_ersatz", "a number", spec.eps_ersatz);
    e.check("eps_ersatz", spec.eps_ersatz > 0.0 && spec.eps_ersatz < 1.0, "must lie in (0, 1)");
    if let Some((line, raw)) = e.values.get("derivative").cloned() {
        match raw.as_str() {
            "adjoint" => spec.derivative = DerivativeMode::Adjoint,
            "analytic" => spec.derivative = DerivativeMode::Analytic,
            _ => e.issue(Some(line), "derivative", format!("expected adjoint or analytic, got '{raw}'")),
        }
    }
    if let Some((line, raw)) = e.values.get("lsf").cloned() {
        match parse_lsf(&raw) {
            Some(shape) => spec.initial = Some(shape),
            None => e.issue(
                Some(line),
                "lsf",
                format!("expected 'cosine <xi> <a>' or 'lattice <shift>', got '{raw}'"),
            ),
        }
    }
    if let Some(pin) = e.list::<f64>("pin", "numbers") {
        e.check("pin", pin.len() == 2 && pin.iter().all(|x| x.is_finite()), "expected two numbers");
        spec.pin = pin;
    }

    let gamma = e.get_or("gamma", "a number", 0.1);
    e.check("gamma", gamma > 0.0 && gamma <= 1.0, "must lie in (0, 1]");
    let gamma_reinit = e.get_or("gamma_reinit", "a number", 0.5);
    e.check("gamma_reinit", gamma_reinit > 0.0 && gamma_reinit <= 1.0, "must lie in (0, 1]");
    let max_steps: Option<usize> = e.get("max_steps", "a non-negative integer");
    if let Some(m) = max_steps {
        e.check("max_steps", m >= 1, "must be at least 1");
    }
    let reinit_tol = e.get_or("reinit_tol", "a number", 1e-3f64);
    e.check("reinit_tol", reinit_tol > 0.0 && reinit_tol.is_finite(), "must be positive");
    let alpha: Option<f64> = e.get("alpha", "a number");
    if let Some(a) = alpha {
        e.check("alpha", a > 0.0 && a.is_finite(), "must be positive");
    }
    let max_iter = e.get_or("max_iter", "a non-negative integer", 1000usize);
    let iter_mod = e.get_or("iter_mod", "a non-negative integer", 10usize);
    e.check("iter_mod", iter_mod >= 1, "must be at least 1");
    let linear_solver = match e.values.get("linear_solver").cloned() {
        None => SolverChoice::Auto,
        Some((line, raw)) => match raw.as_str() {
            "auto" => SolverChoice::Auto,
            "cg" => SolverChoice::Cg,
            "direct" => SolverChoice::Direct,
            _ => {
                e.issue(Some(line), "linear_solver", format!("expected auto, cg or direct, got '{raw}'"));
                SolverChoice::Auto
            }
        },
    };
    let cg_tol = e.get_or("cg_tol", "a number", CgOptions::default().rel_tol);
    e.check("cg_tol", cg_tol > 0.0 && cg_tol < 1.0, "must lie in (0, 1)");
    let al_xi = e.get_or("al_xi", "a number", 1.2f64);
    e.check("al_xi", al_xi > 1.0 && al_xi.is_finite(), "must exceed 1");
    let al_update_period = e.get_or("al_update_period", "a non-negative integer", 5usize);
    e.check("al_update_period", al_update_period >= 1, "must be at least 1");
    let al_penalty_cap = e.get_or("al_penalty_cap", "a number", 100.0f64);
    e.check("al_penalty_cap", al_penalty_cap >= 1.0 && al_penalty_cap.is_finite(), "must be at least 1");
    let oscillation_window = e.get_or("oscillation_window", "a non-negative integer", 8usize);
    e.check("oscillation_window", oscillation_window >= 4, "must be at least 4");
    let descent_probe = e.get_or("descent_probe", "true or false", false);
    let out_dir = e.get_or("out_dir", "a path", PathBuf::from(DEFAULT_OUT_DIR));
    let deterministic = e.get_or("deterministic", "true or false", true);
    let check_nodes = e.get_or("check_nodes", "a non-negative integer", 20usize);
    e.check("check_nodes", check_nodes >= 1, "must be at least 1");
    let check_seed = e.get_or("check_seed", "a non-negative integer", 0u64);
    let check_step = e.get_or("check_step", "a number", 1e-6f64);
    e.check("check_step", check_step > 0.0 && check_step < 1.0, "must lie in (0, 1)");
    let check_functionals = e
        .values
        .get("check_functionals")
        .map(|(_, raw)| raw.split_whitespace().map(str::to_string).collect())
        .unwrap_or_default();
    let corrupt_gradient_node = e.get("corrupt_gradient_node", "a non-negative integer");

    if e.issues.is_empty() {
        if let Err(err) = spec.validate() {
            e.issue(None, "problem", err.to_string());
        }
    }
    if !e.issues.is_empty() {
        e.issues.sort_by_key(|i| (i.line.unwrap_or(usize::MAX), i.key.clone()));
        return Err(ConfigError { issues: e.issues });
    }
    let mut cfg = RunConfig {
        problem: spec,
        gamma,
        gamma_reinit,
        max_steps,
        reinit_tol,
        alpha,
        max_iter,
        iter_mod,
        linear_solver,
        cg_tol,
        al_xi,
        al_update_period,
        al_penalty_cap,
        oscillation_window,
        descent_probe,
        out_dir,
        deterministic,
        check_nodes,
        check_seed,
        check_step,
        check_functionals,
        corrupt_gradient_node,
    };
    cfg.problem.solver = cfg.solver_kind();
    Ok(cfg)
}

fn parse_lsf(raw: &str) -> Option<InitialShape> {
    let parts: Vec<&str> = raw.split_whitespace().collect();
    let num = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite());
    match parts.as_slice() {
        ["cosine", xi, a] => Some(InitialShape::Cosine {
            xi: num(xi)?,
            a: num(a)?,
        }),
        ["lattice", shift] => Some(InitialShape::Lattice { shift: num(shift)? }),
        _ => None,
    }
}

impl RunConfig {
    pub fn solver_kind(&self) -> SolverKind {
        let cg = CgOptions {
            rel_tol: self.cg_tol,
            ..CgOptions::default()
        };
        match self.linear_solver {
            SolverChoice::Auto => SolverKind::Auto {
                dense_limit: 1500,
                cg,
            },
            SolverChoice::Cg => SolverKind::Cg(cg),
            SolverChoice::Direct => SolverKind::Direct,
        }
    }

    pub fn evolve_params(&self, mesh: &CartesianMesh) -> EvolveParams {
        let defaults = EvolveParams::for_mesh(mesh);
        EvolveParams {
            gamma: self.gamma,
            gamma_reinit: self.gamma_reinit,
            max_steps: self.max_steps.unwrap_or(defaults.max_steps),
            reinit_tol: self.reinit_tol,
            reinit_step_cap: REINIT_STEP_CAP,
        }
    }

    pub fn alpha(&self, mesh: &CartesianMesh) -> f64 {
        let ev = self.evolve_params(mesh);
        self.alpha.unwrap_or_else(|| alpha_rule(ev.max_steps, ev.gamma, mesh))
    }

    pub fn opt_params(&self, mesh: &CartesianMesh) -> OptParams {
        let mut p = OptParams::new(self.evolve_params(mesh));
        p.max_iter = self.max_iter;
        p.xi = self.al_xi;
        p.update_period = self.al_update_period;
        p.penalty_cap_factor = self.al_penalty_cap;
        p.oscillation_window = self.oscillation_window;
        p.descent_probe = self.descent_probe;
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config("problem = thermal2d\nel_size = 100 100\nvf = 0.4").unwrap();
        assert_eq!(cfg.problem.kind, ProblemKind::Thermal2d);
        assert_eq!(cfg.problem.el_size, vec![100, 100]);
        assert_eq!(cfg.gamma, 0.1);
        assert_eq!(cfg.max_iter, 1000);
        assert_eq!(cfg.out_dir, PathBuf::from(DEFAULT_OUT_DIR));
        let mesh = CartesianMesh::unit(&[100, 100]).unwrap();
        assert_eq!(cfg.evolve_params(&mesh).max_steps, 10);
    }

    #[test]
    fn comments_and_blank_lines() {
        let text = "# header\n\nproblem = elastic2d # inline\n  el_size = 16 8\nvf=0.4\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.problem.lengths, vec![2.0, 1.0]);
    }

    #[test]
    fn every_bad_line_is_reported() {
        let text = "problem = thermal2d\nvf = 0.4\nvf = 0.5\ngamma = fast\nbogus = 1\nlsf = square";
        let err = parse_config(text).unwrap_err();
        assert!(err.mentions("vf") && err.mentions("gamma") && err.mentions("bogus"));
        assert!(err.mentions("el_size") && err.mentions("lsf"));
        let msg = err.to_string();
        assert!(msg.contains("line 3: vf: duplicate key"), "{msg}");
        assert!(msg.contains("el_size: missing required key"), "{msg}");
    }

    #[test]
    fn range_errors() {
        let err = parse_config("problem = thermal2d\nel_size = 10 10\nvf = 1.5").unwrap_err();
        assert_eq!(err.issues.len(), 1);
        assert!(err.issues[0].message.contains("(0, 1)"));
    }

    #[test]
    fn lsf_and_solver_choices() {
        let cfg = parse_config(
            "problem = homog2d\nel_size = 8 8\nvf = 0.4\nlsf = lattice 0.5\nlinear_solver = cg\nderivative = analytic",
        )
        .unwrap();
        assert_eq!(cfg.problem.initial, Some(InitialShape::Lattice { shift: 0.5 }));
        assert!(matches!(cfg.problem.solver, SolverKind::Cg(_)));
        assert_eq!(cfg.problem.derivative, DerivativeMode::Analytic);
    }
}
