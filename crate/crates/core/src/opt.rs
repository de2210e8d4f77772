//! Augmented Lagrangian optimiser.
//!
//! `L = J − Σ (λ_i C_i + ½ Λ_i C_i²)`, with derivative
//! `dL = dJ − Σ (λ_i − Λ_i C_i) dC_i`. Each iteration advects the level set
//! with the extended `dL`, reinitialises it, re-evaluates the functionals and
//! updates the multipliers. Oscillations of `L` shrink the CFL number.

use crate::error::{Error, Result};
use crate::evolve::{evolve, reinit_with, EvolveParams, StencilWorkspace};
use crate::fem::NodalField;
use crate::sens::{Evaluation, FunctionalSet, VelocityExtension};

/// Optimiser settings.
#[derive(Debug, Clone, PartialEq)]
pub struct OptParams {
    pub max_iter: usize,
    pub evolve: EvolveParams,
    /// Penalty growth factor `ξ`.
    pub xi: f64,
    /// Iterations between penalty increases.
    pub update_period: usize,
    /// `Λ_max = penalty_cap_factor · Λ⁰`.
    pub penalty_cap_factor: f64,
    /// Trailing window for oscillation detection.
    pub oscillation_window: usize,
    /// The run stalls once `γ < γ₀ / gamma_floor_divisor`.
    pub gamma_floor_divisor: f64,
    /// Explicit initial penalties instead of the scale-based rule.
    pub initial_penalty: Option<Vec<f64>>,
    /// Evaluate `L` after a half step at every iteration (one extra solve).
    pub descent_probe: bool,
}

impl OptParams {
    pub fn new(evolve: EvolveParams) -> Self {
        OptParams {
            max_iter: 1000,
            evolve,
            xi: 1.2,
            update_period: 5,
            penalty_cap_factor: 100.0,
            oscillation_window: 8,
            gamma_floor_divisor: 16.0,
            initial_penalty: None,
            descent_probe: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.evolve.validate()?;
        if !(self.xi > 1.0) {
            return Err(Error::invalid(format!("xi must exceed 1, got {}", self.xi)));
        }
        if self.update_period == 0 {
            return Err(Error::invalid("update_period must be at least 1"));
        }
        if self.oscillation_window < 4 {
            return Err(Error::invalid("oscillation_window must be at least 4"));
        }
        if !(self.penalty_cap_factor >= 1.0) {
            return Err(Error::invalid("penalty_cap_factor must be at least 1"));
        }
        if !(self.gamma_floor_divisor > 1.0) {
            return Err(Error::invalid("gamma_floor_divisor must exceed 1"));
        }
        Ok(())
    }
}

/// Multipliers `λ_i`, penalties `Λ_i` and their update rule.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianState {
    pub lambda: Vec<f64>,
    pub penalty: Vec<f64>,
    pub penalty_max: Vec<f64>,
    pub xi: f64,
    pub update_period: usize,
}

impl LagrangianState {
    /// `λ⁰ = 0`, `Λ⁰ = 0.1|J|/max(C², 1e-12)` clipped to `[1e-2, 1e2]`,
    /// `Λ_max = cap_factor · Λ⁰`.
    pub fn initial(j: f64, c: &[f64], xi: f64, update_period: usize, cap_factor: f64) -> Self {
        let penalty: Vec<f64> = c
            .iter()
            .map(|ci| (0.1 * j.abs() / (ci * ci).max(1e-12)).clamp(1e-2, 1e2))
            .collect();
        Self::with_penalty(penalty, xi, update_period, cap_factor)
    }

    pub fn with_penalty(penalty: Vec<f64>, xi: f64, update_period: usize, cap_factor: f64) -> Self {
        LagrangianState {
            lambda: vec![0.0; penalty.len()],
            penalty_max: penalty.iter().map(|p| cap_factor * p).collect(),
            penalty,
            xi,
            update_period,
        }
    }

    pub fn value(&self, j: f64, c: &[f64]) -> f64 {
        lagrangian_value(j, c, &self.lambda, &self.penalty)
    }

    pub fn gradient(&self, dj: &[f64], dc: &[Vec<f64>], c: &[f64]) -> Vec<f64> {
        lagrangian_gradient(dj, dc, c, &self.lambda, &self.penalty)
    }

    /// `λ ← λ − ΛC` always; `Λ ← min(ξΛ, Λ_max)` when `iteration` is a
    /// multiple of the update period.
    pub fn update(&mut self, c: &[f64], iteration: usize) {
        for i in 0..c.len() {
            self.lambda[i] -= self.penalty[i] * c[i];
        }
        if iteration % self.update_period == 0 {
            for i in 0..c.len() {
                self.penalty[i] = (self.xi * self.penalty[i]).min(self.penalty_max[i]);
            }
        }
    }
}

/// `J − Σ (λ_i C_i + ½ Λ_i C_i²)`.
pub fn lagrangian_value(j: f64, c: &[f64], lambda: &[f64], penalty: &[f64]) -> f64 {
    let mut l = j;
    for i in 0..c.len() {
        l -= lambda[i] * c[i] + 0.5 * penalty[i] * c[i] * c[i];
    }
    l
}

/// `dJ − Σ (λ_i − Λ_i C_i) dC_i`.
pub fn lagrangian_gradient(
    dj: &[f64],
    dc: &[Vec<f64>],
    c: &[f64],
    lambda: &[f64],
    penalty: &[f64],
) -> Vec<f64> {
    let mut g = dj.to_vec();
    for i in 0..c.len() {
        let coef = lambda[i] - penalty[i] * c[i];
        for (gj, dcj) in g.iter_mut().zip(&dc[i]) {
            *gj -= coef * dcj;
        }
    }
    g
}

/// True when the last `window` values of `l` oscillate: either every
/// successive difference flips sign, or the window repeats with some period
/// `2 ≤ p ≤ window/2` (each `|L_i − L_{i−p}|` within a tenth of the mean step).
/// In both cases the mean `|ΔL|` must exceed `1e-12·|L|`.
pub fn has_oscillations(l: &[f64], window: usize) -> bool {
    if window < 2 || l.len() < window {
        return false;
    }
    let tail = &l[l.len() - window..];
    let diffs: Vec<f64> = tail.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = diffs.iter().map(|d| d.abs()).sum::<f64>() / diffs.len() as f64;
    let last = tail[tail.len() - 1].abs();
    if !(mean > 1e-12 * last) {
        return false;
    }
    let alternating = diffs.windows(2).all(|d| d[0] * d[1] < 0.0);
    let cyclic = (2..=window / 2).any(|p| (p..window).all(|i| (tail[i] - tail[i - p]).abs() <= 0.1 * mean));
    alternating || cyclic
}

/// Stopping test: at least six records, the last five relative changes of
/// `L` below `0.01·ε_m/(d−1)`, and every `|C_i| < 0.01`.
pub fn converged(l: &[f64], c: &[f64], max_delta: f64, dim: usize) -> bool {
    if l.len() < 6 || c.iter().any(|ci| !(ci.abs() < 0.01)) {
        return false;
    }
    let q = l.len() - 1;
    let tol = 0.01 * max_delta / (dim as f64 - 1.0);
    (1..=5).all(|j| ((l[q] - l[q - j]) / l[q]).abs() < tol)
}

/// CFL number with oscillation-driven reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct CflController {
    pub gamma0: f64,
    pub gamma: f64,
    window: usize,
    floor: f64,
    /// Length of the `L` history at the last reduction.
    last_reduction: Option<usize>,
    pub reductions: usize,
}

/// Outcome of one oscillation check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CflEvent {
    Unchanged,
    Reduced,
    /// `γ` fell below the floor.
    Stalled,
}

impl CflController {
    pub fn new(gamma0: f64, window: usize, floor_divisor: f64) -> Self {
        CflController {
            gamma0,
            gamma: gamma0,
            window,
            floor: gamma0 / floor_divisor,
            last_reduction: None,
            reductions: 0,
        }
    }

    /// Reduce `γ` by 25% when `l` oscillates. After a reduction, a full fresh
    /// window of values must accumulate before the next check.
    pub fn check(&mut self, l: &[f64]) -> CflEvent {
        if let Some(at) = self.last_reduction {
            if l.len() < at + self.window {
                return CflEvent::Unchanged;
            }
        }
        if !has_oscillations(l, self.window) {
            return CflEvent::Unchanged;
        }
        self.gamma *= 0.75;
        self.reductions += 1;
        self.last_reduction = Some(l.len());
        if self.gamma < self.floor {
            CflEvent::Stalled
        } else {
            CflEvent::Reduced
        }
    }
}

/// One row of the optimisation history.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub j: f64,
    pub c: Vec<f64>,
    pub l: f64,
    pub gamma: f64,
    pub state_iterations: usize,
    pub adjoint_iterations: usize,
    pub extension_iterations: usize,
    pub reinit_steps: usize,
    /// `L` after a trial half step, when probing is enabled.
    pub probe: Option<f64>,
}

/// Append-only iteration history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    records: Vec<IterationRecord>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, rec: IterationRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if rec.iter <= last.iter {
                return Err(Error::invalid(format!(
                    "history iteration {} does not follow {}",
                    rec.iter, last.iter
                )));
            }
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn lagrangian(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.l).collect()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    /// Number of constraints (taken from the first record).
    pub fn n_constraints(&self) -> usize {
        self.records.first().map_or(0, |r| r.c.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIter,
    /// The CFL number fell below its floor.
    Stalled,
}

/// Snapshot handed to the per-iteration callback.
pub struct IterationView<'a> {
    pub record: &'a IterationRecord,
    pub phi: &'a [f64],
    /// Extended descent velocity for the next step.
    pub velocity: &'a [f64],
    pub states: &'a [NodalField],
    /// True for the last callback of the run.
    pub is_final: bool,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub phi: Vec<f64>,
    pub history: History,
    pub termination: Termination,
    pub multipliers: Option<LagrangianState>,
    pub gamma: f64,
}

/// Run the optimiser from `phi0`.
pub fn run<F>(
    fs: &mut FunctionalSet,
    ext: &VelocityExtension,
    phi0: &[f64],
    params: &OptParams,
    mut callback: F,
) -> Result<RunResult>
where
    F: FnMut(&IterationView<'_>) -> Result<()>,
{
    params.validate()?;
    let ctx = fs.context();
    let mesh = ctx.mesh();
    if phi0.len() != mesh.n_nodes() {
        return Err(Error::invalid(format!(
            "initial level set has {} values, mesh has {} nodes",
            phi0.len(),
            mesh.n_nodes()
        )));
    }
    let mut phi = phi0.to_vec();
    let mut history = History::new();
    if params.max_iter == 0 {
        return Ok(RunResult {
            phi,
            history,
            termination: Termination::MaxIter,
            multipliers: None,
            gamma: params.evolve.gamma,
        });
    }
    let n_con = fs.constraints.len();
    let mut ws = StencilWorkspace::new(mesh);
    let mut cfl = CflController::new(
        params.evolve.gamma,
        params.oscillation_window,
        params.gamma_floor_divisor,
    );

    let reinit0 = reinit_with(&mut ws, &mut phi, &params.evolve)?;
    let ev = evaluate(fs, &phi, 0)?;
    let mut al = match &params.initial_penalty {
        Some(p) if p.len() == n_con => {
            LagrangianState::with_penalty(p.clone(), params.xi, params.update_period, params.penalty_cap_factor)
        }
        Some(p) => {
            return Err(Error::invalid(format!(
                "{} initial penalties given for {n_con} constraints",
                p.len()
            )))
        }
        None => LagrangianState::initial(
            ev.j,
            &ev.c,
            params.xi,
            params.update_period,
            params.penalty_cap_factor,
        ),
    };
    let mut step = Step::new(fs, ext, &al, ev, cfl.gamma, 0, reinit0.steps)?;
    let mut l_hist = vec![step.record.l];

    let mut termination = Termination::MaxIter;
    let mut iter = 0;
    loop {
        let stop = if converged(&l_hist, &step.record.c, mesh.max_delta(), mesh.dim()) {
            Some(Termination::Converged)
        } else if iter >= params.max_iter {
            Some(Termination::MaxIter)
        } else {
            match cfl.check(&l_hist) {
                CflEvent::Stalled => Some(Termination::Stalled),
                _ => None,
            }
        };
        if let Some(t) = stop {
            termination = t;
        }
        if params.descent_probe && stop.is_none() {
            step.record.probe = Some(probe(fs, &mut ws, &phi, &step.velocity, &al, params, cfl.gamma)?);
        }
        history.push(step.record.clone())?;
        callback(&IterationView {
            record: &step.record,
            phi: &phi,
            velocity: &step.velocity,
            states: fs.states()?,
            is_final: stop.is_some(),
        })?;
        if stop.is_some() {
            break;
        }

        iter += 1;
        evolve(&mut ws, &mut phi, &step.velocity, cfl.gamma, params.evolve.max_steps)?;
        let re = reinit_with(&mut ws, &mut phi, &params.evolve)?;
        let ev = evaluate(fs, &phi, iter)?;
        al.update(&ev.c, iter);
        step = Step::new(fs, ext, &al, ev, cfl.gamma, iter, re.steps)?;
        l_hist.push(step.record.l);
    }

    Ok(RunResult {
        phi,
        history,
        termination,
        multipliers: Some(al),
        gamma: cfl.gamma,
    })
}

/// Quantities carried from one iteration to the next.
struct Step {
    record: IterationRecord,
    velocity: Vec<f64>,
}

impl Step {
    fn new(
        fs: &FunctionalSet,
        ext: &VelocityExtension,
        al: &LagrangianState,
        ev: Evaluation,
        gamma: f64,
        iter: usize,
        reinit_steps: usize,
    ) -> Result<Self> {
        let l = al.value(ev.j, &ev.c);
        if !l.is_finite() {
            return Err(Error::NonFinite(format!("Lagrangian at iteration {iter}")));
        }
        let dl = al.gradient(&ev.dj, &ev.dc, &ev.c);
        let (velocity, st) = ext.extend(&dl)?;
        let _ = fs;
        Ok(Step {
            record: IterationRecord {
                iter,
                j: ev.j,
                c: ev.c,
                l,
                gamma,
                state_iterations: ev.state_iterations,
                adjoint_iterations: ev.adjoint_iterations,
                extension_iterations: st.iterations,
                reinit_steps,
                probe: None,
            },
            velocity,
        })
    }
}

fn evaluate(fs: &mut FunctionalSet, phi: &[f64], iter: usize) -> Result<Evaluation> {
    let ev = fs
        .evaluate(phi)
        .map_err(|e| e.in_context(&format!("iteration {iter}")))?;
    if !ev.j.is_finite() || ev.c.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite(format!("functional value at iteration {iter}")));
    }
    Ok(ev)
}

/// `L` after advecting with half the current time step.
fn probe(
    fs: &mut FunctionalSet,
    ws: &mut StencilWorkspace,
    phi: &[f64],
    velocity: &[f64],
    al: &LagrangianState,
    params: &OptParams,
    gamma: f64,
) -> Result<f64> {
    let mut trial = phi.to_vec();
    evolve(ws, &mut trial, velocity, 0.5 * gamma, params.evolve.max_steps)?;
    let (j, c) = fs.values(&trial)?;
    // Restore the cached state at the accepted level set.
    fs.values(phi)?;
    Ok(al.value(j, &c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lagrangian_values() {
        assert_eq!(lagrangian_value(1.0, &[0.0], &[3.0], &[7.0]), 1.0);
        assert!((lagrangian_value(1.0, &[0.1], &[0.0], &[2.0]) - 0.99).abs() < 1e-15);
        assert_eq!(lagrangian_value(0.0, &[1.0], &[1.0], &[0.0]), -1.0);
    }

    #[test]
    fn lagrangian_gradients() {
        let dj = vec![1.0, -2.0];
        let dc = vec![vec![0.5, 4.0]];
        assert_eq!(lagrangian_gradient(&dj, &dc, &[0.3], &[0.0], &[0.0]), dj);
        assert_eq!(
            lagrangian_gradient(&[0.0, 0.0], &dc, &[0.7], &[1.0], &[0.0]),
            vec![-0.5, -4.0]
        );
        let g = lagrangian_gradient(&dj, &dc, &[0.1], &[0.0], &[2.0]);
        assert!((g[0] - (1.0 + 0.2 * 0.5)).abs() < 1e-15);
        assert!((g[1] - (-2.0 + 0.2 * 4.0)).abs() < 1e-15);
    }

    #[test]
    fn multiplier_updates() {
        let mut s = LagrangianState::with_penalty(vec![2.0], 1.2, 5, 100.0);
        s.update(&[0.1], 1);
        assert!((s.lambda[0] + 0.2).abs() < 1e-15);
        assert_eq!(s.penalty[0], 2.0);

        let mut s = LagrangianState::with_penalty(vec![1.0], 1.2, 5, 5.0);
        s.update(&[0.0], 5);
        assert!((s.penalty[0] - 1.2).abs() < 1e-15);
        s.penalty[0] = 4.9;
        s.update(&[0.0], 10);
        assert_eq!(s.penalty[0], 5.0);
    }

    #[test]
    fn multiplier_recurrence() {
        let mut s = LagrangianState::with_penalty(vec![0.37], 1.2, 1000, 100.0);
        s.lambda[0] = 0.25;
        for k in 1..=40 {
            s.update(&[0.013], k);
        }
        assert!((s.lambda[0] - (0.25 - 40.0 * 0.37 * 0.013)).abs() < 1e-14);
    }

    #[test]
    fn initial_penalty_rule() {
        let s = LagrangianState::initial(2.0, &[0.5, 0.0, 1e-4], 1.2, 5, 100.0);
        assert!((s.penalty[0] - 0.8).abs() < 1e-15);
        assert_eq!(s.penalty[1], 1e2);
        assert_eq!(s.penalty[2], 1e2);
        assert!((s.penalty_max[0] - 80.0).abs() < 1e-12);
        let s = LagrangianState::initial(1e-6, &[1.0], 1.2, 5, 100.0);
        assert_eq!(s.penalty[0], 1e-2);
        assert_eq!(s.lambda, vec![0.0]);
    }

    #[test]
    fn oscillation_detection() {
        assert!(!has_oscillations(&[1.0, 0.9, 0.8, 0.7], 4));
        assert!(has_oscillations(&[1.0, 0.5, 1.0, 0.5, 1.0], 5));
        assert!(!has_oscillations(&[2.0; 10], 8));
        assert!(!has_oscillations(&[1.0, 0.5, 1.0], 5));
        let tiny = [1.0, 1.0 + 1e-15, 1.0, 1.0 + 1e-15, 1.0];
        assert!(!has_oscillations(&tiny, 5));
        let cycle3 = [0.3, 0.1, 0.2, 0.3, 0.1, 0.2, 0.3, 0.1];
        assert!(has_oscillations(&cycle3, 8));
        let noisy_descent = [1.0, 0.9, 0.92, 0.8, 0.82, 0.7, 0.6, 0.61];
        assert!(!has_oscillations(&noisy_descent, 8));
    }

    #[test]
    fn convergence_test() {
        let flat = [1.0; 6];
        assert!(!converged(&flat[..5], &[0.0], 0.01, 2));
        assert!(!converged(&flat, &[0.5], 0.01, 2));
        assert!(converged(&flat, &[0.005], 0.01, 2));
        let drifting = [1.0, 1.0, 1.0, 1.0, 1.0, 1.001];
        assert!(!converged(&drifting, &[0.0], 0.01, 2));
    }

    #[test]
    fn gamma_reduction_sequence() {
        let gamma0 = 0.1;
        let mut cfl = CflController::new(gamma0, 8, 16.0);
        let mut l: Vec<f64> = Vec::new();
        let mut expected = gamma0;
        let mut events = 0;
        for k in 0..200 {
            l.push(if k % 2 == 0 { 1.0 } else { 0.5 });
            match cfl.check(&l) {
                CflEvent::Unchanged => {}
                CflEvent::Reduced | CflEvent::Stalled => {
                    events += 1;
                    expected *= 0.75;
                    let closed = gamma0 * 0.75f64.powi(events);
                    assert!((cfl.gamma - closed).abs() <= 1e-15 * closed);
                    assert_eq!(cfl.gamma, expected);
                }
            }
            assert!(cfl.gamma <= gamma0);
        }
        // 0.75^10 < 1/16 < 0.75^9.
        assert!(events >= 10);
        let mut cfl = CflController::new(gamma0, 8, 16.0);
        let mut last = CflEvent::Unchanged;
        let mut l = Vec::new();
        for k in 0..200 {
            l.push(if k % 2 == 0 { 1.0 } else { 0.5 });
            last = cfl.check(&l);
            if last == CflEvent::Stalled {
                break;
            }
        }
        assert_eq!(last, CflEvent::Stalled);
        assert_eq!(cfl.reductions, 10);
    }

    #[test]
    fn fresh_window_after_reduction() {
        let mut cfl = CflController::new(1.0, 4, 16.0);
        let mut l = vec![1.0, 0.0, 1.0, 0.0];
        assert_eq!(cfl.check(&l), CflEvent::Reduced);
        for k in 0..3 {
            l.push(if k % 2 == 0 { 1.0 } else { 0.0 });
            assert_eq!(cfl.check(&l), CflEvent::Unchanged);
        }
        l.push(0.0);
        l.push(1.0);
        assert_eq!(cfl.check(&l), CflEvent::Reduced);
    }

    #[test]
    fn history_is_strictly_increasing() {
        let rec = |iter| IterationRecord {
            iter,
            j: 1.0,
            c: vec![],
            l: 1.0,
            gamma: 0.1,
            state_iterations: 0,
            adjoint_iterations: 0,
            extension_iterations: 0,
            reinit_steps: 0,
            probe: None,
        };
        let mut h = History::new();
        h.push(rec(0)).unwrap();
        h.push(rec(1)).unwrap();
        assert!(h.push(rec(1)).is_err());
        assert_eq!(h.len(), 2);
    }
}
