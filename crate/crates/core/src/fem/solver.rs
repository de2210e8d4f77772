//! Symmetric positive-definite solvers: Jacobi-preconditioned conjugate
//! gradients, and a dense Cholesky factorisation for small systems.

use crate::error::{Error, Result};
use crate::fem::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub rel_tol: f64,
    /// Defaults to `10 n` when unset.
    pub max_iter: Option<usize>,
    /// Record the quadratic energy `½xᵀAx − bᵀx` after every iteration.
    pub record_history: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            rel_tol: 1e-10,
            max_iter: None,
            record_history: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final relative residual `‖b − Ax‖ / ‖b‖`.
    pub residual: f64,
    /// Energy history when requested; CG makes it non-increasing.
    pub energy: Vec<f64>,
}

/// Which linear solver to use for SPD systems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverKind {
    Cg(CgOptions),
    /// Dense Cholesky; only sensible for a few thousand unknowns.
    Direct,
    /// Direct below `dense_limit` unknowns, CG otherwise.
    Auto { dense_limit: usize, cg: CgOptions },
}

impl Default for SolverKind {
    fn default() -> Self {
        SolverKind::Auto {
            dense_limit: 1500,
            cg: CgOptions::default(),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solve `A x = b` with Jacobi-preconditioned CG from a zero initial guess.
pub fn solve_spd(
    a: &CsrMatrix,
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveStats)> {
    pcg(
        a,
        b,
        None,
        &CgOptions {
            rel_tol,
            max_iter: Some(max_iter),
            record_history: false,
        },
    )
}

/// Jacobi-preconditioned conjugate gradients with optional warm start.
pub fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &CgOptions,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = a.n();
    if b.len() != n {
        return Err(Error::invalid(format!(
            "right-hand side has length {}, matrix is {n}x{n}",
            b.len()
        )));
    }
    let max_iter = opts.max_iter.unwrap_or(10 * n.max(1));
    let bnorm = norm(b);
    let mut stats = SolveStats::default();
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], stats));
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = match x0 {
        Some(x0) if x0.len() == n => x0.to_vec(),
        _ => vec![0.0; n],
    };
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];

    let true_residual = |x: &[f64], r: &mut [f64], q: &mut [f64]| {
        a.matvec(x, q);
        for i in 0..n {
            r[i] = b[i] - q[i];
        }
    };

    let mut iterations = 0;
    // Outer loop restarts from the true residual if the recursive one drifted.
    loop {
        true_residual(&x, &mut r, &mut q);
        let mut rel = norm(&r) / bnorm;
        if opts.record_history {
            stats.energy.push(-0.5 * (dot(&x, b) + dot(&x, &r)));
        }
        if rel <= opts.rel_tol {
            stats.iterations = iterations;
            stats.residual = rel;
            return Ok((x, stats));
        }
        if iterations >= max_iter {
            return Err(Error::SolverDiverged {
                context: String::new(),
                iterations,
                residual: rel,
            });
        }
        for i in 0..n {
            z[i] = inv_diag[i] * r[i];
        }
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        while iterations < max_iter {
            iterations += 1;
            a.matvec(&p, &mut q);
            let pq = dot(&p, &q);
            if !(pq > 0.0) {
                return Err(Error::SolverDiverged {
                    context: "matrix is not positive definite".into(),
                    iterations,
                    residual: rel,
                });
            }
            let alpha = rz / pq;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
            }
            rel = norm(&r) / bnorm;
            if opts.record_history {
                stats.energy.push(-0.5 * (dot(&x, b) + dot(&x, &r)));
            }
            if rel <= opts.rel_tol {
                break;
            }
            for i in 0..n {
                z[i] = inv_diag[i] * r[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
    }
}

/// Dense lower-triangular Cholesky factor.
#[derive(Debug, Clone)]
pub struct DenseCholesky {
    n: usize,
    l: Vec<f64>,
}

impl DenseCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.n();
        let mut l = a.to_dense();
        for j in 0..n {
            let mut d = l[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) {
                return Err(Error::invalid(format!(
                    "matrix is not positive definite (pivot {j} = {d:e})"
                )));
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = l[i * n + j];
                let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
                s -= dot(ri, rj);
                l[i * n + j] = s / d;
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                l[i * n + j] = 0.0;
            }
        }
        Ok(DenseCholesky { n, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let s = dot(&self.l[i * n..i * n + i], &y[..i]);
            y[i] = (y[i] - s) / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y
    }
}

/// An SPD matrix readied for repeated solves (factorised when direct).
#[derive(Debug, Clone)]
pub struct SpdSolver {
    matrix: CsrMatrix,
    factor: Option<DenseCholesky>,
    cg: CgOptions,
}

impl SpdSolver {
    pub fn new(matrix: CsrMatrix, kind: SolverKind) -> Result<Self> {
        let (direct, cg) = match kind {
            SolverKind::Direct => (true, CgOptions::default()),
            SolverKind::Cg(o) => (false, o),
            SolverKind::Auto { dense_limit, cg } => (matrix.n() <= dense_limit, cg),
        };
        let factor = if direct {
            Some(DenseCholesky::factor(&matrix)?)
        } else {
            None
        };
        Ok(SpdSolver { matrix, factor, cg })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn is_direct(&self) -> bool {
        self.factor.is_some()
    }

    /// Solve `A x = b`; `x0` warm-starts the iterative path.
    pub fn solve(&self, b: &[f64], x0: Option<&[f64]>) -> Result<(Vec<f64>, SolveStats)> {
        let Some(factor) = &self.factor else {
            return pcg(&self.matrix, b, x0, &self.cg);
        };
        if b.len() != self.matrix.n() {
            return Err(Error::invalid(format!(
                "right-hand side has length {}, matrix is {n}x{n}",
                b.len(),
                n = self.matrix.n()
            )));
        }
        let x = factor.solve(b);
        let bnorm = norm(b);
        let residual = if bnorm > 0.0 {
            let ax = self.matrix.mul_vec(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
            norm(&r) / bnorm
        } else {
            0.0
        };
        Ok((
            x,
            SolveStats {
                iterations: 1,
                residual,
                energy: Vec::new(),
            },
        ))
    }
}
