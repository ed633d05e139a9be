//! Preconditioned conjugate gradient and the name-indexed solver registry.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::Serialize;

use super::amg::AggregationAmg;
use super::operator::LinearOperator;

pub const DEFAULT_SOLVER: &str = "cg-amg";

/// Fixed-size chunks keep reductions independent of the thread count.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final relative residual `|b - A x| / |b|`.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolveOutcome {
    Converged(SolveStats),
    NotConverged(SolveStats),
}

impl SolveOutcome {
    pub fn stats(&self) -> SolveStats {
        match *self {
            SolveOutcome::Converged(s) | SolveOutcome::NotConverged(s) => s,
        }
    }

    pub fn converged(&self) -> bool {
        matches!(self, SolveOutcome::Converged(_))
    }
}

/// `z ≈ A⁻¹ r`; must be symmetric positive definite for CG.
pub trait Preconditioner: Sync {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

pub struct Identity;

impl Preconditioner for Identity {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn new(op: &dyn LinearOperator) -> Self {
        Self {
            inv_diag: op.diagonal().into_iter().map(|d| 1.0 / d).collect(),
        }
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.par_iter_mut()
            .zip(r)
            .zip(&self.inv_diag)
            .for_each(|((zi, ri), mi)| *zi = ri * mi);
    }
}

/// A solver strategy: a preconditioner built once per operator and shared
/// by every right-hand side (channel) solved with it.
pub trait LinearSolver: Send + Sync {
    fn name(&self) -> &str;

    fn description(&self) -> &str;

    fn preconditioner<'a>(&self, op: &'a dyn LinearOperator) -> Box<dyn Preconditioner + 'a>;

    /// Solve `A x = b` in place, starting from the contents of `x`.
    fn solve(
        &self,
        op: &dyn LinearOperator,
        b: &[f64],
        x: &mut [f64],
        tol: f64,
        max_iters: usize,
    ) -> SolveOutcome {
        let pre = self.preconditioner(op);
        pcg(op, pre.as_ref(), b, x, tol, max_iters)
    }
}

/// Deterministic dot product: chunk partial sums are combined in order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect::<Vec<f64>>()
        .into_iter()
        .sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn residual_into(op: &dyn LinearOperator, b: &[f64], x: &[f64], r: &mut [f64]) {
    op.apply(x, r);
    r.par_iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
}

/// Preconditioned conjugate gradient on the relative residual `|r| / |b|`.
///
/// When the recursively updated residual reaches `tol`, the true residual is
/// recomputed and the iteration restarts from it if it has not.
pub fn pcg(
    op: &dyn LinearOperator,
    pre: &dyn Preconditioner,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iters: usize,
) -> SolveOutcome {
    let n = op.dim();
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    let b_norm = norm(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return SolveOutcome::Converged(SolveStats {
            iterations: 0,
            residual: 0.0,
        });
    }

    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ap = vec![0.0; n];

    residual_into(op, b, x, &mut r);
    let mut rel = norm(&r) / b_norm;
    let mut iterations = 0;
    loop {
        if rel <= tol {
            return SolveOutcome::Converged(SolveStats {
                iterations,
                residual: rel,
            });
        }
        if iterations >= max_iters {
            return SolveOutcome::NotConverged(SolveStats {
                iterations,
                residual: rel,
            });
        }
        pre.apply(&r, &mut z);
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        while iterations < max_iters {
            op.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            let rr: f64 = x
                .par_chunks_mut(CHUNK)
                .zip(r.par_chunks_mut(CHUNK))
                .zip(p.par_chunks(CHUNK).zip(ap.par_chunks(CHUNK)))
                .map(|((xs, rs), (ps, aps))| {
                    let mut acc = 0.0;
                    for i in 0..xs.len() {
                        xs[i] += alpha * ps[i];
                        rs[i] -= alpha * aps[i];
                        acc += rs[i] * rs[i];
                    }
                    acc
                })
                .collect::<Vec<f64>>()
                .into_iter()
                .sum();
            iterations += 1;
            if rr.sqrt() / b_norm <= tol {
                break;
            }
            pre.apply(&r, &mut z);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            p.par_iter_mut()
                .zip(&z)
                .for_each(|(pi, zi)| *pi = zi + beta * *pi);
        }
        residual_into(op, b, x, &mut r);
        let true_rel = norm(&r) / b_norm;
        if true_rel > tol && true_rel >= rel && iterations < max_iters {
            // restarted without progress: the attainable accuracy is reached
            return SolveOutcome::NotConverged(SolveStats {
                iterations,
                residual: true_rel,
            });
        }
        rel = true_rel;
    }
}

/// Conjugate gradient with an identity or inverse-diagonal preconditioner.
#[derive(Debug, Clone, Copy)]
pub struct ConjugateGradient {
    pub jacobi: bool,
}

impl LinearSolver for ConjugateGradient {
    fn name(&self) -> &str {
        if self.jacobi {
            "cg-jacobi"
        } else {
            "cg"
        }
    }

    fn description(&self) -> &str {
        if self.jacobi {
            "conjugate gradient with inverse-diagonal preconditioning"
        } else {
            "unpreconditioned conjugate gradient"
        }
    }

    fn preconditioner<'a>(&self, op: &'a dyn LinearOperator) -> Box<dyn Preconditioner + 'a> {
        if self.jacobi {
            Box::new(Jacobi::new(op))
        } else {
            Box::new(Identity)
        }
    }
}

/// Conjugate gradient preconditioned by one aggregation multigrid cycle.
/// Falls back to Jacobi for operators without a weighted-graph form.
#[derive(Debug, Clone, Copy)]
pub struct AmgConjugateGradient;

impl LinearSolver for AmgConjugateGradient {
    fn name(&self) -> &str {
        "cg-amg"
    }

    fn description(&self) -> &str {
        "conjugate gradient preconditioned by an aggregation multigrid W-cycle"
    }

    fn preconditioner<'a>(&self, op: &'a dyn LinearOperator) -> Box<dyn Preconditioner + 'a> {
        match op.graph() {
            Some(graph) => Box::new(AggregationAmg::new(graph)),
            None => Box::new(Jacobi::new(op)),
        }
    }
}

/// Name-indexed set of available solvers.
pub struct SolverRegistry {
    solvers: BTreeMap<String, Box<dyn LinearSolver>>,
}

impl Default for SolverRegistry {
    fn default() -> Self {
        let mut reg = Self::empty();
        reg.register(Box::new(AmgConjugateGradient));
        reg.register(Box::new(ConjugateGradient { jacobi: true }));
        reg.register(Box::new(ConjugateGradient { jacobi: false }));
        reg
    }
}

impl SolverRegistry {
    pub fn empty() -> Self {
        Self {
            solvers: BTreeMap::new(),
        }
    }

    /// Shared registry holding the built-in solvers.
    pub fn builtin() -> &'static SolverRegistry {
        static REGISTRY: OnceLock<SolverRegistry> = OnceLock::new();
        REGISTRY.get_or_init(SolverRegistry::default)
    }

    /// Adds a solver, replacing any previous one of the same name.
    pub fn register(&mut self, solver: Box<dyn LinearSolver>) {
        self.solvers.insert(solver.name().to_string(), solver);
    }

    pub fn get(&self, name: &str) -> Option<&dyn LinearSolver> {
        self.solvers.get(name).map(|s| s.as_ref())
    }

    pub fn names(&self) -> Vec<&str> {
        self.solvers.keys().map(String::as_str).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn LinearSolver> {
        self.solvers.values().map(|s| s.as_ref())
    }
}
