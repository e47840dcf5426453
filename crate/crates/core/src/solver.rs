//! Matrix-free convex minimization: preconditioned conjugate gradients and a
//! damped Newton-CG driver with Armijo backtracking.
//!
//! Every nonlinear solve in the crate (elliptic resolvents, implicit time
//! steps, the space-time WIDE minimization) is a smooth convex problem and
//! goes through [`newton_cg`].

use serde::{Deserialize, Serialize};

use crate::discretization::{dot, norm2};
use crate::error::{Result, WideError};

/// Symmetric positive (semi)definite operator with a cheap diagonal.
pub trait LinearOperator {
    fn apply(&self, v: &[f64], out: &mut [f64]);
    /// Diagonal (or a positive approximation of it) used for Jacobi preconditioning.
    fn diagonal(&self, out: &mut [f64]);
}

/// A smooth convex objective over `R^dim`.
pub trait ConvexObjective {
    type Hessian<'a>: LinearOperator
    where
        Self: 'a;

    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()>;
    /// Curvature operator at `x` used to compute Newton directions.
    fn hessian<'a>(&'a self, x: &[f64]) -> Result<Self::Hessian<'a>>;
    /// Norm used for the stopping test; Euclidean by default.
    fn gradient_norm(&self, g: &[f64]) -> f64 {
        norm2(g)
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final residual relative to the right-hand side, measured in the
    /// preconditioner-weighted norm.
    pub relative_residual: f64,
    pub converged: bool,
}

/// Jacobi-preconditioned CG for `A x = b` starting from zero.
///
/// The stopping test is `‖D^{-1/2} r‖ ≤ tol ‖D^{-1/2} b‖`, which keeps rows
/// with tiny weights from being ignored.
pub fn conjugate_gradient<A: LinearOperator + ?Sized>(
    op: &A,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    let n = b.len();
    let mut diag = vec![0.0; n];
    op.diagonal(&mut diag);
    let inv_diag: Vec<f64> = diag
        .iter()
        .map(|d| {
            if *d > 0.0 && d.is_finite() {
                1.0 / d
            } else {
                1.0
            }
        })
        .collect();

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
    let b_norm = dot(&r, &z).max(0.0).sqrt();
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        });
    }
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rel = 1.0;
    for it in 1..=max_iter {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            // Curvature lost along p; the current iterate is still a descent
            // direction for the caller.
            return Ok(CgOutcome {
                x,
                iterations: it,
                relative_residual: rel,
                converged: false,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        rel = rz_new.max(0.0).sqrt() / b_norm;
        if rel <= tol {
            return Ok(CgOutcome {
                x,
                iterations: it,
                relative_residual: rel,
                converged: true,
            });
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok(CgOutcome {
        x,
        iterations: max_iter,
        relative_residual: rel,
        converged: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    /// Absolute tolerance on [`ConvexObjective::gradient_norm`].
    pub grad_tol: f64,
    pub max_newton: usize,
    pub max_cg: usize,
    /// Floor of the inexact-Newton forcing term.
    pub cg_tol_floor: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-10,
            max_newton: 50,
            max_cg: 2000,
            cg_tol_floor: 1e-13,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NewtonStats {
    pub iterations: usize,
    pub cg_iterations: usize,
    pub grad_norm: f64,
    pub initial_grad_norm: f64,
    pub value: f64,
    /// Objective value after each accepted step, starting with the initial point.
    pub value_history: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub stats: NewtonStats,
}

const ARMIJO_C1: f64 = 1e-4;
/// Newton gives up after this many steps without a tenfold gradient reduction
/// while the objective has stopped decreasing.
const STAGNATION_WINDOW: usize = 6;
const STAGNATION_VALUE_RTOL: f64 = 1e-12;
const MAX_BACKTRACK: usize = 60;

/// Damped Newton-CG. Returns the last iterate with `converged = false` when
/// `max_newton` is exhausted; fails only if no step along the Newton
/// direction reduces either the objective or the gradient.
pub fn newton_cg<P: ConvexObjective>(
    problem: &P,
    x0: Vec<f64>,
    opts: &NewtonOptions,
) -> Result<NewtonOutcome> {
    let n = problem.dim();
    let mut x = x0;
    let mut g = vec![0.0; n];
    problem.gradient(&x, &mut g)?;
    let mut f = problem.value(&x)?;
    let mut gnorm = problem.gradient_norm(&g);
    let mut stats = NewtonStats {
        initial_grad_norm: gnorm,
        value_history: vec![f],
        ..NewtonStats::default()
    };

    let mut trial = vec![0.0; n];
    let mut g_trial = vec![0.0; n];
    let mut history = vec![gnorm];
    loop {
        if gnorm <= opts.grad_tol {
            stats.converged = true;
            break;
        }
        if stats.iterations >= opts.max_newton {
            break;
        }
        if history.len() > STAGNATION_WINDOW {
            let back = history.len() - 1 - STAGNATION_WINDOW;
            let value_drop = stats.value_history[back] - f;
            if gnorm > 0.1 * history[back] && value_drop <= STAGNATION_VALUE_RTOL * f.abs() {
                break;
            }
        }
        let hess = problem.hessian(&x)?;
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let forcing = (gnorm / stats.initial_grad_norm.max(f64::MIN_POSITIVE))
            .min(1e-2)
            .max(opts.cg_tol_floor);
        let cg = conjugate_gradient(&hess, &rhs, forcing, opts.max_cg)?;
        stats.cg_iterations += cg.iterations;
        let mut dir = cg.x;
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            // Fall back to the preconditioned steepest-descent direction.
            let mut diag = vec![0.0; n];
            hess.diagonal(&mut diag);
            for i in 0..n {
                let d = if diag[i] > 0.0 { diag[i] } else { 1.0 };
                dir[i] = -g[i] / d;
            }
            slope = dot(&g, &dir);
            if !(slope < 0.0) {
                return Err(WideError::LineSearchFailure {
                    iteration: stats.iterations,
                });
            }
        }

        let mut alpha = 1.0;
        let mut accepted = false;
        let slack = 8.0 * f64::EPSILON * f.abs();
        for _ in 0..MAX_BACKTRACK {
            for i in 0..n {
                trial[i] = x[i] + alpha * dir[i];
            }
            let f_trial = problem.value(&trial)?;
            if f_trial.is_finite() && f_trial <= f + ARMIJO_C1 * alpha * slope + slack {
                accepted = true;
                problem.gradient(&trial, &mut g_trial)?;
                let gn_trial = problem.gradient_norm(&g_trial);
                // Near the optimum the value test is at the mercy of roundoff;
                // only accept steps that do not increase the gradient there.
                if f_trial > f && gn_trial > gnorm {
                    accepted = false;
                } else {
                    std::mem::swap(&mut x, &mut trial);
                    std::mem::swap(&mut g, &mut g_trial);
                    f = f_trial.min(f);
                    gnorm = gn_trial;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            // Value test failed everywhere: accept the full step if it reduces the gradient.
            for i in 0..n {
                trial[i] = x[i] + dir[i];
            }
            problem.gradient(&trial, &mut g_trial)?;
            let gn_trial = problem.gradient_norm(&g_trial);
            if gn_trial < gnorm {
                std::mem::swap(&mut x, &mut trial);
                std::mem::swap(&mut g, &mut g_trial);
                f = problem.value(&x)?;
                gnorm = gn_trial;
            } else {
                stats.grad_norm = gnorm;
                return Err(WideError::LineSearchFailure {
                    iteration: stats.iterations,
                });
            }
        }
        stats.iterations += 1;
        stats.value_history.push(f);
        history.push(gnorm);
    }
    stats.grad_norm = gnorm;
    stats.value = f;
    Ok(NewtonOutcome { x, stats })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Diag(Vec<f64>);

    impl LinearOperator for Diag {
        fn apply(&self, v: &[f64], out: &mut [f64]) {
            for i in 0..v.len() {
                out[i] = self.0[i] * v[i];
            }
        }
        fn diagonal(&self, out: &mut [f64]) {
            out.copy_from_slice(&self.0);
        }
    }

    struct Tridiag {
        n: usize,
    }

    impl LinearOperator for Tridiag {
        fn apply(&self, v: &[f64], out: &mut [f64]) {
            for i in 0..self.n {
                let l = if i > 0 { v[i - 1] } else { 0.0 };
                let r = if i + 1 < self.n { v[i + 1] } else { 0.0 };
                out[i] = 2.0 * v[i] - l - r;
            }
        }
        fn diagonal(&self, out: &mut [f64]) {
            out.fill(2.0);
        }
    }

    #[test]
    fn cg_solves_tridiagonal() {
        let n = 50;
        let op = Tridiag { n };
        let b = vec![1.0; n];
        let out = conjugate_gradient(&op, &b, 1e-14, 200).unwrap();
        assert!(out.converged);
        let mut ax = vec![0.0; n];
        op.apply(&out.x, &mut ax);
        for i in 0..n {
            assert!((ax[i] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn jacobi_handles_wild_scaling() {
        let d: Vec<f64> = (0..40).map(|i| 10f64.powi(-i / 2)).collect();
        let op = Diag(d.clone());
        let b = d.clone();
        let out = conjugate_gradient(&op, &b, 1e-14, 5).unwrap();
        assert!(out.converged);
        assert!(out.x.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    /// f(x) = Σ cosh(x_i - c_i)
    struct Cosh(Vec<f64>);

    impl ConvexObjective for Cosh {
        type Hessian<'a> = Diag;
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn value(&self, x: &[f64]) -> Result<f64> {
            Ok(x.iter().zip(&self.0).map(|(a, c)| (a - c).cosh()).sum())
        }
        fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
            for i in 0..x.len() {
                out[i] = (x[i] - self.0[i]).sinh();
            }
            Ok(())
        }
        fn hessian(&self, x: &[f64]) -> Result<Diag> {
            Ok(Diag(
                x.iter().zip(&self.0).map(|(a, c)| (a - c).cosh()).collect(),
            ))
        }
    }

    #[test]
    fn newton_converges_on_strictly_convex_problem() {
        let p = Cosh(vec![3.0, -2.0, 0.5]);
        let out = newton_cg(&p, vec![0.0; 3], &NewtonOptions::default()).unwrap();
        assert!(out.stats.converged);
        for (a, c) in out.x.iter().zip(&p.0) {
            assert!((a - c).abs() < 1e-10);
        }
        for w in out.stats.value_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn newton_reports_non_convergence() {
        let p = Cosh(vec![30.0]);
        let opts = NewtonOptions {
            max_newton: 2,
            ..NewtonOptions::default()
        };
        let out = newton_cg(&p, vec![0.0], &opts).unwrap();
        assert!(!out.stats.converged);
        assert_eq!(out.stats.iterations, 2);
    }
}
