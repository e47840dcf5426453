//! Newton-CG minimization of the discrete WIDE functional and a posteriori
//! checks of the Euler–Lagrange system at the minimizer.

use serde::{Deserialize, Serialize};

use crate::discretization::{Field, Grid, NormKind, TimeAxis, Trajectory};
use crate::error::Result;
use crate::solver::{newton_cg, NewtonOptions, NewtonStats};
use crate::wide::{WideParams, WideProblem};

#[derive(Debug, Clone)]
pub struct Minimized {
    pub traj: Trajectory,
    pub stats: NewtonStats,
}

/// Minimizes `I_h` over trajectories with the prescribed initial data,
/// starting from `u₀ + t u₁` (or `u₀` when `ρ = 0`).
///
/// `opts.grad_tol` bounds the level-scaled gradient norm, which is the
/// discrete L² norm of the interior Euler–Lagrange residual. A run that
/// exhausts `max_newton` returns its last iterate with `converged == false`.
pub fn minimize_wide(
    params: &WideParams,
    grid: Grid,
    time: TimeAxis,
    u0: &Field,
    u1: &Field,
    opts: &NewtonOptions,
) -> Result<Minimized> {
    let problem = WideProblem::new(*params, grid, time, u0.clone(), u1.clone())?;
    let start = problem.initial_guess();
    minimize_from(&problem, &start, opts)
}

/// Same as [`minimize_wide`] from an explicit starting trajectory; its
/// constrained levels are overwritten by the problem data.
pub fn minimize_from(
    problem: &WideProblem,
    start: &Trajectory,
    opts: &NewtonOptions,
) -> Result<Minimized> {
    if opts.grad_tol.is_nan() || opts.grad_tol <= 0.0 {
        return Err(crate::error::WideError::InvalidParameter {
            name: "grad_tol",
            reason: format!("{} must be positive", opts.grad_tol),
        });
    }
    let x0 = problem.free_part(start);
    let out = newton_cg(problem, x0, opts)?;
    Ok(Minimized {
        traj: problem.assemble(&out.x),
        stats: out.stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    /// Largest discrete L² norm of the interior residual over time levels.
    pub interior: f64,
    pub terminal_acc: f64,
    pub terminal_jet: f64,
    pub tol: f64,
    pub passed: bool,
}

pub fn verify_stationarity(
    traj: &Trajectory,
    params: &WideParams,
    tol: f64,
) -> Result<StationarityReport> {
    let res = crate::wide::el_residual(traj, params)?;
    let grid = &traj.grid;
    let interior = res.max_interior_norm(grid);
    let terminal_acc = grid.norm(&res.terminal_acc, NormKind::L2)?;
    let terminal_jet = grid.norm(&res.terminal_jet, NormKind::L2)?;
    Ok(StationarityReport {
        interior,
        terminal_acc,
        terminal_jet,
        tol,
        passed: interior <= tol && terminal_acc <= tol && terminal_jet <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::exp_weight;
    use crate::potentials::PotentialSpec;
    use crate::wide::{grad_wide, RegLevels};
    use nalgebra::{DMatrix, DVector};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn opts(tol: f64) -> NewtonOptions {
        NewtonOptions {
            grad_tol: tol,
            ..NewtonOptions::default()
        }
    }

    fn nonlinear(rho: f64) -> WideParams {
        WideParams {
            rho,
            eps: 0.1,
            nu: 1.0,
            reg: RegLevels::default(),
            g_spec: PotentialSpec::power(3.0, 1.0),
            f_spec: PotentialSpec::power(3.0, 1.0),
        }
    }

    #[test]
    fn zero_data_gives_zero_minimizer() {
        let grid = Grid::unit_1d(8);
        let time = TimeAxis::new(1.0, 16).unwrap();
        let out = minimize_wide(
            &nonlinear(1.0),
            grid,
            time,
            &grid.zeros(),
            &grid.zeros(),
            &opts(1e-10),
        )
        .unwrap();
        assert_eq!(out.stats.iterations, 0);
        assert!(out.traj.levels.iter().all(|l| l.iter().all(|v| *v == 0.0)));
        let rep = verify_stationarity(&out.traj, &nonlinear(1.0), 1e-8).unwrap();
        assert_eq!(
            (rep.interior, rep.terminal_acc, rep.terminal_jet),
            (0.0, 0.0, 0.0)
        );
    }

    /// Dense quadratic form of the linear functional built from its terms.
    fn linear_oracle(
        params: &WideParams,
        grid: Grid,
        time: TimeAxis,
        u0: &[f64],
        u1: &[f64],
    ) -> Vec<Vec<f64>> {
        let m = grid.node_count();
        let big_n = time.steps();
        let total = (big_n + 1) * m;
        let tau = time.tau();
        let h = grid.h();
        let hd = grid.cell_volume();
        let mut a = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            a[(i, i)] = 2.0 / (h * h) + 1.0;
            if i > 0 {
                a[(i, i - 1)] = -1.0 / (h * h);
                a[(i - 1, i)] = -1.0 / (h * h);
            }
        }
        let mut q = DMatrix::<f64>::zeros(total, total);
        let eps = params.eps;
        for k in 1..big_n {
            let c = 2.0 * tau * exp_weight(time.t(k), eps) * 0.5 * eps * eps * params.rho * hd;
            let taps = [(k - 1, 1.0), (k, -2.0), (k + 1, 1.0)];
            for &(l1, c1) in &taps {
                for &(l2, c2) in &taps {
                    for i in 0..m {
                        q[(l1 * m + i, l2 * m + i)] += c * c1 * c2 / tau.powi(4);
                    }
                }
            }
        }
        for k in 1..=big_n {
            let c = tau * exp_weight(time.t_mid(k), eps) * eps * params.nu * hd;
            let taps = [(k - 1, -1.0), (k, 1.0)];
            for &(l1, c1) in &taps {
                for &(l2, c2) in &taps {
                    for i in 0..m {
                        q[(l1 * m + i, l2 * m + i)] += c * c1 * c2 / (tau * tau);
                    }
                }
            }
        }
        for k in 0..=big_n {
            let c = tau * time.trapezoid_weight(k) * exp_weight(time.t(k), eps) * hd;
            for i in 0..m {
                for j in 0..m {
                    q[(k * m + i, k * m + j)] += c * a[(i, j)];
                }
            }
        }
        let fixed = 2 * m;
        let free = total - fixed;
        let mut c = DVector::<f64>::zeros(fixed);
        for i in 0..m {
            c[i] = u0[i];
            c[m + i] = u0[i] + tau * u1[i];
        }
        let qff = q.view((fixed, fixed), (free, free)).into_owned();
        let qfc = q.view((fixed, 0), (free, fixed)).into_owned();
        let rhs = -(qfc * c);
        let x = qff.lu().solve(&rhs).expect("SPD block");
        let mut levels = vec![u0.to_vec()];
        levels.push((0..m).map(|i| u0[i] + tau * u1[i]).collect());
        for k in 0..big_n - 1 {
            levels.push(x.rows(k * m, m).iter().copied().collect());
        }
        levels
    }

    #[test]
    fn linear_minimizer_matches_dense_oracle() {
        let grid = Grid::unit_1d(8);
        let time = TimeAxis::new(1.0, 32).unwrap();
        let params = WideParams::linear(1.0, 0.2, 1.0);
        let u0 = grid.sample(|x| (PI * x[0]).sin());
        let u1 = grid.sample(|x| 0.5 * (2.0 * PI * x[0]).sin());
        let out = minimize_wide(&params, grid, time, &u0, &u1, &opts(1e-10)).unwrap();
        assert!(out.stats.converged);
        let oracle = linear_oracle(&params, grid, time, &u0, &u1);
        for (lvl, want) in out.traj.levels.iter().zip(&oracle) {
            for (a, b) in lvl.iter().zip(want) {
                assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
            }
        }
    }

    fn random_start(problem: &WideProblem, seed: u64) -> Trajectory {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut t = problem.initial_guess();
        for level in t.levels.iter_mut().skip(problem.first_free()) {
            for v in level.iter_mut() {
                *v = rng.random_range(-2.0..2.0);
            }
        }
        t
    }

    #[test]
    fn minimizer_is_unique_and_stationary() {
        let grid = Grid::unit_1d(8);
        let time = TimeAxis::new(1.0, 32).unwrap();
        for rho in [0.0, 1.0] {
            let params = nonlinear(rho);
            let u0 = grid.sample(|x| (PI * x[0]).sin());
            let u1 = grid.sample(|x| 0.3 * (PI * x[0]).sin());
            let problem = WideProblem::new(params, grid, time, u0, u1).unwrap();
            let a = minimize_from(&problem, &random_start(&problem, 1), &opts(1e-10)).unwrap();
            let b = minimize_from(&problem, &random_start(&problem, 2), &opts(1e-10)).unwrap();
            assert!(a.stats.converged && b.stats.converged);
            assert!(a.traj.max_abs_diff(&b.traj) <= 1e-6);
            for w in a.stats.value_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-14 * w[0].abs());
            }
            let rep = verify_stationarity(&a.traj, &params, 1e-8).unwrap();
            assert!(rep.passed, "{rep:?}");
            let g = grad_wide(&a.traj, &params).unwrap();
            assert!(g.iter().all(|f| f.max_abs() <= 1e-10));
        }
    }

    #[test]
    fn perturbation_is_detected() {
        let grid = Grid::unit_1d(8);
        let time = TimeAxis::new(1.0, 32).unwrap();
        let params = nonlinear(1.0);
        let u0 = grid.sample(|x| (PI * x[0]).sin());
        let out = minimize_wide(&params, grid, time, &u0, &grid.zeros(), &opts(1e-10)).unwrap();
        let mut bad = out.traj.clone();
        for v in bad.levels[10].iter_mut() {
            *v += 1e-3;
        }
        let rep = verify_stationarity(&bad, &params, 1e-8).unwrap();
        assert!(rep.interior > 1e-4);
        assert!(!rep.passed);
    }

    #[test]
    fn regularized_minimum_is_lower() {
        let grid = Grid::unit_1d(6);
        let time = TimeAxis::new(1.0, 16).unwrap();
        let plain = nonlinear(1.0).with_eps(0.3);
        let mut reg = plain;
        reg.reg = RegLevels {
            lambda: 0.05,
            mu: 0.01,
        };
        let u0 = grid.sample(|x| (PI * x[0]).sin());
        let u1 = grid.zeros();
        let a = minimize_wide(&plain, grid, time, &u0, &u1, &opts(1e-9)).unwrap();
        let b = minimize_wide(&reg, grid, time, &u0, &u1, &opts(1e-9)).unwrap();
        assert!(a.stats.converged && b.stats.converged);
        assert!(b.stats.value <= a.stats.value);
    }
}
