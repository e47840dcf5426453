//! Causal reference solutions: fully implicit steppers for the damped wave
//! equation `ρu'' + νg(u') - Δu + f(u) = 0` and its parabolic limit, the
//! closed-form single-mode solution of the linear case, and the discrete
//! energy ledger.

use serde::{Deserialize, Serialize};

use crate::discretization::{Field, Grid, TimeAxis, Trajectory};
use crate::error::{Result, WideError};
use crate::potentials::PotentialSpec;
use crate::solver::{newton_cg, ConvexObjective, LinearOperator, NewtonOptions};
use crate::wide::WideParams;

/// Residual tolerance of each implicit step (discrete L² norm). A step that
/// stalls above it at roundoff level is still accepted once the residual is
/// below `STEP_TOL` relative to the residual of the initial guess.
pub const STEP_TOL: f64 = 1e-10;

/// One implicit step as a convex minimization. Its gradient is the step
/// residual `ρ(W - 2Uⁿ + Uⁿ⁻¹)/τ² + νg((W - Uⁿ)/τ) - Δ_h W + f(W)`.
struct StepProblem<'a> {
    grid: &'a Grid,
    rho: f64,
    nu: f64,
    tau: f64,
    g: &'a PotentialSpec,
    f: &'a PotentialSpec,
    current: &'a [f64],
    previous: &'a [f64],
}

struct StepHessian<'a> {
    grid: &'a Grid,
    diag: Vec<f64>,
}

impl LinearOperator for StepHessian<'_> {
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        self.grid.neg_laplacian_into(v, out);
        for i in 0..v.len() {
            out[i] += self.diag[i] * v[i];
        }
    }

    fn diagonal(&self, out: &mut [f64]) {
        let d = self.grid.laplacian_diag();
        for (o, v) in out.iter_mut().zip(&self.diag) {
            *o = d + v;
        }
    }
}

impl StepProblem<'_> {
    fn inertia_gap(&self, i: usize, w: f64) -> f64 {
        w - 2.0 * self.current[i] + self.previous[i]
    }

    fn velocity(&self, i: usize, w: f64) -> f64 {
        (w - self.current[i]) / self.tau
    }
}

impl<'a> ConvexObjective for StepProblem<'a> {
    type Hessian<'b>
        = StepHessian<'a>
    where
        Self: 'b;

    fn dim(&self) -> usize {
        self.current.len()
    }

    fn value(&self, w: &[f64]) -> Result<f64> {
        let tau2 = self.tau * self.tau;
        let mut s = 0.5 * self.grid.dirichlet_energy(w) / self.grid.cell_volume();
        for (i, &wi) in w.iter().enumerate() {
            let gap = self.inertia_gap(i, wi);
            s += 0.5 * self.rho * gap * gap / tau2
                + self.tau * self.nu * self.g.density(self.velocity(i, wi))
                + self.f.density(wi);
        }
        Ok(s)
    }

    fn gradient(&self, w: &[f64], out: &mut [f64]) -> Result<()> {
        self.grid.neg_laplacian_into(w, out);
        let tau2 = self.tau * self.tau;
        for (i, &wi) in w.iter().enumerate() {
            out[i] += self.rho * self.inertia_gap(i, wi) / tau2
                + self.nu * self.g.derivative(self.velocity(i, wi))
                + self.f.derivative(wi);
        }
        Ok(())
    }

    fn hessian<'b>(&'b self, w: &[f64]) -> Result<StepHessian<'a>> {
        let tau2 = self.tau * self.tau;
        let diag = w
            .iter()
            .enumerate()
            .map(|(i, &wi)| {
                self.rho / tau2
                    + self.nu * self.g.curvature(self.velocity(i, wi)) / self.tau
                    + self.f.curvature(wi)
            })
            .collect();
        Ok(StepHessian {
            grid: self.grid,
            diag,
        })
    }

    fn gradient_norm(&self, g: &[f64]) -> f64 {
        (self.grid.cell_volume() * g.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }
}

/// Residual of one implicit step, evaluated by substitution.
pub fn step_residual(
    params: &WideParams,
    grid: &Grid,
    tau: f64,
    previous: &[f64],
    current: &[f64],
    next: &[f64],
) -> Vec<f64> {
    let problem = StepProblem {
        grid,
        rho: params.rho,
        nu: params.nu,
        tau,
        g: &params.g_spec,
        f: &params.f_spec,
        current,
        previous,
    };
    let mut out = vec![0.0; next.len()];
    problem.gradient(next, &mut out).expect("step residual");
    out
}

fn solve_step(
    params: &WideParams,
    grid: &Grid,
    tau: f64,
    previous: &[f64],
    current: &[f64],
) -> Result<Vec<f64>> {
    let problem = StepProblem {
        grid,
        rho: params.rho,
        nu: params.nu,
        tau,
        g: &params.g_spec,
        f: &params.f_spec,
        current,
        previous,
    };
    // Linear extrapolation when there is inertia, the current level otherwise.
    let guess: Vec<f64> = if params.rho > 0.0 {
        current
            .iter()
            .zip(previous)
            .map(|(c, p)| 2.0 * c - p)
            .collect()
    } else {
        current.to_vec()
    };
    let mut r0 = vec![0.0; guess.len()];
    problem.gradient(&guess, &mut r0)?;
    let opts = NewtonOptions {
        grad_tol: STEP_TOL,
        max_newton: 60,
        ..NewtonOptions::default()
    };
    let out = newton_cg(&problem, guess, &opts)?;
    if !out.stats.converged && out.stats.grad_norm > STEP_TOL * (1.0 + problem.gradient_norm(&r0)) {
        return Err(WideError::NewtonNonConvergence {
            iterations: out.stats.iterations,
            grad_norm: out.stats.grad_norm,
        });
    }
    Ok(out.x)
}

/// One step of size `τ`, retried once as two steps of size `τ/2` when the
/// nonlinear solve fails.
fn advance(
    params: &WideParams,
    grid: &Grid,
    tau: f64,
    previous: &[f64],
    current: &[f64],
) -> Result<Vec<f64>> {
    match solve_step(params, grid, tau, previous, current) {
        Ok(w) => Ok(w),
        Err(first) => {
            let half = 0.5 * tau;
            // Virtual level at t_n - τ/2 carrying the same backward velocity.
            let virt: Vec<f64> = current
                .iter()
                .zip(previous)
                .map(|(c, p)| 0.5 * (c + p))
                .collect();
            let mid = solve_step(params, grid, half, &virt, current).map_err(|_| first.clone())?;
            solve_step(params, grid, half, current, &mid).map_err(|_| first)
        }
    }
}

fn check_data(grid: &Grid, fields: &[&Field]) -> Result<()> {
    for f in fields {
        grid.check(f)?;
    }
    Ok(())
}

/// Implicit scheme for `ρu'' + νg(u') - Δu + f(u) = 0` with start-up level
/// `U¹ = U⁰ + τu₁`. `ρ = 0` is delegated to [`solve_parabolic`]. The
/// regularization levels in `params` are ignored.
pub fn solve_hyperbolic(
    params: &WideParams,
    grid: &Grid,
    time: &TimeAxis,
    u0: &Field,
    u1: &Field,
) -> Result<Trajectory> {
    params.validate()?;
    check_data(grid, &[u0, u1])?;
    if params.rho == 0.0 {
        return solve_parabolic(params, grid, time, u0);
    }
    let tau = time.tau();
    let mut levels = vec![u0.clone(), u0.axpy(tau, u1)];
    for n in 1..time.steps() {
        let next = advance(params, grid, tau, &levels[n - 1], &levels[n])?;
        levels.push(Field(next));
    }
    Ok(Trajectory {
        grid: *grid,
        time: *time,
        levels,
    })
}

/// Implicit Euler for `νg(u') - Δu + f(u) = 0`.
pub fn solve_parabolic(
    params: &WideParams,
    grid: &Grid,
    time: &TimeAxis,
    u0: &Field,
) -> Result<Trajectory> {
    params.validate()?;
    check_data(grid, &[u0])?;
    if params.nu <= 0.0 {
        return Err(WideError::InvalidParameter {
            name: "nu",
            reason: "the parabolic problem needs ν > 0".into(),
        });
    }
    let flat = WideParams {
        rho: 0.0,
        ..*params
    };
    let tau = time.tau();
    let mut levels = vec![u0.clone()];
    for n in 0..time.steps() {
        let cur = &levels[n];
        let next = advance(&flat, grid, tau, cur, cur)?;
        levels.push(Field(next));
    }
    Ok(Trajectory {
        grid: *grid,
        time: *time,
        levels,
    })
}

/// Initial velocity compatible with the parabolic limit: the first implicit
/// Euler increment `(Ū¹ - u₀)/τ` of [`solve_parabolic`].
pub fn well_prepared_velocity(
    params: &WideParams,
    grid: &Grid,
    tau: f64,
    u0: &Field,
) -> Result<Field> {
    let time = TimeAxis::new(2.0 * tau, 2)?;
    let bar = solve_parabolic(params, grid, &time, u0)?;
    Ok(Field(bar.first_difference(1)))
}

/// Single Fourier mode `a(t) sin(kπx/L)` of the linear problem
/// `ρa'' + νa' + ((kπ/L)² + c)a = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalSpec {
    pub rho: f64,
    pub nu: f64,
    /// Linear reaction coefficient, `f(u) = c u`.
    pub c: f64,
    pub mode: usize,
    /// `a(0)`
    pub amp0: f64,
    /// `a'(0)`; ignored when `ρ = 0`.
    pub amp1: f64,
}

impl ModalSpec {
    pub fn stiffness(&self, length: f64) -> f64 {
        let k = self.mode as f64 * std::f64::consts::PI / length;
        k * k + self.c
    }

    /// Closed-form amplitude at time `t` on a domain of the given length.
    pub fn amplitude(&self, t: f64, length: f64) -> f64 {
        let kappa = self.stiffness(length);
        if self.rho == 0.0 {
            return self.amp0 * (-kappa * t / self.nu).exp();
        }
        let alpha = -self.nu / (2.0 * self.rho);
        // β² = (ν² - 4ρκ) / (4ρ²); both branches are continuous through 0.
        let beta2 = (self.nu * self.nu - 4.0 * self.rho * kappa) / (4.0 * self.rho * self.rho);
        let beta = beta2.abs().sqrt();
        let x = beta * t;
        let (c, s) = if x < 1e-4 {
            let sign = beta2.signum();
            (1.0 + sign * x * x / 2.0, t * (1.0 + sign * x * x / 6.0))
        } else if beta2 > 0.0 {
            (x.cosh(), x.sinh() / beta)
        } else {
            (x.cos(), x.sin() / beta)
        };
        (alpha * t).exp() * (self.amp0 * c + (self.amp1 - alpha * self.amp0) * s)
    }

    pub fn initial_data(&self, grid: &Grid) -> (Field, Field) {
        let shape = self.shape(grid);
        (shape.scaled(self.amp0), shape.scaled(self.amp1))
    }

    fn shape(&self, grid: &Grid) -> Field {
        let k = self.mode as f64 * std::f64::consts::PI / grid.length();
        grid.sample(|x| (k * x[0]).sin())
    }
}

/// Samples the exact modal solution on `grid × time` (1D only).
pub fn modal_reference(spec: &ModalSpec, grid: &Grid, time: &TimeAxis) -> Result<Trajectory> {
    if grid.dim() != 1 {
        return Err(WideError::Unsupported(
            "the modal reference is one-dimensional".into(),
        ));
    }
    if spec.rho < 0.0 || (spec.rho == 0.0 && spec.nu <= 0.0) {
        return Err(WideError::InvalidParameter {
            name: "rho",
            reason: "need ρ > 0, or ρ = 0 with ν > 0".into(),
        });
    }
    let shape = spec.shape(grid);
    let levels = (0..=time.steps())
        .map(|n| shape.scaled(spec.amplitude(time.t(n), grid.length())))
        .collect();
    Ok(Trajectory {
        grid: *grid,
        time: *time,
        levels,
    })
}

/// Discrete energy bookkeeping of a stepped trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    /// `E_n = (ρ/2)‖D¹Uⁿ‖² + ½‖Uⁿ‖²_{H¹₀} + h^dim ΣF(Uⁿ)`, with `D¹U¹` used at `n = 0`.
    pub energy: Vec<f64>,
    /// Cumulative dissipation `D_n = Σ_{m≤n} τν⟨g(D¹U^m), D¹U^m⟩`.
    pub dissipation: Vec<f64>,
    /// `L_n = E_n + D_n - E_0`.
    pub residual: Vec<f64>,
    pub max_residual: f64,
    /// `E_{n+1} - E_n`.
    pub increments: Vec<f64>,
    /// Largest increase of `E_n + D_n` over the implicit steps.
    pub max_total_increase: f64,
    /// First step index from which `E_n + D_n` is expected to be monotone.
    pub monotone_from: usize,
}

pub fn energy_ledger(traj: &Trajectory, params: &WideParams) -> Result<EnergyLedger> {
    let grid = &traj.grid;
    let hd = grid.cell_volume();
    let big_n = traj.steps();
    let tau = traj.time.tau();
    let potential = |u: &[f64]| {
        0.5 * grid.dirichlet_energy(u)
            + hd * u.iter().map(|v| params.f_spec.density(*v)).sum::<f64>()
    };
    let kinetic = |v: &[f64]| 0.5 * params.rho * hd * v.iter().map(|x| x * x).sum::<f64>();

    let mut energy = Vec::with_capacity(big_n + 1);
    let mut dissipation = Vec::with_capacity(big_n + 1);
    let mut acc = 0.0;
    energy.push(kinetic(&traj.first_difference(1)) + potential(&traj.levels[0]));
    dissipation.push(0.0);
    for n in 1..=big_n {
        let vel = traj.first_difference(n);
        energy.push(kinetic(&vel) + potential(&traj.levels[n]));
        acc += tau
            * params.nu
            * hd
            * vel
                .iter()
                .map(|v| params.g_spec.derivative(*v) * v)
                .sum::<f64>();
        dissipation.push(acc);
    }
    let residual: Vec<f64> = energy
        .iter()
        .zip(&dissipation)
        .map(|(e, d)| e + d - energy[0])
        .collect();
    let max_residual = residual.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let increments = energy.windows(2).map(|w| w[1] - w[0]).collect();
    let monotone_from = if params.rho > 0.0 { 1 } else { 0 };
    let max_total_increase = (monotone_from..big_n)
        .map(|n| (energy[n + 1] + dissipation[n + 1]) - (energy[n] + dissipation[n]))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(EnergyLedger {
        energy,
        dissipation,
        residual,
        max_residual,
        increments,
        max_total_increase,
        monotone_from,
    })
}
