//! The discrete Weighted Inertia-Dissipation-Energy functional
//!
//! ```text
//! I_h(U) = Σ_{n=1}^{N-1} τ e^{-t_n/ε}     (ε²ρ/2) ‖D²U^n‖²
//!        + Σ_{n=1}^{N}   τ e^{-t_{n-½}/ε}  εν ψ_h(D¹U^n)
//!        + Σ_{n=0}^{N}   τ w_n e^{-t_n/ε}  φ_h(U^n)
//! ```
//!
//! over trajectories with `U⁰ = u₀` and, when `ρ > 0`, `U¹ = U⁰ + τ u₁`.
//! With positive regularization levels `ψ_h` and `φ_h` are replaced by their
//! Moreau–Yosida envelopes.
//!
//! The gradient, Hessian-vector product and Euler–Lagrange residual are all
//! assembled level by level from the same stencil, so the residual vanishes
//! exactly where the gradient does.

use serde::{Deserialize, Serialize};

use crate::discretization::{exp_weight, Field, Grid, TimeAxis, Trajectory};
use crate::error::{Result, WideError};
use crate::potentials::{elliptic_prox_derivative, energy, prox_elliptic, PotentialSpec};
use crate::solver::{ConvexObjective, LinearOperator};

/// Moreau–Yosida levels; zero disables the corresponding envelope.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RegLevels {
    pub lambda: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WideParams {
    /// Inertia `ρ >= 0`; `ρ = 0` drops the initial-velocity constraint.
    pub rho: f64,
    /// Exponential weight scale `ε > 0`.
    pub eps: f64,
    /// Dissipation strength `ν`.
    pub nu: f64,
    pub reg: RegLevels,
    pub g_spec: PotentialSpec,
    pub f_spec: PotentialSpec,
}

impl WideParams {
    /// Linear damped case: `g(v) = v`, `f(u) = u`.
    pub fn linear(rho: f64, eps: f64, nu: f64) -> Self {
        Self {
            rho,
            eps,
            nu,
            reg: RegLevels::default(),
            g_spec: PotentialSpec::quadratic(),
            f_spec: PotentialSpec::quadratic(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &'static str, ok: bool, v: f64, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(WideError::InvalidParameter {
                    name,
                    reason: format!("{v} must be {what}"),
                })
            }
        };
        check(
            "rho",
            self.rho >= 0.0 && self.rho.is_finite(),
            self.rho,
            "nonnegative",
        )?;
        check(
            "eps",
            self.eps > 0.0 && self.eps.is_finite(),
            self.eps,
            "positive",
        )?;
        check(
            "nu",
            self.nu >= 0.0 && self.nu.is_finite(),
            self.nu,
            "nonnegative",
        )?;
        check(
            "lambda",
            self.reg.lambda >= 0.0 && self.reg.lambda.is_finite(),
            self.reg.lambda,
            "nonnegative",
        )?;
        check(
            "mu",
            self.reg.mu >= 0.0 && self.reg.mu.is_finite(),
            self.reg.mu,
            "nonnegative",
        )?;
        self.g_spec.validate()?;
        self.f_spec.validate()
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    /// First time level that is a free unknown.
    pub fn first_free(&self) -> usize {
        if self.rho > 0.0 {
            2
        } else {
            1
        }
    }
}

/// Per-level quantities needed by the value, gradient and residual.
struct LevelData {
    /// `D²U^k`, indexed by `k` (entries 0 and N are empty).
    d2: Vec<Vec<f64>>,
    /// Envelope-or-density values of `ψ_h(D¹U^k)` (without `h^dim`), `k >= 1`.
    diss: Vec<f64>,
    /// `ξ_k = ∂ψ(D¹U^k)`, `k >= 1`.
    xi: Vec<Vec<f64>>,
    /// `Φ(U^k) = φ_h(U^k) / h^dim`.
    energy: Vec<f64>,
    /// `η_k = ∇Φ(U^k)`.
    eta: Vec<Vec<f64>>,
}

/// Discrete WIDE minimization problem bound to its grid, time axis and data.
#[derive(Debug, Clone)]
pub struct WideProblem {
    pub params: WideParams,
    pub grid: Grid,
    pub time: TimeAxis,
    pub u0: Field,
    pub u1: Field,
}

impl WideProblem {
    pub fn new(
        params: WideParams,
        grid: Grid,
        time: TimeAxis,
        u0: Field,
        u1: Field,
    ) -> Result<Self> {
        params.validate()?;
        grid.check(&u0)?;
        grid.check(&u1)?;
        Ok(Self {
            params,
            grid,
            time,
            u0,
            u1,
        })
    }

    /// Problem whose constraint data are read off the trajectory itself.
    pub fn from_trajectory(traj: &Trajectory, params: &WideParams) -> Result<Self> {
        let u0 = traj.levels[0].clone();
        let u1 = if params.rho > 0.0 {
            Field(traj.first_difference(1))
        } else {
            traj.grid.zeros()
        };
        Self::new(*params, traj.grid, traj.time, u0, u1)
    }

    pub fn first_free(&self) -> usize {
        self.params.first_free()
    }

    pub fn free_levels(&self) -> usize {
        self.time.steps() + 1 - self.first_free()
    }

    pub fn node_count(&self) -> usize {
        self.grid.node_count()
    }

    /// Constrained levels `U⁰` and, for `ρ > 0`, `U¹ = U⁰ + τ u₁`.
    pub fn constrained_levels(&self) -> Vec<Field> {
        let mut out = vec![self.u0.clone()];
        if self.params.rho > 0.0 {
            out.push(self.u0.axpy(self.time.tau(), &self.u1));
        }
        out
    }

    pub fn check_constraints(&self, traj: &Trajectory) -> Result<()> {
        if traj.grid != self.grid || traj.time != self.time {
            return Err(WideError::ConstraintViolation(
                "grid or time axis differs from the problem".into(),
            ));
        }
        for (n, (have, want)) in traj
            .levels
            .iter()
            .zip(self.constrained_levels())
            .enumerate()
        {
            let scale = 1.0 + want.max_abs();
            let dev = have
                .iter()
                .zip(want.iter())
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            if dev > 1e-12 * scale {
                return Err(WideError::ConstraintViolation(format!(
                    "level {n} deviates from the initial data by {dev:e}"
                )));
            }
        }
        Ok(())
    }

    /// Trajectory from a vector of free unknowns.
    pub fn assemble(&self, free: &[f64]) -> Trajectory {
        let m = self.node_count();
        let mut levels = self.constrained_levels();
        levels.extend(free.chunks(m).map(|c| Field(c.to_vec())));
        Trajectory {
            grid: self.grid,
            time: self.time,
            levels,
        }
    }

    /// Free unknowns of a trajectory.
    pub fn free_part(&self, traj: &Trajectory) -> Vec<f64> {
        traj.levels[self.first_free()..]
            .iter()
            .flat_map(|l| l.iter().copied())
            .collect()
    }

    /// Constant-in-time extension of `u₀`, plus the ramp `t u₁` when `ρ > 0`.
    pub fn initial_guess(&self) -> Trajectory {
        let ramp = self.params.rho > 0.0;
        let levels = (0..=self.time.steps())
            .map(|n| {
                if ramp {
                    self.u0.axpy(self.time.t(n), &self.u1)
                } else {
                    self.u0.clone()
                }
            })
            .collect();
        Trajectory {
            grid: self.grid,
            time: self.time,
            levels,
        }
    }

    fn level_data(&self, traj: &Trajectory) -> Result<LevelData> {
        let p = &self.params;
        let big_n = self.time.steps();
        let m = self.node_count();
        let mut d2 = vec![Vec::new(); big_n + 1];
        if p.rho > 0.0 {
            for (k, slot) in d2.iter_mut().enumerate().take(big_n).skip(1) {
                *slot = traj.second_difference(k);
            }
        }
        let mut diss = vec![0.0; big_n + 1];
        let mut xi = vec![Vec::new(); big_n + 1];
        for k in 1..=big_n {
            let vel = traj.first_difference(k);
            let mut s = 0.0;
            let mut x = Vec::with_capacity(m);
            for v in vel {
                let (val, der, _) = p.g_spec.regularized(v, p.reg.lambda)?;
                s += val;
                x.push(der);
            }
            diss[k] = s;
            xi[k] = x;
        }
        let mut en = vec![0.0; big_n + 1];
        let mut eta = vec![Vec::new(); big_n + 1];
        let hd = self.grid.cell_volume();
        if p.reg.mu > 0.0 {
            for (k, level) in traj.levels.iter().enumerate() {
                let w = prox_elliptic(&p.f_spec, &self.grid, level, p.reg.mu)?;
                let diff: Vec<f64> = level.iter().zip(w.iter()).map(|(a, b)| a - b).collect();
                en[k] = diff.iter().map(|d| d * d).sum::<f64>() / (2.0 * p.reg.mu)
                    + energy(&p.f_spec, &self.grid, &w) / hd;
                eta[k] = diff.iter().map(|d| d / p.reg.mu).collect();
            }
        } else {
            for (k, level) in traj.levels.iter().enumerate() {
                en[k] = energy(&p.f_spec, &self.grid, level) / hd;
                let mut lap = vec![0.0; m];
                self.grid.neg_laplacian_into(level, &mut lap);
                eta[k] = lap
                    .iter()
                    .zip(level.iter())
                    .map(|(a, u)| a + p.f_spec.derivative(*u))
                    .collect();
            }
        }
        Ok(LevelData {
            d2,
            diss,
            xi,
            energy: en,
            eta,
        })
    }

    fn check_shape(&self, traj: &Trajectory) -> Result<()> {
        if traj.levels.len() != self.time.steps() + 1 {
            return Err(WideError::LevelCountMismatch {
                expected: self.time.steps() + 1,
                found: traj.levels.len(),
            });
        }
        for l in &traj.levels {
            self.grid.check(l)?;
        }
        Ok(())
    }

    /// Value of the functional. The inertia sum is added last, so the value at
    /// `ρ > 0` is never below the value at `ρ = 0` on the same trajectory.
    pub fn value(&self, traj: &Trajectory) -> Result<f64> {
        self.check_shape(traj)?;
        let data = self.level_data(traj)?;
        Ok(self.value_from(&data))
    }

    fn value_from(&self, data: &LevelData) -> f64 {
        let p = &self.params;
        let tau = self.time.tau();
        let hd = self.grid.cell_volume();
        let big_n = self.time.steps();
        let mut dissipation = 0.0;
        for k in 1..=big_n {
            let w = exp_weight(self.time.t_mid(k), p.eps);
            if w > 0.0 {
                dissipation += tau * w * p.eps * p.nu * hd * data.diss[k];
            }
        }
        let mut en = 0.0;
        for k in 0..=big_n {
            let w = exp_weight(self.time.t(k), p.eps);
            if w > 0.0 {
                en += tau * self.time.trapezoid_weight(k) * w * hd * data.energy[k];
            }
        }
        let mut inertia = 0.0;
        if p.rho > 0.0 {
            for k in 1..big_n {
                let w = exp_weight(self.time.t(k), p.eps);
                if w > 0.0 {
                    let s: f64 = data.d2[k].iter().map(|v| v * v).sum();
                    inertia += tau * w * 0.5 * p.eps * p.eps * p.rho * hd * s;
                }
            }
        }
        (dissipation + en) + inertia
    }

    /// `∂I/∂U^n` divided by `weight_ref`, where the weights are supplied as
    /// `weight(t) = e^{-t/ε} / weight_ref`.
    fn level_gradient(
        &self,
        n: usize,
        d2: &[Vec<f64>],
        xi: &[Vec<f64>],
        eta: &[Vec<f64>],
        weight: &dyn Fn(f64) -> f64,
        out: &mut [f64],
    ) {
        let p = &self.params;
        let tau = self.time.tau();
        let hd = self.grid.cell_volume();
        let big_n = self.time.steps();
        out.fill(0.0);
        if p.rho > 0.0 {
            let c = p.eps * p.eps * p.rho * hd / tau;
            for (k, coef) in [(n.wrapping_sub(1), 1.0), (n, -2.0), (n + 1, 1.0)] {
                if k >= 1 && k < big_n {
                    let w = weight(self.time.t(k));
                    if w > 0.0 {
                        let s = c * w * coef;
                        for (o, v) in out.iter_mut().zip(&d2[k]) {
                            *o += s * v;
                        }
                    }
                }
            }
        }
        let c = p.eps * p.nu * hd;
        if n >= 1 {
            let w = weight(self.time.t_mid(n));
            if w > 0.0 {
                for (o, v) in out.iter_mut().zip(&xi[n]) {
                    *o += c * w * v;
                }
            }
        }
        if n < big_n {
            let w = weight(self.time.t_mid(n + 1));
            if w > 0.0 {
                for (o, v) in out.iter_mut().zip(&xi[n + 1]) {
                    *o -= c * w * v;
                }
            }
        }
        let w = weight(self.time.t(n));
        if w > 0.0 {
            let s = tau * self.time.trapezoid_weight(n) * w * hd;
            for (o, v) in out.iter_mut().zip(&eta[n]) {
                *o += s * v;
            }
        }
    }

    /// Gradient with respect to the free levels, one field per free level.
    pub fn gradient(&self, traj: &Trajectory) -> Result<Vec<Field>> {
        self.check_shape(traj)?;
        let data = self.level_data(traj)?;
        Ok(self.gradient_from(&data))
    }

    fn gradient_from(&self, data: &LevelData) -> Vec<Field> {
        let eps = self.params.eps;
        let weight = move |t: f64| exp_weight(t, eps);
        let m = self.node_count();
        (self.first_free()..=self.time.steps())
            .map(|n| {
                let mut g = vec![0.0; m];
                self.level_gradient(n, &data.d2, &data.xi, &data.eta, &weight, &mut g);
                Field(g)
            })
            .collect()
    }

    /// Curvature data at `traj`. With `exact = true` the true second
    /// derivatives are used (and must exist); otherwise the Newton curvature.
    pub fn hessian_at(&self, traj: &Trajectory, exact: bool) -> Result<WideHessian<'_>> {
        self.check_shape(traj)?;
        let p = &self.params;
        let big_n = self.time.steps();
        let mut diss_curv = vec![Vec::new(); big_n + 1];
        for (k, slot) in diss_curv.iter_mut().enumerate().skip(1) {
            let vel = traj.first_difference(k);
            *slot = vel
                .iter()
                .map(|v| {
                    if exact {
                        p.g_spec.regularized_second(*v, p.reg.lambda)
                    } else {
                        p.g_spec.regularized(*v, p.reg.lambda).map(|r| r.2)
                    }
                })
                .collect::<Result<_>>()?;
        }
        let mut energy_points = Vec::with_capacity(big_n + 1);
        let mut energy_curv = Vec::with_capacity(big_n + 1);
        for level in &traj.levels {
            let point = if p.reg.mu > 0.0 {
                prox_elliptic(&p.f_spec, &self.grid, level, p.reg.mu)?.0
            } else {
                level.0.clone()
            };
            let curv = point
                .iter()
                .map(|v| {
                    if exact {
                        p.f_spec.second(*v)
                    } else {
                        Ok(p.f_spec.curvature(*v))
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            energy_points.push(point);
            energy_curv.push(curv);
        }
        Ok(WideHessian {
            problem: self,
            diss_curv,
            energy_points,
            energy_curv,
        })
    }

    /// Euler–Lagrange residual of `traj`; see [`ElResidual`].
    pub fn el_residual(&self, traj: &Trajectory) -> Result<ElResidual> {
        self.check_shape(traj)?;
        let big_n = self.time.steps();
        if big_n < 5 {
            return Err(WideError::InvalidTimeAxis(format!(
                "Euler-Lagrange stencils need N >= 5, got {big_n}"
            )));
        }
        let data = self.level_data(traj)?;
        let p = &self.params;
        let eps = p.eps;
        let tau = self.time.tau();
        let hd = self.grid.cell_volume();
        let m = self.node_count();
        let relative = |t_ref: f64| move |t: f64| (-(t - t_ref) / eps).exp();

        let mut g = vec![0.0; m];
        let (interior_start, interior_end) = if p.rho > 0.0 {
            (2, big_n - 2)
        } else {
            (1, big_n - 1)
        };
        let mut interior = Vec::with_capacity(interior_end + 1 - interior_start);
        for n in interior_start..=interior_end {
            let w = relative(self.time.t(n));
            self.level_gradient(n, &data.d2, &data.xi, &data.eta, &w, &mut g);
            interior.push(Field(g.iter().map(|v| v / (tau * hd)).collect()));
        }

        let (terminal_acc, terminal_jet) = if p.rho > 0.0 {
            let w = relative(self.time.t(big_n - 1));
            let mut g_last = vec![0.0; m];
            let mut g_prev = vec![0.0; m];
            self.level_gradient(big_n, &data.d2, &data.xi, &data.eta, &w, &mut g_last);
            self.level_gradient(big_n - 1, &data.d2, &data.xi, &data.eta, &w, &mut g_prev);
            let acc = g_last.iter().map(|v| v * tau / (hd * eps * eps)).collect();
            let jet = g_last
                .iter()
                .zip(&g_prev)
                .map(|(a, b)| -(a + b) / (hd * eps))
                .collect();
            (Field(acc), Field(jet))
        } else {
            let w = relative(self.time.t_mid(big_n));
            let mut g_last = vec![0.0; m];
            self.level_gradient(big_n, &data.d2, &data.xi, &data.eta, &w, &mut g_last);
            (
                Field::zeros(m),
                Field(g_last.iter().map(|v| -v / (hd * eps)).collect()),
            )
        };

        Ok(ElResidual {
            interior_start,
            interior,
            terminal_acc,
            terminal_jet,
            xi: data.xi.into_iter().skip(1).map(Field).collect(),
            eta: data.eta.into_iter().map(Field).collect(),
        })
    }

    pub fn value_and_gradient(&self, traj: &Trajectory) -> Result<(f64, Vec<Field>)> {
        self.check_shape(traj)?;
        let data = self.level_data(traj)?;
        Ok((self.value_from(&data), self.gradient_from(&data)))
    }
}

/// Residual of the discrete Euler–Lagrange system.
///
/// `interior[j]` is the stationarity condition at level `interior_start + j`
/// divided by its local weight `τ h^dim e^{-t_n/ε}`; it approximates
/// `ρε²u'''' − 2ρεu''' + ρu'' − ενξ' + νξ + η`. For `ρ > 0` the interior
/// levels are `2..=N-2`; levels `N-1` and `N` are folded into the two
/// terminal quantities, which approximate `ρu''(T)` and `ερu'''(T) − νξ(T)`
/// up to `O(τ)` and vanish exactly at a discrete minimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElResidual {
    pub interior_start: usize,
    pub interior: Vec<Field>,
    pub terminal_acc: Field,
    pub terminal_jet: Field,
    /// `ξ_n` for `n = 1..=N`.
    pub xi: Vec<Field>,
    /// `η_n` for `n = 0..=N`.
    pub eta: Vec<Field>,
}

impl ElResidual {
    /// Largest discrete L² norm over the interior levels.
    pub fn max_interior_norm(&self, grid: &Grid) -> f64 {
        self.interior
            .iter()
            .map(|f| {
                grid.norm(f, crate::discretization::NormKind::L2)
                    .unwrap_or(f64::NAN)
            })
            .fold(0.0, f64::max)
    }
}

/// Linearization of the WIDE gradient at a fixed trajectory, acting on the
/// free unknowns.
pub struct WideHessian<'a> {
    problem: &'a WideProblem,
    diss_curv: Vec<Vec<f64>>,
    energy_points: Vec<Vec<f64>>,
    energy_curv: Vec<Vec<f64>>,
}

impl WideHessian<'_> {
    fn energy_apply(&self, k: usize, v: &[f64], out: &mut [f64]) {
        let pr = self.problem;
        let mu = pr.params.reg.mu;
        if mu > 0.0 {
            let z = elliptic_prox_derivative(
                &pr.params.f_spec,
                &pr.grid,
                &self.energy_points[k],
                mu,
                v,
            )
            .expect("elliptic resolvent derivative is an SPD solve");
            for i in 0..v.len() {
                out[i] = (v[i] - z[i]) / mu;
            }
        } else {
            pr.grid.neg_laplacian_into(v, out);
            for i in 0..v.len() {
                out[i] += self.energy_curv[k][i] * v[i];
            }
        }
    }

    /// Applies the Hessian to a direction given on all levels (constrained
    /// levels must be zero) and returns the result on the free levels.
    pub fn apply_levels(&self, dir: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let pr = self.problem;
        let p = &pr.params;
        let big_n = pr.time.steps();
        let tau = pr.time.tau();
        let m = pr.node_count();
        let mut d2 = vec![Vec::new(); big_n + 1];
        if p.rho > 0.0 {
            for (k, slot) in d2.iter_mut().enumerate().take(big_n).skip(1) {
                *slot = (0..m)
                    .map(|i| (dir[k + 1][i] - 2.0 * dir[k][i] + dir[k - 1][i]) / (tau * tau))
                    .collect();
            }
        }
        let mut xi = vec![Vec::new(); big_n + 1];
        for k in 1..=big_n {
            xi[k] = (0..m)
                .map(|i| self.diss_curv[k][i] * (dir[k][i] - dir[k - 1][i]) / tau)
                .collect();
        }
        let mut eta = vec![vec![0.0; m]; big_n + 1];
        for k in pr.first_free()..=big_n {
            self.energy_apply(k, &dir[k], &mut eta[k]);
        }
        let eps = p.eps;
        let weight = move |t: f64| exp_weight(t, eps);
        (pr.first_free()..=big_n)
            .map(|n| {
                let mut out = vec![0.0; m];
                pr.level_gradient(n, &d2, &xi, &eta, &weight, &mut out);
                out
            })
            .collect()
    }

    fn free_to_levels(&self, v: &[f64]) -> Vec<Vec<f64>> {
        let pr = self.problem;
        let m = pr.node_count();
        let mut levels = vec![vec![0.0; m]; pr.first_free()];
        levels.extend(v.chunks(m).map(|c| c.to_vec()));
        levels
    }
}

impl LinearOperator for WideHessian<'_> {
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let levels = self.free_to_levels(v);
        let res = self.apply_levels(&levels);
        for (o, r) in out.chunks_mut(self.problem.node_count()).zip(res) {
            o.copy_from_slice(&r);
        }
    }

    fn diagonal(&self, out: &mut [f64]) {
        let pr = self.problem;
        let p = &pr.params;
        let big_n = pr.time.steps();
        let tau = pr.time.tau();
        let hd = pr.grid.cell_volume();
        let m = pr.node_count();
        let lap_diag = pr.grid.laplacian_diag();
        for (j, n) in (pr.first_free()..=big_n).enumerate() {
            let slot = &mut out[j * m..(j + 1) * m];
            let mut inertia = 0.0;
            if p.rho > 0.0 {
                for (k, coef) in [(n.wrapping_sub(1), 1.0), (n, 4.0), (n + 1, 1.0)] {
                    if k >= 1 && k < big_n {
                        inertia += exp_weight(pr.time.t(k), p.eps) * coef;
                    }
                }
                inertia *= p.eps * p.eps * p.rho * hd / (tau * tau * tau);
            }
            let w_here = exp_weight(pr.time.t_mid(n), p.eps);
            let w_next = if n < big_n {
                exp_weight(pr.time.t_mid(n + 1), p.eps)
            } else {
                0.0
            };
            let w_energy = tau * pr.time.trapezoid_weight(n) * exp_weight(pr.time.t(n), p.eps) * hd;
            let c = p.eps * p.nu * hd / tau;
            for i in 0..m {
                let mut d = inertia + c * w_here * self.diss_curv[n][i];
                if n < big_n {
                    d += c * w_next * self.diss_curv[n + 1][i];
                }
                let e = if p.reg.mu > 0.0 {
                    let a = lap_diag + self.energy_curv[n][i];
                    a / (1.0 + p.reg.mu * a)
                } else {
                    lap_diag + self.energy_curv[n][i]
                };
                d += w_energy * e;
                slot[i] = d;
            }
        }
    }
}

impl ConvexObjective for WideProblem {
    type Hessian<'a> = WideHessian<'a>;

    fn dim(&self) -> usize {
        self.free_levels() * self.node_count()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        WideProblem::value(self, &self.assemble(x))
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let g = WideProblem::gradient(self, &self.assemble(x))?;
        for (o, f) in out.chunks_mut(self.node_count()).zip(g) {
            o.copy_from_slice(&f);
        }
        Ok(())
    }

    fn hessian<'a>(&'a self, x: &[f64]) -> Result<WideHessian<'a>> {
        self.hessian_at(&self.assemble(x), false)
    }

    /// Largest per-level discrete L² norm of the gradient divided by the
    /// local weight `τ h^dim e^{-t_n/ε}`, i.e. of the Euler–Lagrange residual.
    fn gradient_norm(&self, g: &[f64]) -> f64 {
        self.scaled_gradient_norm(g)
    }
}

impl WideProblem {
    pub fn scaled_gradient_norm(&self, g: &[f64]) -> f64 {
        let m = self.node_count();
        let hd = self.grid.cell_volume();
        let tau = self.time.tau();
        g.chunks(m)
            .enumerate()
            .map(|(j, level)| {
                let w = exp_weight(self.time.t(self.first_free() + j), self.params.eps);
                if w == 0.0 {
                    return 0.0;
                }
                let s: f64 = level.iter().map(|v| v * v).sum();
                (hd * s).sqrt() / (tau * hd * w)
            })
            .fold(0.0, f64::max)
    }
}

/// `I_h(traj)`, with constraint data read off the trajectory.
pub fn eval_wide(traj: &Trajectory, params: &WideParams) -> Result<f64> {
    WideProblem::from_trajectory(traj, params)?.value(traj)
}

/// Exact gradient over the free levels (`n >= 2` for `ρ > 0`, `n >= 1` otherwise).
pub fn grad_wide(traj: &Trajectory, params: &WideParams) -> Result<Vec<Field>> {
    WideProblem::from_trajectory(traj, params)?.gradient(traj)
}

/// Exact Hessian of `I_h` at `traj` applied to a direction over the free levels.
pub fn hess_vec(traj: &Trajectory, direction: &[Field], params: &WideParams) -> Result<Vec<Field>> {
    let problem = WideProblem::from_trajectory(traj, params)?;
    if direction.len() != problem.free_levels() {
        return Err(WideError::LevelCountMismatch {
            expected: problem.free_levels(),
            found: direction.len(),
        });
    }
    for d in direction {
        problem.grid.check(d)?;
    }
    let hess = problem.hessian_at(traj, true)?;
    let mut levels = vec![vec![0.0; problem.node_count()]; problem.first_free()];
    levels.extend(direction.iter().map(|d| d.0.clone()));
    Ok(hess.apply_levels(&levels).into_iter().map(Field).collect())
}

/// Euler–Lagrange residual of `traj`.
pub fn el_residual(traj: &Trajectory, params: &WideParams) -> Result<ElResidual> {
    WideProblem::from_trajectory(traj, params)?.el_residual(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::NormKind;
    use crate::potentials::PotentialSpec;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn random_traj(grid: Grid, time: TimeAxis, seed: u64) -> Trajectory {
        let mut rng = StdRng::seed_from_u64(seed);
        let levels = (0..=time.steps())
            .map(|_| {
                Field(
                    (0..grid.node_count())
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect(),
                )
            })
            .collect();
        Trajectory::new(grid, time, levels).unwrap()
    }

    fn params_for(p: f64, r: f64, rho: f64) -> WideParams {
        let g = if p == 2.0 {
            PotentialSpec::quadratic()
        } else {
            PotentialSpec::power(p, 1.0)
        };
        let f = match r as i32 {
            1 => PotentialSpec::smoothed(1.0, 0.5, 0.2),
            2 => PotentialSpec::quadratic(),
            _ => PotentialSpec::power(r, 1.0),
        };
        WideParams {
            rho,
            eps: 0.5,
            nu: 0.8,
            reg: RegLevels::default(),
            g_spec: g,
            f_spec: f,
        }
    }

    fn free_flat(problem: &WideProblem, traj: &Trajectory) -> Vec<f64> {
        problem.free_part(traj)
    }

    #[test]
    fn zero_trajectory_has_zero_value_and_residual() {
        let grid = Grid::unit_1d(6);
        let time = TimeAxis::new(1.0, 8).unwrap();
        let traj = Trajectory::zeros(grid, time);
        for rho in [0.0, 1.0] {
            let params = params_for(3.0, 3.0, rho);
            assert_eq!(eval_wide(&traj, &params).unwrap(), 0.0);
            let res = el_residual(&traj, &params).unwrap();
            assert!(res.interior.iter().all(|f| f.iter().all(|v| *v == 0.0)));
            assert!(res.terminal_acc.iter().all(|v| *v == 0.0));
            assert!(res.terminal_jet.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn constant_trajectory_reduces_to_energy_quadrature() {
        let grid = Grid::unit_1d(7);
        let time = TimeAxis::new(1.0, 10).unwrap();
        let u0 = grid.sample(|x| (PI * x[0]).sin() + 0.3 * (3.0 * PI * x[0]).sin());
        let traj = Trajectory::new(grid, time, vec![u0.clone(); 11]).unwrap();
        let params = params_for(3.0, 3.0, 1.0).with_eps(0.3);
        let phi = energy(&params.f_spec, &grid, &u0);
        let trap: f64 = (0..=10)
            .map(|n| time.tau() * time.trapezoid_weight(n) * (-time.t(n) / 0.3).exp())
            .sum();
        let value = eval_wide(&traj, &params).unwrap();
        assert!((value - phi * trap).abs() <= 1e-14 * value.abs());
    }

    #[test]
    fn two_step_ramp_matches_hand_sum() {
        // Single interior node: h = 1/2, -Δ_h u = 8u.
        let grid = Grid::unit_1d(1);
        let time = TimeAxis::new(1.0, 2).unwrap();
        let a = 0.7;
        let traj = Trajectory::new(
            grid,
            time,
            vec![Field(vec![0.0]), Field(vec![a]), Field(vec![2.0 * a])],
        )
        .unwrap();
        let (eps, nu) = (0.4, 1.3);
        let params = WideParams::linear(0.0, eps, nu);
        let (h, tau) = (0.5, 0.5);
        let v = a / tau;
        let diss = tau * (-0.25 / eps).exp() * eps * nu * h * 0.5 * v * v
            + tau * (-0.75 / eps).exp() * eps * nu * h * 0.5 * v * v;
        let phi = |u: f64| 0.5 * 8.0 * u * u * h + h * 0.5 * u * u;
        let en = tau * (-0.5 / eps).exp() * phi(a) + tau * 0.5 * (-1.0 / eps).exp() * phi(2.0 * a);
        let value = eval_wide(&traj, &params).unwrap();
        assert!((value - (diss + en)).abs() <= 1e-14 * value);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let grid = Grid::unit_1d(8);
        let time = TimeAxis::new(1.0, 16).unwrap();
        for p in [2.0, 3.0] {
            for r in [1.0, 2.0, 3.0] {
                for rho in [0.0, 1.0] {
                    let params = params_for(p, r, rho);
                    let traj = random_traj(grid, time, 11);
                    let problem = WideProblem::from_trajectory(&traj, &params).unwrap();
                    let x = free_flat(&problem, &traj);
                    let mut g = vec![0.0; x.len()];
                    ConvexObjective::gradient(&problem, &x, &mut g).unwrap();
                    let gmax = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                    let s = 1e-5;
                    for i in 0..x.len() {
                        let mut xp = x.clone();
                        let mut xm = x.clone();
                        xp[i] += s;
                        xm[i] -= s;
                        let fd = (ConvexObjective::value(&problem, &xp).unwrap()
                            - ConvexObjective::value(&problem, &xm).unwrap())
                            / (2.0 * s);
                        let scale = g[i].abs().max(1e-3 * gmax);
                        assert!(
                            (fd - g[i]).abs() <= 1e-6 * scale,
                            "p={p} r={r} rho={rho} i={i}: fd {fd} vs {}",
                            g[i]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn regularized_gradient_matches_central_differences() {
        let grid = Grid::unit_1d(6);
        let time = TimeAxis::new(1.0, 10).unwrap();
        let mut params = params_for(3.0, 3.0, 1.0);
        params.reg = RegLevels {
            lambda: 0.05,
            mu: 0.02,
        };
        let traj = random_traj(grid, time, 5);
        let problem = WideProblem::from_trajectory(&traj, &params).unwrap();
        let x = free_flat(&problem, &traj);
        let mut g = vec![0.0; x.len()];
        ConvexObjective::gradient(&problem, &x, &mut g).unwrap();
        let gmax = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let s = 1e-5;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += s;
            xm[i] -= s;
            let fd = (ConvexObjective::value(&problem, &xp).unwrap()
                - ConvexObjective::value(&problem, &xm).unwrap())
                / (2.0 * s);
            assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1e-3 * gmax));
        }
    }

    #[test]
    fn quadratic_gradient_is_affine() {
        let grid = Grid::unit_1d(5);
        let time = TimeAxis::new(1.0, 9).unwrap();
        let params = WideParams::linear(1.0, 0.4, 1.0);
        let u1 = random_traj(grid, time, 1);
        let mut u2 = random_traj(grid, time, 2);
        // Share the constrained levels so all three live in one admissible class.
        u2.levels[0] = u1.levels[0].clone();
        u2.levels[1] = u1.levels[1].clone();
        let problem = WideProblem::from_trajectory(&u1, &params).unwrap();
        let x1 = problem.free_part(&u1);
        let x2 = problem.free_part(&u2);
        let sum: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a + b).collect();
        let zero = vec![0.0; x1.len()];
        let grad = |x: &[f64]| {
            let mut g = vec![0.0; x.len()];
            ConvexObjective::gradient(&problem, x, &mut g).unwrap();
            g
        };
        let (g1, g2, g12, g0) = (grad(&x1), grad(&x2), grad(&sum), grad(&zero));
        let scale = g12.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        for i in 0..g1.len() {
            assert!((g12[i] - (g1[i] + g2[i] - g0[i])).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn quadratic_hessian_is_constant() {
        let grid = Grid::unit_1d(5);
        let time = TimeAxis::new(1.0, 9).unwrap();
        let params = WideParams::linear(1.0, 0.4, 1.0);
        let a = random_traj(grid, time, 3);
        let b = random_traj(grid, time, 4);
        let dir: Vec<Field> = random_traj(grid, time, 9).levels[2..].to_vec();
        let ha = hess_vec(&a, &dir, &params).unwrap();
        let hb = hess_vec(&b, &dir, &params).unwrap();
        for (x, y) in ha.iter().zip(&hb) {
            for (p, q) in x.iter().zip(y.iter()) {
                assert!((p - q).abs() <= 1e-13 * (1.0 + p.abs()));
            }
        }
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let grid = Grid::unit_1d(6);
        let time = TimeAxis::new(1.0, 12).unwrap();
        for (p, r, rho) in [
            (2.0, 2.0, 1.0),
            (3.0, 3.0, 1.0),
            (3.0, 1.0, 0.0),
            (2.5, 3.0, 0.5),
        ] {
            let mut params = params_for(p, r, rho);
            if p == 2.5 {
                params.g_spec = PotentialSpec::smoothed(2.5, 1.0, 1e-6);
            }
            let traj = random_traj(grid, time, 21);
            let problem = WideProblem::from_trajectory(&traj, &params).unwrap();
            let dir: Vec<Field> =
                random_traj(grid, time, 22).levels[problem.first_free()..].to_vec();
            let hv = hess_vec(&traj, &dir, &params).unwrap();
            let x = problem.free_part(&traj);
            let d: Vec<f64> = dir.iter().flat_map(|f| f.iter().copied()).collect();
            let s = 1e-6;
            let xs: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + s * b).collect();
            let mut g0 = vec![0.0; x.len()];
            let mut g1 = vec![0.0; x.len()];
            ConvexObjective::gradient(&problem, &x, &mut g0).unwrap();
            ConvexObjective::gradient(&problem, &xs, &mut g1).unwrap();
            let fd: Vec<f64> = g1.iter().zip(&g0).map(|(a, b)| (a - b) / s).collect();
            let flat: Vec<f64> = hv.iter().flat_map(|f| f.iter().copied()).collect();
            let err: f64 = fd
                .iter()
                .zip(&flat)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = flat.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(err <= 1e-5 * norm, "p={p} r={r} rho={rho}: {err} vs {norm}");
        }
    }

    #[test]
    fn regularized_hessian_matches_gradient_differences() {
        let grid = Grid::unit_1d(5);
        let time = TimeAxis::new(1.0, 8).unwrap();
        let mut params = params_for(3.0, 3.0, 1.0);
        params.reg = RegLevels {
            lambda: 0.1,
            mu: 0.05,
        };
        let traj = random_traj(grid, time, 31);
        let problem = WideProblem::from_trajectory(&traj, &params).unwrap();
        let dir: Vec<Field> = random_traj(grid, time, 32).levels[2..].to_vec();
        let hv = hess_vec(&traj, &dir, &params).unwrap();
        let x = problem.free_part(&traj);
        let d: Vec<f64> = dir.iter().flat_map(|f| f.iter().copied()).collect();
        let s = 1e-6;
        let xs: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + s * b).collect();
        let mut g0 = vec![0.0; x.len()];
        let mut g1 = vec![0.0; x.len()];
        ConvexObjective::gradient(&problem, &x, &mut g0).unwrap();
        ConvexObjective::gradient(&problem, &xs, &mut g1).unwrap();
        let flat: Vec<f64> = hv.iter().flat_map(|f| f.iter().copied()).collect();
        let err: f64 = g1
            .iter()
            .zip(&g0)
            .zip(&flat)
            .map(|((a, b), h)| ((a - b) / s - h).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = flat.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err <= 1e-5 * norm, "{err} vs {norm}");
    }

    #[test]
    fn hessian_is_symmetric_and_nonnegative() {
        let grid = Grid::unit_1d(6);
        let time = TimeAxis::new(1.0, 10).unwrap();
        let params = params_for(3.0, 3.0, 1.0);
        let traj = random_traj(grid, time, 41);
        let mut rng = StdRng::seed_from_u64(42);
        let free = time.steps() - 1;
        let mut dir = || -> Vec<Field> {
            (0..free)
                .map(|_| Field((0..6).map(|_| rng.random_range(-1.0..1.0)).collect()))
                .collect()
        };
        let ip = |a: &[Field], b: &[Field]| -> f64 {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| p * q).sum::<f64>())
                .sum()
        };
        for _ in 0..100 {
            let (v, w) = (dir(), dir());
            let hv = hess_vec(&traj, &v, &params).unwrap();
            let hw = hess_vec(&traj, &w, &params).unwrap();
            let (a, b) = (ip(&hv, &w), ip(&v, &hw));
            assert!((a - b).abs() <= 1e-11 * (a.abs() + b.abs() + 1.0));
            assert!(ip(&hv, &v) >= 0.0);
        }
    }

    #[test]
    fn newton_diagonal_matches_operator() {
        let grid = Grid::unit_1d(4);
        let time = TimeAxis::new(1.0, 6).unwrap();
        for rho in [0.0, 1.0] {
            let params = params_for(3.0, 3.0, rho);
            let traj = random_traj(grid, time, 51);
            let problem = WideProblem::from_trajectory(&traj, &params).unwrap();
            let hess = problem.hessian_at(&traj, false).unwrap();
            let dim = problem.dim();
            let mut diag = vec![0.0; dim];
            hess.diagonal(&mut diag);
            for i in 0..dim {
                let mut e = vec![0.0; dim];
                e[i] = 1.0;
                let mut he = vec![0.0; dim];
                hess.apply(&e, &mut he);
                assert!((he[i] - diag[i]).abs() <= 1e-12 * diag[i].abs());
            }
        }
    }

    #[test]
    fn envelope_ordering_on_trajectories() {
        let grid = Grid::unit_1d(6);
        let time = TimeAxis::new(1.0, 10).unwrap();
        let traj = random_traj(grid, time, 61);
        let plain = params_for(3.0, 3.0, 1.0);
        let mut reg = plain;
        reg.reg = RegLevels {
            lambda: 0.1,
            mu: 0.01,
        };
        assert!(eval_wide(&traj, &reg).unwrap() <= eval_wide(&traj, &plain).unwrap());
    }

    #[test]
    fn inertia_only_adds() {
        let grid = Grid::unit_1d(6);
        let time = TimeAxis::new(1.0, 10).unwrap();
        let traj = random_traj(grid, time, 71);
        let params = params_for(3.0, 2.0, 0.0);
        let base = eval_wide(&traj, &params).unwrap();
        for rho in [1e-12, 1e-6, 1.0] {
            assert!(eval_wide(&traj, &params.with_rho(rho)).unwrap() >= base);
        }
    }

    #[test]
    fn dissipation_and_potential_terms_scale_linearly() {
        // Inertia and the Dirichlet energy carry neither ν nor the F
        // coefficient, so the functional is affine (not linear) in the scale.
        let grid = Grid::unit_1d(5);
        let time = TimeAxis::new(1.0, 8).unwrap();
        let traj = random_traj(grid, time, 81);
        let scaled = |c: f64| {
            let params = WideParams {
                rho: 0.7,
                eps: 0.5,
                nu: 1.1 * c,
                reg: RegLevels::default(),
                g_spec: PotentialSpec::power(3.0, 1.0),
                f_spec: PotentialSpec::power(3.0, c),
            };
            eval_wide(&traj, &params).unwrap()
        };
        let (i1, i2, i3) = (scaled(1.0), scaled(2.0), scaled(3.0));
        assert!(((i3 - i2) - (i2 - i1)).abs() <= 1e-12 * i3);
    }

    #[test]
    fn residual_rejects_short_horizons() {
        let grid = Grid::unit_1d(3);
        let time = TimeAxis::new(1.0, 4).unwrap();
        let traj = Trajectory::zeros(grid, time);
        assert!(matches!(
            el_residual(&traj, &WideParams::linear(1.0, 0.5, 1.0)),
            Err(WideError::InvalidTimeAxis(_))
        ));
    }

    /// `ρε²a'''' − 2ρεa''' + ρa'' − ενa'' + νa' + (π² + 1)a` for `a = sin t`.
    fn continuum_operator(rho: f64, eps: f64, nu: f64, t: f64) -> f64 {
        let (s, c) = (t.sin(), t.cos());
        rho * eps * eps * s - 2.0 * rho * eps * (-c) + rho * (-s) - eps * nu * (-s)
            + nu * c
            + (PI * PI + 1.0) * s
    }

    fn manufactured_error(n: usize, steps: usize, rho: f64) -> f64 {
        let (eps, nu) = (0.5, 1.0);
        let grid = Grid::unit_1d(n);
        let time = TimeAxis::new(1.0, steps).unwrap();
        let traj = Trajectory::from_fn(grid, time, |t, x| t.sin() * (PI * x[0]).sin());
        let res = el_residual(&traj, &WideParams::linear(rho, eps, nu)).unwrap();
        let mut worst = 0.0_f64;
        for (j, level) in res.interior.iter().enumerate() {
            let t = time.t(res.interior_start + j);
            let exact = grid.sample(|x| continuum_operator(rho, eps, nu, t) * (PI * x[0]).sin());
            let diff: Vec<f64> = level.iter().zip(exact.iter()).map(|(a, b)| a - b).collect();
            worst = worst.max(grid.norm(&diff, NormKind::L2).unwrap());
        }
        worst
    }

    #[test]
    fn manufactured_residual_converges() {
        for rho in [0.0, 1.0] {
            let errs: Vec<f64> = [(8, 16), (16, 32), (32, 64)]
                .iter()
                .map(|&(n, s)| manufactured_error(n, s, rho))
                .collect();
            for w in errs.windows(2) {
                let order = (w[0] / w[1]).log2();
                assert!(order >= 0.9, "rho={rho}: errors {errs:?}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn functional_is_convex(seed in 0u64..1000, theta in 0.01f64..0.99) {
            let grid = Grid::unit_1d(5);
            let time = TimeAxis::new(1.0, 8).unwrap();
            let params = params_for(3.0, 3.0, 1.0);
            let a = random_traj(grid, time, seed);
            let mut b = random_traj(grid, time, seed + 7919);
            b.levels[0] = a.levels[0].clone();
            b.levels[1] = a.levels[1].clone();
            let problem = WideProblem::from_trajectory(&a, &params).unwrap();
            let xa = problem.free_part(&a);
            let xb = problem.free_part(&b);
            let mix: Vec<f64> = xa.iter().zip(&xb).map(|(p, q)| theta * p + (1.0 - theta) * q).collect();
            let v = |x: &[f64]| ConvexObjective::value(&problem, x).unwrap();
            prop_assert!(v(&mix) <= theta * v(&xa) + (1.0 - theta) * v(&xb) + 1e-12);
        }
    }
}
