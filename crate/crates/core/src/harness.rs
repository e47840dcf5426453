//! Limit experiments: parameter sweeps toward the causal (`ε → 0`), viscous
//! (`ρ → 0`) and diagonal limits, the Γ-recovery construction, and the
//! a-priori bound monitor.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::{exp_weight, Field, Grid, NormKind, TimeAxis, TimeWeight, Trajectory};
use crate::error::{Result, WideError};
use crate::minimizer::minimize_wide;
use crate::potentials::dissipation;
use crate::reference::{modal_reference, solve_hyperbolic, solve_parabolic, ModalSpec};
use crate::solver::NewtonOptions;
use crate::wide::{eval_wide, WideParams};

/// Discrete error norms between two trajectories on the same mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorNorms {
    /// `(Σ τ w_n ‖eⁿ‖²_{L²})^{1/2}`
    pub l2l2: f64,
    /// `(Σ_{n≥1} τ ‖D¹eⁿ‖^p_{L^p})^{1/p}`
    pub lpv: f64,
    /// `(Σ τ w_n ‖eⁿ‖²_{H¹₀})^{1/2}`
    pub l2x: f64,
}

impl ErrorNorms {
    pub const NAN: ErrorNorms = ErrorNorms {
        l2l2: f64::NAN,
        lpv: f64::NAN,
        l2x: f64::NAN,
    };

    pub fn get(&self, norm: ErrorNorm) -> f64 {
        match norm {
            ErrorNorm::L2L2 => self.l2l2,
            ErrorNorm::LpV => self.lpv,
            ErrorNorm::L2X => self.l2x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorNorm {
    L2L2,
    LpV,
    L2X,
}

impl ErrorNorm {
    pub const ALL: [ErrorNorm; 3] = [ErrorNorm::L2L2, ErrorNorm::LpV, ErrorNorm::L2X];
}

/// Error norms of `a - b`; `p` is the exponent of the velocity space.
pub fn error_norms(a: &Trajectory, b: &Trajectory, p: f64) -> Result<ErrorNorms> {
    if a.grid != b.grid || a.time != b.time {
        return Err(WideError::InvalidParameter {
            name: "trajectory",
            reason: "error norms need trajectories on the same mesh".into(),
        });
    }
    let grid = &a.grid;
    let diff: Vec<Vec<f64>> = a
        .levels
        .iter()
        .zip(&b.levels)
        .map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| p - q).collect())
        .collect();
    let l2: Vec<f64> = diff
        .iter()
        .map(|e| grid.norm(e, NormKind::L2).map(|v| v * v))
        .collect::<Result<_>>()?;
    let h1: Vec<f64> = diff.iter().map(|e| grid.dirichlet_energy(e)).collect();
    let tau = a.time.tau();
    let mut lp = 0.0;
    for n in 1..diff.len() {
        let d: Vec<f64> = diff[n]
            .iter()
            .zip(&diff[n - 1])
            .map(|(x, y)| (x - y) / tau)
            .collect();
        lp += tau * grid.norm(&d, NormKind::Lp(p))?.powf(p);
    }
    Ok(ErrorNorms {
        l2l2: crate::discretization::weighted_quadrature(&l2, TimeWeight::None, &a.time)?.sqrt(),
        lpv: lp.powf(1.0 / p),
        l2x: crate::discretization::weighted_quadrature(&h1, TimeWeight::None, &a.time)?.sqrt(),
    })
}

pub const APRIORI_LABELS: [&str; 5] = [
    "eps*rho*sum tau |D2U|^2",
    "sum tau psi(D1U)",
    "sum tau phi(U)",
    "rho |D1U^N - u1|^2",
    "sup |U^n|_V",
];

/// Discrete analogues of the uniform a-priori bounds, in the order of
/// [`APRIORI_LABELS`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AprioriReport {
    pub values: [f64; 5],
}

impl AprioriReport {
    pub const NAN: AprioriReport = AprioriReport {
        values: [f64::NAN; 5],
    };

    /// Whether every diagnostic is at most `factor` times the reference one.
    pub fn bounded_by(&self, reference: &AprioriReport, factor: f64) -> bool {
        self.values
            .iter()
            .zip(&reference.values)
            .all(|(v, r)| v.is_finite() && *v <= factor * r.abs() + 1e-300)
    }
}

/// `u1` is the prescribed initial velocity entering the fourth diagnostic;
/// the velocity space `V` is `L^p` with `p` the dissipation exponent.
pub fn apriori_report(traj: &Trajectory, params: &WideParams, u1: &Field) -> Result<AprioriReport> {
    let grid = &traj.grid;
    grid.check(u1)?;
    let tau = traj.time.tau();
    let big_n = traj.steps();
    let p = params.g_spec.exponent;
    let mut inertia = 0.0;
    for n in 1..big_n {
        inertia += tau * grid.norm(&traj.second_difference(n), NormKind::L2)?.powi(2);
    }
    let mut diss = 0.0;
    for n in 1..=big_n {
        diss += tau
            * dissipation(
                &params.g_spec,
                grid,
                &traj.first_difference(n),
                params.reg.lambda,
            )?;
    }
    let phi: Vec<f64> = traj
        .levels
        .iter()
        .map(|u| crate::potentials::energy(&params.f_spec, grid, u))
        .collect();
    let energy = crate::discretization::weighted_quadrature(&phi, TimeWeight::None, &traj.time)?;
    let last: Vec<f64> = traj
        .first_difference(big_n)
        .iter()
        .zip(u1.iter())
        .map(|(a, b)| a - b)
        .collect();
    let terminal = params.rho * grid.norm(&last, NormKind::L2)?.powi(2);
    let sup = traj
        .levels
        .iter()
        .map(|u| grid.norm(u, NormKind::Lp(p)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(AprioriReport {
        values: [
            params.eps * params.rho * inertia,
            diss,
            energy,
            terminal,
            sup,
        ],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// `ε → 0` at fixed `ρ`: WIDE minimizers against the hyperbolic reference.
    Causal,
    /// `ρ → 0`: hyperbolic stepper against the parabolic stepper.
    Viscous,
    /// `(ε, ρ) → (0, 0)` along paired lists: WIDE minimizers against the
    /// parabolic stepper.
    Diagonal,
    /// `ρ → 0` recovery sequences of the `ρ = 0` minimizer at fixed `ε`.
    Gamma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub mode: SweepMode,
    pub eps_list: Vec<f64>,
    pub rho_list: Vec<f64>,
    pub template: WideParams,
    pub norms: Vec<ErrorNorm>,
    pub newton: NewtonOptions,
    /// Exponent in `ρ̃ = ρ^{1/s}` for the gamma mode.
    pub gamma_s: f64,
}

impl SweepSpec {
    pub fn new(mode: SweepMode, template: WideParams) -> Self {
        Self {
            mode,
            eps_list: Vec::new(),
            rho_list: Vec::new(),
            template,
            norms: ErrorNorm::ALL.to_vec(),
            newton: NewtonOptions {
                grad_tol: 1e-8,
                ..NewtonOptions::default()
            },
            gamma_s: 4.0,
        }
    }

    pub fn with_eps(mut self, eps: &[f64]) -> Self {
        self.eps_list = eps.to_vec();
        self
    }

    pub fn with_rho(mut self, rho: &[f64]) -> Self {
        self.rho_list = rho.to_vec();
        self
    }

    /// Parameter points `(ε, ρ)` in sweep order.
    pub fn points(&self) -> Result<Vec<(f64, f64)>> {
        let decreasing = |name: &'static str, list: &[f64]| -> Result<()> {
            if list.is_empty() {
                return Err(WideError::InvalidParameter {
                    name,
                    reason: "sweep list is empty".into(),
                });
            }
            if list.iter().any(|v| !(v.is_finite() && *v > 0.0))
                || list.windows(2).any(|w| w[1] >= w[0])
            {
                return Err(WideError::InvalidParameter {
                    name,
                    reason: format!("{list:?} must be positive and strictly decreasing"),
                });
            }
            Ok(())
        };
        let t = &self.template;
        Ok(match self.mode {
            SweepMode::Causal => {
                decreasing("eps_list", &self.eps_list)?;
                self.eps_list.iter().map(|&e| (e, t.rho)).collect()
            }
            SweepMode::Viscous | SweepMode::Gamma => {
                decreasing("rho_list", &self.rho_list)?;
                self.rho_list.iter().map(|&r| (t.eps, r)).collect()
            }
            SweepMode::Diagonal => {
                decreasing("eps_list", &self.eps_list)?;
                decreasing("rho_list", &self.rho_list)?;
                if self.eps_list.len() != self.rho_list.len() {
                    return Err(WideError::InvalidParameter {
                        name: "rho_list",
                        reason: "diagonal sweeps pair eps_list and rho_list entry by entry".into(),
                    });
                }
                self.eps_list
                    .iter()
                    .copied()
                    .zip(self.rho_list.iter().copied())
                    .collect()
            }
        })
    }
}

/// Initial data shared by all points of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepData {
    pub u0: Field,
    pub u1: Field,
    /// Exact single-mode reference for the linear sub-case of causal sweeps.
    pub modal: Option<ModalSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: f64,
    pub eps: f64,
    pub rho: f64,
    pub errors: ErrorNorms,
    /// `log₂` of the ratio to the previous row's errors; NaN on the first row.
    pub orders: ErrorNorms,
    pub apriori: AprioriReport,
    /// Recovery gap `|I_ρε(u_ρ̃) - Ī_ε(u)|` (gamma mode only).
    pub gap: Option<f64>,
    pub newton_iterations: Option<usize>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub mode: SweepMode,
    pub norms: Vec<ErrorNorm>,
    pub rows: Vec<SweepRow>,
    /// Error of the causal stepper itself against the exact reference on the
    /// same mesh (causal mode with a modal reference).
    pub scheme_discrepancy: Option<ErrorNorms>,
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:e}")
    }
}

impl ConvergenceTable {
    pub fn errors(&self, norm: ErrorNorm) -> Vec<f64> {
        self.rows.iter().map(|r| r.errors.get(norm)).collect()
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.gap.unwrap_or(f64::NAN))
            .collect()
    }

    pub fn strictly_decreasing(&self, norm: ErrorNorm) -> bool {
        let e = self.errors(norm);
        e.iter().all(|v| v.is_finite()) && e.windows(2).all(|w| w[1] < w[0])
    }

    /// Whether every row's diagnostics stay within `factor` times those of the
    /// first (coarsest) row.
    pub fn apriori_bounded(&self, factor: f64) -> bool {
        match self.rows.first() {
            Some(first) => self
                .rows
                .iter()
                .all(|r| r.apriori.bounded_by(&first.apriori, factor)),
            None => true,
        }
    }

    /// Largest ratio of any diagnostic to its value on the first row.
    pub fn apriori_spread(&self) -> f64 {
        let Some(first) = self.rows.first() else {
            return 0.0;
        };
        self.rows
            .iter()
            .flat_map(|r| {
                r.apriori
                    .values
                    .iter()
                    .zip(&first.apriori.values)
                    .map(|(v, f)| if *f == 0.0 && *v == 0.0 { 1.0 } else { v / f })
            })
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let with_gap = self.rows.iter().any(|r| r.gap.is_some());
        let mut out = String::from(
            "parameter,err_L2L2,err_LpV,err_L2X,order_L2L2,order_LpV,order_L2X,apriori_1,apriori_2,apriori_3,apriori_4,apriori_5",
        );
        if with_gap {
            out.push_str(",gap");
        }
        out.push('\n');
        for r in &self.rows {
            let mut cells = vec![fmt_num(r.parameter)];
            for norm in ErrorNorm::ALL {
                cells.push(fmt_num(if self.norms.contains(&norm) {
                    r.errors.get(norm)
                } else {
                    f64::NAN
                }));
            }
            for norm in ErrorNorm::ALL {
                cells.push(fmt_num(if self.norms.contains(&norm) {
                    r.orders.get(norm)
                } else {
                    f64::NAN
                }));
            }
            cells.extend(r.apriori.values.iter().map(|v| fmt_num(*v)));
            if with_gap {
                cells.push(fmt_num(r.gap.unwrap_or(f64::NAN)));
            }
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

/// Velocity exponent used for the `L^p(0,T;V)` error.
fn velocity_exponent(params: &WideParams) -> f64 {
    params.g_spec.exponent.clamp(2.0, 3.999_999)
}

struct PointResult {
    errors: ErrorNorms,
    apriori: AprioriReport,
    gap: Option<f64>,
    newton_iterations: Option<usize>,
}

/// Runs every point of the sweep on the current rayon pool. Failures are
/// recorded per row and do not stop the sweep.
pub fn sweep(
    spec: &SweepSpec,
    grid: &Grid,
    time: &TimeAxis,
    data: &SweepData,
) -> Result<ConvergenceTable> {
    spec.template.validate()?;
    grid.check(&data.u0)?;
    grid.check(&data.u1)?;
    let points = spec.points()?;
    let p = velocity_exponent(&spec.template);

    let scheme_discrepancy = match (spec.mode, &data.modal) {
        (SweepMode::Causal, Some(modal)) => {
            let exact = modal_reference(modal, grid, time)?;
            let stepped = solve_hyperbolic(&spec.template, grid, time, &data.u0, &data.u1)?;
            Some(error_norms(&stepped, &exact, p)?)
        }
        _ => None,
    };

    // References shared by every point.
    let shared = match spec.mode {
        SweepMode::Causal => Some(match &data.modal {
            Some(modal) => modal_reference(modal, grid, time)?,
            None => solve_hyperbolic(&spec.template, grid, time, &data.u0, &data.u1)?,
        }),
        SweepMode::Viscous | SweepMode::Diagonal => {
            Some(solve_parabolic(&spec.template, grid, time, &data.u0)?)
        }
        SweepMode::Gamma => {
            let limit = spec.template.with_rho(0.0);
            let out = minimize_wide(&limit, *grid, *time, &data.u0, &data.u1, &spec.newton)?;
            if !out.stats.converged {
                return Err(WideError::NewtonNonConvergence {
                    iterations: out.stats.iterations,
                    grad_norm: out.stats.grad_norm,
                });
            }
            Some(out.traj)
        }
    };
    let reference = shared.as_ref().expect("reference");

    let run = |&(eps, rho): &(f64, f64)| -> Result<PointResult> {
        let params = spec.template.with_eps(eps).with_rho(rho);
        match spec.mode {
            SweepMode::Causal | SweepMode::Diagonal => {
                let out = minimize_wide(&params, *grid, *time, &data.u0, &data.u1, &spec.newton)?;
                if !out.stats.converged {
                    return Err(WideError::NewtonNonConvergence {
                        iterations: out.stats.iterations,
                        grad_norm: out.stats.grad_norm,
                    });
                }
                Ok(PointResult {
                    errors: error_norms(&out.traj, reference, p)?,
                    apriori: apriori_report(&out.traj, &params, &data.u1)?,
                    gap: None,
                    newton_iterations: Some(out.stats.iterations),
                })
            }
            SweepMode::Viscous => {
                let traj = solve_hyperbolic(&params, grid, time, &data.u0, &data.u1)?;
                Ok(PointResult {
                    errors: error_norms(&traj, reference, p)?,
                    apriori: apriori_report(&traj, &params, &data.u1)?,
                    gap: None,
                    newton_iterations: None,
                })
            }
            SweepMode::Gamma => {
                let rec = gamma_recovery(reference, &params, spec.gamma_s, &data.u1)?;
                Ok(PointResult {
                    errors: error_norms(&rec.recovered, reference, p)?,
                    apriori: apriori_report(&rec.recovered, &params, &data.u1)?,
                    gap: Some(rec.gap),
                    newton_iterations: None,
                })
            }
        }
    };

    let results: Vec<Result<PointResult>> = points.par_iter().map(run).collect();

    let mut rows: Vec<SweepRow> = Vec::with_capacity(points.len());
    for (&(eps, rho), res) in points.iter().zip(results) {
        let parameter = match spec.mode {
            SweepMode::Causal | SweepMode::Diagonal => eps,
            SweepMode::Viscous | SweepMode::Gamma => rho,
        };
        let row = match res {
            Ok(pr) => SweepRow {
                parameter,
                eps,
                rho,
                errors: pr.errors,
                orders: ErrorNorms::NAN,
                apriori: pr.apriori,
                gap: pr.gap,
                newton_iterations: pr.newton_iterations,
                failure: None,
            },
            Err(e) => SweepRow {
                parameter,
                eps,
                rho,
                errors: ErrorNorms::NAN,
                orders: ErrorNorms::NAN,
                apriori: AprioriReport::NAN,
                gap: (spec.mode == SweepMode::Gamma).then_some(f64::NAN),
                newton_iterations: None,
                failure: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    for k in 1..rows.len() {
        let (prev, cur) = (rows[k - 1].errors, rows[k].errors);
        rows[k].orders = ErrorNorms {
            l2l2: (prev.l2l2 / cur.l2l2).log2(),
            lpv: (prev.lpv / cur.lpv).log2(),
            l2x: (prev.l2x / cur.l2x).log2(),
        };
    }
    Ok(ConvergenceTable {
        mode: spec.mode,
        norms: spec.norms.clone(),
        rows,
        scheme_discrepancy,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len()) as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaRecovery {
    pub recovered: Trajectory,
    pub rho_tilde: f64,
    /// `I_ρε` at the recovered trajectory.
    pub i_val: f64,
    /// `Ī_ε = I_{0,ε}` at the input trajectory.
    pub ibar_val: f64,
    pub gap: f64,
}

/// Normalized discrete bump kernel on the nodes `jτ`, `|j| < ρ̃/τ`.
fn mollifier(rho_tilde: f64, tau: f64) -> Vec<f64> {
    let half = (rho_tilde / tau).ceil() as usize;
    let mut g: Vec<f64> = (0..=half)
        .map(|j| {
            let s = j as f64 * tau / rho_tilde;
            if s < 1.0 {
                (-1.0 / (1.0 - s * s)).exp()
            } else {
                0.0
            }
        })
        .collect();
    // Symmetric: τ (g_0 + 2 Σ_{j≥1} g_j) = 1.
    let total = tau * (g[0] + 2.0 * g[1..].iter().sum::<f64>());
    for v in &mut g {
        *v /= total;
    }
    g
}

/// Recovery trajectory of the Γ-limit construction for the `ρ = 0`
/// admissible trajectory `u` at inertia `params.rho`:
///
/// `R = g ⋆ u + u₀ - (g ⋆ u)(0) + c ζ`, `ζ(t) = t e^{-t/ρ̃}`, `ρ̃ = ρ^{1/s}`,
///
/// where `g` is a bump mollifier of radius `ρ̃`, `u` is extended by `u₀`
/// before `0` and by `u(T)` after `T`, and `c` makes `(R¹ - R⁰)/τ = u₁`.
pub fn gamma_recovery(
    u: &Trajectory,
    params: &WideParams,
    s: f64,
    u1: &Field,
) -> Result<GammaRecovery> {
    if !(s > 3.0 && s.is_finite()) {
        return Err(WideError::InvalidParameter {
            name: "s",
            reason: format!("{s} must exceed 3"),
        });
    }
    if !(params.rho > 0.0) {
        return Err(WideError::InvalidParameter {
            name: "rho",
            reason: "the recovery construction needs ρ > 0".into(),
        });
    }
    u.grid.check(u1)?;
    let time = u.time;
    let tau = time.tau();
    let big_n = time.steps() as isize;
    let rho_tilde = params.rho.powf(1.0 / s);
    if rho_tilde >= time.t_final() {
        return Err(WideError::Mollifier(format!(
            "radius ρ̃ = {rho_tilde} is not below the final time {}",
            time.t_final()
        )));
    }
    if rho_tilde <= tau {
        return Err(WideError::Mollifier(format!(
            "radius ρ̃ = {rho_tilde} does not exceed the time step {tau}"
        )));
    }
    let kernel = mollifier(rho_tilde, tau);
    let half = kernel.len() as isize - 1;
    let at = |k: isize| &u.levels[k.clamp(0, big_n) as usize];
    let m = u.node_count();
    // (g ⋆ u)(t_n) = u_n + τ Σ_j g_j (u_{n-j} - u_n); exact on constants.
    let smooth: Vec<Vec<f64>> = (0..=big_n)
        .map(|n| {
            let centre = at(n);
            let mut acc = vec![0.0; m];
            for j in -half..=half {
                let w = tau * kernel[j.unsigned_abs()];
                if w == 0.0 || j == 0 {
                    continue;
                }
                let other = at(n - j);
                for i in 0..m {
                    acc[i] += w * (other[i] - centre[i]);
                }
            }
            centre.iter().zip(&acc).map(|(c, a)| c + a).collect()
        })
        .collect();
    let u0 = &u.levels[0];
    let slope0: Vec<f64> = (0..m)
        .map(|i| (smooth[1][i] - smooth[0][i]) / tau)
        .collect();
    // ζ(τ)/τ = e^{-τ/ρ̃} is the discrete initial slope of the corrector.
    let zeta_slope = (-tau / rho_tilde).exp();
    let coef: Vec<f64> = (0..m).map(|i| (u1[i] - slope0[i]) / zeta_slope).collect();
    let levels: Vec<Field> = (0..=big_n as usize)
        .map(|n| {
            let t = time.t(n);
            let zeta = t * exp_weight(t, rho_tilde);
            Field(
                (0..m)
                    .map(|i| {
                        if n == 0 {
                            u0[i]
                        } else {
                            smooth[n][i] + u0[i] - smooth[0][i] + coef[i] * zeta
                        }
                    })
                    .collect(),
            )
        })
        .collect();
    let recovered = Trajectory {
        grid: u.grid,
        time,
        levels,
    };
    let i_val = eval_wide(&recovered, params)?;
    let ibar_val = eval_wide(u, &params.with_rho(0.0))?;
    Ok(GammaRecovery {
        recovered,
        rho_tilde,
        i_val,
        ibar_val,
        gap: (i_val - ibar_val).abs(),
    })
}
