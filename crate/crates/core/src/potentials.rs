//! Convex scalar densities for the dissipation (`G`, with `g = G'`) and the
//! energy (`F`, with `f = F'`), their resolvents and Moreau–Yosida envelopes.
//!
//! Two resolvents appear: the pointwise one, solving `w + λ g(w) = v` node by
//! node, and the elliptic one `J_μ`, solving `w + μ(-Δ_h w + f(w)) = u` on the
//! whole grid.

use serde::{Deserialize, Serialize};

use crate::discretization::{dot, Field, Grid};
use crate::error::{Result, WideError};
use crate::solver::{newton_cg, ConvexObjective, LinearOperator, NewtonOptions};

/// Smoothing used for Newton curvature of pure powers away from `exponent = 2`.
pub const CURVATURE_SMOOTHING: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    Power,
    SmoothedPower,
}

/// `c |v|^q / q` or its smoothed variant `c ((v² + δ²)^{q/2} - δ^q) / q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub exponent: f64,
    pub coefficient: f64,
    pub smoothing: f64,
}

impl PotentialSpec {
    pub fn power(exponent: f64, coefficient: f64) -> Self {
        Self {
            kind: PotentialKind::Power,
            exponent,
            coefficient,
            smoothing: 0.0,
        }
    }

    pub fn smoothed(exponent: f64, coefficient: f64, smoothing: f64) -> Self {
        Self {
            kind: PotentialKind::SmoothedPower,
            exponent,
            coefficient,
            smoothing,
        }
    }

    /// `v² / 2`, i.e. `g(v) = v`.
    pub fn quadratic() -> Self {
        Self::power(2.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.exponent.is_finite() && self.exponent >= 1.0) {
            return Err(WideError::InvalidParameter {
                name: "exponent",
                reason: format!("{} must be >= 1", self.exponent),
            });
        }
        if !(self.coefficient.is_finite() && self.coefficient > 0.0) {
            return Err(WideError::InvalidParameter {
                name: "coefficient",
                reason: format!("{} must be positive", self.coefficient),
            });
        }
        if !(self.smoothing.is_finite() && self.smoothing >= 0.0) {
            return Err(WideError::InvalidParameter {
                name: "smoothing",
                reason: format!("{} must be nonnegative", self.smoothing),
            });
        }
        Ok(())
    }

    /// Whether the exponent lies in the dissipation range `2 <= p < 4`.
    /// Exponents `>= 4` are accepted by the solvers but fall outside the
    /// growth assumptions the limit results rely on.
    pub fn within_dissipation_assumptions(&self) -> bool {
        (2.0..4.0).contains(&self.exponent)
    }

    /// `g` is linear.
    pub fn is_quadratic(&self) -> bool {
        self.exponent == 2.0
    }

    pub fn density(&self, v: f64) -> f64 {
        let (c, q) = (self.coefficient, self.exponent);
        match self.kind {
            PotentialKind::Power => c * v.abs().powf(q) / q,
            PotentialKind::SmoothedPower => {
                let d = self.smoothing;
                c * d.powf(q) * (0.5 * q * (v / d).powi(2).ln_1p()).exp_m1() / q
            }
        }
    }

    pub fn derivative(&self, v: f64) -> f64 {
        let (c, q) = (self.coefficient, self.exponent);
        match self.kind {
            PotentialKind::Power => {
                if v == 0.0 {
                    0.0
                } else {
                    c * v.abs().powf(q - 2.0) * v
                }
            }
            PotentialKind::SmoothedPower => {
                let d = self.smoothing;
                c * (v * v + d * d).powf(0.5 * q - 1.0) * v
            }
        }
    }

    pub fn second(&self, v: f64) -> Result<f64> {
        let (c, q) = (self.coefficient, self.exponent);
        match self.kind {
            PotentialKind::Power => {
                if q == 2.0 {
                    Ok(c)
                } else if v == 0.0 {
                    if q < 2.0 {
                        Err(WideError::PotentialDomain(format!(
                            "second derivative of |v|^{q} is unbounded at v = 0"
                        )))
                    } else {
                        Ok(0.0)
                    }
                } else {
                    Ok(c * (q - 1.0) * v.abs().powf(q - 2.0))
                }
            }
            PotentialKind::SmoothedPower => Ok(smoothed_second(c, q, self.smoothing, v)),
        }
    }

    /// Order 0, 1 or 2 derivative.
    pub fn evaluate(&self, v: f64, order: usize) -> Result<f64> {
        match order {
            0 => Ok(self.density(v)),
            1 => Ok(self.derivative(v)),
            2 => self.second(v),
            _ => Err(WideError::InvalidParameter {
                name: "order",
                reason: format!("{order} not in {{0, 1, 2}}"),
            }),
        }
    }

    /// Nonnegative curvature for Newton systems: exact where finite and
    /// nondegenerate, otherwise the `δ = 1e-6` smoothed second derivative.
    pub fn curvature(&self, v: f64) -> f64 {
        match self.kind {
            PotentialKind::Power if self.exponent != 2.0 => {
                smoothed_second(self.coefficient, self.exponent, CURVATURE_SMOOTHING, v)
            }
            _ => self.second(v).unwrap_or(0.0),
        }
    }

    /// Resolvent `w` solving `w + λ g(w) = v`.
    pub fn prox(&self, v: f64, lambda: f64) -> Result<f64> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(WideError::InvalidParameter {
                name: "lambda",
                reason: format!("{lambda} must be positive"),
            });
        }
        prox_scalar(self, v, lambda)
    }

    /// `ψ_λ(v) = (v - w)² / (2λ) + G(w)` with `w` the resolvent.
    pub fn envelope(&self, v: f64, lambda: f64) -> Result<f64> {
        let w = self.prox(v, lambda)?;
        Ok((v - w) * (v - w) / (2.0 * lambda) + self.density(w))
    }

    /// Density, derivative and Newton curvature of the envelope at level
    /// `lambda`, or of the density itself when `lambda == 0`.
    pub(crate) fn regularized(&self, v: f64, lambda: f64) -> Result<(f64, f64, f64)> {
        if lambda == 0.0 {
            return Ok((self.density(v), self.derivative(v), self.curvature(v)));
        }
        let w = self.prox(v, lambda)?;
        let gp = self.curvature(w);
        Ok((
            (v - w) * (v - w) / (2.0 * lambda) + self.density(w),
            (v - w) / lambda,
            gp / (1.0 + lambda * gp),
        ))
    }

    /// Exact second derivative of the envelope (or density at `lambda == 0`).
    pub(crate) fn regularized_second(&self, v: f64, lambda: f64) -> Result<f64> {
        if lambda == 0.0 {
            return self.second(v);
        }
        let w = self.prox(v, lambda)?;
        let gp = self.second(w)?;
        Ok(gp / (1.0 + lambda * gp))
    }
}

fn smoothed_second(c: f64, q: f64, d: f64, v: f64) -> f64 {
    let s = v * v + d * d;
    c * s.powf(0.5 * q - 2.0) * ((q - 1.0) * v * v + d * d)
}

const PROX_MAX_ITER: usize = 500;

fn prox_scalar(spec: &PotentialSpec, v: f64, lambda: f64) -> Result<f64> {
    if v == 0.0 {
        return Ok(0.0);
    }
    let tol = 1e-12 * v.abs().max(1.0);
    let residual = |w: f64| w + lambda * spec.derivative(w) - v;
    // Residual is increasing in w; the root lies between 0 and v.
    let (mut lo, mut hi) = if v > 0.0 { (0.0, v) } else { (v, 0.0) };
    let mut w = if spec.is_quadratic() {
        v / (1.0 + lambda * spec.coefficient)
    } else {
        0.5 * (lo + hi)
    };
    for _ in 0..PROX_MAX_ITER {
        let r = residual(w);
        if r.abs() <= tol {
            return Ok(w);
        }
        if r > 0.0 {
            hi = w;
        } else {
            lo = w;
        }
        let slope = 1.0 + lambda * spec.second(w).unwrap_or(f64::INFINITY);
        let newton = w - r / slope;
        w = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * hi.abs().max(lo.abs()) {
            let r = residual(w);
            if r.abs() <= tol {
                return Ok(w);
            }
            return Err(WideError::ProxNonConvergence { v, residual: r });
        }
    }
    Err(WideError::ProxNonConvergence {
        v,
        residual: residual(w),
    })
}

/// Pointwise resolvent of the dissipation density; see [`PotentialSpec::prox`].
pub fn prox_pointwise(spec: &PotentialSpec, v: f64, lambda: f64) -> Result<f64> {
    spec.prox(v, lambda)
}

/// Discrete energy `φ_h(u) = ½‖u‖²_{H¹₀} + h^dim Σ F(u)`.
pub fn energy(f_spec: &PotentialSpec, grid: &Grid, u: &[f64]) -> f64 {
    0.5 * grid.dirichlet_energy(u)
        + grid.cell_volume() * u.iter().map(|v| f_spec.density(*v)).sum::<f64>()
}

/// Discrete dissipation `ψ_h(v) = h^dim Σ G(v)`, or its envelope at level `lambda`.
pub fn dissipation(g_spec: &PotentialSpec, grid: &Grid, v: &[f64], lambda: f64) -> Result<f64> {
    let mut s = 0.0;
    for x in v {
        s += if lambda > 0.0 {
            g_spec.envelope(*x, lambda)?
        } else {
            g_spec.density(*x)
        };
    }
    Ok(grid.cell_volume() * s)
}

/// `w + μ(-Δ_h w + f(w)) - u`, i.e. the H-gradient of the resolvent problem
/// divided by `h^dim`.
pub fn elliptic_prox_residual(
    f_spec: &PotentialSpec,
    grid: &Grid,
    u: &[f64],
    mu: f64,
    w: &[f64],
) -> Vec<f64> {
    let mut lap = vec![0.0; w.len()];
    grid.neg_laplacian_into(w, &mut lap);
    (0..w.len())
        .map(|i| w[i] + mu * (lap[i] + f_spec.derivative(w[i])) - u[i])
        .collect()
}

struct EllipticProx<'a> {
    f_spec: &'a PotentialSpec,
    grid: &'a Grid,
    u: &'a [f64],
    mu: f64,
}

pub(crate) struct ShiftedLaplacian<'a> {
    pub grid: &'a Grid,
    /// Multiplier of `-Δ_h`.
    pub scale: f64,
    /// Diagonal added to `scale * (-Δ_h)`.
    pub shift: Vec<f64>,
}

impl LinearOperator for ShiftedLaplacian<'_> {
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        self.grid.neg_laplacian_into(v, out);
        for i in 0..v.len() {
            out[i] = self.scale * out[i] + self.shift[i] * v[i];
        }
    }

    fn diagonal(&self, out: &mut [f64]) {
        let d = self.scale * self.grid.laplacian_diag();
        for i in 0..out.len() {
            out[i] = d + self.shift[i];
        }
    }
}

impl ConvexObjective for EllipticProx<'_> {
    type Hessian<'b>
        = ShiftedLaplacian<'b>
    where
        Self: 'b;

    fn dim(&self) -> usize {
        self.u.len()
    }

    fn value(&self, w: &[f64]) -> Result<f64> {
        let diff: f64 = w.iter().zip(self.u).map(|(a, b)| (a - b) * (a - b)).sum();
        let mut lap = vec![0.0; w.len()];
        self.grid.neg_laplacian_into(w, &mut lap);
        let pot: f64 = w.iter().map(|v| self.f_spec.density(*v)).sum();
        Ok(0.5 * diff + self.mu * (0.5 * dot(&lap, w) + pot))
    }

    fn gradient(&self, w: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&elliptic_prox_residual(
            self.f_spec,
            self.grid,
            self.u,
            self.mu,
            w,
        ));
        Ok(())
    }

    fn hessian<'b>(&'b self, w: &[f64]) -> Result<ShiftedLaplacian<'b>> {
        Ok(ShiftedLaplacian {
            grid: self.grid,
            scale: self.mu,
            shift: w
                .iter()
                .map(|v| 1.0 + self.mu * self.f_spec.curvature(*v))
                .collect(),
        })
    }

    fn gradient_norm(&self, g: &[f64]) -> f64 {
        (self.grid.cell_volume() * dot(g, g)).sqrt()
    }
}

/// Elliptic resolvent `J_μ u`: the solution of `w + μ(-Δ_h w + f(w)) = u`,
/// with `‖residual‖_{L²} <= 1e-10 (1 + ‖u‖_{L²})`.
pub fn prox_elliptic(f_spec: &PotentialSpec, grid: &Grid, u: &Field, mu: f64) -> Result<Field> {
    grid.check(u)?;
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(WideError::InvalidParameter {
            name: "mu",
            reason: format!("{mu} must be positive"),
        });
    }
    let u_norm = (grid.cell_volume() * dot(u, u)).sqrt();
    let problem = EllipticProx {
        f_spec,
        grid,
        u,
        mu,
    };
    let opts = NewtonOptions {
        // Leave a decade of headroom below the advertised tolerance.
        grad_tol: 1e-11 * (1.0 + u_norm),
        max_newton: 100,
        max_cg: 20 * u.len() + 100,
        cg_tol_floor: 1e-12,
    };
    let x0 = if f_spec.is_quadratic() {
        u.iter()
            .map(|v| v / (1.0 + mu * f_spec.coefficient))
            .collect()
    } else {
        u.to_vec()
    };
    let out = newton_cg(&problem, x0, &opts)?;
    if !out.stats.converged {
        return Err(WideError::CgNonConvergence {
            iterations: out.stats.cg_iterations,
            residual: out.stats.grad_norm,
        });
    }
    Ok(Field(out.x))
}

/// `(I + μ(-Δ_h + diag f'(w)))^{-1} v`, the derivative of `J_μ` at the point
/// whose resolvent is `w`.
pub(crate) fn elliptic_prox_derivative(
    f_spec: &PotentialSpec,
    grid: &Grid,
    w: &[f64],
    mu: f64,
    v: &[f64],
) -> Result<Vec<f64>> {
    let op = ShiftedLaplacian {
        grid,
        scale: mu,
        shift: w.iter().map(|x| 1.0 + mu * f_spec.curvature(*x)).collect(),
    };
    let out = crate::solver::conjugate_gradient(&op, v, 1e-13, 20 * v.len() + 100)?;
    if !out.converged && out.relative_residual > 1e-10 {
        return Err(WideError::CgNonConvergence {
            iterations: out.iterations,
            residual: out.relative_residual,
        });
    }
    Ok(out.x)
}

/// Which functional an envelope regularizes.
#[derive(Debug, Clone, Copy)]
pub enum EnvelopeInput<'a> {
    /// Pointwise dissipation density at a scalar velocity.
    Scalar(f64),
    /// Nodewise dissipation `ψ_h` of a velocity field.
    Dissipation { grid: &'a Grid, field: &'a [f64] },
    /// Energy `φ_h` of a state field.
    Energy { grid: &'a Grid, field: &'a Field },
}

/// Moreau–Yosida envelope at `level > 0` of the functional selected by `input`.
pub fn moreau_envelope(spec: &PotentialSpec, input: EnvelopeInput<'_>, level: f64) -> Result<f64> {
    if !(level > 0.0 && level.is_finite()) {
        return Err(WideError::InvalidParameter {
            name: "level",
            reason: format!("{level} must be positive"),
        });
    }
    match input {
        EnvelopeInput::Scalar(v) => spec.envelope(v, level),
        EnvelopeInput::Dissipation { grid, field } => {
            grid.check(field)?;
            dissipation(spec, grid, field, level)
        }
        EnvelopeInput::Energy { grid, field } => {
            let w = prox_elliptic(spec, grid, field, level)?;
            let diff: Vec<f64> = field.iter().zip(w.iter()).map(|(a, b)| a - b).collect();
            Ok(grid.cell_volume() * dot(&diff, &diff) / (2.0 * level) + energy(spec, grid, &w))
        }
    }
}

#[cfg(test)]
fn l2(grid: &Grid, v: &[f64]) -> f64 {
    grid.cell_volume().sqrt() * crate::discretization::norm2(v)
}
