//! Space-time meshes, the Dirichlet stencil Laplacian, discrete norms,
//! finite differences in time and weighted trapezoid quadrature.
//!
//! Fields live on the interior nodes of a uniform grid over `(0, L)^dim`;
//! boundary values are identically zero and never stored. The 2D layout is
//! row-major with the first axis varying slowest.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Result, WideError};

/// Exponential weights below this value are treated as exactly zero.
pub const WEIGHT_FLOOR: f64 = 1e-300;

/// `exp(-t / eps)`, clamped to zero below [`WEIGHT_FLOOR`].
pub fn exp_weight(t: f64, eps: f64) -> f64 {
    let w = (-t / eps).exp();
    if w < WEIGHT_FLOOR {
        0.0
    } else {
        w
    }
}

/// Uniform interior grid with homogeneous Dirichlet boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    n_per_axis: usize,
    length: f64,
}

impl Grid {
    pub fn new(dim: usize, n_per_axis: usize, length: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(WideError::InvalidGrid(format!(
                "dimension {dim} not supported (use 1 or 2)"
            )));
        }
        if n_per_axis == 0 {
            return Err(WideError::InvalidGrid(
                "need at least one interior node per axis".into(),
            ));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(WideError::InvalidGrid(format!(
                "domain length {length} must be positive"
            )));
        }
        Ok(Self {
            dim,
            n_per_axis,
            length,
        })
    }

    /// 1D grid on `(0, 1)`.
    pub fn unit_1d(n_per_axis: usize) -> Self {
        Self::new(1, n_per_axis, 1.0).expect("valid unit grid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_per_axis(&self) -> usize {
        self.n_per_axis
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Mesh spacing `L / (n + 1)`.
    pub fn h(&self) -> f64 {
        self.length / (self.n_per_axis as f64 + 1.0)
    }

    /// Quadrature weight of one node, `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    pub fn node_count(&self) -> usize {
        self.n_per_axis.pow(self.dim as u32)
    }

    /// Physical coordinates of node `idx`. Unused trailing entries are zero.
    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let h = self.h();
        match self.dim {
            1 => [(idx + 1) as f64 * h, 0.0],
            _ => {
                let i = idx / self.n_per_axis;
                let j = idx % self.n_per_axis;
                [(i + 1) as f64 * h, (j + 1) as f64 * h]
            }
        }
    }

    /// Samples `profile` at every interior node.
    pub fn sample(&self, profile: impl Fn(&[f64]) -> f64) -> Field {
        Field(
            (0..self.node_count())
                .map(|idx| profile(&self.coords(idx)[..self.dim]))
                .collect(),
        )
    }

    pub fn zeros(&self) -> Field {
        Field::zeros(self.node_count())
    }

    pub fn check(&self, field: &[f64]) -> Result<()> {
        if field.len() != self.node_count() {
            return Err(WideError::DimensionMismatch {
                expected: self.node_count(),
                found: field.len(),
            });
        }
        Ok(())
    }

    /// Applies `-Δ_h` (three-point / five-point stencil) to `field`.
    pub fn laplacian_apply(&self, field: &Field) -> Result<Field> {
        self.check(field)?;
        let mut out = self.zeros();
        self.neg_laplacian_into(field, &mut out);
        Ok(out)
    }

    /// Unchecked `out = -Δ_h u`; both slices must have `node_count()` entries.
    pub fn neg_laplacian_into(&self, u: &[f64], out: &mut [f64]) {
        let n = self.n_per_axis;
        let inv_h2 = 1.0 / (self.h() * self.h());
        match self.dim {
            1 => {
                for i in 0..n {
                    let left = if i > 0 { u[i - 1] } else { 0.0 };
                    let right = if i + 1 < n { u[i + 1] } else { 0.0 };
                    out[i] = (2.0 * u[i] - left - right) * inv_h2;
                }
            }
            _ => {
                for i in 0..n {
                    for j in 0..n {
                        let k = i * n + j;
                        let mut acc = 4.0 * u[k];
                        if i > 0 {
                            acc -= u[k - n];
                        }
                        if i + 1 < n {
                            acc -= u[k + n];
                        }
                        if j > 0 {
                            acc -= u[k - 1];
                        }
                        if j + 1 < n {
                            acc -= u[k + 1];
                        }
                        out[k] = acc * inv_h2;
                    }
                }
            }
        }
    }

    /// Diagonal entry of `-Δ_h`, `2 dim / h²`.
    pub fn laplacian_diag(&self) -> f64 {
        2.0 * self.dim as f64 / (self.h() * self.h())
    }

    /// Stencil eigenvalue of `sin(kπx/L)` along one axis.
    pub fn stencil_eigenvalue(&self, k: usize) -> f64 {
        let h = self.h();
        let theta = k as f64 * std::f64::consts::PI * h / self.length;
        (2.0 - 2.0 * theta.cos()) / (h * h)
    }

    /// Discrete inner product `h^dim Σ u v`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.cell_volume() * dot(u, v)
    }

    /// `⟨-Δ_h u, u⟩ h^dim`, the squared discrete `H¹₀` norm.
    pub fn dirichlet_energy(&self, u: &[f64]) -> f64 {
        let mut lap = vec![0.0; u.len()];
        self.neg_laplacian_into(u, &mut lap);
        self.inner(&lap, u)
    }

    pub fn norm(&self, field: &[f64], kind: NormKind) -> Result<f64> {
        self.check(field)?;
        let hd = self.cell_volume();
        match kind {
            NormKind::L2 => Ok((hd * dot(field, field)).sqrt()),
            NormKind::Lp(p) => {
                check_lp_exponent(p)?;
                let s: f64 = field.iter().map(|v| v.abs().powf(p)).sum();
                Ok((hd * s).powf(1.0 / p))
            }
            NormKind::H10 => Ok(self.dirichlet_energy(field).max(0.0).sqrt()),
        }
    }
}

pub(crate) fn check_lp_exponent(p: f64) -> Result<()> {
    if (2.0..4.0).contains(&p) {
        Ok(())
    } else {
        Err(WideError::InvalidNormExponent(p))
    }
}

/// Which discrete spatial norm to take.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NormKind {
    L2,
    Lp(f64),
    H10,
}

/// Uniform time axis `t_n = n T / N`, `n = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeAxis {
    t_final: f64,
    steps: usize,
}

impl TimeAxis {
    pub fn new(t_final: f64, steps: usize) -> Result<Self> {
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(WideError::InvalidTimeAxis(format!(
                "final time {t_final} must be positive"
            )));
        }
        if steps < 2 {
            return Err(WideError::InvalidTimeAxis(format!(
                "need at least 2 steps, got {steps}"
            )));
        }
        Ok(Self { t_final, steps })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    /// Number of steps `N`; there are `N + 1` time levels.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn tau(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    /// Node `t_n`; exact at both ends.
    pub fn t(&self, n: usize) -> f64 {
        if n == self.steps {
            self.t_final
        } else {
            n as f64 * self.tau()
        }
    }

    /// Midpoint `t_{n-1/2}` of the backward cell ending at `t_n`.
    pub fn t_mid(&self, n: usize) -> f64 {
        (n as f64 - 0.5) * self.tau()
    }

    /// Trapezoid end weights: ½ at both ends, 1 inside.
    pub fn trapezoid_weight(&self, n: usize) -> f64 {
        if n == 0 || n == self.steps {
            0.5
        } else {
            1.0
        }
    }

    /// Same axis with `N` doubled.
    pub fn refined(&self) -> Self {
        Self {
            t_final: self.t_final,
            steps: self.steps * 2,
        }
    }
}

/// Nodal values over the interior of a [`Grid`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Field(pub Vec<f64>);

impl Field {
    pub fn zeros(n: usize) -> Self {
        Field(vec![0.0; n])
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Field(vec![c; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `self + s * other`
    pub fn axpy(&self, s: f64, other: &[f64]) -> Field {
        Field(self.0.iter().zip(other).map(|(a, b)| a + s * b).collect())
    }

    pub fn scaled(&self, s: f64) -> Field {
        Field(self.0.iter().map(|a| s * a).collect())
    }
}

impl Deref for Field {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Field {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Field {
    fn from(v: Vec<f64>) -> Self {
        Field(v)
    }
}

/// A space-time field `U⁰..U^N` on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub grid: Grid,
    pub time: TimeAxis,
    pub levels: Vec<Field>,
}

impl Trajectory {
    pub fn new(grid: Grid, time: TimeAxis, levels: Vec<Field>) -> Result<Self> {
        if levels.len() != time.steps() + 1 {
            return Err(WideError::LevelCountMismatch {
                expected: time.steps() + 1,
                found: levels.len(),
            });
        }
        for level in &levels {
            grid.check(level)?;
        }
        Ok(Self { grid, time, levels })
    }

    pub fn zeros(grid: Grid, time: TimeAxis) -> Self {
        Self {
            grid,
            time,
            levels: vec![grid.zeros(); time.steps() + 1],
        }
    }

    /// `U^n = profile(t_n, ·)` sampled on the grid.
    pub fn from_fn(grid: Grid, time: TimeAxis, profile: impl Fn(f64, &[f64]) -> f64) -> Self {
        let levels = (0..=time.steps())
            .map(|n| {
                let t = time.t(n);
                grid.sample(|x| profile(t, x))
            })
            .collect();
        Self { grid, time, levels }
    }

    pub fn steps(&self) -> usize {
        self.time.steps()
    }

    pub fn node_count(&self) -> usize {
        self.grid.node_count()
    }

    /// Backward/centered difference of the given order at time index `n`.
    ///
    /// * order 1: `(U^n - U^{n-1}) / τ`, `n ∈ [1, N]`
    /// * order 2: `(U^{n+1} - 2U^n + U^{n-1}) / τ²`, `n ∈ [1, N-1]`
    /// * order 3: `(D²U^n - D²U^{n-1}) / τ`, `n ∈ [2, N-1]`
    pub fn time_derivative(&self, order: usize, n: usize) -> Result<Field> {
        let big_n = self.steps();
        let (lo, hi) = match order {
            1 => (1, big_n),
            2 => (1, big_n - 1),
            3 => (2, big_n - 1),
            _ => {
                return Err(WideError::InvalidParameter {
                    name: "order",
                    reason: format!("derivative order {order} not in {{1, 2, 3}}"),
                })
            }
        };
        if n < lo || n > hi {
            return Err(WideError::StencilRange {
                order,
                index: n,
                lo,
                hi,
            });
        }
        Ok(Field(match order {
            1 => self.first_difference(n),
            2 => self.second_difference(n),
            _ => {
                let tau = self.time.tau();
                let a = self.second_difference(n);
                let b = self.second_difference(n - 1);
                a.iter().zip(&b).map(|(x, y)| (x - y) / tau).collect()
            }
        }))
    }

    pub(crate) fn first_difference(&self, n: usize) -> Vec<f64> {
        let tau = self.time.tau();
        self.levels[n]
            .iter()
            .zip(self.levels[n - 1].iter())
            .map(|(a, b)| (a - b) / tau)
            .collect()
    }

    pub(crate) fn second_difference(&self, n: usize) -> Vec<f64> {
        let tau2 = self.time.tau() * self.time.tau();
        let (prev, cur, next) = (&self.levels[n - 1], &self.levels[n], &self.levels[n + 1]);
        (0..cur.len())
            .map(|i| (next[i] - 2.0 * cur[i] + prev[i]) / tau2)
            .collect()
    }

    /// Flattened time-major values.
    pub fn flatten(&self) -> Vec<f64> {
        self.levels.iter().flat_map(|l| l.iter().copied()).collect()
    }

    pub fn max_abs_diff(&self, other: &Trajectory) -> f64 {
        self.levels
            .iter()
            .zip(&other.levels)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

/// Weight applied to the samples in [`weighted_quadrature`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TimeWeight {
    None,
    /// `exp(-t / eps)`
    Exponential(f64),
    /// `T - t`
    Remaining,
}

impl TimeWeight {
    pub fn at(&self, t: f64, t_final: f64) -> f64 {
        match *self {
            TimeWeight::None => 1.0,
            TimeWeight::Exponential(eps) => exp_weight(t, eps),
            TimeWeight::Remaining => t_final - t,
        }
    }
}

/// Trapezoid rule `Σ τ w_n weight(t_n) f_n` with node-evaluated weight.
pub fn weighted_quadrature(samples: &[f64], weight: TimeWeight, time: &TimeAxis) -> Result<f64> {
    if samples.len() != time.steps() + 1 {
        return Err(WideError::LevelCountMismatch {
            expected: time.steps() + 1,
            found: samples.len(),
        });
    }
    let tau = time.tau();
    let t_final = time.t_final();
    Ok(samples
        .iter()
        .enumerate()
        .map(|(n, f)| {
            let w = weight.at(time.t(n), t_final);
            if w == 0.0 {
                0.0
            } else {
                tau * time.trapezoid_weight(n) * w * f
            }
        })
        .sum())
}

/// `∫₀^T ∫₀^t f(s) ds dt` with the trapezoid rule applied twice.
pub fn iterated_quadrature(samples: &[f64], time: &TimeAxis) -> Result<f64> {
    if samples.len() != time.steps() + 1 {
        return Err(WideError::LevelCountMismatch {
            expected: time.steps() + 1,
            found: samples.len(),
        });
    }
    let tau = time.tau();
    let mut inner = Vec::with_capacity(samples.len());
    let mut acc = 0.0;
    inner.push(0.0);
    for n in 1..samples.len() {
        acc += 0.5 * tau * (samples[n - 1] + samples[n]);
        inner.push(acc);
    }
    weighted_quadrature(&inner, TimeWeight::None, time)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
