//! Problem fixtures shared by the benchmarks.

use std::f64::consts::PI;

use wide_core::{Field, Grid, PotentialSpec, RegLevels, TimeAxis, Trajectory, WideParams};

/// Cubic damping and reaction, `ρ = 1`, `ε = 0.1`.
pub fn nonlinear_params() -> WideParams {
    WideParams {
        rho: 1.0,
        eps: 0.1,
        nu: 1.0,
        reg: RegLevels::default(),
        g_spec: PotentialSpec::power(3.0, 1.0),
        f_spec: PotentialSpec::power(3.0, 1.0),
    }
}

pub fn mesh(dim: usize, n: usize, steps: usize) -> (Grid, TimeAxis) {
    (
        Grid::new(dim, n, 1.0).expect("valid grid"),
        TimeAxis::new(1.0, steps).expect("valid time axis"),
    )
}

pub fn sine_data(grid: &Grid) -> Field {
    grid.sample(|x| x.iter().map(|xi| (PI * xi).sin()).product())
}

/// Smooth decaying trajectory `sin(πx) e^{-t} cos(3t)` used as an evaluation point.
pub fn smooth_trajectory(grid: Grid, time: TimeAxis) -> Trajectory {
    Trajectory::from_fn(grid, time, |t, x| {
        x.iter().map(|xi| (PI * xi).sin()).product::<f64>() * (-t).exp() * (3.0 * t).cos()
    })
}
