//! Quick invariant suite: gradient and Hessian probes, convexity, proximal
//! residuals, quadrature identity, stationarity, energy monotonicity and dump
//! round trips. Random probes are driven by a caller-supplied seed.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::discretization::{
    iterated_quadrature, weighted_quadrature, Field, Grid, NormKind, TimeAxis, TimeWeight,
    Trajectory,
};
use crate::error::Result;
use crate::minimizer::{minimize_wide, verify_stationarity};
use crate::potentials::{elliptic_prox_residual, prox_elliptic, PotentialSpec};
use crate::reference::{energy_ledger, solve_hyperbolic, solve_parabolic};
use crate::solver::NewtonOptions;
use crate::wide::{eval_wide, grad_wide, hess_vec, RegLevels, WideParams};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn nonlinear(rho: f64) -> WideParams {
    WideParams {
        rho,
        eps: 0.3,
        nu: 1.0,
        reg: RegLevels::default(),
        g_spec: PotentialSpec::power(3.0, 1.0),
        f_spec: PotentialSpec::power(3.0, 1.0),
    }
}

fn random_traj(grid: Grid, time: TimeAxis, rng: &mut StdRng) -> Trajectory {
    let levels = (0..=time.steps())
        .map(|_| {
            Field(
                (0..grid.node_count())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
            )
        })
        .collect();
    Trajectory { grid, time, levels }
}

fn random_dir(levels: usize, m: usize, rng: &mut StdRng) -> Vec<Field> {
    (0..levels)
        .map(|_| Field((0..m).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect()
}

fn pairing(a: &[Field], b: &[Field]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| p * q).sum::<f64>())
        .sum()
}

fn gradient_fd(rng: &mut StdRng) -> Result<(bool, String)> {
    let grid = Grid::unit_1d(6);
    let time = TimeAxis::new(1.0, 10)?;
    let mut worst = 0.0_f64;
    for rho in [0.0, 1.0] {
        let params = nonlinear(rho);
        let traj = random_traj(grid, time, rng);
        let g = grad_wide(&traj, &params)?;
        let gmax = g.iter().map(Field::max_abs).fold(0.0, f64::max);
        let first = params.first_free();
        let s = 1e-5;
        for n in first..=time.steps() {
            for i in 0..grid.node_count() {
                let mut plus = traj.clone();
                let mut minus = traj.clone();
                plus.levels[n][i] += s;
                minus.levels[n][i] -= s;
                let fd = (eval_wide(&plus, &params)? - eval_wide(&minus, &params)?) / (2.0 * s);
                let exact = g[n - first][i];
                worst = worst.max((fd - exact).abs() / exact.abs().max(1e-3 * gmax));
            }
        }
    }
    Ok((worst <= 1e-6, format!("max relative error {worst:.1e}")))
}

fn hessian_probe(rng: &mut StdRng) -> Result<(bool, String)> {
    let grid = Grid::unit_1d(6);
    let time = TimeAxis::new(1.0, 10)?;
    let params = nonlinear(1.0);
    let traj = random_traj(grid, time, rng);
    let free = time.steps() + 1 - params.first_free();
    let v = random_dir(free, grid.node_count(), rng);
    let w = random_dir(free, grid.node_count(), rng);
    let hv = hess_vec(&traj, &v, &params)?;
    let hw = hess_vec(&traj, &w, &params)?;
    let asym = (pairing(&hv, &w) - pairing(&v, &hw)).abs() / pairing(&hv, &w).abs().max(1.0);
    let curvature = pairing(&hv, &v);
    Ok((
        asym <= 1e-10 && curvature >= 0.0,
        format!("asymmetry {asym:.1e}, <Hv,v> = {curvature:.3e}"),
    ))
}

fn midpoint_convexity(rng: &mut StdRng) -> Result<(bool, String)> {
    let grid = Grid::unit_1d(6);
    let time = TimeAxis::new(1.0, 10)?;
    let params = nonlinear(1.0);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..20 {
        let a = random_traj(grid, time, rng);
        let mut b = random_traj(grid, time, rng);
        b.levels[0] = a.levels[0].clone();
        b.levels[1] = a.levels[1].clone();
        let mid = Trajectory {
            grid,
            time,
            levels: a
                .levels
                .iter()
                .zip(&b.levels)
                .map(|(x, y)| Field(x.iter().zip(y.iter()).map(|(p, q)| 0.5 * (p + q)).collect()))
                .collect(),
        };
        let (fa, fb, fm) = (
            eval_wide(&a, &params)?,
            eval_wide(&b, &params)?,
            eval_wide(&mid, &params)?,
        );
        worst = worst.max(fm - 0.5 * (fa + fb));
    }
    Ok((worst <= 1e-12, format!("max I(mid) - mean = {worst:.2e}")))
}

fn prox_pointwise_residual(rng: &mut StdRng) -> Result<(bool, String)> {
    let mut worst = 0.0_f64;
    for spec in [
        PotentialSpec::quadratic(),
        PotentialSpec::power(3.0, 1.0),
        PotentialSpec::smoothed(3.0, 1.0, 0.1),
    ] {
        for _ in 0..100 {
            let v: f64 = rng.random_range(-1.0..1.0);
            let lambda = 10f64.powf(rng.random_range(-3.0..1.0));
            let w = spec.prox(v, lambda)?;
            worst = worst.max((w + lambda * spec.derivative(w) - v).abs());
        }
    }
    Ok((worst <= 1e-12, format!("max residual {worst:.1e}")))
}

fn prox_elliptic_residual(rng: &mut StdRng) -> Result<(bool, String)> {
    let grid = Grid::unit_1d(16);
    let f = PotentialSpec::power(3.0, 1.0);
    let u = Field(
        (0..grid.node_count())
            .map(|_| rng.random_range(-2.0..2.0))
            .collect(),
    );
    let mu = 0.1;
    let w = prox_elliptic(&f, &grid, &u, mu)?;
    let res = grid.norm(&elliptic_prox_residual(&f, &grid, &u, mu, &w), NormKind::L2)?;
    let tol = 1e-10 * (1.0 + grid.norm(&u, NormKind::L2)?);
    Ok((
        res <= tol,
        format!("residual {res:.1e}, tolerance {tol:.1e}"),
    ))
}

fn envelope_below(rng: &mut StdRng) -> Result<(bool, String)> {
    let spec = PotentialSpec::power(3.0, 1.0);
    let mut ok = true;
    for _ in 0..100 {
        let v: f64 = rng.random_range(-3.0..3.0);
        let mut last = f64::NEG_INFINITY;
        for k in 0..8 {
            let e = spec.envelope(v, 0.5f64.powi(k))?;
            ok &= e <= spec.density(v) && e >= last;
            last = e;
        }
    }
    Ok((ok, "ψ_λ ≤ ψ, nondecreasing as λ halves".into()))
}

fn quadrature_identity() -> Result<(bool, String)> {
    let mut diffs = Vec::new();
    for steps in [16, 32, 64] {
        let time = TimeAxis::new(1.0, steps)?;
        let f: Vec<f64> = (0..=steps).map(|n| time.t(n).powi(2)).collect();
        diffs.push(
            (iterated_quadrature(&f, &time)?
                - weighted_quadrature(&f, TimeWeight::Remaining, &time)?)
            .abs(),
        );
    }
    let order = (diffs[1] / diffs[2])
        .log2()
        .min((diffs[0] / diffs[1]).log2());
    Ok((order >= 1.9, format!("order {order:.3}")))
}

fn stationarity() -> Result<(bool, String)> {
    let grid = Grid::unit_1d(6);
    let time = TimeAxis::new(1.0, 16)?;
    let params = nonlinear(1.0);
    let u0 = grid.sample(|x| (std::f64::consts::PI * x[0]).sin());
    let opts = NewtonOptions {
        grad_tol: 1e-10,
        ..NewtonOptions::default()
    };
    let out = minimize_wide(&params, grid, time, &u0, &grid.zeros(), &opts)?;
    let rep = verify_stationarity(&out.traj, &params, 1e-8)?;
    Ok((
        out.stats.converged && rep.passed,
        format!(
            "interior {:.1e}, terminal {:.1e} / {:.1e}",
            rep.interior, rep.terminal_acc, rep.terminal_jet
        ),
    ))
}

fn energy_monotone() -> Result<(bool, String)> {
    let grid = Grid::unit_1d(16);
    let time = TimeAxis::new(1.0, 32)?;
    let params = nonlinear(1.0);
    let u0 = grid.sample(|x| (std::f64::consts::PI * x[0]).sin());
    let hyper = energy_ledger(
        &solve_hyperbolic(&params, &grid, &time, &u0, &grid.zeros())?,
        &params,
    )?;
    let flat = params.with_rho(0.0);
    let para = energy_ledger(&solve_parabolic(&flat, &grid, &time, &u0)?, &flat)?;
    let worst = hyper.max_total_increase.max(para.max_total_increase);
    Ok((worst <= 1e-9, format!("max increase of E + D {worst:.1e}")))
}

fn dump_round_trip(rng: &mut StdRng) -> Result<(bool, String)> {
    let grid = Grid::unit_1d(5);
    let time = TimeAxis::new(0.5, 4)?;
    let traj = random_traj(grid, time, rng);
    let mut csv = Vec::new();
    crate::io::write_csv(&traj, &mut csv)?;
    let from_csv = crate::io::read_csv(&csv[..], grid, time)?;
    let mut bin = Vec::new();
    crate::io::write_binary(&traj, &mut bin)?;
    let from_bin = crate::io::read_binary(&bin[..], grid.length())?;
    let bits = |t: &Trajectory| t.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let ok = bits(&from_csv) == bits(&traj) && bits(&from_bin) == bits(&traj);
    Ok((ok, "csv and binary dumps bit-exact".into()))
}

/// Runs every check; a check that errors counts as failed.
pub fn run_selftest(seed: u64) -> Vec<SelfCheck> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut record = |name: &'static str, result: Result<(bool, String)>| {
        out.push(match result {
            Ok((passed, detail)) => SelfCheck {
                name,
                passed,
                detail,
            },
            Err(e) => SelfCheck {
                name,
                passed: false,
                detail: e.to_string(),
            },
        });
    };
    record("gradient_fd", gradient_fd(&mut rng));
    record("hessian_symmetry", hessian_probe(&mut rng));
    record("midpoint_convexity", midpoint_convexity(&mut rng));
    record("prox_pointwise", prox_pointwise_residual(&mut rng));
    record("prox_elliptic", prox_elliptic_residual(&mut rng));
    record("envelope", envelope_below(&mut rng));
    record("quadrature_identity", quadrature_identity());
    record("stationarity", stationarity());
    record("energy_monotone", energy_monotone());
    record("dump_round_trip", dump_round_trip(&mut rng));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass_for_several_seeds() {
        for seed in [0, 1, 42] {
            for c in run_selftest(seed) {
                assert!(c.passed, "seed {seed}: {} failed: {}", c.name, c.detail);
            }
        }
    }
}
