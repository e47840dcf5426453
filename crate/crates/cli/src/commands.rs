use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;
use wide_core::harness::{gamma_recovery, loglog_slope, sweep};
use wide_core::io::{write_binary, write_csv};
use wide_core::minimizer::{minimize_wide, verify_stationarity, StationarityReport};
use wide_core::reference::{energy_ledger, solve_hyperbolic, solve_parabolic};
use wide_core::selftest::run_selftest;
use wide_core::solver::NewtonStats;
use wide_core::{Trajectory, WideError};

use crate::config::{DumpFormat, RunConfig, Scheme};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("output: {0}")]
    Output(String),
    #[error("solver: {0}")]
    Solver(String),
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Solver(_) => 1,
            RunError::Config(_) | RunError::Output(_) => 2,
        }
    }
}

impl From<WideError> for RunError {
    fn from(e: WideError) -> Self {
        RunError::Solver(e.to_string())
    }
}

pub struct Outputs {
    dir: PathBuf,
}

impl Outputs {
    /// Creates `dir` if needed and checks that it accepts files.
    pub fn new(dir: &Path) -> Result<Self, RunError> {
        let fail = |e: std::io::Error| RunError::Output(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(fail)?;
        let probe = dir.join(".wide-write-probe");
        File::create(&probe).map_err(fail)?;
        std::fs::remove_file(&probe).map_err(fail)?;
        Ok(Self {
            dir: dir.to_path_buf(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn text(&self, name: &str, body: &str) -> Result<PathBuf, RunError> {
        let path = self.path(name);
        std::fs::write(&path, body)
            .map_err(|e| RunError::Output(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, RunError> {
        let mut body =
            serde_json::to_string_pretty(value).map_err(|e| RunError::Output(e.to_string()))?;
        body.push('\n');
        self.text(name, &body)
    }

    fn trajectory(&self, traj: &Trajectory, format: DumpFormat) -> Result<PathBuf, RunError> {
        let name = match format {
            DumpFormat::Csv => "trajectory.csv",
            DumpFormat::Binary => "trajectory.bin",
        };
        let path = self.path(name);
        let file = File::create(&path)
            .map_err(|e| RunError::Output(format!("{}: {e}", path.display())))?;
        let out = BufWriter::new(file);
        match format {
            DumpFormat::Csv => write_csv(traj, out),
            DumpFormat::Binary => write_binary(traj, out),
        }
        .map_err(|e| RunError::Output(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

#[derive(Serialize)]
struct MinimizeReport<'a> {
    newton: &'a NewtonStats,
    stationarity: &'a StationarityReport,
    value: f64,
}

pub fn minimize(cfg: &RunConfig, out: &Outputs) -> Result<(), RunError> {
    let result = minimize_wide(
        &cfg.params,
        cfg.grid,
        cfg.time,
        &cfg.u0,
        &cfg.u1,
        &cfg.newton,
    )?;
    let report = verify_stationarity(&result.traj, &cfg.params, cfg.stationarity_tol)?;
    let dump = out.trajectory(&result.traj, cfg.dump)?;
    let json = out.json(
        "stationarity.json",
        &MinimizeReport {
            newton: &result.stats,
            stationarity: &report,
            value: result.stats.value,
        },
    )?;
    println!(
        "minimize: {} Newton steps, gradient {:.2e}; EL residual interior {:.2e}, terminal {:.2e} / {:.2e}",
        result.stats.iterations, result.stats.grad_norm, report.interior, report.terminal_acc, report.terminal_jet
    );
    println!("wrote {} and {}", dump.display(), json.display());
    if !result.stats.converged {
        return Err(RunError::Solver(format!(
            "Newton stopped after {} steps with gradient norm {:.2e} > {:.1e}",
            result.stats.iterations, result.stats.grad_norm, cfg.newton.grad_tol
        )));
    }
    if !report.passed {
        return Err(RunError::Solver(format!(
            "Euler–Lagrange residual above {:.1e}",
            cfg.stationarity_tol
        )));
    }
    Ok(())
}

pub fn timestep(cfg: &RunConfig, out: &Outputs) -> Result<(), RunError> {
    let (traj, params) = match cfg.scheme {
        Scheme::Hyperbolic => (
            solve_hyperbolic(&cfg.params, &cfg.grid, &cfg.time, &cfg.u0, &cfg.u1)?,
            cfg.params,
        ),
        Scheme::Parabolic => {
            let flat = cfg.params.with_rho(0.0);
            (solve_parabolic(&flat, &cfg.grid, &cfg.time, &cfg.u0)?, flat)
        }
    };
    let ledger = energy_ledger(&traj, &params)?;
    let mut csv = String::from("n,t,energy,dissipation,residual\n");
    for n in 0..ledger.energy.len() {
        let _ = writeln!(
            csv,
            "{n},{:e},{:e},{:e},{:e}",
            cfg.time.t(n),
            ledger.energy[n],
            ledger.dissipation[n],
            ledger.residual[n]
        );
    }
    let dump = out.trajectory(&traj, cfg.dump)?;
    let path = out.text("ledger.csv", &csv)?;
    println!(
        "timestep: {} steps, max ledger residual {:.3e}, max increase of E + D {:.2e}",
        cfg.time.steps(),
        ledger.max_residual,
        ledger.max_total_increase
    );
    println!("wrote {} and {}", dump.display(), path.display());
    Ok(())
}

pub fn run_sweep(cfg: &RunConfig, out: &Outputs) -> Result<(), RunError> {
    let table = sweep(&cfg.sweep, &cfg.grid, &cfg.time, &cfg.sweep_data())?;
    let csv = out.text("table.csv", &table.to_csv())?;
    let json = out.text("table.json", &(table.to_json() + "\n"))?;
    for row in &table.rows {
        let errs: Vec<String> = table
            .norms
            .iter()
            .map(|n| format!("{n:?} {:.3e}", row.errors.get(*n)))
            .collect();
        println!("  {:<10.3e} {}", row.parameter, errs.join("  "));
    }
    if let Some(base) = table.scheme_discrepancy {
        println!("  stepper vs exact: L2L2 {:.3e}", base.l2l2);
    }
    println!("wrote {} and {}", csv.display(), json.display());
    let failures: Vec<String> = table
        .rows
        .iter()
        .filter_map(|r| {
            r.failure
                .as_ref()
                .map(|f| format!("{:e}: {f}", r.parameter))
        })
        .collect();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(RunError::Solver(failures.join("; ")))
    }
}

#[derive(Serialize)]
struct GammaRow {
    rho: f64,
    rho_tilde: f64,
    i_rho: f64,
    i_bar: f64,
    gap: f64,
}

#[derive(Serialize)]
struct GammaSummary {
    s: f64,
    slope: f64,
    rows: Vec<GammaRow>,
}

/// Recovery gaps of the `ρ = 0` minimizer along `sweep.rho`.
pub fn gamma(cfg: &RunConfig, out: &Outputs) -> Result<(), RunError> {
    let limit = cfg.params.with_rho(0.0);
    let base = minimize_wide(
        &limit,
        cfg.grid,
        cfg.time,
        &cfg.u0,
        &cfg.u1,
        &cfg.sweep.newton,
    )?;
    if !base.stats.converged {
        return Err(RunError::Solver(format!(
            "ρ = 0 minimizer: gradient norm {:.2e} after {} steps",
            base.stats.grad_norm, base.stats.iterations
        )));
    }
    let mut rows = Vec::new();
    for &rho in &cfg.sweep.rho_list {
        let rec = gamma_recovery(
            &base.traj,
            &cfg.params.with_rho(rho),
            cfg.sweep.gamma_s,
            &cfg.u1,
        )?;
        rows.push(GammaRow {
            rho,
            rho_tilde: rec.rho_tilde,
            i_rho: rec.i_val,
            i_bar: rec.ibar_val,
            gap: rec.gap,
        });
    }
    let rhos: Vec<f64> = rows.iter().map(|r| r.rho).collect();
    let gaps: Vec<f64> = rows.iter().map(|r| r.gap).collect();
    let slope = if rows.len() >= 2 {
        loglog_slope(&rhos, &gaps)
    } else {
        f64::NAN
    };
    let mut csv = String::from("rho,rho_tilde,i_rho,i_bar,gap\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{:e},{:e},{:e},{:e},{:e}",
            r.rho, r.rho_tilde, r.i_rho, r.i_bar, r.gap
        );
        println!("  rho {:.3e}  gap {:.4e}", r.rho, r.gap);
    }
    println!("  log-log slope {slope:.3} (s = {})", cfg.sweep.gamma_s);
    let path = out.text("gamma.csv", &csv)?;
    let json = out.json(
        "gamma.json",
        &GammaSummary {
            s: cfg.sweep.gamma_s,
            slope,
            rows,
        },
    )?;
    println!("wrote {} and {}", path.display(), json.display());
    Ok(())
}

pub fn selftest(seed: u64, out: &Outputs) -> Result<(), RunError> {
    let checks = run_selftest(seed);
    for c in &checks {
        println!(
            "{} {:<20} {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    let path = out.json("selftest.json", &checks)?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!(
        "{}/{} checks passed; wrote {}",
        checks.len() - failed,
        checks.len(),
        path.display()
    );
    if failed == 0 {
        Ok(())
    } else {
        Err(RunError::Solver(format!(
            "{failed} self-test checks failed"
        )))
    }
}
