//! TOML run descriptions.
//!
//! Every section and key is optional; omitted values take the defaults below.
//! Unknown keys are rejected.

use std::path::Path;

use serde::Deserialize;
use wide_core::harness::SweepData;
use wide_core::reference::well_prepared_velocity;
use wide_core::{
    ErrorNorm, Field, Grid, ModalSpec, NewtonOptions, PotentialSpec, Profile, RegLevels, SweepMode,
    SweepSpec, TimeAxis, WideParams,
};

/// A violated range or malformed entry, tagged with the offending key.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{key}: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    fn new(key: &str, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawConfig {
    pub grid: GridSection,
    pub time: TimeSection,
    pub params: ParamsSection,
    pub potentials: PotentialsSection,
    pub data: DataSection,
    pub solver: SolverSection,
    pub timestep: TimestepSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    /// Interior nodes per axis; `h = length / (n + 1)`.
    pub n: usize,
    pub length: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            dim: 1,
            n: 32,
            length: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    pub t_final: f64,
    pub steps: usize,
}

impl Default for TimeSection {
    fn default() -> Self {
        Self {
            t_final: 1.0,
            steps: 128,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsSection {
    pub rho: f64,
    pub eps: f64,
    pub nu: f64,
    pub lambda: f64,
    pub mu: f64,
}

impl Default for ParamsSection {
    fn default() -> Self {
        Self {
            rho: 1.0,
            eps: 0.1,
            nu: 1.0,
            lambda: 0.0,
            mu: 0.0,
        }
    }
}

/// `G(v) = c_g |v|^p / p` and `F(u) = c_f |u|^r / r`; a positive smoothing
/// switches to `c ((s² + δ²)^{q/2} - δ^q) / q`.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialsSection {
    pub p: f64,
    pub g_coefficient: f64,
    pub g_smoothing: f64,
    pub r: f64,
    pub f_coefficient: f64,
    pub f_smoothing: f64,
}

impl Default for PotentialsSection {
    fn default() -> Self {
        Self {
            p: 2.0,
            g_coefficient: 1.0,
            g_smoothing: 0.0,
            r: 2.0,
            f_coefficient: 1.0,
            f_smoothing: 0.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub u0: Profile,
    pub u1: Profile,
    /// Replace `u1` by the first implicit parabolic increment from `u0`.
    pub well_prepared: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            u0: Profile::default(),
            u1: Profile::zero(),
            well_prepared: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub grad_tol: f64,
    pub max_newton: usize,
    /// Tolerance of the a posteriori Euler–Lagrange check after `minimize`.
    pub stationarity_tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            grad_tol: 1e-10,
            max_newton: 50,
            stationarity_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Hyperbolic,
    Parabolic,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimestepSection {
    pub scheme: Scheme,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub mode: SweepMode,
    pub eps: Vec<f64>,
    pub rho: Vec<f64>,
    pub norms: Vec<ErrorNorm>,
    pub grad_tol: f64,
    pub gamma_s: f64,
    /// Use the exact single-mode solution as the causal reference.
    pub modal_reference: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            mode: SweepMode::Causal,
            eps: vec![0.2, 0.1, 0.05, 0.025],
            rho: vec![1e-1, 1e-2, 1e-3, 1e-4],
            norms: ErrorNorm::ALL.to_vec(),
            grad_tol: 1e-8,
            gamma_s: 4.0,
            modal_reference: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DumpFormat {
    #[default]
    Csv,
    Binary,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub trajectory: DumpFormat,
}

/// Validated run description.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub grid: Grid,
    pub time: TimeAxis,
    pub params: WideParams,
    pub u0: Field,
    pub u1: Field,
    pub newton: NewtonOptions,
    pub stationarity_tol: f64,
    pub scheme: Scheme,
    pub sweep: SweepSpec,
    pub modal: Option<ModalSpec>,
    pub dump: DumpFormat,
}

impl RunConfig {
    pub fn sweep_data(&self) -> SweepData {
        SweepData {
            u0: self.u0.clone(),
            u1: self.u1.clone(),
            modal: self.modal,
        }
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("config", format!("cannot read {}: {e}", path.display())))?;
    parse_str(&text)
}

pub fn parse_str(text: &str) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let key = e
            .span()
            .map(|s| format!("config (bytes {}..{})", s.start, s.end))
            .unwrap_or_else(|| "config".into());
        ConfigError::new(&key, e.message().to_string())
    })?;
    raw.validate()
}

fn check(ok: bool, key: &str, message: impl FnOnce() -> String) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::new(key, message()))
    }
}

fn potential(exponent: f64, coefficient: f64, smoothing: f64) -> PotentialSpec {
    if smoothing > 0.0 {
        PotentialSpec::smoothed(exponent, coefficient, smoothing)
    } else {
        PotentialSpec::power(exponent, coefficient)
    }
}

impl RawConfig {
    pub fn validate(&self) -> Result<RunConfig, ConfigError> {
        let g = &self.grid;
        check(g.dim == 1 || g.dim == 2, "grid.dim", || {
            format!("{} is not supported (1 or 2)", g.dim)
        })?;
        check(g.n >= 1, "grid.n", || {
            "needs at least one interior node".into()
        })?;
        check(
            g.length.is_finite() && g.length > 0.0,
            "grid.length",
            || format!("{} must be positive", g.length),
        )?;
        let grid =
            Grid::new(g.dim, g.n, g.length).map_err(|e| ConfigError::new("grid", e.to_string()))?;

        let t = &self.time;
        check(
            t.t_final.is_finite() && t.t_final > 0.0,
            "time.t_final",
            || format!("{} must be positive", t.t_final),
        )?;
        check(t.steps >= 2, "time.steps", || {
            format!("{} must be at least 2", t.steps)
        })?;
        let time = TimeAxis::new(t.t_final, t.steps)
            .map_err(|e| ConfigError::new("time", e.to_string()))?;

        let p = &self.params;
        check(p.rho.is_finite() && p.rho >= 0.0, "params.rho", || {
            format!("{} violates ρ ≥ 0", p.rho)
        })?;
        check(p.eps.is_finite() && p.eps > 0.0, "params.eps", || {
            format!("{} violates ε > 0", p.eps)
        })?;
        check(p.nu.is_finite() && p.nu > 0.0, "params.nu", || {
            format!("{} violates ν > 0", p.nu)
        })?;
        check(
            p.lambda.is_finite() && p.lambda >= 0.0,
            "params.lambda",
            || format!("{} violates λ ≥ 0", p.lambda),
        )?;
        check(p.mu.is_finite() && p.mu >= 0.0, "params.mu", || {
            format!("{} violates μ ≥ 0", p.mu)
        })?;

        let q = &self.potentials;
        check((2.0..4.0).contains(&q.p), "potentials.p", || {
            format!("{} violates 2 ≤ p < 4", q.p)
        })?;
        check(q.r >= 1.0 && q.r <= q.p, "potentials.r", || {
            format!("{} violates r ∈ [1,p] with p = {}", q.r, q.p)
        })?;
        for (key, v) in [
            ("potentials.g_coefficient", q.g_coefficient),
            ("potentials.f_coefficient", q.f_coefficient),
        ] {
            check(v.is_finite() && v > 0.0, key, || {
                format!("{v} must be positive")
            })?;
        }
        for (key, v) in [
            ("potentials.g_smoothing", q.g_smoothing),
            ("potentials.f_smoothing", q.f_smoothing),
        ] {
            check(v.is_finite() && v >= 0.0, key, || {
                format!("{v} must be nonnegative")
            })?;
        }
        check(
            q.r > 1.0 || q.f_smoothing > 0.0,
            "potentials.f_smoothing",
            || "r = 1 has no derivative at 0; set a positive f_smoothing".into(),
        )?;

        let params = WideParams {
            rho: p.rho,
            eps: p.eps,
            nu: p.nu,
            reg: RegLevels {
                lambda: p.lambda,
                mu: p.mu,
            },
            g_spec: potential(q.p, q.g_coefficient, q.g_smoothing),
            f_spec: potential(q.r, q.f_coefficient, q.f_smoothing),
        };
        params
            .validate()
            .map_err(|e| ConfigError::new("params", e.to_string()))?;

        let s = &self.solver;
        check(
            s.grad_tol.is_finite() && s.grad_tol > 0.0,
            "solver.grad_tol",
            || format!("{} must be positive", s.grad_tol),
        )?;
        check(s.max_newton >= 1, "solver.max_newton", || {
            "must be at least 1".into()
        })?;
        check(
            s.stationarity_tol.is_finite() && s.stationarity_tol > 0.0,
            "solver.stationarity_tol",
            || format!("{} must be positive", s.stationarity_tol),
        )?;
        let newton = NewtonOptions {
            grad_tol: s.grad_tol,
            max_newton: s.max_newton,
            ..NewtonOptions::default()
        };

        let d = &self.data;
        check_profile("data.u0", &d.u0)?;
        check_profile("data.u1", &d.u1)?;
        let u0 = d.u0.sample(&grid);
        let u1 = if d.well_prepared {
            well_prepared_velocity(&params, &grid, time.tau(), &u0)
                .map_err(|e| ConfigError::new("data.well_prepared", e.to_string()))?
        } else {
            d.u1.sample(&grid)
        };

        let sw = &self.sweep;
        check(
            sw.gamma_s.is_finite() && sw.gamma_s > 3.0,
            "sweep.gamma_s",
            || format!("{} must exceed 3", sw.gamma_s),
        )?;
        check(
            sw.grad_tol.is_finite() && sw.grad_tol > 0.0,
            "sweep.grad_tol",
            || format!("{} must be positive", sw.grad_tol),
        )?;
        check(!sw.norms.is_empty(), "sweep.norms", || {
            "list at least one norm".into()
        })?;
        let uses_eps = matches!(sw.mode, SweepMode::Causal | SweepMode::Diagonal);
        let uses_rho = !matches!(sw.mode, SweepMode::Causal);
        if uses_eps {
            check_list("sweep.eps", &sw.eps)?;
        }
        if uses_rho {
            check_list("sweep.rho", &sw.rho)?;
        }
        check(
            sw.mode != SweepMode::Diagonal || sw.eps.len() == sw.rho.len(),
            "sweep.rho",
            || "diagonal sweeps pair eps and rho; the lists must have equal length".into(),
        )?;
        let mut sweep = SweepSpec::new(sw.mode, params)
            .with_eps(&sw.eps)
            .with_rho(&sw.rho);
        sweep.norms = sw.norms.clone();
        sweep.newton = NewtonOptions {
            grad_tol: sw.grad_tol,
            max_newton: s.max_newton,
            ..NewtonOptions::default()
        };
        sweep.gamma_s = sw.gamma_s;

        let modal = if sw.modal_reference {
            Some(
                modal_spec(self, &params)
                    .map_err(|m| ConfigError::new("sweep.modal_reference", m))?,
            )
        } else {
            None
        };

        Ok(RunConfig {
            grid,
            time,
            params,
            u0,
            u1,
            newton,
            stationarity_tol: s.stationarity_tol,
            scheme: self.timestep.scheme,
            sweep,
            modal,
            dump: self.output.trajectory,
        })
    }
}

fn check_profile(key: &str, profile: &Profile) -> Result<(), ConfigError> {
    match *profile {
        Profile::Sine { k, amp } => {
            check(k >= 1, key, || "sine mode k must be at least 1".into())?;
            check(amp.is_finite(), key, || {
                format!("amplitude {amp} is not finite")
            })
        }
        Profile::Bump { amp } => check(amp.is_finite(), key, || {
            format!("amplitude {amp} is not finite")
        }),
        Profile::Constant { c } => {
            check(c.is_finite(), key, || format!("constant {c} is not finite"))
        }
    }
}

fn check_list(key: &str, list: &[f64]) -> Result<(), ConfigError> {
    check(!list.is_empty(), key, || "list is empty".into())?;
    check(list.iter().all(|v| v.is_finite() && *v > 0.0), key, || {
        format!("{list:?} must be positive")
    })?;
    check(list.windows(2).all(|w| w[1] < w[0]), key, || {
        format!("{list:?} must be strictly decreasing")
    })
}

/// The single-mode reference needs the linear 1D problem with sine data of
/// one mode.
fn modal_spec(raw: &RawConfig, params: &WideParams) -> Result<ModalSpec, String> {
    if raw.grid.dim != 1 {
        return Err("needs grid.dim = 1".into());
    }
    if params.g_spec.exponent != 2.0 || params.g_spec.smoothing > 0.0 {
        return Err("needs p = 2 without smoothing".into());
    }
    if params.f_spec.exponent != 2.0 || params.f_spec.smoothing > 0.0 {
        return Err("needs r = 2 without smoothing".into());
    }
    if params.reg.lambda > 0.0 || params.reg.mu > 0.0 {
        return Err("needs λ = μ = 0".into());
    }
    if raw.data.well_prepared {
        return Err("is incompatible with data.well_prepared".into());
    }
    let Profile::Sine { k, amp } = raw.data.u0 else {
        return Err("needs a sine profile for data.u0".into());
    };
    let amp1 = match raw.data.u1 {
        Profile::Sine { k: k1, amp } if k1 == k => amp,
        Profile::Constant { c: 0.0 } => 0.0,
        _ => return Err("needs data.u1 = 0 or a sine profile with the same mode as u0".into()),
    };
    Ok(ModalSpec {
        rho: params.rho,
        nu: params.nu * params.g_spec.coefficient,
        c: params.f_spec.coefficient,
        mode: k,
        amp0: amp,
        amp1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_takes_defaults() {
        let cfg = parse_str("").unwrap();
        assert_eq!(cfg.params.g_spec.exponent, 2.0);
        assert_eq!(cfg.params.f_spec.exponent, 2.0);
        assert_eq!(cfg.grid.dim(), 1);
        assert_eq!(cfg.grid.n_per_axis(), 32);
        assert_eq!(cfg.time.steps(), 128);
        assert!(cfg.u1.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn p_out_of_range_names_assumption() {
        let err = parse_str("[potentials]\np = 5.0\n").unwrap_err();
        assert_eq!(err.key, "potentials.p");
        assert!(err.message.contains("2 ≤ p < 4"), "{err}");
        assert!(parse_str("[potentials]\np = 4.0\nr = 2.0\n").is_err());
        assert!(parse_str("[potentials]\np = 1.5\nr = 1.5\nf_smoothing = 0.1\n").is_err());
    }

    #[test]
    fn r_above_p_names_assumption() {
        let err = parse_str("[potentials]\np = 2.5\nr = 3.0\n").unwrap_err();
        assert_eq!(err.key, "potentials.r");
        assert!(err.message.contains("r ∈ [1,p]"), "{err}");
    }

    #[test]
    fn each_range_has_its_key() {
        for (text, key) in [
            ("[params]\nrho = -1.0\n", "params.rho"),
            ("[params]\neps = 0.0\n", "params.eps"),
            ("[params]\nnu = 0.0\n", "params.nu"),
            ("[grid]\nn = 0\n", "grid.n"),
            ("[grid]\ndim = 3\n", "grid.dim"),
            ("[time]\nsteps = 1\n", "time.steps"),
            ("[potentials]\nr = 1.0\n", "potentials.f_smoothing"),
            ("[sweep]\neps = [0.1, 0.2]\n", "sweep.eps"),
            ("[sweep]\nmode = \"viscous\"\nrho = []\n", "sweep.rho"),
            ("[sweep]\ngamma_s = 3.0\n", "sweep.gamma_s"),
        ] {
            let err = parse_str(text).unwrap_err();
            assert_eq!(err.key, key, "{text}: {err}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_str("[params]\nrhoo = 1.0\n").unwrap_err();
        assert!(err.message.contains("rhoo"), "{err}");
        assert!(parse_str("[nonsense]\n").is_err());
    }

    #[test]
    fn profiles_and_modal_reference() {
        let text = r#"
[data]
u0 = { kind = "sine", k = 2, amp = 0.5 }
u1 = { kind = "sine", k = 2, amp = 1.0 }
[sweep]
modal_reference = true
"#;
        let cfg = parse_str(text).unwrap();
        let modal = cfg.modal.unwrap();
        assert_eq!((modal.mode, modal.amp0, modal.amp1), (2, 0.5, 1.0));
        let bad = text.replace("k = 2, amp = 1.0", "k = 3, amp = 1.0");
        assert_eq!(parse_str(&bad).unwrap_err().key, "sweep.modal_reference");
        let bump = parse_str("[data]\nu0 = { kind = \"bump\", amp = 2.0 }\n").unwrap();
        assert!(bump.u0.max_abs() > 1.9);
    }

    #[test]
    fn well_prepared_velocity_replaces_u1() {
        let cfg = parse_str("[data]\nwell_prepared = true\n").unwrap();
        assert!(cfg.u1.max_abs() > 1.0);
        assert!(cfg.u1.iter().all(|v| *v <= 0.0));
    }
}
