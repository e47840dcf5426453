use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn wide(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wide"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn selftest_on_shipped_default_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("default.toml");
    let o = wide(
        &["selftest", "--config", cfg.to_str().unwrap(), "--seed", "3"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("PASS") || l.starts_with("FAIL"))
        .collect();
    assert!(lines.len() >= 8);
    assert!(lines.iter().all(|l| l.starts_with("PASS")), "{text}");
    assert!(tmp.path().join("selftest.json").exists());
}

#[test]
fn minimize_zero_data_dumps_zeros() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[grid]\nn = 6\n[time]\nsteps = 12\n[data]\nu0 = { kind = \"constant\", c = 0.0 }\n",
    );
    let out = tmp.path().join("out");
    let o = wide(&["minimize", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,node,value"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 13 * 6);
    assert!(rows.iter().all(|r| r.ends_with(",0")), "{csv}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("stationarity.json")).unwrap())
            .unwrap();
    assert_eq!(report["stationarity"]["passed"], true);
}

#[test]
fn causal_sweep_table_is_strictly_decreasing_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("causal_linear.toml");
    let mut tables = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let o = wide(
            &["sweep", "--config", cfg.to_str().unwrap(), "--threads", "2"],
            &out,
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        tables.push(std::fs::read(out.join("table.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
    let text = String::from_utf8(tables.remove(0)).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header[0], "parameter");
    let col = header.iter().position(|h| *h == "err_L2L2").unwrap();
    let errs: Vec<f64> = lines
        .map(|l| l.split(',').nth(col).unwrap().parse().unwrap())
        .collect();
    assert_eq!(errs.len(), 4);
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
}

#[test]
fn timestep_writes_ledger_with_one_row_per_level() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[time]\nsteps = 20\n[timestep]\nscheme = \"parabolic\"\n[output]\ntrajectory = \"binary\"\n",
    );
    let o = wide(&["timestep", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ledger = std::fs::read_to_string(tmp.path().join("ledger.csv")).unwrap();
    assert_eq!(
        ledger.lines().next(),
        Some("n,t,energy,dissipation,residual")
    );
    assert_eq!(ledger.lines().count(), 22);
    let bin = std::fs::read(tmp.path().join("trajectory.bin")).unwrap();
    assert_eq!(bin.len(), 32 + 8 * 32 * 21);
}

#[test]
fn config_errors_exit_with_2_and_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    for (body, needle) in [
        ("[potentials]\np = 5.0\n", "2 ≤ p < 4"),
        ("[potentials]\np = 2.5\nr = 3.0\n", "r ∈ [1,p]"),
        ("[params]\nrho = -1.0\n", "params.rho"),
        ("[params\n", "config"),
    ] {
        let cfg = write_config(tmp.path(), body);
        let o = wide(
            &["minimize", "--config", cfg.to_str().unwrap()],
            &tmp.path().join("o"),
        );
        assert_eq!(o.status.code(), Some(2), "{body}");
        assert!(stderr(&o).contains(needle), "{body}: {}", stderr(&o));
    }
}

#[test]
fn usage_and_output_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = wide(&["frobnicate"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = wide(&["selftest"], &blocker.join("sub"));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn solver_failure_exits_with_1() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[grid]\nn = 6\n[time]\nsteps = 12\n[potentials]\np = 3.0\nr = 3.0\n[solver]\nmax_newton = 1\n",
    );
    let o = wide(&["minimize", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(tmp.path().join("trajectory.csv").exists());
}
