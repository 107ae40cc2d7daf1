use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BASE: &str = include_str!("../../../configs/self_discharge.cfg");

fn drfb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drfb")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// Base config with the run shortened to `days`, plus extra lines.
fn config(dir: &Path, days: f64, extra: &str) -> PathBuf {
    let text: String = BASE
        .lines()
        .map(|l| if l.starts_with("run.t_end") { format!("run.t_end = {}", days * 86_400.0) } else { l.to_string() })
        .chain(extra.lines().map(str::to_string))
        .map(|l| format!("{l}\n"))
        .collect();
    let path = dir.join("run.cfg");
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synthesize(dir: &Path, cfg: &Path) -> PathBuf {
    let gains = dir.join("gains.json");
    let o = drfb(&["synthesize", "--config", s(cfg), "--out", s(&gains)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    gains
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect()).collect();
    (header, rows)
}

#[test]
fn synthesize_writes_certified_gains_and_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 1.0, "");
    let gains = synthesize(dir.path(), &cfg);
    let g: serde_json::Value = serde_json::from_str(&fs::read_to_string(&gains).unwrap()).unwrap();
    let margins = g["margins"].as_array().unwrap();
    assert_eq!(margins.len(), 7);
    assert!(margins.iter().all(|m| m.as_f64().unwrap() >= -1e-9));
    let b: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("gains.bounds.json")).unwrap()).unwrap();
    assert!(b["r_x_tilde"].as_f64().unwrap() > 0.0);
}

#[test]
fn absurd_beta_exits_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 1.0, "").to_path_buf();
    let text = fs::read_to_string(&cfg).unwrap().replace("synthesis.beta = 1e-4", "synthesis.beta = 1e9");
    fs::write(&cfg, text).unwrap();
    let o = drfb(&["synthesize", "--config", s(&cfg), "--out", s(&dir.path().join("g.json"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_key_exits_with_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    let text: String = BASE.lines().filter(|l| !l.starts_with("basis.m ")).map(|l| format!("{l}\n")).collect();
    fs::write(&cfg, text).unwrap();
    let o = drfb(&["synthesize", "--config", s(&cfg), "--out", s(&dir.path().join("g.json"))]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("basis.m"));
}

#[test]
fn zero_mode_keeps_states_constant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 0.5, "");
    let out = dir.path().join("sim.csv");
    let o = drfb(&["simulate", "--config", s(&cfg), "--mode", "zero", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out);
    assert_eq!(header, ["t_s", "soc", "soc_cell", "voltage_V", "qx_mol_s"]);
    assert!(rows.iter().all(|r| r[1] == rows[0][1] && r[2] == rows[0][2] && r[4] == 0.0));
}

#[test]
fn linear_mode_crosses_equilibrium_potential_at_half_charge() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 0.02, "");
    let text = fs::read_to_string(&cfg).unwrap().replace("run.x0 = 0.999999, 0.999999", "run.x0 = 0.5, 0.5");
    fs::write(&cfg, text).unwrap();
    let out = dir.path().join("sim.csv");
    assert_eq!(code(&drfb(&["simulate", "--config", s(&cfg), "--out", s(&out), "--dt", "1"])), 0);
    let (_, rows) = read_csv(&out);
    // Voltage decreases through 2.2 V; interpolate SOC_cell at the crossing.
    let k = rows.iter().position(|r| r[3] < 2.2).expect("crossing");
    let (a, b) = if k == 0 { (&rows[0], &rows[0]) } else { (&rows[k - 1], &rows[k]) };
    let s_cross = if a[3] == b[3] { a[2] } else { a[2] + (2.2 - a[3]) / (b[3] - a[3]) * (b[2] - a[2]) };
    assert!((s_cross - 0.5).abs() <= 1e-6, "{s_cross}");
}

#[test]
fn observe_tracks_twin_and_writes_chart() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 3.0, "");
    let gains = synthesize(dir.path(), &cfg);
    let sim = dir.path().join("sim.csv");
    let trace = dir.path().join("trace.csv");
    assert_eq!(code(&drfb(&["simulate", "--config", s(&cfg), "--out", s(&sim), "--trace-out", s(&trace)])), 0);
    let est = dir.path().join("est.csv");
    let svg = dir.path().join("est.svg");
    let o = drfb(&["observe", "--config", s(&cfg), "--gains", s(&gains), "--trace", s(&trace), "--out", s(&est), "--svg", s(&svg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&est);
    assert_eq!(header.len(), 5 + 7);
    assert_eq!(header[11], "theta_7");
    let (_, truth) = read_csv(&sim);
    let (last, true_last) = (rows.last().unwrap(), truth.last().unwrap());
    assert!((last[1] - true_last[1]).abs() < 0.02);
    let chart = fs::read_to_string(&svg).unwrap();
    assert!(chart.contains(r#"viewBox="0 0 800 500""#));
    assert_eq!(chart.matches("<polyline").count(), 2 + 1 + 7);
}

#[test]
fn observe_rejects_gap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 1.0, "");
    let gains = synthesize(dir.path(), &cfg);
    let trace = dir.path().join("gap.csv");
    fs::write(&trace, "t_s,voltage_V,current_A,flow_mL_min\n0,2.3,0,9\n60,2.3,0,9\n6060,2.29,0,9\n").unwrap();
    let o = drfb(&["observe", "--config", s(&cfg), "--gains", s(&gains), "--trace", s(&trace), "--out", s(&dir.path().join("e.csv"))]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("gap"));
}

#[test]
fn observe_divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 1.0, "");
    let gains = synthesize(dir.path(), &cfg);
    let text = fs::read_to_string(&cfg).unwrap().replace("observer.x_hat0 = 0.85, 0.8", "observer.x_hat0 = 20, 0.9");
    fs::write(&cfg, text).unwrap();
    let trace = dir.path().join("t.csv");
    fs::write(&trace, "t_s,voltage_V,current_A,flow_mL_min\n0,2.3,0,9\n60,2.3,0,9\n120,2.3,0,9\n").unwrap();
    let o = drfb(&["observe", "--config", s(&cfg), "--gains", s(&gains), "--trace", s(&trace), "--out", s(&dir.path().join("e.csv"))]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bounds_reports_finite_values_and_markers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 1.0, "bounds.rho = 0");
    let gains = synthesize(dir.path(), &cfg);
    let o = drfb(&["bounds", "--config", s(&cfg), "--gains", s(&gains)]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["gamma"].as_f64(), Some(0.0));
    for (k, x) in v.as_object().unwrap() {
        if let Some(f) = x.as_f64() {
            assert!(f.is_finite() && f >= 0.0, "{k}");
        }
    }
    let text = fs::read_to_string(&cfg).unwrap().replace("observer.sigma = 0.1", "observer.sigma = 0");
    fs::write(&cfg, text).unwrap();
    let o = drfb(&["bounds", "--config", s(&cfg), "--gains", s(&gains)]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["gamma1"].is_null() && v["gamma2"].is_null());
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 0.5, "");
    let text = fs::read_to_string(&cfg).unwrap().replace("run.noise_w = 0", "run.noise_w = 0.001");
    fs::write(&cfg, text).unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for t in [&a, &b] {
        let out = dir.path().join("sim.csv");
        assert_eq!(code(&drfb(&["simulate", "--config", s(&cfg), "--out", s(&out), "--trace-out", s(t), "--seed", "7"])), 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}
