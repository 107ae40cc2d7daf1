use crate::config::{ConfigError, RunConfig};
use crate::svg::{self, Panel, Series};
use drfb_core::basis::ParameterVector;
use drfb_core::battery::{assemble_matrices, nernst_output, BatteryError, LinearCrossover};
use drfb_core::bounds::{self, BoundAssumptions, BoundReport, BoundsError};
use drfb_core::observer::{self, clamp_s, EstimateRecord, ObserverConfig, ObserverError, ObserverState};
use drfb_core::synthesis::{synthesize, GainSolution, SynthesisError};
use drfb_core::telemetry::{self, synthesize_trace, TelemetryError, TwinSettings};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("gains file {path}: {reason}")]
    Gains { path: PathBuf, reason: String },
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Observer(#[from] ObserverError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Battery(#[from] BatteryError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error("{0}")]
    Usage(String),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Synthesis(
                SynthesisError::Infeasible { .. } | SynthesisError::NumericalFailure { .. } | SynthesisError::Sdp(_),
            ) => EXIT_INFEASIBLE,
            CliError::Observer(ObserverError::Divergence { .. }) => EXIT_DIVERGENCE,
            _ => EXIT_CONFIG,
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Io { path: path.into(), source })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.into(), source }
}

/// `gains.json` → `gains.bounds.json`.
pub fn bounds_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "gains".into());
    out.with_file_name(format!("{stem}.bounds.json"))
}

fn assumptions(cfg: &RunConfig) -> Result<BoundAssumptions<f64>, CliError> {
    let base = BoundAssumptions::from_linear_fit(&cfg.basis, &cfg.battery, &cfg.crossover)?;
    Ok(cfg.bounds.apply(base))
}

fn bound_report(cfg: &RunConfig, sol: &GainSolution<f64>) -> Result<BoundReport<f64>, CliError> {
    let m = assemble_matrices(&cfg.battery)?;
    Ok(bounds::report(&assumptions(cfg)?, sol, &m, &cfg.basis, cfg.synthesis.beta, cfg.sigma)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io { path: path.into(), source: e.into() })?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn load_gains(path: &Path) -> Result<GainSolution<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Gains { path: path.into(), reason: e.to_string() })
}

pub fn synthesize_cmd(config: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let m = assemble_matrices(&cfg.battery)?;
    let sol = synthesize(&cfg.synthesis, &m)?;
    write_json(out, &sol)?;
    let report = bound_report(&cfg, &sol)?;
    write_json(&bounds_path(out), &report)?;
    if !report.coupling_compatible {
        eprintln!("warning: gamma = {:e} exceeds sqrt(beta/alpha_bar) = {:e}", report.gamma, report.max_admissible_gamma);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CrossoverMode {
    Linear,
    Zero,
}

pub struct SimulateArgs<'a> {
    pub config: &'a Path,
    pub mode: CrossoverMode,
    pub out: &'a Path,
    pub trace_out: Option<&'a Path>,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
}

pub fn simulate_cmd(a: &SimulateArgs<'_>) -> Result<(), CliError> {
    let cfg = RunConfig::load(a.config)?;
    let crossover = match a.mode {
        CrossoverMode::Linear => cfg.crossover,
        CrossoverMode::Zero => LinearCrossover::new(0.0)?,
    };
    let tw = TwinSettings {
        crossover,
        x0: cfg.x0,
        dt: a.dt.unwrap_or(cfg.dt),
        t_end: cfg.t_end,
        noise_w: cfg.noise_w,
        seed: a.seed.unwrap_or(cfg.seed),
        flow: cfg.flow,
    };
    let twin = synthesize_trace(&cfg.battery, &tw)?;
    let mut w = create(a.out)?;
    writeln!(w, "t_s,soc,soc_cell,voltage_V,qx_mol_s").map_err(io_err(a.out))?;
    for pt in &twin.truth {
        let v = nernst_output(&cfg.battery, &pt.state, 0.0).map(|v| format!("{v:.15e}")).unwrap_or_default();
        writeln!(w, "{},{:.15e},{:.15e},{v},{:.15e}", pt.t, pt.state.soc, pt.state.soc_cell, pt.q_x).map_err(io_err(a.out))?;
    }
    w.flush().map_err(io_err(a.out))?;
    if let Some(path) = a.trace_out {
        telemetry::save_csv(path, &twin.trace)?;
    }
    Ok(())
}

pub struct ObserveArgs<'a> {
    pub config: &'a Path,
    pub gains: &'a Path,
    pub trace: &'a Path,
    pub out: &'a Path,
    pub svg: Option<&'a Path>,
    pub dt: Option<f64>,
}

pub fn observe_cmd(a: &ObserveArgs<'_>) -> Result<(), CliError> {
    let cfg = RunConfig::load(a.config)?;
    let sol = load_gains(a.gains)?;
    let mut trace = telemetry::load_csv::<f64>(a.trace)?;
    trace.validate()?;
    let dt = match a.dt {
        Some(dt) => {
            trace = telemetry::resample(&trace, dt)?;
            dt
        }
        None => cfg.dt,
    };
    let m = assemble_matrices(&cfg.battery)?;
    let ocfg = ObserverConfig::from_gains(&sol, cfg.lambda_inv.clone(), cfg.sigma, dt)?;
    let init = ObserverState::new(cfg.x_hat0, ParameterVector::new(cfg.theta_hat0.clone()), 0.0);
    let records = observer::run(&ocfg, &cfg.battery, &m, &cfg.basis, &trace, &init)?;
    write_estimates(a.out, &records, cfg.basis.m())?;
    if let Some(path) = a.svg {
        std::fs::write(path, estimate_chart(&records)).map_err(io_err(path))?;
    }
    Ok(())
}

fn write_estimates(path: &Path, records: &[EstimateRecord<f64>], m: usize) -> Result<(), CliError> {
    let mut w = create(path)?;
    let thetas: Vec<String> = (1..=m).map(|i| format!("theta_{i}")).collect();
    writeln!(w, "t_s,soc_hat,soc_cell_hat,y_tilde,qx_hat_mol_s,{}", thetas.join(",")).map_err(io_err(path))?;
    for r in records {
        let th: Vec<String> = r.theta_hat.as_slice().iter().map(|v| format!("{v:.15e}")).collect();
        writeln!(
            w,
            "{},{:.15e},{:.15e},{:.15e},{:.15e},{}",
            r.t,
            r.x_hat.soc,
            r.x_hat.soc_cell,
            r.y_tilde,
            r.q_x_hat,
            th.join(",")
        )
        .map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn estimate_chart(records: &[EstimateRecord<f64>]) -> String {
    let days = |r: &EstimateRecord<f64>| r.t / 86_400.0;
    let soc = Panel {
        title: "State of charge estimates".into(),
        x_label: "time [d]".into(),
        y_label: "SOC [-]".into(),
        series: vec![
            Series { label: "soc_hat".into(), points: records.iter().map(|r| (days(r), r.x_hat.soc)).collect() },
            Series { label: "soc_cell_hat".into(), points: records.iter().map(|r| (days(r), r.x_hat.soc_cell)).collect() },
        ],
    };
    let flux = Panel {
        title: "Crossover estimate".into(),
        x_label: "s_hat [-]".into(),
        y_label: "qx_hat [mol/s]".into(),
        series: vec![Series {
            label: "qx_hat".into(),
            points: records.iter().map(|r| (clamp_s(r.x_hat.soc_cell), r.q_x_hat)).collect(),
        }],
    };
    let m = records.first().map_or(0, |r| r.theta_hat.len());
    let theta = Panel {
        title: "Parameter estimates".into(),
        x_label: "time [d]".into(),
        y_label: "theta_hat".into(),
        series: (0..m)
            .map(|j| Series {
                label: format!("theta_{}", j + 1),
                points: records.iter().map(|r| (days(r), r.theta_hat.as_slice()[j])).collect(),
            })
            .collect(),
    };
    svg::render(&[soc, flux, theta])
}

pub fn bounds_cmd(config: &Path, gains: &Path) -> Result<String, CliError> {
    let cfg = RunConfig::load(config)?;
    let sol = load_gains(gains)?;
    let report = bound_report(&cfg, &sol)?;
    if !report.coupling_compatible {
        eprintln!("warning: gamma^2 > beta/alpha_bar; the Lyapunov decrease condition is not guaranteed");
    }
    serde_json::to_string_pretty(&report).map_err(|e| CliError::Usage(e.to_string()))
}
