//! Telemetry traces: CSV ingestion, validation, resampling and synthetic
//! self-discharge traces.
//!
//! On disk the schema is `t_s,voltage_V,current_A,flow_mL_min` with optional
//! `#` comment lines. In memory flow is stored in L/s.

use crate::battery::{
    self, assemble_matrices, nernst_output, units, BatteryError, BatteryParams, InputProfile, LinearCrossover,
    StateVector,
};
use crate::scalar::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const HEADER: [&str; 4] = ["t_s", "voltage_V", "current_A", "flow_mL_min"];
/// Gaps wider than this multiple of the median spacing are rejected.
pub const MAX_GAP_RATIO: f64 = 10.0;
/// Nominal flow of the self-discharge experiment [mL/min].
pub const NOMINAL_FLOW_ML_MIN: f64 = 9.0;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("header mismatch: expected `{}`, found `{found}`", HEADER.join(","))]
    Header { found: String },
    #[error("row {row} (t = {t} s): timestamps must be strictly increasing")]
    Monotonicity { row: usize, t: f64 },
    #[error("row {row}: {msg}")]
    InvalidSample { row: usize, msg: String },
    #[error("gap of {gap} s after t = {t} s exceeds {limit} s")]
    Gap { t: f64, gap: f64, limit: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Battery(#[from] BatteryError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelemetrySample<T> {
    /// [s]
    pub t: T,
    /// [V]
    pub voltage: T,
    /// [A]
    pub current: T,
    /// [L/s]
    pub flow: T,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceSource {
    File(String),
    Synthetic { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryTrace<T> {
    pub samples: Vec<TelemetrySample<T>>,
    pub dt_resampled: Option<T>,
    pub source: TraceSource,
}

impl<T: Real> TelemetryTrace<T> {
    pub fn new(samples: Vec<TelemetrySample<T>>, source: TraceSource) -> Self {
        Self { samples, dt_resampled: None, source }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Checks sample invariants, ordering and the gap rule.
    pub fn validate(&self) -> Result<(), TelemetryError> {
        for (row, s) in self.samples.iter().enumerate() {
            validate_sample(row + 1, s)?;
        }
        for (row, w) in self.samples.windows(2).enumerate() {
            if !(w[1].t > w[0].t) {
                return Err(TelemetryError::Monotonicity { row: row + 2, t: w[1].t.to_f64_lossy() });
            }
        }
        check_gaps(&self.samples)
    }
}

fn validate_sample<T: Real>(row: usize, s: &TelemetrySample<T>) -> Result<(), TelemetryError> {
    let bad = |msg: String| Err(TelemetryError::InvalidSample { row, msg });
    if !(s.t.is_finite() && s.voltage.is_finite() && s.current.is_finite() && s.flow.is_finite()) {
        return bad("non-finite value".into());
    }
    if !(s.flow > T::zero()) {
        return bad(format!("flow must be > 0, got {} L/s", s.flow));
    }
    if !(s.voltage > T::zero() && s.voltage < T::lit(5.0)) {
        return bad(format!("voltage {} V outside (0, 5)", s.voltage));
    }
    Ok(())
}

fn median_spacing<T: Real>(samples: &[TelemetrySample<T>]) -> Option<T> {
    if samples.len() < 2 {
        return None;
    }
    let mut d: Vec<T> = samples.windows(2).map(|w| w[1].t - w[0].t).collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Some(d[d.len() / 2])
}

fn check_gaps<T: Real>(samples: &[TelemetrySample<T>]) -> Result<(), TelemetryError> {
    let Some(med) = median_spacing(samples) else { return Ok(()) };
    let limit = T::lit(MAX_GAP_RATIO) * med;
    for w in samples.windows(2) {
        let gap = w[1].t - w[0].t;
        if gap > limit {
            return Err(TelemetryError::Gap { t: w[0].t.to_f64_lossy(), gap: gap.to_f64_lossy(), limit: limit.to_f64_lossy() });
        }
    }
    Ok(())
}

/// Parses CSV text from any reader. `source` names the trace origin.
pub fn read_csv<T: Real, R: Read>(reader: R, source: TraceSource) -> Result<TelemetryTrace<T>, TelemetryError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(HEADER.iter().copied()) {
        return Err(TelemetryError::Header { found: headers.iter().collect::<Vec<_>>().join(",") });
    }
    let mut samples = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 4 {
            return Err(TelemetryError::Parse { line, msg: format!("expected 4 fields, found {}", rec.len()) });
        }
        let mut v = [0.0f64; 4];
        for (k, field) in rec.iter().enumerate() {
            v[k] = field
                .parse::<f64>()
                .map_err(|e| TelemetryError::Parse { line, msg: format!("column {}: `{field}`: {e}", HEADER[k]) })?;
        }
        samples.push(TelemetrySample {
            t: T::lit(v[0]),
            voltage: T::lit(v[1]),
            current: T::lit(v[2]),
            flow: units::ml_per_min_to_l_per_s(T::lit(v[3])),
        });
    }
    let trace = TelemetryTrace::new(samples, source);
    trace.validate()?;
    Ok(trace)
}

pub fn load_csv<T: Real>(path: impl AsRef<Path>) -> Result<TelemetryTrace<T>, TelemetryError> {
    let path = path.as_ref();
    let io = |source| TelemetryError::Io { path: path.display().to_string(), source };
    let file = std::fs::File::open(path).map_err(io)?;
    read_csv(std::io::BufReader::new(file), TraceSource::File(path.display().to_string()))
}

/// Writes the trace in the on-disk schema, converting flow back to mL/min.
pub fn write_csv<T: Real, W: Write>(w: W, trace: &TelemetryTrace<T>) -> Result<(), TelemetryError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(HEADER)?;
    for s in &trace.samples {
        wtr.write_record(&[
            s.t.to_f64_lossy().to_string(),
            s.voltage.to_f64_lossy().to_string(),
            s.current.to_f64_lossy().to_string(),
            units::l_per_s_to_ml_per_min(s.flow).to_f64_lossy().to_string(),
        ])?;
    }
    wtr.flush().map_err(|source| TelemetryError::Io { path: "<writer>".into(), source })?;
    Ok(())
}

pub fn save_csv<T: Real>(path: impl AsRef<Path>, trace: &TelemetryTrace<T>) -> Result<(), TelemetryError> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|source| TelemetryError::Io { path: path.display().to_string(), source })?;
    write_csv(std::io::BufWriter::new(file), trace)
}

/// Resamples onto `t0 + k dt`. Voltage is interpolated linearly; current
/// and flow are held from the latest sample at or before each grid time.
pub fn resample<T: Real>(trace: &TelemetryTrace<T>, dt: T) -> Result<TelemetryTrace<T>, TelemetryError> {
    if !(dt > T::zero() && dt.is_finite()) {
        return Err(TelemetryError::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    check_gaps(&trace.samples)?;
    let s = &trace.samples;
    let mut out = Vec::new();
    if let (Some(first), Some(last)) = (s.first(), s.last()) {
        let span = last.t - first.t;
        let n = ((span / dt) + T::lit(1e-9)).floor().to_f64_lossy() as usize;
        out.reserve(n + 1);
        let mut i = 0;
        for k in 0..=n {
            let t = first.t + T::count(k) * dt;
            while i + 1 < s.len() && s[i + 1].t <= t {
                i += 1;
            }
            let a = &s[i];
            let voltage = match s.get(i + 1) {
                Some(b) if t > a.t => a.voltage + (t - a.t) / (b.t - a.t) * (b.voltage - a.voltage),
                _ => a.voltage,
            };
            out.push(TelemetrySample { t, voltage, current: a.current, flow: a.flow });
        }
    }
    Ok(TelemetryTrace { samples: out, dt_resampled: Some(dt), source: trace.source.clone() })
}

/// Twin experiment settings for [`synthesize_trace`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwinSettings<T> {
    pub crossover: LinearCrossover<T>,
    pub x0: StateVector<T>,
    /// Output spacing [s]; integration substeps are chosen internally.
    pub dt: T,
    pub t_end: T,
    /// Noise scale: voltage noise is uniform in `[-3 noise_w, 3 noise_w]`.
    pub noise_w: T,
    pub seed: u64,
    /// [L/s]
    pub flow: T,
}

impl<T: Real> TwinSettings<T> {
    /// Open-circuit self-discharge from full charge at 9 mL/min.
    pub fn experiment(dt: T, t_end: T) -> Self {
        Self {
            crossover: LinearCrossover::from_l_per_min(T::lit(5.6142e-8)).expect("positive k_mt"),
            x0: StateVector::fully_charged(),
            dt,
            t_end,
            noise_w: T::zero(),
            seed: 0,
            flow: units::ml_per_min_to_l_per_s(T::lit(NOMINAL_FLOW_ML_MIN)),
        }
    }
}

/// A synthetic trace together with the simulated truth behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinTrace<T> {
    pub trace: TelemetryTrace<T>,
    pub truth: Vec<battery::TrajectoryPoint<T>>,
}

/// Simulates open-circuit self-discharge with the linear crossover and
/// converts `SOC_cell` to voltage, adding bounded uniform noise.
pub fn synthesize_trace<T: Real>(params: &BatteryParams<T>, tw: &TwinSettings<T>) -> Result<TwinTrace<T>, TelemetryError> {
    if !(tw.noise_w >= T::zero() && tw.noise_w.is_finite()) {
        return Err(TelemetryError::InvalidArgument(format!("noise_w must be >= 0, got {}", tw.noise_w)));
    }
    if !(tw.dt > T::zero()) {
        return Err(TelemetryError::InvalidArgument(format!("dt must be > 0, got {}", tw.dt)));
    }
    let m = assemble_matrices(params)?;
    // Keep h·A21 at or below 0.25.
    let sub = (tw.dt * m.a21(tw.flow) / T::lit(0.25)).ceil().to_f64_lossy().max(1.0) as usize;
    let h = tw.dt / T::count(sub);
    let slope = tw.crossover.slope(params);
    let truth = battery::simulate_decimated(
        params,
        &m,
        |x: &StateVector<T>| slope * x.soc_cell.max(T::zero()).min(T::one()),
        &InputProfile::constant(T::zero(), tw.flow),
        tw.x0,
        h,
        tw.t_end,
        sub,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(tw.seed);
    let bound = T::lit(3.0) * tw.noise_w;
    let mut samples = Vec::with_capacity(truth.len());
    for pt in &truth {
        let v = nernst_output(params, &pt.state, T::zero())?;
        let noise = if bound > T::zero() { T::lit(rng.gen_range(-1.0..=1.0)) * bound } else { T::zero() };
        samples.push(TelemetrySample { t: pt.t, voltage: v + noise, current: T::zero(), flow: tw.flow });
    }
    let trace = TelemetryTrace { samples, dt_resampled: Some(tw.dt), source: TraceSource::Synthetic { seed: tw.seed } };
    Ok(TwinTrace { trace, truth })
}
