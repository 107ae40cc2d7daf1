//! Adaptive Luenberger observer for state of charge and crossover flux.
//!
//! ```text
//! x̂' = A(Q) x̂ + E Ψ(ŝ) θ̂ + B I + L ỹ,      ỹ = y - C x̂
//! θ̂' = Λ⁻¹ (Ψ(ŝ)ᵀ F ỹ - ½ σ θ̂ |ỹ|)
//! ```
//!
//! with `ŝ = clamp(x̂₂, -0.2, 1.2)`. Both equations are advanced together
//! by RK4 with `y`, `I` and `Q` held over the step.

use crate::basis::{BasisError, ParameterVector, RbfBasis};
use crate::battery::{invert_output, BatteryError, BatteryParams, ModelMatrices, StateVector};
use crate::linalg::{cholesky, Mat};
use crate::scalar::Real;
use crate::synthesis::GainSolution;
use crate::telemetry::TelemetryTrace;
use thiserror::Error;

/// Estimates with `‖x̂‖` above this are treated as divergent.
pub const DIVERGENCE_NORM: f64 = 10.0;
/// Clamp applied to `x̂₂` before evaluating the basis.
pub const S_HAT_RANGE: (f64, f64) = (-0.2, 1.2);
/// Largest allowed telemetry spacing, in units of `dt`.
pub const MAX_GAP_FACTOR: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObserverError {
    #[error("invalid observer config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("estimate diverged at t = {t} s (|x_hat| = {norm})")]
    Divergence { t: f64, norm: f64 },
    #[error("telemetry gap of {gap} s at t = {t} s exceeds {limit} s")]
    TelemetryGap { t: f64, gap: f64, limit: f64 },
    #[error("non-finite input at t = {t} s")]
    NonFinite { t: f64 },
    #[error(transparent)]
    Battery(#[from] BatteryError),
    #[error(transparent)]
    Basis(#[from] BasisError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverConfig<T> {
    pub gain_l: [T; 2],
    pub f_scalar: T,
    pub lambda_inv: Mat<T>,
    pub sigma: T,
    pub dt: T,
}

impl<T: Real> ObserverConfig<T> {
    pub fn new(gain_l: [T; 2], f_scalar: T, lambda_inv: Mat<T>, sigma: T, dt: T) -> Result<Self, ObserverError> {
        let cfg = Self { gain_l, f_scalar, lambda_inv, sigma, dt };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Takes `L` and `F` from a synthesized solution.
    pub fn from_gains(sol: &GainSolution<T>, lambda_inv: Mat<T>, sigma: T, dt: T) -> Result<Self, ObserverError> {
        Self::new(sol.l, sol.f, lambda_inv, sigma, dt)
    }

    /// `Λ⁻¹ = scale · I_m`.
    pub fn scalar_lambda(m: usize, scale: T) -> Mat<T> {
        Mat::identity(m).scale(scale)
    }

    pub fn m(&self) -> usize {
        self.lambda_inv.rows()
    }

    pub fn validate(&self) -> Result<(), ObserverError> {
        let bad = |s: String| Err(ObserverError::InvalidConfig(s));
        if !self.gain_l.iter().all(|v| v.is_finite()) || !self.f_scalar.is_finite() {
            return bad("gains must be finite".into());
        }
        if !self.lambda_inv.is_square() || self.lambda_inv.rows() == 0 {
            return bad("lambda_inv must be a non-empty square matrix".into());
        }
        if self.lambda_inv.check_symmetric().is_err() || cholesky(&self.lambda_inv).is_err() {
            return bad("lambda_inv must be symmetric positive definite".into());
        }
        if !(self.sigma >= T::zero() && self.sigma.is_finite()) {
            return bad(format!("sigma must be >= 0, got {}", self.sigma));
        }
        if !(self.dt > T::zero() && self.dt.is_finite()) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState<T> {
    pub x_hat: StateVector<T>,
    pub theta_hat: ParameterVector<T>,
    pub t: T,
}

impl<T: Real> ObserverState<T> {
    pub fn new(x_hat: StateVector<T>, theta_hat: ParameterVector<T>, t: T) -> Self {
        Self { x_hat, theta_hat, t }
    }

    /// `x̂₀ = [0.85, 0.8]`, `θ̂₀ = 0`.
    pub fn experiment_initial(m: usize) -> Self {
        Self::new(StateVector::new(T::lit(0.85), T::lit(0.8)), ParameterVector::zeros(m), T::zero())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord<T> {
    pub t: T,
    pub x_hat: StateVector<T>,
    pub theta_hat: ParameterVector<T>,
    pub y_tilde: T,
    pub q_x_hat: T,
}

/// `Φ = Λ⁻¹ (ψ̂ F ỹ - ½ σ θ̂ |ỹ|)`.
pub fn adaptation<T: Real>(
    cfg: &ObserverConfig<T>,
    psi_hat: &[T],
    y_tilde: T,
    theta_hat: &[T],
) -> Result<Vec<T>, ObserverError> {
    let m = cfg.m();
    for got in [psi_hat.len(), theta_hat.len()] {
        if got != m {
            return Err(ObserverError::DimensionMismatch { expected: m, got });
        }
    }
    let mut out = vec![T::zero(); m];
    adaptation_into(cfg, psi_hat, y_tilde, theta_hat, &mut Vec::with_capacity(m), &mut out);
    Ok(out)
}

fn adaptation_into<T: Real>(
    cfg: &ObserverConfig<T>,
    psi_hat: &[T],
    y_tilde: T,
    theta_hat: &[T],
    inner: &mut Vec<T>,
    out: &mut [T],
) {
    let fy = cfg.f_scalar * y_tilde;
    let leak = T::half() * cfg.sigma * y_tilde.abs();
    inner.clear();
    inner.extend(psi_hat.iter().zip(theta_hat).map(|(&p, &th)| p * fy - leak * th));
    for (i, o) in out.iter_mut().enumerate() {
        *o = crate::linalg::dot(cfg.lambda_inv.row(i), inner);
    }
}

pub fn clamp_s<T: Real>(x2: T) -> T {
    x2.max(T::lit(S_HAT_RANGE.0)).min(T::lit(S_HAT_RANGE.1))
}

/// Reusable buffers for the RK4 stages.
struct Workspace<T> {
    psi: Vec<T>,
    inner: Vec<T>,
    k: [Vec<T>; 4],
    stage: Vec<T>,
}

impl<T: Real> Workspace<T> {
    fn new(m: usize) -> Self {
        let z = vec![T::zero(); m + 2];
        Self { psi: vec![T::zero(); m], inner: Vec::with_capacity(m), k: [z.clone(), z.clone(), z.clone(), z.clone()], stage: z }
    }
}

struct Inputs<T> {
    y: T,
    current: T,
    q_flow: T,
}

/// Joint right-hand side on the packed vector `[x̂₁, x̂₂, θ̂...]`.
#[allow(clippy::too_many_arguments)]
fn rhs<T: Real>(
    cfg: &ObserverConfig<T>,
    mats: &ModelMatrices<T>,
    basis: &RbfBasis<T>,
    u: &Inputs<T>,
    z: &[T],
    psi: &mut [T],
    inner: &mut Vec<T>,
    out: &mut [T],
) {
    let x = [z[0], z[1]];
    let theta = &z[2..];
    basis.evaluate_into(clamp_s(x[1]), psi);
    let q_hat = crate::linalg::dot(psi, theta);
    let y_tilde = u.y - (mats.c_row[0] * x[0] + mats.c_row[1] * x[1]);
    let ax = mats.apply_a(u.q_flow, x);
    for i in 0..2 {
        out[i] = ax[i] + mats.e[i] * q_hat + mats.b[i] * u.current + cfg.gain_l[i] * y_tilde;
    }
    adaptation_into(cfg, psi, y_tilde, theta, inner, &mut out[2..]);
}

/// Number of RK4 substeps used to cover `h`, keeping the step inside the
/// stability region of the fastest linear mode.
fn substeps<T: Real>(cfg: &ObserverConfig<T>, mats: &ModelMatrices<T>, q_flow: T, h: T) -> usize {
    let rate = mats.a21(q_flow).abs() + cfg.gain_l[0].abs() + cfg.gain_l[1].abs();
    let n = (h * rate / T::two()).ceil().to_f64_lossy();
    if n.is_finite() && n > 1.0 {
        n as usize
    } else {
        1
    }
}

#[allow(clippy::too_many_arguments)]
fn advance<T: Real>(
    cfg: &ObserverConfig<T>,
    mats: &ModelMatrices<T>,
    basis: &RbfBasis<T>,
    st: &ObserverState<T>,
    u: &Inputs<T>,
    h: T,
    ws: &mut Workspace<T>,
) -> Result<ObserverState<T>, ObserverError> {
    let m = basis.m();
    if st.theta_hat.len() != m {
        return Err(ObserverError::DimensionMismatch { expected: m, got: st.theta_hat.len() });
    }
    if cfg.m() != m {
        return Err(ObserverError::DimensionMismatch { expected: m, got: cfg.m() });
    }
    if !(u.y.is_finite() && u.current.is_finite() && u.q_flow.is_finite()) {
        return Err(ObserverError::NonFinite { t: st.t.to_f64_lossy() });
    }
    if !(u.q_flow > T::zero()) {
        return Err(ObserverError::InvalidConfig(format!("flow must be > 0, got {}", u.q_flow)));
    }
    let n = m + 2;
    let mut z = Vec::with_capacity(n);
    z.push(st.x_hat.soc);
    z.push(st.x_hat.soc_cell);
    z.extend_from_slice(st.theta_hat.as_slice());

    let nsub = substeps(cfg, mats, u.q_flow, h);
    let hs = h / T::count(nsub);
    let half = hs * T::half();
    let sixth = hs / T::lit(6.0);
    let Workspace { psi, inner, k, stage } = ws;
    for _ in 0..nsub {
        let [k1, k2, k3, k4] = k;
        rhs(cfg, mats, basis, u, &z, psi, inner, k1);
        for i in 0..n {
            stage[i] = z[i] + half * k1[i];
        }
        rhs(cfg, mats, basis, u, stage, psi, inner, k2);
        for i in 0..n {
            stage[i] = z[i] + half * k2[i];
        }
        rhs(cfg, mats, basis, u, stage, psi, inner, k3);
        for i in 0..n {
            stage[i] = z[i] + hs * k3[i];
        }
        rhs(cfg, mats, basis, u, stage, psi, inner, k4);
        for i in 0..n {
            z[i] += sixth * (k1[i] + T::two() * (k2[i] + k3[i]) + k4[i]);
        }
    }
    let t = st.t + h;
    let x_hat = StateVector::new(z[0], z[1]);
    let norm = x_hat.norm();
    if !(norm <= T::lit(DIVERGENCE_NORM)) || z.iter().any(|v| !v.is_finite()) {
        return Err(ObserverError::Divergence { t: t.to_f64_lossy(), norm: norm.to_f64_lossy() });
    }
    Ok(ObserverState { x_hat, theta_hat: ParameterVector::new(z.split_off(2)), t })
}

/// Advances the observer by `cfg.dt` given the measured `y = SOC_cell`.
#[allow(clippy::too_many_arguments)]
pub fn step<T: Real>(
    cfg: &ObserverConfig<T>,
    params: &BatteryParams<T>,
    mats: &ModelMatrices<T>,
    basis: &RbfBasis<T>,
    st: &ObserverState<T>,
    y: T,
    current: T,
    q_flow: T,
) -> Result<ObserverState<T>, ObserverError> {
    let _ = params;
    let mut ws = Workspace::new(basis.m());
    advance(cfg, mats, basis, st, &Inputs { y, current, q_flow }, cfg.dt, &mut ws)
}

fn record<T: Real>(basis: &RbfBasis<T>, mats: &ModelMatrices<T>, st: &ObserverState<T>, y: T) -> EstimateRecord<T> {
    let psi = basis.evaluate(clamp_s(st.x_hat.soc_cell));
    let q_x_hat = crate::linalg::dot(&psi, st.theta_hat.as_slice());
    let y_hat = mats.c_row[0] * st.x_hat.soc + mats.c_row[1] * st.x_hat.soc_cell;
    EstimateRecord { t: st.t, x_hat: st.x_hat, theta_hat: st.theta_hat.clone(), y_tilde: y - y_hat, q_x_hat }
}

/// Runs the observer over a trace, emitting one record per sample.
///
/// The voltage of each sample is inverted to `y` and held, together with
/// current and flow, until the next sample.
pub fn run<T: Real>(
    cfg: &ObserverConfig<T>,
    params: &BatteryParams<T>,
    mats: &ModelMatrices<T>,
    basis: &RbfBasis<T>,
    trace: &TelemetryTrace<T>,
    init: &ObserverState<T>,
) -> Result<Vec<EstimateRecord<T>>, ObserverError> {
    cfg.validate()?;
    let samples = &trace.samples;
    let mut out = Vec::with_capacity(samples.len());
    if samples.is_empty() {
        return Ok(out);
    }
    let limit = T::lit(MAX_GAP_FACTOR) * cfg.dt;
    let mut ws = Workspace::new(basis.m());
    let mut st = ObserverState { t: samples[0].t, ..init.clone() };
    for (i, s) in samples.iter().enumerate() {
        let y = invert_output(params, s.voltage, s.current)?.soc_cell;
        out.push(record(basis, mats, &st, y));
        if let Some(next) = samples.get(i + 1) {
            let h = next.t - s.t;
            if h > limit {
                return Err(ObserverError::TelemetryGap {
                    t: s.t.to_f64_lossy(),
                    gap: h.to_f64_lossy(),
                    limit: limit.to_f64_lossy(),
                });
            }
            st = advance(cfg, mats, basis, &st, &Inputs { y, current: s.current, q_flow: s.flow }, h, &mut ws)?;
            st.t = next.t;
        }
    }
    Ok(out)
}
