//! Isothermal lumped-parameter model of a disproportionation redox flow
//! battery.
//!
//! State `x = [SOC, SOC_cell]`: the state of charge of the whole reservoir
//! system and of the half-cell reactor volume. Dynamics
//!
//! ```text
//! ẋ = A(Q) x + E q_x + B I
//! A(Q) = [[0, 0], [Q/(ε V_cell), -Q/(ε V_cell)]]
//! E    = [-1/(c0 V_res), -1/(ε c0 V_cell)]ᵀ,   B = E / ℱ
//! ```
//!
//! with the open-circuit Nernst output
//! `V_out = E⁰ + (2ℛ𝒯/ℱ) ln(SOC_cell / (1 - SOC_cell))`.
//!
//! Units are SI with liters: seconds, L, mol, A, L/s. Helpers in [`units`]
//! convert the mL and per-minute quantities used in lab notes.

use crate::linalg::Mat;
use crate::scalar::Real;
use thiserror::Error;

pub mod units {
    use crate::scalar::Real;

    pub fn ml_to_l<T: Real>(v: T) -> T {
        v / T::lit(1000.0)
    }

    pub fn ml_per_min_to_l_per_s<T: Real>(q: T) -> T {
        q / T::lit(60_000.0)
    }

    pub fn l_per_s_to_ml_per_min<T: Real>(q: T) -> T {
        q * T::lit(60_000.0)
    }

    pub fn l_per_min_to_l_per_s<T: Real>(q: T) -> T {
        q / T::lit(60.0)
    }
}

/// Faraday constant [C/mol].
pub const FARADAY: f64 = 96_485.332_12;
/// Molar gas constant [J/(mol·K)].
pub const GAS_CONSTANT: f64 = 8.314_462_618;

/// Fraction kept off the Nernst singularity for "fully charged" starts.
pub const FULL_CHARGE_MARGIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BatteryError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("{quantity} = {value} outside its domain {domain}")]
    Domain { quantity: &'static str, value: f64, domain: &'static str },
    #[error("output map only supports open-circuit operation (I = 0), got I = {current} A")]
    UnsupportedMode { current: f64 },
    #[error("step dt = {dt} s too large for flow term A21 = {a21} 1/s (need dt*A21 < 0.5)")]
    StepTooLarge { dt: f64, a21: f64 },
    #[error("simulation left the admissible band at t = {t} s: soc = {soc}, soc_cell = {soc_cell}")]
    Instability { t: f64, soc: f64, soc_cell: f64 },
}

/// Physical constants and geometry of the cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryParams<T> {
    /// Reservoir volume [L].
    pub v_res: T,
    /// Half-cell reactor volume [L].
    pub v_cell: T,
    /// Initial concentration of the neutral species [mol/L].
    pub c0: T,
    /// Electrode porosity, in (0, 1].
    pub epsilon: T,
    /// Equilibrium cell potential [V].
    pub e0_cell: T,
    /// [K]
    pub temperature: T,
    /// [C/mol]
    pub faraday: T,
    /// [J/(mol·K)]
    pub gas_constant: T,
}

impl<T: Real> BatteryParams<T> {
    /// Values of the self-discharge experiment: 17.6 mL reservoir,
    /// 0.6985 mL half cell, 0.1 M, porosity 0.87, 2.2 V, 275 K.
    pub fn reference_cell() -> Self {
        Self {
            v_res: units::ml_to_l(T::lit(17.6)),
            v_cell: units::ml_to_l(T::lit(0.6985)),
            c0: T::lit(0.1),
            epsilon: T::lit(0.87),
            e0_cell: T::lit(2.2),
            temperature: T::lit(275.0),
            faraday: T::lit(FARADAY),
            gas_constant: T::lit(GAS_CONSTANT),
        }
    }

    pub fn validate(&self) -> Result<(), BatteryError> {
        let fields = [
            ("v_res", self.v_res),
            ("v_cell", self.v_cell),
            ("c0", self.c0),
            ("epsilon", self.epsilon),
            ("e0_cell", self.e0_cell),
            ("temperature", self.temperature),
            ("faraday", self.faraday),
            ("gas_constant", self.gas_constant),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > T::zero()) {
                return Err(BatteryError::InvalidParameter {
                    name,
                    reason: format!("must be finite and strictly positive, got {v}"),
                });
            }
        }
        if self.epsilon > T::one() {
            return Err(BatteryError::InvalidParameter {
                name: "epsilon",
                reason: format!("porosity must lie in (0, 1], got {}", self.epsilon),
            });
        }
        if self.v_cell >= self.v_res {
            return Err(BatteryError::InvalidParameter {
                name: "v_cell",
                reason: format!("half-cell volume {} must be below reservoir volume {}", self.v_cell, self.v_res),
            });
        }
        Ok(())
    }

    /// Slope of the Nernst map, `2ℛ𝒯/ℱ` [V].
    pub fn nernst_slope(&self) -> T {
        T::two() * self.gas_constant * self.temperature / self.faraday
    }
}

/// `[SOC, SOC_cell]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateVector<T> {
    pub soc: T,
    pub soc_cell: T,
}

impl<T: Real> StateVector<T> {
    pub fn new(soc: T, soc_cell: T) -> Self {
        Self { soc, soc_cell }
    }

    /// Both states at `1 - 1e-6`, keeping the Nernst argument finite.
    pub fn fully_charged() -> Self {
        let s = T::one() - T::lit(FULL_CHARGE_MARGIN);
        Self { soc: s, soc_cell: s }
    }

    pub fn as_array(&self) -> [T; 2] {
        [self.soc, self.soc_cell]
    }

    pub fn from_array(a: [T; 2]) -> Self {
        Self { soc: a[0], soc_cell: a[1] }
    }

    pub fn norm(&self) -> T {
        (self.soc * self.soc + self.soc_cell * self.soc_cell).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.soc.is_finite() && self.soc_cell.is_finite()
    }
}

/// `A(Q)`, `B`, `E` and `C` of the state-space model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelMatrices<T> {
    /// `1/(ε V_cell)`; `A(Q)` is this times `Q` in the second row.
    pub flow_gain: T,
    pub b: [T; 2],
    pub e: [T; 2],
    pub c_row: [T; 2],
}

impl<T: Real> ModelMatrices<T> {
    /// `A21 = Q/(ε V_cell)`.
    pub fn a21(&self, q_flow: T) -> T {
        self.flow_gain * q_flow
    }

    pub fn a_of_q(&self, q_flow: T) -> Mat<T> {
        let a = self.a21(q_flow);
        Mat::from_rows(&[&[T::zero(), T::zero()], &[a, -a]])
    }

    pub fn e_mat(&self) -> Mat<T> {
        Mat::column(&self.e)
    }

    pub fn c_mat(&self) -> Mat<T> {
        Mat::from_rows(&[&self.c_row])
    }

    /// `A(Q) x` without building the matrix.
    #[inline]
    pub fn apply_a(&self, q_flow: T, x: [T; 2]) -> [T; 2] {
        [T::zero(), self.a21(q_flow) * (x[0] - x[1])]
    }
}

pub fn assemble_matrices<T: Real>(p: &BatteryParams<T>) -> Result<ModelMatrices<T>, BatteryError> {
    p.validate()?;
    let e = [-T::one() / (p.c0 * p.v_res), -T::one() / (p.epsilon * p.c0 * p.v_cell)];
    let b = [e[0] / p.faraday, e[1] / p.faraday];
    Ok(ModelMatrices { flow_gain: T::one() / (p.epsilon * p.v_cell), b, e, c_row: [T::zero(), T::one()] })
}

/// `ẋ = A(Q)x + E q_x + B I`.
pub fn dynamics<T: Real>(
    m: &ModelMatrices<T>,
    x: &StateVector<T>,
    q_flow: T,
    current: T,
    q_x: T,
) -> StateVector<T> {
    let ax = m.apply_a(q_flow, x.as_array());
    StateVector {
        soc: ax[0] + m.e[0] * q_x + m.b[0] * current,
        soc_cell: ax[1] + m.e[1] * q_x + m.b[1] * current,
    }
}

fn require_open_circuit<T: Real>(current: T) -> Result<(), BatteryError> {
    if current != T::zero() {
        return Err(BatteryError::UnsupportedMode { current: current.to_f64_lossy() });
    }
    Ok(())
}

/// Open-circuit Nernst voltage.
pub fn nernst_output<T: Real>(p: &BatteryParams<T>, x: &StateVector<T>, current: T) -> Result<T, BatteryError> {
    require_open_circuit(current)?;
    let s = x.soc_cell;
    if !(s > T::zero() && s < T::one()) {
        return Err(BatteryError::Domain { quantity: "soc_cell", value: s.to_f64_lossy(), domain: "(0, 1)" });
    }
    Ok(p.e0_cell + p.nernst_slope() * (s / (T::one() - s)).ln())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputInversion<T> {
    pub soc_cell: T,
    /// Result lies within 1e-6 of 0 or 1.
    pub saturated: bool,
}

fn logistic<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Inverse of [`nernst_output`]: `SOC_cell = logistic((V - E⁰) ℱ / (2ℛ𝒯))`.
pub fn invert_output<T: Real>(p: &BatteryParams<T>, v_out: T, current: T) -> Result<OutputInversion<T>, BatteryError> {
    require_open_circuit(current)?;
    let s = logistic((v_out - p.e0_cell) / p.nernst_slope());
    let margin = T::lit(1e-6);
    Ok(OutputInversion { soc_cell: s, saturated: s < margin || s > T::one() - margin })
}

/// Mass-transfer crossover baseline `q_x = k_mt c0 SOC_cell`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearCrossover<T> {
    /// [L/s]
    pub k_mt: T,
}

impl<T: Real> LinearCrossover<T> {
    pub fn new(k_mt: T) -> Result<Self, BatteryError> {
        if !(k_mt.is_finite() && k_mt >= T::zero()) {
            return Err(BatteryError::InvalidParameter { name: "k_mt", reason: format!("must be >= 0, got {k_mt}") });
        }
        Ok(Self { k_mt })
    }

    pub fn from_l_per_min(k_mt: T) -> Result<Self, BatteryError> {
        Self::new(units::l_per_min_to_l_per_s(k_mt))
    }

    /// Slope of flux against `SOC_cell`, `k_mt c0` [mol/s].
    pub fn slope(&self, p: &BatteryParams<T>) -> T {
        self.k_mt * p.c0
    }
}

pub fn linear_crossover_flux<T: Real>(lc: &LinearCrossover<T>, p: &BatteryParams<T>, soc_cell: T) -> Result<T, BatteryError> {
    if !(soc_cell >= T::zero() && soc_cell <= T::one()) {
        return Err(BatteryError::Domain { quantity: "soc_cell", value: soc_cell.to_f64_lossy(), domain: "[0, 1]" });
    }
    Ok(lc.k_mt * p.c0 * soc_cell)
}

/// Piecewise-constant (zero-order hold) current and flow schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct InputProfile<T> {
    /// `(t, current [A], flow [L/s])`, strictly increasing in `t`.
    samples: Vec<(T, T, T)>,
}

impl<T: Real> InputProfile<T> {
    pub fn constant(current: T, q_flow: T) -> Self {
        Self { samples: vec![(T::zero(), current, q_flow)] }
    }

    pub fn from_samples(samples: Vec<(T, T, T)>) -> Result<Self, BatteryError> {
        if samples.is_empty() {
            return Err(BatteryError::InvalidParameter { name: "inputs", reason: "empty input schedule".into() });
        }
        if samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(BatteryError::InvalidParameter { name: "inputs", reason: "times must be strictly increasing".into() });
        }
        Ok(Self { samples })
    }

    /// `(current, flow)` held from the latest sample at or before `t`.
    pub fn at(&self, t: T) -> (T, T) {
        let idx = self.samples.partition_point(|s| s.0 <= t);
        let (_, i, q) = self.samples[idx.saturating_sub(1)];
        (i, q)
    }

    pub fn max_flow(&self) -> T {
        self.samples.iter().fold(T::zero(), |m, s| m.max(s.2))
    }

    pub fn min_flow(&self) -> T {
        self.samples.iter().fold(T::infinity(), |m, s| m.min(s.2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint<T> {
    pub t: T,
    pub state: StateVector<T>,
    /// Present only at open circuit with `SOC_cell ∈ (0, 1)`.
    pub v_out: Option<T>,
    pub q_x: T,
    pub current: T,
}

/// Fixed-step classical RK4 integration of the model.
///
/// `crossover` maps the current state to `q_x` [mol/s]; inputs are held
/// constant over each step.
pub fn simulate<T, F>(
    p: &BatteryParams<T>,
    m: &ModelMatrices<T>,
    crossover: F,
    inputs: &InputProfile<T>,
    x0: StateVector<T>,
    dt: T,
    t_end: T,
) -> Result<Vec<TrajectoryPoint<T>>, BatteryError>
where
    T: Real,
    F: Fn(&StateVector<T>) -> T,
{
    simulate_decimated(p, m, crossover, inputs, x0, dt, t_end, 1)
}

/// As [`simulate`], keeping only every `keep_every`-th step (plus the
/// initial point).
#[allow(clippy::too_many_arguments)]
pub fn simulate_decimated<T, F>(
    p: &BatteryParams<T>,
    m: &ModelMatrices<T>,
    crossover: F,
    inputs: &InputProfile<T>,
    x0: StateVector<T>,
    dt: T,
    t_end: T,
    keep_every: usize,
) -> Result<Vec<TrajectoryPoint<T>>, BatteryError>
where
    T: Real,
    F: Fn(&StateVector<T>) -> T,
{
    if keep_every == 0 {
        return Err(BatteryError::InvalidParameter { name: "keep_every", reason: "must be >= 1".into() });
    }
    p.validate()?;
    if !(dt > T::zero() && dt.is_finite()) {
        return Err(BatteryError::InvalidParameter { name: "dt", reason: format!("must be > 0, got {dt}") });
    }
    if !(t_end >= T::zero()) {
        return Err(BatteryError::InvalidParameter { name: "t_end", reason: format!("must be >= 0, got {t_end}") });
    }
    if inputs.min_flow() <= T::zero() {
        return Err(BatteryError::InvalidParameter { name: "q_flow", reason: "flow must be strictly positive".into() });
    }
    let a21 = m.a21(inputs.max_flow());
    if !(dt * a21 < T::half()) {
        return Err(BatteryError::StepTooLarge { dt: dt.to_f64_lossy(), a21: a21.to_f64_lossy() });
    }
    let band = |x: &StateVector<T>| {
        let lo = T::lit(-0.05);
        let hi = T::lit(1.05);
        x.is_finite() && x.soc >= lo && x.soc <= hi && x.soc_cell >= lo && x.soc_cell <= hi
    };
    if !band(&x0) {
        return Err(BatteryError::Domain { quantity: "x0", value: x0.soc_cell.to_f64_lossy(), domain: "[-0.05, 1.05]" });
    }
    let steps = (t_end / dt).round().to_usize().unwrap_or(0);
    let mut out = Vec::with_capacity(steps / keep_every + 1);
    let point = |t: T, x: StateVector<T>, current: T| {
        let v_out = if current == T::zero() && x.soc_cell > T::zero() && x.soc_cell < T::one() {
            nernst_output(p, &x, current).ok()
        } else {
            None
        };
        TrajectoryPoint { t, state: x, v_out, q_x: crossover(&x), current }
    };
    let mut x = x0;
    let (i0, _) = inputs.at(T::zero());
    out.push(point(T::zero(), x, i0));
    let f = |x: &StateVector<T>, q: T, i: T| dynamics(m, x, q, i, crossover(x));
    let axpy = |x: &StateVector<T>, h: T, k: &StateVector<T>| StateVector { soc: x.soc + h * k.soc, soc_cell: x.soc_cell + h * k.soc_cell };
    let sixth = T::one() / T::lit(6.0);
    for k in 0..steps {
        let t = T::count(k) * dt;
        let (current, q) = inputs.at(t);
        let k1 = f(&x, q, current);
        let k2 = f(&axpy(&x, dt * T::half(), &k1), q, current);
        let k3 = f(&axpy(&x, dt * T::half(), &k2), q, current);
        let k4 = f(&axpy(&x, dt, &k3), q, current);
        x = StateVector {
            soc: x.soc + dt * sixth * (k1.soc + T::two() * (k2.soc + k3.soc) + k4.soc),
            soc_cell: x.soc_cell + dt * sixth * (k1.soc_cell + T::two() * (k2.soc_cell + k3.soc_cell) + k4.soc_cell),
        };
        let t_next = T::count(k + 1) * dt;
        if !band(&x) {
            return Err(BatteryError::Instability {
                t: t_next.to_f64_lossy(),
                soc: x.soc.to_f64_lossy(),
                soc_cell: x.soc_cell.to_f64_lossy(),
            });
        }
        if (k + 1) % keep_every == 0 {
            let (i_next, _) = inputs.at(t_next);
            out.push(point(t_next, x, i_next));
        }
    }
    Ok(out)
}

/// Relative mismatch of the reservoir mole balance along a trajectory:
/// `|c0 V_res (SOC(0) - SOC(T)) - ∫(q_x + I/ℱ) dt| / (c0 V_res)`, with the
/// integral taken by composite Simpson (trapezoid on a trailing odd panel).
pub fn mass_balance_residual<T: Real>(p: &BatteryParams<T>, traj: &[TrajectoryPoint<T>]) -> T {
    if traj.len() < 2 {
        return T::zero();
    }
    let rate = |pt: &TrajectoryPoint<T>| pt.q_x + pt.current / p.faraday;
    let n = traj.len() - 1;
    let mut integral = T::zero();
    let mut k = 0;
    while k + 2 <= n {
        let h = traj[k + 2].t - traj[k].t;
        integral += h / T::lit(6.0) * (rate(&traj[k]) + T::lit(4.0) * rate(&traj[k + 1]) + rate(&traj[k + 2]));
        k += 2;
    }
    if k < n {
        let h = traj[n].t - traj[k].t;
        integral += h * T::half() * (rate(&traj[k]) + rate(&traj[n]));
    }
    let total = p.c0 * p.v_res;
    let depleted = total * (traj[0].state.soc - traj[n].state.soc);
    (depleted - integral).abs() / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reference_cell() -> BatteryParams<f64> {
        BatteryParams::reference_cell()
    }

    const Q_NOMINAL: f64 = 9.0 / 60_000.0;

    #[test]
    fn matrices_match_table_values() {
        let p = reference_cell();
        let m = assemble_matrices(&p).unwrap();
        assert_relative_eq!(m.a21(Q_NOMINAL), 0.24684, max_relative = 1e-4);
        assert_relative_eq!(m.e[0], -1.0 / (0.1 * 0.0176), max_relative = 1e-14);
        assert_relative_eq!(m.e[0], -568.18, max_relative = 1e-5);
        assert_relative_eq!(m.b[0], m.e[0] / FARADAY, max_relative = 1e-15);
        assert_relative_eq!(m.b[1], m.e[1] / FARADAY, max_relative = 1e-15);
        assert!(m.e.iter().chain(m.b.iter()).all(|&v| v < 0.0));
        let a0 = m.a_of_q(0.0);
        assert_eq!(a0.max_abs(), 0.0);
    }

    #[test]
    fn flow_term_annihilates_equal_states() {
        let m = assemble_matrices(&reference_cell()).unwrap();
        for q in [1e-6, Q_NOMINAL, 1e-2] {
            let r = m.a_of_q(q).mul_vec(&[1.0, 1.0]);
            assert_eq!(r, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        let mut p = reference_cell();
        p.epsilon = 1.2;
        assert!(matches!(assemble_matrices(&p), Err(BatteryError::InvalidParameter { name: "epsilon", .. })));
        let mut p = reference_cell();
        p.v_cell = p.v_res;
        assert!(matches!(assemble_matrices(&p), Err(BatteryError::InvalidParameter { name: "v_cell", .. })));
        let mut p = reference_cell();
        p.c0 = 0.0;
        assert!(assemble_matrices(&p).is_err());
    }

    #[test]
    fn dynamics_examples() {
        let p = reference_cell();
        let m = assemble_matrices(&p).unwrap();
        let eq = dynamics(&m, &StateVector::new(0.5, 0.5), Q_NOMINAL, 0.0, 0.0);
        assert_eq!(eq, StateVector::new(0.0, 0.0));

        let d = dynamics(&m, &StateVector::new(0.5, 0.6), Q_NOMINAL, 0.0, 0.0);
        assert_eq!(d.soc, 0.0);
        assert_relative_eq!(d.soc_cell, m.a21(Q_NOMINAL) * (0.5 - 0.6), max_relative = 1e-14);

        let i = 0.020 * 2.20;
        let d = dynamics(&m, &StateVector::new(0.5, 0.5), Q_NOMINAL, i, 0.0);
        assert_relative_eq!(d.soc, -2.591e-4, max_relative = 1e-3);
    }

    #[test]
    fn nernst_examples() {
        let p = reference_cell();
        assert_eq!(nernst_output(&p, &StateVector::new(0.5, 0.5), 0.0).unwrap(), 2.2);
        assert!((p.nernst_slope() - 0.047387).abs() < 1e-5);
        let v = nernst_output(&p, &StateVector::new(0.9, 0.9), 0.0).unwrap();
        assert!((v - 2.3041).abs() < 1e-4, "{v}");
        assert_relative_eq!(v, 2.2 + p.nernst_slope() * 9f64.ln(), max_relative = 1e-15);
    }

    #[test]
    fn nernst_errors() {
        let p = reference_cell();
        assert!(matches!(nernst_output(&p, &StateVector::new(0.5, 1.0), 0.0), Err(BatteryError::Domain { .. })));
        assert!(matches!(nernst_output(&p, &StateVector::new(0.5, 0.0), 0.0), Err(BatteryError::Domain { .. })));
        assert!(matches!(nernst_output(&p, &StateVector::new(0.5, 0.5), 0.01), Err(BatteryError::UnsupportedMode { .. })));
        assert!(matches!(invert_output(&p, 2.2, -0.01), Err(BatteryError::UnsupportedMode { .. })));
    }

    #[test]
    fn inversion_examples() {
        let p = reference_cell();
        assert_eq!(invert_output(&p, 2.2, 0.0).unwrap().soc_cell, 0.5);
        let v = nernst_output(&p, &StateVector::new(0.9, 0.9), 0.0).unwrap();
        assert_relative_eq!(invert_output(&p, v, 0.0).unwrap().soc_cell, 0.9, epsilon = 1e-12);
        for k in 1..=99 {
            let s = k as f64 / 100.0;
            let v = nernst_output(&p, &StateVector::new(s, s), 0.0).unwrap();
            let back = invert_output(&p, v, 0.0).unwrap();
            assert!((back.soc_cell - s).abs() <= 1e-10);
            assert!(!back.saturated);
        }
        assert!(invert_output(&p, 10.0, 0.0).unwrap().saturated);
        assert!(invert_output(&p, -10.0, 0.0).unwrap().saturated);
    }

    #[test]
    fn linear_crossover_examples() {
        let p = reference_cell();
        let lc = LinearCrossover::from_l_per_min(5.6142e-8).unwrap();
        assert_eq!(linear_crossover_flux(&lc, &p, 0.0).unwrap(), 0.0);
        assert_relative_eq!(linear_crossover_flux(&lc, &p, 1.0).unwrap(), 5.6142e-9 / 60.0, max_relative = 1e-14);
        assert_relative_eq!(linear_crossover_flux(&lc, &p, 1.0).unwrap(), 9.357e-11, max_relative = 1e-4);
        let a = linear_crossover_flux(&lc, &p, 0.3).unwrap();
        let b = linear_crossover_flux(&lc, &p, 0.6).unwrap();
        assert_relative_eq!(b, 2.0 * a, max_relative = 1e-15);
        assert!(linear_crossover_flux(&lc, &p, 1.01).is_err());
        assert!(linear_crossover_flux(&lc, &p, -0.01).is_err());
        assert!(LinearCrossover::new(-1.0).is_err());
    }

    #[test]
    fn simulation_equilibrium_is_constant() {
        let p = reference_cell();
        let m = assemble_matrices(&p).unwrap();
        let traj = simulate(&p, &m, |_| 0.0, &InputProfile::constant(0.0, Q_NOMINAL), StateVector::new(0.7, 0.7), 0.1, 100.0).unwrap();
        assert_eq!(traj.len(), 1001);
        assert!(traj.iter().all(|pt| pt.state == StateVector::new(0.7, 0.7)));
    }

    #[test]
    fn self_discharge_is_monotone_and_conserves_mass() {
        let p = reference_cell();
        let m = assemble_matrices(&p).unwrap();
        let lc = LinearCrossover::from_l_per_min(5.6142e-8).unwrap();
        let flux = |x: &StateVector<f64>| lc.k_mt * p.c0 * x.soc_cell.clamp(0.0, 1.0);
        let traj = simulate(&p, &m, flux, &InputProfile::constant(0.0, Q_NOMINAL), StateVector::fully_charged(), 0.5, 3600.0).unwrap();
        assert!(traj.windows(2).all(|w| w[1].state.soc <= w[0].state.soc));
        assert!(traj.windows(2).all(|w| w[1].state.soc_cell <= w[0].state.soc_cell));
        assert!(mass_balance_residual(&p, &traj) <= 1e-6);
    }

    #[test]
    fn discharge_current_enters_mass_balance() {
        let p = reference_cell();
        let m = assemble_matrices(&p).unwrap();
        let traj = simulate(&p, &m, |_| 0.0, &InputProfile::constant(0.044, Q_NOMINAL), StateVector::new(0.9, 0.9), 0.1, 60.0).unwrap();
        assert!(traj.iter().all(|pt| pt.v_out.is_none()));
        assert!(mass_balance_residual(&p, &traj) <= 1e-9);
        assert!(traj.last().unwrap().state.soc < 0.9);
    }

    #[test]
    fn simulate_guards() {
        let p = reference_cell();
        let m = assemble_matrices(&p).unwrap();
        let inputs = InputProfile::constant(0.0, Q_NOMINAL);
        assert!(matches!(
            simulate(&p, &m, |_| 0.0, &inputs, StateVector::new(0.5, 0.5), 3.0, 10.0),
            Err(BatteryError::StepTooLarge { .. })
        ));
        // A huge flux drives the state out of the band.
        let r = simulate(&p, &m, |_| 1e-3, &inputs, StateVector::new(0.5, 0.5), 0.1, 100.0);
        assert!(matches!(r, Err(BatteryError::Instability { .. })));
    }

    #[test]
    fn input_profile_zero_order_hold() {
        let prof = InputProfile::from_samples(vec![(0.0, 0.0, 1.0), (5.0, 0.1, 2.0)]).unwrap();
        assert_eq!(prof.at(4.999), (0.0, 1.0));
        assert_eq!(prof.at(5.0), (0.1, 2.0));
        assert_eq!(prof.at(-1.0), (0.0, 1.0));
        assert!(InputProfile::<f64>::from_samples(vec![(0.0, 0.0, 1.0), (0.0, 0.0, 1.0)]).is_err());
    }

    #[test]
    fn f32_model_agrees_with_f64() {
        let p32 = BatteryParams::<f32>::reference_cell();
        let v = nernst_output(&p32, &StateVector::new(0.9f32, 0.9), 0.0).unwrap();
        assert!((v as f64 - 2.30413).abs() < 1e-4);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn nernst_symmetry(s in 0.001f64..0.999) {
                let p = BatteryParams::<f64>::reference_cell();
                let a = nernst_output(&p, &StateVector::new(s, s), 0.0).unwrap();
                let b = nernst_output(&p, &StateVector::new(1.0 - s, 1.0 - s), 0.0).unwrap();
                prop_assert!((a + b - 2.0 * p.e0_cell).abs() < 1e-12);
            }

            #[test]
            fn inversion_round_trip(s in 0.01f64..0.99) {
                let p = BatteryParams::<f64>::reference_cell();
                let v = nernst_output(&p, &StateVector::new(s, s), 0.0).unwrap();
                prop_assert!((invert_output(&p, v, 0.0).unwrap().soc_cell - s).abs() <= 1e-10);
            }

            #[test]
            fn flow_row_sums_vanish(q in 1e-8f64..1.0) {
                let m = assemble_matrices(&BatteryParams::<f64>::reference_cell()).unwrap();
                let a = m.a_of_q(q);
                prop_assert_eq!(a[(0, 0)] + a[(0, 1)], 0.0);
                prop_assert_eq!(a[(1, 0)] + a[(1, 1)], 0.0);
            }
        }
    }
}
