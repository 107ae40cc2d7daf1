//! Polytopic LMI program for the observer gains.
//!
//! Decision vector (after eliminating `P E = Cᵀ F`):
//!
//! ```text
//! [p11, p22, z1, z2, w1, w2, ᾱ, γ_Z, γ_F]
//! P = [p11, -k p11; -k p11, p22],  k = E1/E2,  F = -k E1 p11 + E2 p22
//! ```
//!
//! Constraints, in the order the margins are reported:
//!
//! 1. `[M(A(Q_m)), P; P, ᾱI] ⪰ 0`
//! 2. `[M(A(Q_M)), P; P, ᾱI] ⪰ 0`
//! 3. `[γ_Z I, Z; Zᵀ, γ_Z] ⪰ 0`
//! 4. `[γ_F, F; F, γ_F] ⪰ 0`
//! 5. `P ⪰ 0`
//! 6. `w1 ≥ ω1`, 7. `w2 ≥ ω2`
//!
//! with `M(A) = -AᵀP - PA + CᵀZᵀ + ZC - βI - W` and `W = diag(w1, w2)`.

use crate::battery::{units, BatteryParams, ModelMatrices};
use crate::linalg::{min_eig, solve_general, spectral_norm, LinalgError, Mat};
use crate::scalar::Real;
use crate::sdp::{self, AffineBlock, SdpError, SdpProblem, SdpStatus, SolverOptions};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const N_VARS: usize = 9;
const I_P11: usize = 0;
const I_P22: usize = 1;
const I_Z1: usize = 2;
const I_Z2: usize = 3;
const I_W1: usize = 4;
const I_W2: usize = 5;
const I_ALPHA: usize = 6;
const I_GZ: usize = 7;
const I_GF: usize = 8;

/// Number of constraint blocks, and so of reported margins.
pub const N_BLOCKS: usize = 7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("invalid synthesis config: {0}")]
    InvalidConfig(String),
    #[error("E2 = 0, the output equality cannot be eliminated")]
    DegenerateE,
    #[error("no strictly feasible point: phase-1 block margins {residuals:?}; try beta in {suggested_betas:?}")]
    Infeasible { residuals: Vec<f64>, suggested_betas: Vec<f64> },
    #[error("solver stalled after {iterations} Newton steps; final block margins {residuals:?}")]
    NumericalFailure { iterations: usize, residuals: Vec<f64> },
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisConfig<T> {
    /// Lower flow vertex [L/s].
    pub q_min: T,
    /// Upper flow vertex [L/s].
    pub q_max: T,
    pub beta: T,
    pub kappa_z: T,
    pub kappa_f: T,
    pub omega_floor: [T; 2],
    /// Duality-measure target handed to the SDP solver.
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Real> SynthesisConfig<T> {
    /// Settings of the self-discharge experiment: ±10% around 9 mL/min,
    /// β = 1e-4, κ_Z = 1, κ_F = 1e-5.
    pub fn experiment() -> Self {
        let q = units::ml_per_min_to_l_per_s(T::lit(9.0));
        Self {
            q_min: T::lit(0.9) * q,
            q_max: T::lit(1.1) * q,
            beta: T::lit(1e-4),
            kappa_z: T::one(),
            kappa_f: T::lit(1e-5),
            omega_floor: [T::lit(1e-6); 2],
            tol: T::lit(DEFAULT_TOL),
            max_iter: 200,
        }
    }

    pub fn validate(&self) -> Result<(), SynthesisError> {
        let bad = |msg: String| Err(SynthesisError::InvalidConfig(msg));
        if !(self.q_min > T::zero() && self.q_min <= self.q_max && self.q_max.is_finite()) {
            return bad(format!("need 0 < q_min <= q_max, got [{}, {}]", self.q_min, self.q_max));
        }
        if !(self.beta > T::zero() && self.beta.is_finite()) {
            return bad(format!("beta must be > 0, got {}", self.beta));
        }
        if !(self.kappa_z >= T::zero() && self.kappa_f >= T::zero()) {
            return bad("kappa_z and kappa_f must be >= 0".into());
        }
        if !self.omega_floor.iter().all(|&w| w > T::zero()) {
            return bad("omega_floor entries must be > 0".into());
        }
        if !(self.tol > T::zero()) {
            return bad(format!("tol must be > 0, got {}", self.tol));
        }
        Ok(())
    }
}

/// Default duality-measure target for the gain program.
///
/// The objective is nearly flat along the direction in which `P` becomes
/// singular, so driving the duality measure to 1e-8 buys a negligible
/// objective improvement for an ill-conditioned `P` and a very large `L`.
/// This central-path point keeps `P` well conditioned.
pub const DEFAULT_TOL: f64 = 1e-3;

/// Certified observer gains. Serialized field names are part of the file
/// format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSolution<T> {
    pub p: [[T; 2]; 2],
    pub z: [T; 2],
    /// `L = P⁻¹ Z`.
    pub l: [T; 2],
    pub f: T,
    pub w: [[T; 2]; 2],
    pub alpha_bar: T,
    pub gamma_z: T,
    pub gamma_f: T,
    /// Minimum eigenvalue of each constraint block, see the module docs.
    pub margins: Vec<T>,
}

impl<T: Real> GainSolution<T> {
    pub fn p_mat(&self) -> Mat<T> {
        Mat::from_rows(&[&self.p[0], &self.p[1]])
    }

    pub fn w_mat(&self) -> Mat<T> {
        Mat::from_rows(&[&self.w[0], &self.w[1]])
    }

    pub fn z_norm(&self) -> T {
        crate::linalg::norm2(&self.z)
    }

    /// `‖P E - Cᵀ F‖₂`.
    pub fn lme_residual(&self, m: &ModelMatrices<T>) -> T {
        let pe = self.p_mat().mul_vec(&m.e);
        let r = [pe[0] - m.c_row[0] * self.f, pe[1] - m.c_row[1] * self.f];
        crate::linalg::norm2(&r)
    }

    pub fn min_margin(&self) -> T {
        self.margins.iter().fold(T::infinity(), |a, &b| a.min(b))
    }
}

/// Extra solver information returned next to the gains.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisStats<T> {
    pub objective: T,
    pub iterations: usize,
    pub x: Vec<T>,
}

fn elimination_ratio<T: Real>(m: &ModelMatrices<T>) -> Result<T, SynthesisError> {
    if m.e[1] == T::zero() || !m.e[1].is_finite() {
        return Err(SynthesisError::DegenerateE);
    }
    Ok(m.e[0] / m.e[1])
}

struct Decoded<T> {
    p: Mat<T>,
    z: [T; 2],
    f: T,
    w: Mat<T>,
    alpha_bar: T,
    gamma_z: T,
    gamma_f: T,
}

fn decode<T: Real>(x: &[T], m: &ModelMatrices<T>, k: T) -> Decoded<T> {
    let p11 = x[I_P11];
    let p12 = -k * p11;
    let p22 = x[I_P22];
    Decoded {
        p: Mat::from_rows(&[&[p11, p12], &[p12, p22]]),
        z: [x[I_Z1], x[I_Z2]],
        f: p12 * m.e[0] + p22 * m.e[1],
        w: Mat::from_diag(&[x[I_W1], x[I_W2]]),
        alpha_bar: x[I_ALPHA],
        gamma_z: x[I_GZ],
        gamma_f: x[I_GF],
    }
}

/// `M(A) = -AᵀP - PA + CᵀZᵀ + ZC - βI - W`.
fn lyapunov_part<T: Real>(a: &Mat<T>, p: &Mat<T>, z: &[T; 2], c: &[T; 2], beta: T, w: &Mat<T>) -> Mat<T> {
    let pa = p.matmul(a);
    let zc = Mat::from_fn(2, 2, |i, j| z[i] * c[j]);
    let mut mm = pa.transpose().add(&pa).scale(-T::one()).add(&zc).add(&zc.transpose());
    mm.axpy(-T::one(), w);
    for d in 0..2 {
        mm[(d, d)] -= beta;
    }
    mm
}

/// Vertex block in the form used by the program: `[M, P; P, ᾱI]`.
fn vertex_block<T: Real>(d: &Decoded<T>, m: &ModelMatrices<T>, q: T, beta: T) -> Mat<T> {
    let mm = lyapunov_part(&m.a_of_q(q), &d.p, &d.z, &m.c_row, beta, &d.w);
    Mat::from_blocks(&mm, &d.p, &d.p, &Mat::identity(2).scale(d.alpha_bar))
}

/// Same condition with `α = 1/ᾱ`: `[M, √α P; √α P, I]`.
fn vertex_block_unit_corner<T: Real>(d: &Decoded<T>, m: &ModelMatrices<T>, q: T, beta: T) -> Mat<T> {
    let mm = lyapunov_part(&m.a_of_q(q), &d.p, &d.z, &m.c_row, beta, &d.w);
    let sp = d.p.scale((T::one() / d.alpha_bar).sqrt());
    Mat::from_blocks(&mm, &sp, &sp, &Mat::identity(2))
}

fn all_blocks<T: Real>(d: &Decoded<T>, cfg: &SynthesisConfig<T>, m: &ModelMatrices<T>, omega: [T; 2]) -> Vec<Mat<T>> {
    let z_block = Mat::from_rows(&[
        &[d.gamma_z, T::zero(), d.z[0]],
        &[T::zero(), d.gamma_z, d.z[1]],
        &[d.z[0], d.z[1], d.gamma_z],
    ]);
    let f_block = Mat::from_rows(&[&[d.gamma_f, d.f], &[d.f, d.gamma_f]]);
    vec![
        vertex_block(d, m, cfg.q_min, cfg.beta),
        vertex_block(d, m, cfg.q_max, cfg.beta),
        z_block,
        f_block,
        d.p.clone(),
        Mat::from_rows(&[&[d.w[(0, 0)] - omega[0]]]),
        Mat::from_rows(&[&[d.w[(1, 1)] - omega[1]]]),
    ]
}

/// Builds the SDP of the polytopic gain program.
pub fn assemble<T: Real>(cfg: &SynthesisConfig<T>, m: &ModelMatrices<T>) -> Result<SdpProblem<T>, SynthesisError> {
    cfg.validate()?;
    let k = elimination_ratio(m)?;
    let omega = cfg.omega_floor;
    let blocks: Vec<AffineBlock<T>> = (0..N_BLOCKS)
        .map(|b| AffineBlock::from_affine_fn(N_VARS, |x| all_blocks(&decode(x, m, k), cfg, m, omega).swap_remove(b)))
        .collect();
    let mut objective = vec![T::zero(); N_VARS];
    objective[I_ALPHA] = T::one();
    objective[I_GZ] = cfg.kappa_z;
    objective[I_GF] = cfg.kappa_f;
    Ok(SdpProblem::new(objective, blocks))
}

fn margins_of<T: Real>(blocks: &[Mat<T>]) -> Result<Vec<T>, SynthesisError> {
    Ok(blocks.iter().map(min_eig).collect::<Result<_, _>>()?)
}

fn suggested_betas<T: Real>(beta: T) -> Vec<f64> {
    let b = beta.to_f64_lossy();
    vec![b / 10.0, b / 100.0, b / 1000.0]
}

pub fn synthesize<T: Real>(cfg: &SynthesisConfig<T>, m: &ModelMatrices<T>) -> Result<GainSolution<T>, SynthesisError> {
    synthesize_with_stats(cfg, m).map(|(s, _)| s)
}

pub fn synthesize_with_stats<T: Real>(
    cfg: &SynthesisConfig<T>,
    m: &ModelMatrices<T>,
) -> Result<(GainSolution<T>, SynthesisStats<T>), SynthesisError> {
    let problem = assemble(cfg, m)?;
    let opts = SolverOptions { tol: cfg.tol, max_iter: cfg.max_iter, ..SolverOptions::default() };
    let sol = sdp::solve(&problem, &opts)?;
    let residuals = || sol.block_min_eigs.iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>();
    match sol.status {
        SdpStatus::Optimal => {}
        SdpStatus::Infeasible => {
            return Err(SynthesisError::Infeasible { residuals: residuals(), suggested_betas: suggested_betas(cfg.beta) })
        }
        SdpStatus::Stalled => {
            return Err(SynthesisError::NumericalFailure { iterations: sol.iterations, residuals: residuals() })
        }
    }
    let k = elimination_ratio(m)?;
    let d = decode(&sol.x, m, k);
    let margins = margins_of(&all_blocks(&d, cfg, m, cfg.omega_floor))?;
    let l = solve_general(&d.p, &d.z)?;
    let gains = GainSolution {
        p: [[d.p[(0, 0)], d.p[(0, 1)]], [d.p[(1, 0)], d.p[(1, 1)]]],
        z: d.z,
        l: [l[0], l[1]],
        f: d.f,
        w: [[d.w[(0, 0)], T::zero()], [T::zero(), d.w[(1, 1)]]],
        alpha_bar: d.alpha_bar,
        gamma_z: d.gamma_z,
        gamma_f: d.gamma_f,
        margins,
    };
    Ok((gains, SynthesisStats { objective: sol.objective_value, iterations: sol.iterations, x: sol.x }))
}

/// Re-check of a solution over a grid of flow rates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport<T> {
    /// Flow rates checked [L/s], endpoints included.
    pub flows: Vec<T>,
    /// Min eigenvalue of `[M, P; P, ᾱI]` at each flow.
    pub margins: Vec<T>,
    /// Min eigenvalue of `[M, √α P; √α P, I]` at each flow.
    pub unit_corner_margins: Vec<T>,
    /// Smallest of the two vertex margins in `margins`.
    pub min_vertex_margin: T,
    pub min_margin: T,
    pub lme_residual: T,
}

/// Evaluates the Lyapunov block at `grid_n` equally spaced flows in
/// `[q_min, q_max]` (`grid_n = 1` checks `q_min` only).
pub fn certify<T: Real>(
    sol: &GainSolution<T>,
    cfg: &SynthesisConfig<T>,
    m: &ModelMatrices<T>,
    grid_n: usize,
) -> Result<CertificateReport<T>, SynthesisError> {
    let d = Decoded {
        p: sol.p_mat(),
        z: sol.z,
        f: sol.f,
        w: sol.w_mat(),
        alpha_bar: sol.alpha_bar,
        gamma_z: sol.gamma_z,
        gamma_f: sol.gamma_f,
    };
    let n = grid_n.max(1);
    let flows: Vec<T> = (0..n)
        .map(|i| {
            if i == 0 {
                cfg.q_min
            } else if i == n - 1 {
                cfg.q_max
            } else {
                cfg.q_min + (cfg.q_max - cfg.q_min) * T::count(i) / T::count(n - 1)
            }
        })
        .collect();
    let margins: Vec<T> =
        flows.iter().map(|&q| min_eig(&vertex_block(&d, m, q, cfg.beta))).collect::<Result<_, _>>()?;
    let unit_corner_margins: Vec<T> =
        flows.iter().map(|&q| min_eig(&vertex_block_unit_corner(&d, m, q, cfg.beta))).collect::<Result<_, _>>()?;
    let min_vertex_margin = margins[0].min(*margins.last().unwrap());
    let min_margin = margins.iter().fold(T::infinity(), |a, &b| a.min(b));
    Ok(CertificateReport { flows, margins, unit_corner_margins, min_vertex_margin, min_margin, lme_residual: sol.lme_residual(m) })
}

/// Matrix of the closed-loop error dynamics `A(Q) - L C`.
pub fn error_dynamics<T: Real>(sol: &GainSolution<T>, m: &ModelMatrices<T>, q_flow: T) -> Mat<T> {
    let lc = Mat::from_fn(2, 2, |i, j| sol.l[i] * m.c_row[j]);
    m.a_of_q(q_flow).sub(&lc)
}

/// `‖P E‖₂`.
pub fn p_e_norm<T: Real>(sol: &GainSolution<T>, m: &ModelMatrices<T>) -> T {
    crate::linalg::norm2(&sol.p_mat().mul_vec(&m.e))
}

pub fn p_spectral_norm<T: Real>(sol: &GainSolution<T>) -> T {
    spectral_norm(&sol.p_mat())
}

/// Synthesis for the reference cell with the experiment settings.
pub fn experiment_gains() -> Result<GainSolution<f64>, SynthesisError> {
    let m = crate::battery::assemble_matrices(&BatteryParams::<f64>::reference_cell())
        .map_err(|e| SynthesisError::InvalidConfig(e.to_string()))?;
    synthesize(&SynthesisConfig::experiment(), &m)
}
