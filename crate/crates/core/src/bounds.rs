//! Constants and ultimate-bound radii of the observer error.
//!
//! ```text
//! δ̄   = ‖PE‖ (2(1-ρ) γ_Ψ γ_θ + ε̄) + ‖Z‖ w̄
//! γ   = ρ γ_E γ_θ γ_Ψ̃ γ_s̃                  (compatible when γ² ≤ β/ᾱ)
//! γ₁  = γ_θ + 2 γ_F γ_Ψ̃ w̄ / (σ γ_C)
//! γ₂  = γ_θ + 2 γ_F γ_Ψ / σ
//! r_x̃ = (σ γ_C γ₁² + 8 δ̄) / (4 (1-ϱ) γ_W)
//! r_θ̃ = max{γ₂, γ₁/2 + sqrt(γ₁²/4 + 2 δ̄ / (σ γ_C))}
//! ```

use crate::basis::{BasisError, RbfBasis};
use crate::battery::{BatteryParams, LinearCrossover};
use crate::linalg::{min_eig, norm2, LinalgError, Mat};
use crate::scalar::Real;
use crate::synthesis::GainSolution;
use crate::battery::ModelMatrices;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("invalid bound assumption: {0}")]
    InvalidAssumption(String),
    #[error("radius undefined: {0} is zero")]
    ZeroDenominator(&'static str),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundAssumptions<T> {
    pub gamma_theta: T,
    pub w_bar: T,
    pub eps_bar: T,
    pub gamma_s_tilde: T,
    pub rho: T,
    pub varrho: T,
}

/// Number of points used when fitting the basis to the linear crossover.
pub const FIT_POINTS: usize = 200;
pub const DEFAULT_W_BAR: f64 = 1e-3;

impl<T: Real> BoundAssumptions<T> {
    pub fn validate(&self) -> Result<(), BoundsError> {
        let fields =
            [("gamma_theta", self.gamma_theta), ("w_bar", self.w_bar), ("eps_bar", self.eps_bar), ("gamma_s_tilde", self.gamma_s_tilde)];
        for (name, v) in fields {
            if !(v >= T::zero() && v.is_finite()) {
                return Err(BoundsError::InvalidAssumption(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [("rho", self.rho), ("varrho", self.varrho)] {
            if !(v >= T::zero() && v <= T::one()) {
                return Err(BoundsError::InvalidAssumption(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// Defaults from a least-squares fit of the basis to the linear
    /// crossover on [0, 1]: `γ_θ = 2‖θ_fit‖`, `ε̄` = largest fit residual,
    /// `w̄ = 1e-3`, `γ_s̃ = 1`, `ρ = ϱ = 0.5`.
    pub fn from_linear_fit(
        basis: &RbfBasis<T>,
        params: &BatteryParams<T>,
        lc: &LinearCrossover<T>,
    ) -> Result<Self, BoundsError> {
        let slope = lc.slope(params);
        let samples: Vec<(T, T)> = (0..FIT_POINTS)
            .map(|i| {
                let s = T::count(i) / T::count(FIT_POINTS - 1);
                (s, slope * s)
            })
            .collect();
        let theta = basis.fit(&samples)?;
        let mut eps_bar = T::zero();
        for &(s, q) in &samples {
            eps_bar = eps_bar.max((basis.flux(&theta, s)? - q).abs());
        }
        Ok(Self {
            gamma_theta: T::two() * theta.norm(),
            w_bar: T::lit(DEFAULT_W_BAR),
            eps_bar,
            gamma_s_tilde: T::one(),
            rho: T::half(),
            varrho: T::half(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport<T> {
    pub gamma_psi: T,
    pub gamma_psi_tilde: T,
    pub gamma_e: T,
    pub gamma_c: T,
    pub gamma_f: T,
    pub gamma_w: T,
    pub gamma: T,
    pub delta_bar: T,
    /// `None` when σ = 0.
    pub gamma1: Option<T>,
    pub gamma2: Option<T>,
    pub r_x_tilde: Option<T>,
    pub r_theta_tilde: Option<T>,
    /// `γ² ≤ β/ᾱ`.
    pub coupling_compatible: bool,
    /// `sqrt(β/ᾱ)`.
    pub max_admissible_gamma: T,
}

/// Output-error sensitivity `γ_C = ‖C‖`.
pub fn gamma_c<T: Real>(m: &ModelMatrices<T>) -> T {
    norm2(&m.c_row)
}

/// `δ̄ = ‖PE‖ (2(1-ρ) γ_Ψ γ_θ + ε̄) + ‖Z‖ w̄`.
pub fn delta_bar<T: Real>(a: &BoundAssumptions<T>, sol: &GainSolution<T>, m: &ModelMatrices<T>, gamma_psi: T) -> T {
    let pe = norm2(&sol.p_mat().mul_vec(&m.e));
    pe * (T::two() * (T::one() - a.rho) * gamma_psi * a.gamma_theta + a.eps_bar) + sol.z_norm() * a.w_bar
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coupling<T> {
    pub gamma: T,
    pub compatible: bool,
    pub max_admissible_gamma: T,
}

/// `γ = ρ γ_E γ_θ γ_Ψ̃ γ_s̃`, checked against `α β ≥ γ²` with `α = 1/ᾱ`.
pub fn coupling_gamma<T: Real>(
    a: &BoundAssumptions<T>,
    m: &ModelMatrices<T>,
    gamma_psi_tilde: T,
    alpha_bar: T,
    beta: T,
) -> Coupling<T> {
    let gamma = a.rho * norm2(&m.e) * a.gamma_theta * gamma_psi_tilde * a.gamma_s_tilde;
    let admissible_sq = beta / alpha_bar;
    Coupling { gamma, compatible: gamma * gamma <= admissible_sq, max_admissible_gamma: admissible_sq.sqrt() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UubRadii<T> {
    pub gamma1: T,
    pub gamma2: T,
    pub r_x_tilde: T,
    pub r_theta_tilde: T,
}

/// Constants `γ₁`, `γ₂` and the two radii. Returns `Ok(None)` when
/// `σ = 0`, where `γ₁` and `γ₂` are undefined.
#[allow(clippy::too_many_arguments)]
pub fn uub_radii<T: Real>(
    a: &BoundAssumptions<T>,
    sol: &GainSolution<T>,
    delta_bar: T,
    sigma: T,
    gamma_psi: T,
    gamma_psi_tilde: T,
    gamma_c: T,
) -> Result<Option<UubRadii<T>>, BoundsError> {
    if sigma < T::zero() {
        return Err(BoundsError::InvalidAssumption(format!("sigma must be >= 0, got {sigma}")));
    }
    if a.varrho >= T::one() {
        return Err(BoundsError::ZeroDenominator("1 - varrho"));
    }
    let gamma_w = min_eig(&sol.w_mat())?;
    if !(gamma_w > T::zero()) {
        return Err(BoundsError::ZeroDenominator("gamma_w"));
    }
    if sigma == T::zero() {
        return Ok(None);
    }
    if gamma_c == T::zero() {
        return Err(BoundsError::ZeroDenominator("gamma_c"));
    }
    let gamma_f = sol.f.abs();
    let gamma1 = a.gamma_theta + T::two() * gamma_f * gamma_psi_tilde * a.w_bar / (sigma * gamma_c);
    let gamma2 = a.gamma_theta + T::two() * gamma_f * gamma_psi / sigma;
    let r_x_tilde = (sigma * gamma_c * gamma1 * gamma1 + T::lit(8.0) * delta_bar)
        / (T::lit(4.0) * (T::one() - a.varrho) * gamma_w);
    let g1h = gamma1 * T::half();
    let r_theta_tilde = gamma2.max(g1h + (g1h * g1h + T::two() * delta_bar / (sigma * gamma_c)).sqrt());
    Ok(Some(UubRadii { gamma1, gamma2, r_x_tilde, r_theta_tilde }))
}

/// Every constant of the bound chain for a synthesized solution.
pub fn report<T: Real>(
    a: &BoundAssumptions<T>,
    sol: &GainSolution<T>,
    m: &ModelMatrices<T>,
    basis: &RbfBasis<T>,
    beta: T,
    sigma: T,
) -> Result<BoundReport<T>, BoundsError> {
    a.validate()?;
    // Normalized basis: entries in [0, 1] summing to one.
    let gamma_psi = T::one();
    let gamma_psi_tilde = basis.lipschitz_bound();
    let gc = gamma_c(m);
    let db = delta_bar(a, sol, m, gamma_psi);
    let l1 = coupling_gamma(a, m, gamma_psi_tilde, sol.alpha_bar, beta);
    let radii = uub_radii(a, sol, db, sigma, gamma_psi, gamma_psi_tilde, gc)?;
    Ok(BoundReport {
        gamma_psi,
        gamma_psi_tilde,
        gamma_e: norm2(&m.e),
        gamma_c: gc,
        gamma_f: sol.f.abs(),
        gamma_w: min_eig(&sol.w_mat())?,
        gamma: l1.gamma,
        delta_bar: db,
        gamma1: radii.map(|r| r.gamma1),
        gamma2: radii.map(|r| r.gamma2),
        r_x_tilde: radii.map(|r| r.r_x_tilde),
        r_theta_tilde: radii.map(|r| r.r_theta_tilde),
        coupling_compatible: l1.compatible,
        max_admissible_gamma: l1.max_admissible_gamma,
    })
}

/// Eigenvalues (ascending) of the excitation Gram matrix `∫ Ψ(s)Ψ(s)ᵀ dt`
/// along a sampled trajectory, by the trapezoidal rule.
pub fn excitation_gram_eigenvalues<T: Real>(basis: &RbfBasis<T>, samples: &[(T, T)]) -> Result<Vec<T>, BoundsError> {
    let m = basis.m();
    let mut g = Mat::zeros(m, m);
    for w in samples.windows(2) {
        let h = (w[1].0 - w[0].0) * T::half();
        for &(_, s) in w {
            let psi = basis.evaluate(s);
            for i in 0..m {
                for j in 0..m {
                    g[(i, j)] += h * psi[i] * psi[j];
                }
            }
        }
    }
    Ok(crate::linalg::sym_eigen(&g.symmetrize())?.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery::assemble_matrices;

    fn solution() -> GainSolution<f64> {
        GainSolution {
            p: [[2.0, 0.5], [0.5, 1.0]],
            z: [0.3, 0.4],
            l: [0.0, 0.0],
            f: -0.5,
            w: [[0.2, 0.0], [0.0, 0.1]],
            alpha_bar: 2.0,
            gamma_z: 0.5,
            gamma_f: 0.5,
            margins: vec![],
        }
    }

    fn assume() -> BoundAssumptions<f64> {
        BoundAssumptions { gamma_theta: 1.0, w_bar: 0.0, eps_bar: 0.0, gamma_s_tilde: 1.0, rho: 0.5, varrho: 0.5 }
    }

    #[test]
    fn delta_bar_cases() {
        let m = assemble_matrices(&BatteryParams::reference_cell()).unwrap();
        let sol = solution();
        let pe = norm2(&sol.p_mat().mul_vec(&m.e));
        let mut a = assume();
        a.rho = 1.0;
        assert_eq!(delta_bar(&a, &sol, &m, 1.0), 0.0);
        a.rho = 0.5;
        a.gamma_theta = 3.0;
        assert!((delta_bar(&a, &sol, &m, 1.0) - pe * 3.0).abs() <= 1e-12 * pe * 3.0);
        let a = BoundAssumptions { gamma_theta: 0.0, w_bar: 0.01, ..assume() };
        assert!((delta_bar(&a, &sol, &m, 1.0) - 0.5 * 0.01).abs() < 1e-15);
    }

    #[test]
    fn coupling_product() {
        let m = assemble_matrices(&BatteryParams::reference_cell()).unwrap();
        let a = BoundAssumptions { rho: 0.0, ..assume() };
        let l = coupling_gamma(&a, &m, 5.0, 2.0, 1e-4);
        assert_eq!(l.gamma, 0.0);
        assert!(l.compatible);
    }

    #[test]
    fn radii_without_uncertainty() {
        let sol = solution();
        let a = assume();
        let r = uub_radii(&a, &sol, 0.0, 0.1, 1.0, 3.0, 1.0).unwrap().unwrap();
        assert_eq!(r.gamma1, a.gamma_theta);
        assert_eq!(r.r_theta_tilde, r.gamma2.max(a.gamma_theta));
    }

    #[test]
    fn sigma_zero_gives_none_and_guards_hold() {
        let sol = solution();
        assert_eq!(uub_radii(&assume(), &sol, 0.1, 0.0, 1.0, 3.0, 1.0).unwrap(), None);
        let a = BoundAssumptions { varrho: 1.0, ..assume() };
        assert!(matches!(uub_radii(&a, &sol, 0.1, 0.1, 1.0, 3.0, 1.0), Err(BoundsError::ZeroDenominator(_))));
        let mut s = solution();
        s.w = [[0.0, 0.0], [0.0, 0.0]];
        assert!(matches!(uub_radii(&assume(), &s, 0.1, 0.1, 1.0, 3.0, 1.0), Err(BoundsError::ZeroDenominator(_))));
    }

    #[test]
    fn invalid_assumptions_rejected() {
        let a = BoundAssumptions { rho: 1.5, ..assume() };
        assert!(a.validate().is_err());
        let a = BoundAssumptions { w_bar: -1.0, ..assume() };
        assert!(a.validate().is_err());
    }
}
