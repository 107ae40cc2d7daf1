//! Normalized Gaussian radial basis `Ψ(s) = [ψ₁(s), …, ψ_m(s)]` used to
//! approximate the crossover flux as `q_x(s) ≈ Ψ(s)·θ`.
//!
//! `ψ_j = φ_j / Σ_k φ_k` with `φ_j(s) = exp(-(s - c_j)² / (w·variance))`,
//! where `w` is 2 ([`WidthConvention::HalfVariance`], the default) or 1.
//! The normalization is evaluated in log-sum-exp form, so Ψ stays a
//! partition of unity far outside the center range.

use crate::linalg::{least_squares, LinalgError, Mat};
use crate::scalar::Real;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("invalid basis argument: {0}")]
    InvalidArgument(String),
    #[error("parameter vector has {got} entries, basis has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("least-squares fit failed: {0}")]
    Fit(#[from] LinalgError),
}

/// How the configured variance enters the Gaussian exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WidthConvention {
    /// `exp(-d² / (2 v))`
    #[default]
    HalfVariance,
    /// `exp(-d² / v)`
    FullVariance,
}

impl WidthConvention {
    fn denominator<T: Real>(self, variance: T) -> T {
        match self {
            WidthConvention::HalfVariance => T::two() * variance,
            WidthConvention::FullVariance => variance,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbfBasis<T> {
    centers: Vec<T>,
    variance: T,
    convention: WidthConvention,
}

impl<T: Real> RbfBasis<T> {
    pub fn new(centers: Vec<T>, variance: T, convention: WidthConvention) -> Result<Self, BasisError> {
        if centers.is_empty() {
            return Err(BasisError::InvalidArgument("at least one center required".into()));
        }
        if !(variance > T::zero() && variance.is_finite()) {
            return Err(BasisError::InvalidArgument(format!("variance must be > 0, got {variance}")));
        }
        if centers.iter().any(|c| !c.is_finite()) || centers.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(BasisError::InvalidArgument("centers must be finite and strictly increasing".into()));
        }
        Ok(Self { centers, variance, convention })
    }

    /// `m` centers evenly spaced on `[lo, hi]`.
    pub fn uniform(m: usize, lo: T, hi: T, variance: T) -> Result<Self, BasisError> {
        Self::uniform_with(m, lo, hi, variance, WidthConvention::default())
    }

    pub fn uniform_with(m: usize, lo: T, hi: T, variance: T, convention: WidthConvention) -> Result<Self, BasisError> {
        if m < 2 {
            return Err(BasisError::InvalidArgument(format!("uniform basis needs m >= 2, got {m}")));
        }
        if !(lo < hi) {
            return Err(BasisError::InvalidArgument(format!("need lo < hi, got [{lo}, {hi}]")));
        }
        let step = (hi - lo) / T::count(m - 1);
        let mut centers: Vec<T> = (0..m).map(|j| lo + T::count(j) * step).collect();
        centers[m - 1] = hi;
        Self::new(centers, variance, convention)
    }

    /// Seven centers on `[0.05, 0.95]`, variance 0.0081.
    pub fn experiment_default() -> Self {
        Self::uniform(7, T::lit(0.05), T::lit(0.95), T::lit(0.0081)).expect("valid default basis")
    }

    pub fn m(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[T] {
        &self.centers
    }

    pub fn variance(&self) -> T {
        self.variance
    }

    pub fn convention(&self) -> WidthConvention {
        self.convention
    }

    /// Log-activations `ℓ_j = -(s - c_j)² / den`, shifted so the max is 0.
    fn shifted_logits(&self, s: T, out: &mut [T]) {
        let den = self.convention.denominator(self.variance);
        let mut max = T::neg_infinity();
        for (o, &c) in out.iter_mut().zip(&self.centers) {
            let d = s - c;
            *o = -(d * d) / den;
            max = max.max(*o);
        }
        for o in out.iter_mut() {
            *o -= max;
        }
    }

    /// Writes `Ψ(s)` into `out` (length `m`).
    pub fn evaluate_into(&self, s: T, out: &mut [T]) {
        debug_assert_eq!(out.len(), self.m());
        self.shifted_logits(s, out);
        let mut sum = T::zero();
        for o in out.iter_mut() {
            *o = o.exp();
            sum += *o;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
    }

    pub fn evaluate(&self, s: T) -> Vec<T> {
        let mut out = vec![T::zero(); self.m()];
        self.evaluate_into(s, &mut out);
        out
    }

    /// `dΨ/ds`: `ψ_j (ℓ'_j - Σ_k ψ_k ℓ'_k)` with `ℓ'_j = -2 (s - c_j)/den`.
    pub fn derivative(&self, s: T) -> Vec<T> {
        let psi = self.evaluate(s);
        let den = self.convention.denominator(self.variance);
        let dl: Vec<T> = self.centers.iter().map(|&c| -T::two() * (s - c) / den).collect();
        let mean: T = psi.iter().zip(&dl).map(|(&p, &d)| p * d).sum();
        psi.iter().zip(&dl).map(|(&p, &d)| p * (d - mean)).collect()
    }

    /// Certified Lipschitz constant `γ_Ψ̃` of `s ↦ Ψ(s)` in the 2-norm.
    ///
    /// Samples `‖dΨ/ds‖` on a 1e-4 grid over [-0.2, 1.2] and adds the grid
    /// modulus `h · max‖ΔΨ'/h‖` so the returned value bounds the supremum
    /// between grid nodes. Outside the sampled window the derivative decays
    /// toward zero because the logit differences are affine in `s`.
    pub fn lipschitz_bound(&self) -> T {
        if self.m() == 1 {
            return T::zero();
        }
        grid_sup_with_modulus(|s| crate::linalg::norm2(&self.derivative(s)), T::lit(-0.2), T::lit(1.2), T::lit(1e-4))
    }

    /// `Ψ(s)·θ`.
    pub fn flux(&self, theta: &ParameterVector<T>, s: T) -> Result<T, BasisError> {
        if theta.len() != self.m() {
            return Err(BasisError::DimensionMismatch { expected: self.m(), got: theta.len() });
        }
        Ok(self.evaluate(s).iter().zip(theta.as_slice()).map(|(&p, &t)| p * t).sum())
    }

    /// Least-squares `θ` for samples `(s_i, q_i)`.
    pub fn fit(&self, samples: &[(T, T)]) -> Result<ParameterVector<T>, BasisError> {
        let design = Mat::from_fn(samples.len(), self.m(), |i, j| self.evaluate(samples[i].0)[j]);
        let rhs: Vec<T> = samples.iter().map(|&(_, q)| q).collect();
        Ok(ParameterVector::new(least_squares(&design, &rhs)?))
    }
}

/// Supremum of a nonnegative function on `[lo, hi]` sampled at spacing `h`,
/// inflated by `h` times the largest observed slope between nodes.
pub fn grid_sup_with_modulus<T: Real>(f: impl Fn(T) -> T, lo: T, hi: T, h: T) -> T {
    let n = ((hi - lo) / h).ceil().to_usize_lossy();
    let mut prev = f(lo);
    let mut sup = prev;
    let mut slope = T::zero();
    for k in 1..=n {
        let s = (lo + T::count(k) * h).min(hi);
        let v = f(s);
        sup = sup.max(v);
        slope = slope.max((v - prev).abs() / h);
        prev = v;
    }
    sup + h * slope
}

trait ToUsizeLossy {
    fn to_usize_lossy(self) -> usize;
}

impl<T: Real> ToUsizeLossy for T {
    fn to_usize_lossy(self) -> usize {
        num_traits::ToPrimitive::to_usize(&self).unwrap_or(0)
    }
}

/// Basis weights `θ` [mol/s per unit activation].
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector<T>(Vec<T>);

impl<T: Real> ParameterVector<T> {
    pub fn new(theta: Vec<T>) -> Self {
        Self(theta)
    }

    pub fn zeros(m: usize) -> Self {
        Self(vec![T::zero(); m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.0
    }

    pub fn norm(&self) -> T {
        crate::linalg::norm2(&self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Checks `‖θ‖ ≤ bound`.
    pub fn within(&self, bound: T) -> bool {
        self.norm() <= bound
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn uniform_centers() {
        let b = RbfBasis::<f64>::uniform(7, 0.05, 0.95, 0.0081).unwrap();
        let expected = [0.05, 0.20, 0.35, 0.50, 0.65, 0.80, 0.95];
        for (c, e) in b.centers().iter().zip(expected) {
            assert_relative_eq!(*c, e, epsilon = 1e-15);
        }
        assert_eq!(RbfBasis::<f64>::uniform(2, 0.0, 1.0, 0.1).unwrap().centers(), &[0.0, 1.0]);
        assert_eq!(RbfBasis::<f64>::uniform(3, 0.0, 1.0, 0.1).unwrap().centers(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn invalid_construction() {
        assert!(RbfBasis::<f64>::uniform(1, 0.0, 1.0, 0.1).is_err());
        assert!(RbfBasis::<f64>::uniform(3, 1.0, 0.0, 0.1).is_err());
        assert!(RbfBasis::<f64>::uniform(3, 0.0, 1.0, 0.0).is_err());
        assert!(RbfBasis::<f64>::new(vec![0.2, 0.1], 0.1, WidthConvention::HalfVariance).is_err());
        assert!(RbfBasis::<f64>::new(vec![], 0.1, WidthConvention::HalfVariance).is_err());
    }

    #[test]
    fn symmetric_layout_evaluation() {
        let b = RbfBasis::<f64>::uniform(3, 0.0, 1.0, 0.0081).unwrap();
        let psi = b.evaluate(0.5);
        assert!(psi[1] > psi[0] && psi[1] > psi[2]);
        assert_relative_eq!(psi[0], psi[2], epsilon = 1e-15);
    }

    #[test]
    fn nearest_center_weight_at_first_center() {
        // ψ₁(0.05) = 1 / Σ_k exp(-(0.15k)²/(2·0.0081)), k = 0..6
        let b = RbfBasis::<f64>::experiment_default();
        let denom: f64 = (0..7).map(|k| (-(0.15 * k as f64).powi(2) / 0.0162).exp()).sum();
        let psi = b.evaluate(0.05);
        assert_relative_eq!(psi[0], 1.0 / denom, max_relative = 1e-12);
        assert_relative_eq!(psi[0], 0.797_943_313, max_relative = 1e-8);
        assert!(psi[0] > 0.79 && psi[0] < 0.80);
    }

    #[test]
    fn full_variance_convention_is_narrower() {
        let b = RbfBasis::<f64>::uniform_with(7, 0.05, 0.95, 0.0081, WidthConvention::FullVariance).unwrap();
        let denom: f64 = (0..7).map(|k| (-(0.15 * k as f64).powi(2) / 0.0081).exp()).sum();
        assert_relative_eq!(b.evaluate(0.05)[0], 1.0 / denom, max_relative = 1e-12);
        assert!(b.lipschitz_bound() > RbfBasis::<f64>::experiment_default().lipschitz_bound());
    }

    #[test]
    fn partition_of_unity_far_out() {
        let b = RbfBasis::<f64>::experiment_default();
        for s in [-10.0, -1.0, 0.0, 0.37, 1.0, 3.0, 10.0] {
            let sum: f64 = b.evaluate(s).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "s = {s}: {sum}");
        }
    }

    #[test]
    fn derivative_matches_central_difference() {
        let b = RbfBasis::<f64>::experiment_default();
        let h = 1e-6;
        for s in [0.0, 0.13, 0.5, 0.91, 1.1] {
            let d = b.derivative(s);
            let fp = b.evaluate(s + h);
            let fm = b.evaluate(s - h);
            for j in 0..7 {
                assert!((d[j] - (fp[j] - fm[j]) / (2.0 * h)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_gaussian_grid_matches_calculus() {
        // max |d/ds exp(-s²/(2v))| = exp(-1/2)/sqrt(v), attained at s = ±sqrt(v).
        let v = 0.0081f64;
        let dphi = |s: f64| (s / v * (-s * s / (2.0 * v)).exp()).abs();
        let grid = grid_sup_with_modulus(dphi, -0.7, 0.7, 1e-4);
        let exact = (-0.5f64).exp() / v.sqrt();
        assert!(grid >= exact);
        assert!((grid - exact) / exact < 1e-2);
    }

    #[test]
    fn constant_basis_has_zero_lipschitz() {
        let b = RbfBasis::<f64>::new(vec![0.5], 0.0081, WidthConvention::HalfVariance).unwrap();
        assert_eq!(b.evaluate(0.1), vec![1.0]);
        assert_eq!(b.lipschitz_bound(), 0.0);
    }

    #[test]
    fn lipschitz_stable_under_refinement() {
        let b = RbfBasis::<f64>::experiment_default();
        let coarse = b.lipschitz_bound();
        let fine = grid_sup_with_modulus(|s| crate::linalg::norm2(&b.derivative(s)), -0.2, 1.2, 2.5e-5);
        assert!(coarse.is_finite() && coarse > 0.0);
        assert!((coarse - fine).abs() / fine < 0.01);
        assert!(coarse >= fine);
    }

    #[test]
    fn flux_examples() {
        let b = RbfBasis::<f64>::experiment_default();
        let zero = ParameterVector::zeros(7);
        let ones = ParameterVector::new(vec![2.5; 7]);
        for s in [-0.3, 0.0, 0.42, 1.0, 1.4] {
            assert_eq!(b.flux(&zero, s).unwrap(), 0.0);
            assert_relative_eq!(b.flux(&ones, s).unwrap(), 2.5, max_relative = 1e-14);
        }
        assert!(matches!(b.flux(&ParameterVector::zeros(3), 0.5), Err(BasisError::DimensionMismatch { expected: 7, got: 3 })));
    }

    #[test]
    fn f32_partition_of_unity() {
        let b = RbfBasis::<f32>::experiment_default();
        let sum: f32 = b.evaluate(0.33).iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn partition_of_unity(s in -10.0f64..10.0) {
                let b = RbfBasis::<f64>::experiment_default();
                let psi = b.evaluate(s);
                prop_assert!((psi.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert!(psi.iter().all(|&p| (0.0..=1.0).contains(&p)));
                prop_assert!(crate::linalg::norm2(&psi) <= 1.0 + 1e-15);
            }

            #[test]
            fn lipschitz_pairs(s in -0.5f64..1.5, t in -0.5f64..1.5) {
                let b = RbfBasis::<f64>::experiment_default();
                let gamma = b.lipschitz_bound();
                let d: Vec<f64> = b.evaluate(s).iter().zip(b.evaluate(t)).map(|(a, c)| a - c).collect();
                prop_assert!(crate::linalg::norm2(&d) <= gamma * (s - t).abs() + 1e-15);
            }
        }
    }
}
