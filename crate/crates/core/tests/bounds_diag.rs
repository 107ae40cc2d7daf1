use drfb_core::basis::RbfBasis;
use drfb_core::battery::{assemble_matrices, BatteryParams, LinearCrossover};
use drfb_core::bounds::*;
use drfb_core::synthesis::{experiment_gains, GainSolution, SynthesisConfig};
use proptest::prelude::*;

fn default_assumptions() -> BoundAssumptions<f64> {
    let p = BatteryParams::reference_cell();
    let lc = LinearCrossover::from_l_per_min(5.6142e-8).unwrap();
    BoundAssumptions::from_linear_fit(&RbfBasis::experiment_default(), &p, &lc).unwrap()
}

fn sol() -> GainSolution<f64> {
    experiment_gains().unwrap()
}

#[test]
fn default_report_finite_and_nonnegative() {
    let m = assemble_matrices(&BatteryParams::reference_cell()).unwrap();
    let r = report(&default_assumptions(), &sol(), &m, &RbfBasis::experiment_default(), 1e-4, 0.1).unwrap();
    let v = serde_json::to_value(&r).unwrap();
    for (k, x) in v.as_object().unwrap() {
        if let Some(f) = x.as_f64() {
            assert!(f.is_finite() && f >= 0.0, "{k} = {f}");
        }
    }
    assert!(r.r_x_tilde.is_some() && r.r_theta_tilde.is_some());
}

#[test]
fn coupling_flag_matches_manual_product() {
    let m = assemble_matrices(&BatteryParams::reference_cell()).unwrap();
    let a = default_assumptions();
    let s = sol();
    let basis = RbfBasis::experiment_default();
    let g = coupling_gamma(&a, &m, basis.lipschitz_bound(), s.alpha_bar, SynthesisConfig::experiment().beta);
    let e = (m.e[0].powi(2) + m.e[1].powi(2)).sqrt();
    let manual = a.rho * e * a.gamma_theta * basis.lipschitz_bound() * a.gamma_s_tilde;
    assert!((g.gamma - manual).abs() <= 1e-14 * manual);
    assert_eq!(g.compatible, manual * manual <= 1e-4 / s.alpha_bar);
}

#[test]
fn unit_factors_give_unit_gamma() {
    let mut m = assemble_matrices(&BatteryParams::reference_cell()).unwrap();
    m.e = [1.0, 0.0];
    let a = BoundAssumptions { gamma_theta: 1.0, w_bar: 0.0, eps_bar: 0.0, gamma_s_tilde: 1.0, rho: 1.0, varrho: 0.5 };
    let g = coupling_gamma(&a, &m, 1.0, 1.0, 0.5);
    assert_eq!(g.gamma, 1.0);
    assert!(!g.compatible);
    assert!(coupling_gamma(&a, &m, 1.0, 1.0, 1.0).compatible);
}

#[test]
fn zero_sigma_reports_markers() {
    let m = assemble_matrices(&BatteryParams::reference_cell()).unwrap();
    let r = report(&default_assumptions(), &sol(), &m, &RbfBasis::experiment_default(), 1e-4, 0.0).unwrap();
    assert!(r.gamma1.is_none() && r.gamma2.is_none() && r.r_x_tilde.is_none());
    let v = serde_json::to_value(&r).unwrap();
    assert!(v["gamma1"].is_null());
}

#[test]
fn excitation_gram_is_symmetric_psd() {
    let b = RbfBasis::experiment_default();
    let samples: Vec<(f64, f64)> = (0..500).map(|i| (i as f64, 1.0 - i as f64 / 499.0)).collect();
    let eig = excitation_gram_eigenvalues(&b, &samples).unwrap();
    assert_eq!(eig.len(), 7);
    assert!(eig.iter().all(|&e| e >= -1e-12));
}

proptest! {
    #[test]
    fn radius_affine_in_delta(d in 0.0f64..1.0, sigma in 0.01f64..1.0) {
        let a = default_assumptions();
        let s = sol();
        let r = |db: f64| uub_radii(&a, &s, db, sigma, 1.0, 6.0, 1.0).unwrap().unwrap().r_x_tilde;
        let (r0, r1, r2) = (r(0.0), r(d), r(2.0 * d));
        prop_assert!(((r2 - r1) - (r1 - r0)).abs() <= 1e-9 * r2.abs().max(1.0));
        prop_assert!(r1 >= r0);
    }

    #[test]
    fn radius_monotone(sigma in 0.01f64..1.0, ds in 0.0f64..1.0, w in 1e-6f64..1.0, dw in 0.0f64..1.0) {
        let a = default_assumptions();
        let mut s = sol();
        let r = |s: &GainSolution<f64>, sg: f64| uub_radii(&a, s, 1e-3, sg, 1.0, 6.0, 1.0).unwrap().unwrap().r_x_tilde;
        s.w = [[w, 0.0], [0.0, w]];
        let base = r(&s, sigma);
        prop_assert!(r(&s, sigma + ds) >= base * (1.0 - 1e-12) || a.w_bar > 0.0);
        s.w = [[w + dw, 0.0], [0.0, w + dw]];
        prop_assert!(r(&s, sigma) <= base * (1.0 + 1e-12));
    }
}
