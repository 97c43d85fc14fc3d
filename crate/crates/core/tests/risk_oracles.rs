mod common;

use common::{dominance_case, sufficiency_chain, Family};
use conjunction_mpc::cem::{evaluate_candidate, ControlSequence};
use conjunction_mpc::dynamics::{propagate_satellite, Mat3, SimConfig, Vec3};
use conjunction_mpc::risk::{
    dr_cvar_value, empirical_cvar, empirical_var, step_risk, trajectory_risk, RiskParams, SafeEllipsoid,
};
use conjunction_mpc::scenario::Scenario;
use conjunction_mpc::uncertainty::{GaussianBelief, MomentTrajectory};
use proptest::prelude::*;

#[test]
fn bound_dominates_sampled_cvar_for_every_family() {
    for (i, family) in Family::ALL.iter().enumerate() {
        for (j, eps) in [0.02, 0.2].into_iter().enumerate() {
            let (cvar, bound, se) = dominance_case(*family, eps, 10_000, 900 + 7 * i as u64 + j as u64);
            assert!(cvar <= bound + 3.0 * se, "{family:?} eps {eps}: {cvar} > {bound} + 3·{se}");
        }
    }
}

#[test]
fn sufficiency_chain_has_no_counterexamples() {
    let stats = sufficiency_chain(2_000, 31);
    assert_eq!(stats.counterexamples, 0);
    assert!(stats.cvar_nonpositive > 100 && stats.var_nonpositive > stats.cvar_nonpositive);
}

/// With the debris mean 1.1 km from the planned position and `d_thres = 0.1`,
/// the safe set is the unit ball and the step is feasible iff `3σ² ≤ ε`.
#[test]
fn one_step_feasibility_threshold_is_three_sigma_squared() {
    let sc = Scenario::default();
    let sim = SimConfig::new(0.01, 1.0).unwrap();
    let model = sc.satellite_model();
    let controls = ControlSequence::zeros(1);
    let r1 = propagate_satellite(&model, &sc.satellite_x0, &controls, &sim).unwrap()[1].r;
    let mu = r1 + Vec3::new(0.6, 0.8, 0.66).normalize() * 1.1;
    let risk = RiskParams::new(0.05, 0.1, 1.0).unwrap();
    for (factor, expect) in [(0.98, true), (1.02, false), (0.5, true), (3.0, false)] {
        let sigma2 = factor * risk.epsilon / 3.0;
        let moments = MomentTrajectory {
            steps: vec![GaussianBelief::new(mu, Mat3::identity() * sigma2).unwrap()],
        };
        let eval = evaluate_candidate(&controls, &model, &sc.satellite_x0, &moments, &risk, &Mat3::identity(), &sim).unwrap();
        assert_eq!(eval.feasible, expect, "σ² = {factor}·ε/3");
        let expected_risk = -1.0 + 3.0 * sigma2 / risk.epsilon;
        assert!((eval.step_risks[0] - expected_risk).abs() < 1e-9);
    }
}

fn spd3() -> impl Strategy<Value = Mat3> {
    (prop::array::uniform9(-1.0..1.0f64), 1e-3..1.0f64).prop_map(|(a, d)| {
        let a = Mat3::from_row_slice(&a);
        a * a.transpose() + Mat3::identity() * d
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn chain_holds_on_arbitrary_samples(
        samples in prop::collection::vec(-5.0..2.0f64, 100..400),
        eps in prop::sample::select(vec![0.01, 0.05, 0.1, 0.25]),
    ) {
        let cvar = empirical_cvar(&samples, eps).unwrap();
        let var = empirical_var(&samples, eps).unwrap();
        prop_assert!(cvar >= var);
        if var <= 0.0 {
            let violations = samples.iter().filter(|s| **s > 0.0).count() as f64;
            prop_assert!(violations <= eps * samples.len() as f64 + 1e-9);
        }
    }

    #[test]
    fn bound_is_monotone(sigma in spd3(), shape in spd3(), v in prop::array::uniform3(-1.0..1.0f64),
                         eps in 0.01..0.5f64, c in 1.0..4.0f64) {
        let ell = SafeEllipsoid::new(shape, Vec3::zeros()).unwrap();
        let base = dr_cvar_value(&sigma, &ell, eps);
        let v = Vec3::from(v);
        let grown = sigma + v * v.transpose();
        prop_assert!(dr_cvar_value(&grown, &ell, eps) >= base - 1e-12);
        prop_assert!(dr_cvar_value(&sigma, &ell, (eps * 1.5).min(0.99)) <= base + 1e-12);
        let scaled = SafeEllipsoid::new(shape * c, Vec3::zeros()).unwrap();
        prop_assert!(dr_cvar_value(&sigma, &scaled, eps) >= base - 1e-12);
    }

    #[test]
    fn undiscounted_single_step_trajectory_risk_is_the_step_risk(
        sigma in spd3(), offset in prop::array::uniform3(-3.0..3.0f64), eps in 0.01..0.5f64,
    ) {
        let risk = RiskParams::new(eps, 0.1, 1.0).unwrap();
        let r = step_risk(&Vec3::from(offset), &Vec3::zeros(), &(sigma * 1e-3), &risk);
        prop_assert_eq!(trajectory_risk(&[r], 1.0), r);
    }
}
