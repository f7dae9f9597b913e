use std::sync::OnceLock;

use hjbopt::analysis::{check_dpp, check_variational_bound, verify_assumption_c, BoundTolerance, RateVariant};
use hjbopt::grid::{RectGrid, ValueField};
use hjbopt::objectives::{builtin_objective, ObjectiveParams, ObjectiveSpec, SetParams};
use hjbopt::solver::{riccati_constant, solve, SolverOptions};
use hjbopt::trajectory::*;
use proptest::prelude::*;

const RHO: f64 = 0.9512492197250393;
const K_EXACT: f64 = 1.0512492197250393;

fn riccati() -> ObjectiveSpec {
    let params = ObjectiveParams { c: Some(1.0), set: Some(SetParams::Points { points: vec![vec![0.0]] }), ..Default::default() };
    builtin_objective("riccati_dist", &params).unwrap()
}

fn double_well() -> ObjectiveSpec {
    builtin_objective("double_well", &ObjectiveParams::default()).unwrap()
}

fn solved(obj: &ObjectiveSpec) -> ValueField {
    let grid = RectGrid::uniform(&obj.domain, 401).unwrap();
    solve(obj, &grid, 0.1, &SolverOptions::for_problem(obj, &grid)).unwrap()
}

fn riccati_field() -> &'static ValueField {
    static FIELD: OnceLock<ValueField> = OnceLock::new();
    FIELD.get_or_init(|| solved(&riccati()))
}

fn double_well_field() -> &'static ValueField {
    static FIELD: OnceLock<ValueField> = OnceLock::new();
    FIELD.get_or_init(|| solved(&double_well()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn h_never_drops_under_constant_controls(a in -3.0..3.0f64, x0 in -1.5..1.5f64) {
        let obj = double_well();
        let vf = double_well_field();
        // keep the path inside the box
        let horizon = ((1.9 - x0 * a.signum()) / a.abs().max(1e-3)).min(2.0);
        let horizon = (horizon / 0.01).floor().max(1.0) * 0.01;
        let traj = integrate_feedback(vf, &obj, &[x0], horizon, 5e-3, |_, _| Ok(vec![a])).unwrap();
        let dpp = check_dpp(&traj, &obj, vf);
        prop_assert!(dpp.monotone, "{dpp:?}");
    }

    #[test]
    fn zero_control_cost_is_a_geometric_sum(x in -1.9..1.9f64, horizon in 1usize..40) {
        let obj = double_well();
        let vf = double_well_field();
        let horizon = horizon as f64 * 0.25;
        let traj = integrate_feedback(vf, &obj, &[x], horizon, 5e-3, |_, _| Ok(vec![0.0])).unwrap();
        let cost = cost_functional(&traj, &obj, 0.1, vf, 0.0).unwrap();
        let decay = (-0.1 * horizon).exp();
        let expected = obj.eval(&[x]) * (1.0 - decay) / 0.1 + decay * vf.interpolate(&[x]).unwrap();
        prop_assert!((cost - expected).abs() <= 1e-10 * expected.max(1.0), "{cost} vs {expected}");
    }

    #[test]
    fn value_decreases_along_the_gradient_flow(x0 in -1.9..1.9f64) {
        let obj = double_well();
        let vf = double_well_field();
        let traj = integrate_gradient_flow(vf, &obj, &[x0], 5.0, 5e-3).unwrap();
        for j in 0..traj.len() - 1 {
            let tol = 1e-9 + 2.0 * vf.interpolation_error_bound(&traj.states[j]);
            prop_assert!(traj.u_vals[j + 1] <= traj.u_vals[j] + tol, "step {j}");
        }
    }
}

#[test]
fn riccati_flow_matches_the_closed_form() {
    let obj = riccati();
    let traj = integrate_gradient_flow(riccati_field(), &obj, &[1.0], 3.0, 1e-3).unwrap();
    let err = traj.times.iter().zip(&traj.states).map(|(t, y)| (y[0] - (-RHO * t).exp()).abs()).fold(0.0, f64::max);
    assert!(err <= 5e-3, "{err}");
    assert!((traj.states.last().unwrap()[0] - 0.0576).abs() <= 5e-3);
    assert_eq!(traj.meta.policy, "optimal");
}

#[test]
fn starting_on_the_minimizer_set_stays_there() {
    let obj = double_well();
    let vf = double_well_field();
    let h = vf.grid.max_spacing();
    let traj = integrate_gradient_flow(vf, &obj, &[1.0], 10.0, 5e-3).unwrap();
    assert!(traj.dists.iter().all(|&d| d <= h));
    let sp = SampledPolicy { delta_min: 0.5, delta_max: 0.5, sigma: 0.1, k_const: 1.08, seed: 1 };
    let held = integrate_receding_horizon(vf, &obj, &[-1.0], 10.0, 5e-3, &sp).unwrap();
    assert!(held.dists.iter().all(|&d| d <= h));
    // α ≡ 0 from 𝔐: h ≡ f_min/λ and the shifted cost vanishes
    let rest = integrate_feedback(vf, &obj, &[1.0], 5.0, 5e-3, |_, _| Ok(vec![0.0])).unwrap();
    assert!(rest.h_vals.iter().all(|&v| v.abs() <= 1e-9));
    assert!(shifted_cost_functional(&rest, &obj, 0.1, vf, 0.0).unwrap().abs() <= 1e-9);
    let pushed = integrate_feedback(vf, &obj, &[1.0], 0.1, 5e-3, |_, _| Ok(vec![2.0])).unwrap();
    assert!(shifted_cost_functional(&pushed, &obj, 0.1, vf, 0.0).unwrap() > 0.0);
}

#[test]
fn double_well_flow_reaches_the_right_well() {
    let obj = double_well();
    let traj = integrate_gradient_flow(double_well_field(), &obj, &[0.5], 40.0, 1e-3).unwrap();
    let end = traj.states.last().unwrap()[0];
    assert!(traj.dists.last().unwrap() <= &1e-2 && (end - 1.0).abs() <= 1e-2, "{end}");
}

#[test]
fn optimal_riccati_cost_matches_the_value() {
    let obj = riccati();
    let vf = riccati_field();
    let traj = integrate_gradient_flow(vf, &obj, &[1.0], 10.0, 1e-3).unwrap();
    let cost = shifted_cost_functional(&traj, &obj, 0.1, vf, 0.0).unwrap();
    let exact = riccati_constant(0.1, 1.0).unwrap();
    assert!((cost / exact - 1.0).abs() <= 0.02, "{cost}");
    assert!(check_dpp(&traj, &obj, vf).max_relative_deviation <= 0.02 + 5.0 * vf.grid.max_spacing());
    assert!(matches!(cost_functional(&traj, &obj, 0.1, vf, 0.0005), Err(hjbopt::Error::NotASampleTime(_))));
}

#[test]
fn suboptimal_double_well_run_keeps_h_monotone() {
    let obj = double_well();
    let vf = double_well_field();
    let traj = integrate_feedback(vf, &obj, &[0.5], 5.0, 1e-3, |_, _| Ok(vec![0.1])).unwrap();
    let dpp = check_dpp(&traj, &obj, vf);
    assert!(dpp.monotone, "{dpp:?}");
    let qc = verify_assumption_c(&traj, &obj, 0.1, vf).unwrap();
    assert!(qc.residuals[0] > 0.1, "{}", qc.residuals[0]);
}

#[test]
fn quasi_policy_declarations() {
    assert!(QuasiOptimalPolicy::constant(0.2, 1e-3, K_EXACT, 0).validate(0.1).is_ok());
    assert!(QuasiOptimalPolicy::constant(0.95, 1e-3, K_EXACT, 0).validate(0.1).is_err());
    let p = QuasiOptimalPolicy::constant(0.2, 1e-3, K_EXACT, 0);
    assert!((p.delta(0.1) - (0.8 * K_EXACT - 0.1)).abs() < 1e-15);
}

#[test]
fn unbiased_perturbation_is_the_gradient_flow() {
    let obj = riccati();
    let vf = riccati_field();
    let policy = QuasiOptimalPolicy { gain: Some(0.0), drift: Some(0.0), ..QuasiOptimalPolicy::constant(0.0, 0.0, K_EXACT, 5) };
    let a = integrate_perturbed(vf, &obj, &[1.0], 3.0, 1e-3, &policy).unwrap();
    let b = integrate_gradient_flow(vf, &obj, &[1.0], 3.0, 1e-3).unwrap();
    assert_eq!(a.states, b.states);
}

#[test]
fn small_bias_gives_small_eps0() {
    let obj = riccati();
    let vf = riccati_field();
    let policy = QuasiOptimalPolicy { gain: Some(0.0), drift: Some(0.02), ..QuasiOptimalPolicy::constant(0.2, 5e-3, K_EXACT, 9) };
    let traj = integrate_perturbed(vf, &obj, &[1.0], 10.0, 1e-3, &policy).unwrap();
    assert!(traj.controls.iter().zip(&traj.states).all(|(a, y)| (a[0] + vf.gradient(y).unwrap()[0]).abs() <= 0.02 + 1e-12));
    assert!(traj.meta.eps0_hat.unwrap() <= 5e-3);
    assert_eq!(traj.meta.amplitudes, Some((0.0, 0.02)));
}

#[test]
fn perturbed_runs_are_reproducible() {
    let obj = riccati();
    let vf = riccati_field();
    let policy = QuasiOptimalPolicy::constant(0.2, 1e-3, K_EXACT, 42);
    let a = integrate_perturbed(vf, &obj, &[1.0], 5.0, 1e-3, &policy).unwrap();
    let b = integrate_perturbed(vf, &obj, &[1.0], 5.0, 1e-3, &policy).unwrap();
    assert_eq!(a, b);
    let other = integrate_perturbed(vf, &obj, &[1.0], 5.0, 1e-3, &QuasiOptimalPolicy { seed: 43, ..policy }).unwrap();
    assert_ne!(a.states, other.states);
}

#[test]
fn sampled_riccati_run_obeys_its_bound() {
    let obj = riccati();
    let vf = riccati_field();
    let sp = SampledPolicy { delta_min: 0.5, delta_max: 0.5, sigma: 0.1, k_const: K_EXACT, seed: 3 };
    let traj = integrate_receding_horizon(vf, &obj, &[1.0], 10.0, 1e-3, &sp).unwrap();
    assert_eq!(traj.meta.update_times.len(), 20);
    let variant = RateVariant::Sampled { sigma: 0.1, delta_min: 0.5, delta_max: 0.5 };
    let rep = check_variational_bound(&traj, &obj, K_EXACT, 0.1, &variant, BoundTolerance::for_field(vf)).unwrap();
    assert!(rep.pass, "{rep:?}");
    assert!(check_dpp(&traj, &obj, vf).monotone);
}

#[test]
fn shrinking_holds_converge_to_the_flow() {
    let obj = double_well();
    let vf = double_well_field();
    let dt = 1e-3;
    let flow = integrate_gradient_flow(vf, &obj, &[0.5], 5.0, dt).unwrap();
    let mut gaps = Vec::new();
    for delta in [0.512, 0.256, 0.128, 0.064, 0.032, 0.016, 0.008, 0.004, 0.002, 0.001] {
        let sp = SampledPolicy { delta_min: delta, delta_max: delta, sigma: 1e-3, k_const: 1.08, seed: 0 };
        let held = integrate_receding_horizon(vf, &obj, &[0.5], 5.0, dt, &sp).unwrap();
        let gap = held.states.iter().zip(&flow.states).map(|(a, b)| (a[0] - b[0]).abs()).fold(0.0, f64::max);
        gaps.push(gap);
    }
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
}

#[test]
fn bad_sampled_policies_are_rejected() {
    let sp = SampledPolicy { delta_min: 0.6, delta_max: 0.5, sigma: 0.1, k_const: K_EXACT, seed: 0 };
    assert!(sp.validate(0.1).is_err());
    let vacuous = SampledPolicy { delta_min: 0.01, delta_max: 5.0, sigma: 10.0, k_const: 0.2, seed: 0 };
    assert!(vacuous.validate(0.1).is_err());
}

#[test]
fn csv_round_trip_preserves_every_column() {
    let obj = riccati();
    let traj = integrate_gradient_flow(riccati_field(), &obj, &[1.0], 1.0, 5e-3).unwrap();
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("t,y1,a1,u,dist,speed2,h\n"));
    let back = Trajectory::read_csv(buf.as_slice()).unwrap();
    assert_eq!((back.times, back.states, back.h_vals), (traj.times, traj.states, traj.h_vals));
}
