use hjbopt::analysis::*;
use hjbopt::grid::{RectGrid, ValueField};
use hjbopt::objectives::{builtin_objective, estimate_quadratic_growth, ObjectiveParams, ObjectiveSpec, SetParams};
use hjbopt::solver::{riccati_constant, solve, SolverOptions};
use hjbopt::trajectory::integrate_gradient_flow;
use hjbopt::Error;
use proptest::prelude::*;
use std::f64::consts::PI;

fn riccati(c: f64) -> ObjectiveSpec {
    let params = ObjectiveParams { c: Some(c), set: Some(SetParams::Points { points: vec![vec![0.0]] }), ..Default::default() };
    builtin_objective("riccati_dist", &params).unwrap()
}

fn exact_riccati_field(c: f64, lambda: f64) -> ValueField {
    let obj = riccati(c);
    let big_c = riccati_constant(lambda, c).unwrap();
    ValueField::from_fn(RectGrid::uniform(&obj.domain, 401).unwrap(), lambda, |x| big_c * x[0] * x[0]).unwrap()
}

fn double_well() -> ObjectiveSpec {
    builtin_objective("double_well", &ObjectiveParams::default()).unwrap()
}

fn solved(obj: &ObjectiveSpec, lambda: f64) -> ValueField {
    let grid = RectGrid::uniform(&obj.domain, 401).unwrap();
    solve(obj, &grid, lambda, &SolverOptions::for_problem(obj, &grid)).unwrap()
}

#[test]
fn exact_exponential_is_fitted_exactly() {
    let t: Vec<f64> = (0..50).map(|j| 0.1 * j as f64).collect();
    let v: Vec<f64> = t.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
    let fit = fit_exponential_rate(&t, &v, 0.0).unwrap();
    assert!((fit.rate - 0.7).abs() < 1e-9 && (fit.amplitude - 3.0).abs() < 1e-9);
    assert!((fit.r_squared - 1.0).abs() < 1e-9);
    let flat = fit_exponential_rate(&t, &vec![2.0; t.len()], 0.0).unwrap();
    assert!(flat.rate.abs() < 1e-15);
}

#[test]
fn short_windows_are_named_errors() {
    let t: Vec<f64> = (0..50).map(|j| j as f64).collect();
    let v: Vec<f64> = t.iter().map(|t| (-t).exp()).collect();
    assert_eq!(fit_exponential_rate(&t, &v, 1e-4).unwrap().samples, 10);
    let err = fit_exponential_rate(&t, &v, 1e-3).unwrap_err();
    assert!(matches!(err, Error::InsufficientDecayWindow { usable: 7 }));
    assert!(err.to_string().starts_with("insufficient-decay-window"));
}

proptest! {
    #[test]
    fn fit_recovers_rate_and_amplitude(rate in -1.0..3.0f64, amp in 0.01..100.0f64, dt in 0.01..0.2f64) {
        let t: Vec<f64> = (0..40).map(|j| dt * j as f64).collect();
        let v: Vec<f64> = t.iter().map(|t| amp * (-rate * t).exp()).collect();
        let fit = fit_exponential_rate(&t, &v, 0.0).unwrap();
        prop_assert!((fit.rate - rate).abs() <= 1e-8 * rate.abs().max(1.0));
        prop_assert!((fit.amplitude / amp - 1.0).abs() <= 1e-8);
    }

    #[test]
    fn riccati_constant_gives_consistent_k(lambda in 0.01..1.0f64, c in 0.1..5.0f64) {
        let big_c = riccati_constant(lambda, c).unwrap();
        // K = c/(2C) exceeds λ, so the optimal decay rate K - λ = 2C is positive
        let k = c / (2.0 * big_c);
        prop_assert!((k - lambda - 2.0 * big_c).abs() <= 1e-12 * k);
    }
}

#[test]
fn boundary_series_has_no_violations() {
    let field = exact_riccati_field(1.0, 0.1);
    let obj = riccati(1.0);
    let k = 1.0 / (2.0 * riccati_constant(0.1, 1.0).unwrap());
    let mut traj = integrate_gradient_flow(&field, &obj, &[1.0], 3.0, 1e-2).unwrap();
    // overwrite ũ with the bound itself: the boundary case of the inequality
    let u0 = traj.u_vals[0];
    for (u, t) in traj.u_vals.iter_mut().zip(&traj.times) {
        *u = u0 * (-(k - 0.1) * t).exp();
    }
    let tol = BoundTolerance { multiplicative: 0.0, additive: 1e-12, noise_floor: 0.0 };
    let rep = check_variational_bound(&traj, &obj, k, 0.1, &RateVariant::Optimal, tol).unwrap();
    assert_eq!(rep.bound_violations, 0);
    assert!(rep.pass);
    assert!((rep.fitted_rate - (k - 0.1)).abs() < 1e-9);
}

#[test]
fn k_and_pl_on_the_exact_riccati_field() {
    let field = exact_riccati_field(1.0, 0.1);
    let obj = riccati(1.0);
    let k = estimate_k(&field, &obj, 1e-3).unwrap();
    assert!((k - 1.0512492197250393).abs() < 1e-9, "{k}");
    assert_eq!(check_pl(&field, &obj, k, None), 0.0);
    assert_eq!(check_pl(&field, &obj, k, Some(1e-9)), 0.0);
}

#[test]
fn k_estimate_on_solved_riccati_fields() {
    for c in [0.5, 1.0, 2.0] {
        let obj = riccati(c);
        let vf = solved(&obj, 0.1);
        let k = estimate_k(&vf, &obj, default_floor(&vf)).unwrap();
        let exact = c / (2.0 * riccati_constant(0.1, c).unwrap());
        assert!((k / exact - 1.0).abs() <= 0.03, "c={c}: {k} vs {exact}");
    }
}

#[test]
fn flat_objective_is_reported() {
    let obj = builtin_objective("constant", &ObjectiveParams { value: Some(0.5), ..Default::default() }).unwrap();
    let vf = ValueField::from_fn(RectGrid::uniform(&obj.domain, 101).unwrap(), 0.1, |_| 5.0).unwrap();
    assert!(matches!(estimate_k(&vf, &obj, 1e-3), Err(Error::FlatField { .. })));
    assert_eq!(check_pl(&vf, &obj, 1.0, None), 0.0);
    let gaps = check_gap_a3(&obj, &[0.5, 1.0], 401).unwrap();
    assert!(gaps.iter().all(|g| g.1 <= 0.0));
}

#[test]
fn double_well_field_constants() {
    let obj = double_well();
    let vf = solved(&obj, 0.1);
    let k = estimate_k(&vf, &obj, default_floor(&vf)).unwrap();
    assert!(k > 0.1, "{k}");
    assert!(check_pl(&vf, &obj, k, None) <= 0.01);
}

#[test]
fn gap_tables() {
    let gaps = check_gap_a3(&double_well(), &[0.5], 4001).unwrap();
    assert!((gaps[0].1 - 0.5625).abs() < 1e-2, "{gaps:?}");
    let cosine = builtin_objective("cosine", &ObjectiveParams::default()).unwrap();
    let gaps = check_gap_a3(&cosine, &[PI / 2.0], 14001).unwrap();
    assert!((gaps[0].1 - 1.0).abs() < 2e-3, "{gaps:?}");
    let cone = builtin_objective("cone_dist", &ObjectiveParams::default()).unwrap();
    let gaps = check_gap_a3(&cone, &[0.25, 0.5, 1.0, 1.5], 4001).unwrap();
    assert!(gaps.windows(2).all(|w| w[1].1 >= w[0].1));
    assert!(check_gap_a3(&cone, &[5.0], 101).is_err());
}

#[test]
fn linear_growth_constants() {
    let cone = builtin_objective("cone_dist", &ObjectiveParams::default()).unwrap();
    let lg = check_linear_growth_f_and_e(&cone, 1.0, 3.0, 4001).unwrap();
    assert!((lg.c_f - 1.0).abs() < 1e-12);
    let truncated = builtin_objective("cone_dist", &ObjectiveParams { f_max: Some(1.0), ..Default::default() }).unwrap();
    let lg = check_linear_growth_f_and_e(&truncated, 1.0, 3.0, 4001).unwrap();
    assert!((lg.k_tilde - 3.0 / 5.5).abs() < 1e-9, "{lg:?}");
    assert!((lg.beta - 1.0 / 3.0).abs() < 1e-12);
    let err = check_linear_growth_f_and_e(&double_well(), 0.4, 3.0, 40001).unwrap_err();
    assert!(matches!(err, Error::UnboundedRatio { .. }), "{err}");
}

#[test]
fn metric_regularity_examples() {
    let quad = builtin_objective("quadratic", &ObjectiveParams { q: Some(vec![vec![2.0]]), ..Default::default() }).unwrap();
    let samples = tube_samples(&quad, 1.0, 200, 1).unwrap();
    let mr = check_metric_regularity(&quad, &samples, 2.0).unwrap();
    assert!((mr.max_ratio - 0.5).abs() < 1e-6 && mr.pass, "{mr:?}");

    let dw = double_well();
    let samples = tube_samples(&dw, 0.4, 400, 2).unwrap();
    let mr = check_metric_regularity(&dw, &samples, 5.12).unwrap();
    assert!(mr.pass && mr.max_ratio > 0.25 * 0.9, "{mr:?}");

    let cosine = builtin_objective("cosine", &ObjectiveParams::default()).unwrap();
    let growth = estimate_quadratic_growth(&cosine, 0.4, 1e-3).unwrap();
    let samples = tube_samples(&cosine, 0.4, 400, 3).unwrap();
    let mr = check_metric_regularity(&cosine, &samples, growth.c1).unwrap();
    assert!(mr.pass && mr.max_ratio >= 1.0 && mr.max_ratio < 1.03, "{mr:?}");
}

#[test]
fn growth_audit_of_the_double_well() {
    let audit = audit_stated_growth(&double_well(), 1e-3).unwrap().unwrap();
    assert!(!audit.consistent);
    assert!((audit.worst_ratio - 5.76).abs() < 1e-2, "{audit:?}");
    assert!((audit.worst_point[0].abs() - 1.4).abs() < 2e-3);
    assert!((audit.measured.c1 / 5.12 - 1.0).abs() < 0.01 && (audit.measured.c2 / 11.52 - 1.0).abs() < 0.01);
    let cosine = builtin_objective("cosine", &ObjectiveParams::default()).unwrap();
    assert!(audit_stated_growth(&cosine, 1e-3).unwrap().is_none());
}

#[test]
fn entry_times() {
    let obj = riccati(1.0);
    let field = exact_riccati_field(1.0, 0.1);
    let inside = integrate_gradient_flow(&field, &obj, &[0.3], 2.0, 1e-2).unwrap();
    assert_eq!(entry_time(&inside, &obj.minimizers, 0.4).unwrap(), 0.0);
    let traj = integrate_gradient_flow(&field, &obj, &[1.0], 3.0, 1e-2).unwrap();
    let tau = entry_time(&traj, &obj.minimizers, 0.4).unwrap();
    let j = traj.sample_index(tau).unwrap();
    assert!(traj.dists[j] <= 0.4 && traj.dists[j - 1] > 0.4);
    assert!(matches!(entry_time(&traj, &obj.minimizers, 1e-3), Err(Error::EntryNotReached { .. })));
}

#[test]
fn riccati_path_rates() {
    let pc = PathConstants { c1: 1.0, c2: 1.0, lambda: 0.1, eta: 0.0, eps0: 0.0 };
    let r = pc.rates().unwrap();
    assert!((r.a - 1.0).abs() < 1e-15);
    assert!((r.delta - 0.9512492197250393).abs() < 1e-12);
    let dw = PathConstants { c1: 5.12, c2: 11.52, lambda: 0.1, eta: 0.0, eps0: 0.0 }.rates().unwrap();
    assert!((dw.big_c1 - 1.10665).abs() < 1e-4 && (dw.big_c2 - 1.67224).abs() < 1e-4);
    assert!((dw.delta - 1.43088).abs() < 1e-4 && (dw.a_turnpike - 18.9188).abs() < 1e-3);
}

#[test]
fn riccati_run_rates_are_conservative() {
    let obj = riccati(1.0);
    let vf = solved(&obj, 0.1);
    let k = estimate_k(&vf, &obj, default_floor(&vf)).unwrap();
    let traj = integrate_gradient_flow(&vf, &obj, &[1.0], 3.0, 1e-3).unwrap();
    let rep = check_variational_bound(&traj, &obj, k, 0.1, &RateVariant::Optimal, BoundTolerance::for_field(&vf)).unwrap();
    assert!(rep.pass);
    assert!((rep.fitted_rate / 1.9025 - 1.0).abs() <= 0.03, "{}", rep.fitted_rate);
    assert!(rep.fitted_rate >= rep.predicted_rate);
    let pc = PathConstants::optimal(obj.known_growth.unwrap(), 0.1);
    let tau = entry_time(&traj, &obj.minimizers, 0.4).unwrap();
    let pw = check_pathwise_bound(&traj, &pc, tau, BoundTolerance::pathwise(&vf)).unwrap();
    assert!(pw.pass && pw.fitted_rate >= pw.predicted_rate, "{pw:?}");
    let sw = check_sandwich(&traj, &obj, &pc, tau, &|_| 0.0, BoundTolerance::scheme(&vf)).unwrap();
    assert!(sw.pass, "{sw:?}");
}

#[test]
fn assumption_report_of_the_double_well() {
    let obj = double_well();
    let vf = solved(&obj, 0.1);
    let settings = AssumptionSettings { r: 0.4, floor: default_floor(&vf), deltas: vec![0.25, 0.5], scan_per_axis: 4001, growth_step: 1e-3 };
    let rep = assumption_report(&vf, &obj, &settings, 8.0).unwrap();
    assert!(rep.k_est > 0.1 && rep.a3_holds && rep.growth.c1 <= rep.growth.c2);
    assert!(rep.linear_growth_c.is_none());
    assert!(rep.pl_violation_fraction <= 0.01);
}
