//! The subcommands. Each validates its inputs, computes, and only then writes its files.

use std::fs;
use std::io::BufReader;
use std::path::Path;
use std::time::Instant;

use hjbopt::analysis::*;
use hjbopt::grid::ValueField;
use hjbopt::solver::{riccati_constant, solve_with_log};
use hjbopt::suite::{riccati_relative_error, Suite, SuiteOptions};
use hjbopt::trajectory::*;
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, PolicyConfig};
use crate::error::{CliError, ErrorKind};
use crate::manifest::{ensure_dir, sha256_hex, Outputs};

pub const VALUE_FILE: &str = "value.hjbv";
pub const SOLVE_LOG_FILE: &str = "solve_log.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const TRAJECTORY_META_FILE: &str = "trajectory_meta.json";
pub const RATES_FILE: &str = "rates.json";
pub const ASSUMPTIONS_FILE: &str = "assumptions.json";
pub const PLOT_DATA_FILE: &str = "rates.dat";
pub const PLOT_SCRIPT_FILE: &str = "rates.gp";
pub const SUITE_FILE: &str = "suite.csv";
pub const RICCATI_FILE: &str = "riccati_check.json";

/// Radius of the region `dist ≤ radius` on which `riccati-check` compares.
pub const RICCATI_RADIUS: f64 = 1.4;
/// Relative error accepted by `riccati-check`.
pub const RICCATI_TOLERANCE: f64 = 0.02;

/// Solves the HJB equation and writes the value file and the sweep log.
pub fn solve(exp: &Experiment, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let start = Instant::now();
    let (vf, log) = solve_with_log(&exp.objective, &exp.grid, exp.lambda(), &exp.solver)?;
    let mut log_csv = Vec::new();
    log.write_csv(&mut log_csv).map_err(CliError::output)?;
    let mut outputs = Outputs::new();
    outputs.add(VALUE_FILE, vf.to_bytes());
    outputs.add(SOLVE_LOG_FILE, log_csv);
    let seconds = start.elapsed().as_secs_f64();
    outputs.commit(out, &exp.hash, "solve", seconds)?;
    println!(
        "solved {} on {:?} nodes: {} sweeps, last change {:e}, {seconds:.2} s",
        exp.objective.name,
        exp.grid.nodes(),
        vf.meta.iterations,
        vf.meta.achieved_change
    );
    Ok(())
}

/// Metadata written next to a trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryInfo {
    pub policy: PolicyConfig,
    /// `K` used by a quasi or sampled policy.
    pub k: Option<f64>,
    pub value_sha256: String,
    pub meta: TrajectoryMeta,
}

/// Integrates the configured policy on a solved field.
pub fn trajectory(exp: &Experiment, out: &Path, value: Option<&Path>, seed: Option<u64>) -> Result<(), CliError> {
    let t = exp.trajectory()?;
    let value_path = value.map_or_else(|| out.join(VALUE_FILE), Path::to_path_buf);
    let (vf, value_bytes) = load_value(&value_path, exp)?;
    if !exp.grid.contains(&t.x0) {
        return Err(CliError::new(ErrorKind::Input, "outside-box", format!("x0 = {:?} lies outside the grid box", t.x0)));
    }
    ensure_dir(out)?;
    let start = Instant::now();
    let policy = t.policy.clone().with_seed(seed);
    let (obj, lambda) = (&exp.objective, exp.lambda());
    let k = match &policy {
        PolicyConfig::Optimal => None,
        p => Some(match p.k() {
            Some(k) => k,
            None => estimate_k(&vf, obj, exp.config.analysis.floor.unwrap_or_else(|| default_floor(&vf)))?,
        }),
    };
    let traj = match &policy {
        PolicyConfig::Optimal => integrate_gradient_flow(&vf, obj, &t.x0, t.horizon, t.dt)?,
        PolicyConfig::Quasi { eta, eps0, seed, .. } => {
            let p = QuasiOptimalPolicy::constant(*eta, *eps0, k.expect("set above"), *seed);
            p.validate(lambda).map_err(CliError::config)?;
            integrate_perturbed(&vf, obj, &t.x0, t.horizon, t.dt, &p)?
        }
        PolicyConfig::Sampled { delta_min, delta_max, sigma, seed, .. } => {
            let p = SampledPolicy {
                delta_min: *delta_min,
                delta_max: *delta_max,
                sigma: *sigma,
                k_const: k.expect("set above"),
                seed: *seed,
            };
            p.validate(lambda).map_err(CliError::config)?;
            integrate_receding_horizon(&vf, obj, &t.x0, t.horizon, t.dt, &p)?
        }
    };
    let mut csv = Vec::new();
    traj.write_csv(&mut csv).map_err(CliError::output)?;
    let info = TrajectoryInfo { policy, k, value_sha256: sha256_hex(&value_bytes), meta: traj.meta.clone() };
    let mut outputs = Outputs::new();
    outputs.add(TRAJECTORY_FILE, csv);
    outputs.add(TRAJECTORY_META_FILE, to_json(&info));
    let seconds = start.elapsed().as_secs_f64();
    outputs.commit(out, &exp.hash, "trajectory", seconds)?;
    let last = traj.len() - 1;
    println!(
        "{} trajectory: {} samples, y(T) = {:?}, dist(y(T)) = {:e}, {seconds:.2} s",
        info.policy.name(),
        traj.len(),
        traj.states[last],
        traj.dists[last]
    );
    Ok(())
}

/// A check that ran, or the named precondition that kept it from running.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Section<T> {
    Checked { report: T },
    Skipped { cause: String, message: String },
}

impl<T> Section<T> {
    fn skipped(cause: &str, message: impl ToString) -> Self {
        Section::Skipped { cause: cause.into(), message: message.to_string() }
    }

    fn from_error(e: hjbopt::Error) -> Self {
        let e = CliError::from(e);
        Section::Skipped { cause: e.name, message: e.message }
    }

    fn report(&self) -> Option<&T> {
        match self {
            Section::Checked { report } => Some(report),
            Section::Skipped { .. } => None,
        }
    }
}

/// Realized quasi-optimality along the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realized {
    pub eta_hat_max: f64,
    pub eps0_hat: f64,
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatesReport {
    pub policy: PolicyConfig,
    pub k: f64,
    pub lambda: f64,
    pub variational: Section<RateReport>,
    pub pathwise: Section<RateReport>,
    pub sandwich: Section<RateReport>,
    pub dpp: DppReport,
    pub realized: Realized,
    /// `PASSED` or `FAILED`: positivity of the gap table.
    pub a3: String,
    pub pass: bool,
}

/// Checks the decay theorems along a stored trajectory and reports the assumption constants.
pub fn rates(exp: &Experiment, out: &Path, value: Option<&Path>, trajectory: Option<&Path>) -> Result<(), CliError> {
    let t = exp.trajectory()?;
    let value_path = value.map_or_else(|| out.join(VALUE_FILE), Path::to_path_buf);
    let traj_path = trajectory.map_or_else(|| out.join(TRAJECTORY_FILE), Path::to_path_buf);
    let (vf, _) = load_value(&value_path, exp)?;
    let file = fs::File::open(&traj_path)
        .map_err(|e| CliError::new(ErrorKind::Input, "missing-input", format!("cannot read {}: {e}", traj_path.display())))?;
    let traj = Trajectory::read_csv(BufReader::new(file))?;
    if traj.dim() != exp.grid.dim() || traj.states.iter().any(|y| !exp.grid.contains(y)) {
        return Err(CliError::new(ErrorKind::Input, "trajectory-mismatch", "trajectory states do not lie in the config box"));
    }
    ensure_dir(out)?;
    let start = Instant::now();
    let (obj, lambda, analysis) = (&exp.objective, exp.lambda(), &exp.config.analysis);
    let settings = analysis.settings(obj, default_floor(&vf));
    let assumptions = assumption_report(&vf, obj, &settings, exp.solver.m_bound)?;
    let k = t.policy.k().unwrap_or(assumptions.k_est);
    let (eta, eps0) = match t.policy {
        PolicyConfig::Quasi { eta, eps0, .. } => (eta, eps0),
        _ => (0.0, 0.0),
    };
    let variant = match t.policy {
        PolicyConfig::Optimal => RateVariant::Optimal,
        PolicyConfig::Quasi { eta, eps0, .. } => RateVariant::Quasi { eta_sup: eta, eta0: eta, eps0 },
        PolicyConfig::Sampled { delta_min, delta_max, sigma, .. } => RateVariant::Sampled { sigma, delta_min, delta_max },
    };

    let variational = if assumptions.k_est == 0.0 && t.policy.k().is_none() {
        Section::skipped("flat-field", "no node passes the value floor, so K cannot be estimated")
    } else if k <= lambda {
        Section::skipped("k-not-above-lambda", format!("K = {k} does not exceed lambda = {lambda}"))
    } else {
        let tol = analysis.apply(BoundTolerance::for_trajectory(&vf, &traj), true);
        match check_variational_bound(&traj, obj, k, lambda, &variant, tol) {
            Ok(report) => Section::Checked { report },
            Err(e @ hjbopt::Error::InvalidParameter(_)) => Section::from_error(e),
            Err(e) => return Err(e.into()),
        }
    };

    let constants = PathConstants { c1: assumptions.growth.c1, c2: assumptions.growth.c2, lambda, eta, eps0 };
    let entry = entry_time(&traj, &obj.minimizers, settings.r);
    let pathwise = match (&t.policy, &entry) {
        (PolicyConfig::Sampled { .. }, _) => Section::skipped("not-stated", "pathwise bounds are stated for optimal and quasi-optimal runs"),
        (_, Err(e)) => Section::skipped("entry-not-reached", e),
        (_, Ok(tau)) => check_pathwise_bound(&traj, &constants, *tau, analysis.apply(BoundTolerance::pathwise(&vf), false))
            .map_or_else(Section::from_error, |report| Section::Checked { report }),
    };
    let sandwich = match &entry {
        Err(e) => Section::skipped("entry-not-reached", e),
        Ok(tau) => check_sandwich(&traj, obj, &constants, *tau, &|_| eta, analysis.apply(BoundTolerance::scheme(&vf), false))
            .map_or_else(Section::from_error, |report| Section::Checked { report }),
    };
    let dpp = check_dpp(&traj, obj, &vf);
    let quasi = verify_assumption_c_with_floor(&traj, obj, lambda, &vf, settings.floor)?;
    let realized = Realized {
        eta_hat_max: quasi.eta_hat.iter().cloned().fold(0.0, f64::max),
        eps0_hat: quasi.eps0_hat,
        floor: quasi.floor,
    };
    let checked_pass = [&variational, &pathwise, &sandwich].iter().all(|s| s.report().is_none_or(|r| r.pass));
    let pass = checked_pass && dpp.monotone && assumptions.a3_holds;
    let report = RatesReport {
        policy: t.policy.clone(),
        k,
        lambda,
        variational,
        pathwise,
        sandwich,
        dpp,
        realized,
        a3: if assumptions.a3_holds { "PASSED" } else { "FAILED" }.into(),
        pass,
    };

    let dist_bound: Box<dyn Fn(f64) -> f64> = match (report.pathwise.report(), &entry, constants.rates()) {
        (Some(_), Ok(tau), Ok(path_rates)) => {
            let j0 = traj.sample_index(*tau)?;
            let b = pathwise_dist2_bound(&constants, &path_rates, *tau, traj.dists[j0].powi(2));
            let tau = *tau;
            Box::new(move |s| if s >= tau { b(s) } else { f64::NAN })
        }
        _ => Box::new(|_| f64::NAN),
    };
    let u_tilde = traj.u_tilde(obj, lambda);
    let u_bound: Box<dyn Fn(f64) -> f64> = match report.variational.report() {
        Some(_) => variational_bound(k, lambda, &variant, u_tilde[0]).1,
        None => Box::new(|_| f64::NAN),
    };
    let mut dat = String::from("# t u_tilde u_tilde_bound dist2 dist2_bound\n");
    for (j, &s) in traj.times.iter().enumerate() {
        let d2 = traj.dists[j].powi(2);
        dat.push_str(&format!("{s:.6e} {:.10e} {:.10e} {d2:.10e} {:.10e}\n", u_tilde[j], u_bound(s), dist_bound(s)));
    }

    let mut outputs = Outputs::new();
    outputs.add(RATES_FILE, to_json(&report));
    outputs.add(ASSUMPTIONS_FILE, to_json(&assumptions));
    outputs.add(PLOT_DATA_FILE, dat.into_bytes());
    outputs.add(PLOT_SCRIPT_FILE, PLOT_SCRIPT.as_bytes().to_vec());
    let seconds = start.elapsed().as_secs_f64();
    outputs.commit(out, &exp.hash, "rates", seconds)?;
    println!("variational: {}", describe(&report.variational));
    println!("pathwise:    {}", describe(&report.pathwise));
    println!("sandwich:    {}", describe(&report.sandwich));
    println!("dpp:         {} drops, max relative deviation {:.3e}", report.dpp.violations, report.dpp.max_relative_deviation);
    println!("(A3):        {}", report.a3);
    println!("overall:     {}", if report.pass { "PASS" } else { "FAIL" });
    Ok(())
}

const PLOT_SCRIPT: &str = "\
# gnuplot script for rates.dat; run `gnuplot rates.gp` to produce rates.png
set terminal pngcairo size 900,900
set output 'rates.png'
set multiplot layout 2,1
set logscale y
set xlabel 't'
set key top right
plot 'rates.dat' using 1:2 with lines title 'u tilde', \\
     '' using 1:3 with lines dashtype 2 title 'decay bound'
plot 'rates.dat' using 1:4 with lines title 'dist^2', \\
     '' using 1:5 with lines dashtype 2 title 'pathwise bound'
unset multiplot
";

fn describe(s: &Section<RateReport>) -> String {
    match s {
        Section::Checked { report } => format!(
            "{} ({} violations, fitted rate {:.4}, predicted {:.4})",
            if report.pass { "PASS" } else { "FAIL" },
            report.bound_violations,
            report.fitted_rate,
            report.predicted_rate
        ),
        Section::Skipped { cause, .. } => format!("skipped ({cause})"),
    }
}

/// Runs the acceptance matrix and writes the summary CSV; any failing row is an error.
pub fn suite(out: &Path, quick: bool, seed: u64) -> Result<(), CliError> {
    ensure_dir(out)?;
    let report = Suite::new(SuiteOptions { quick, seed }).run();
    let mut csv = Vec::new();
    report.write_csv(&mut csv).map_err(CliError::output)?;
    let mut outputs = Outputs::new();
    outputs.add(SUITE_FILE, csv);
    let hash = sha256_hex(format!("suite quick={quick} seed={seed}").as_bytes());
    outputs.commit(out, &hash, "suite", report.seconds)?;
    for r in &report.rows {
        println!("{} {:<24} {:<32} predicted {:<12.4e} measured {:.4e}", if r.pass { "PASS" } else { "FAIL" }, r.case, r.check, r.predicted, r.measured);
    }
    let failed: Vec<String> = report.rows.iter().filter(|r| !r.pass).map(|r| format!("{}/{}", r.case, r.check)).collect();
    if failed.is_empty() {
        println!("all {} rows pass in {:.1} s", report.rows.len(), report.seconds);
        Ok(())
    } else {
        Err(CliError::new(ErrorKind::CheckFailed, "check-failed", format!("{} suite rows failed: {}", failed.len(), failed.join(" "))))
    }
}

/// Outcome of `riccati-check`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiCheck {
    pub lambda: f64,
    pub c: f64,
    /// `C` in `u = C dist²`.
    pub big_c: f64,
    pub radius: f64,
    pub relative_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compares a `riccati_dist` field with `C dist²`; solves first unless `value` is given.
pub fn riccati_check(exp: &Experiment, out: &Path, value: Option<&Path>) -> Result<(), CliError> {
    let obj = &exp.objective;
    let growth = match (obj.name.as_str(), obj.known_growth) {
        ("riccati_dist", Some(g)) => g,
        _ => return Err(CliError::config(format!("riccati-check needs the riccati_dist objective, got `{}`", obj.name))),
    };
    let vf = match value {
        Some(path) => load_value(path, exp)?.0,
        None => {
            ensure_dir(out)?;
            solve_with_log(obj, &exp.grid, exp.lambda(), &exp.solver)?.0
        }
    };
    ensure_dir(out)?;
    let start = Instant::now();
    let big_c = riccati_constant(exp.lambda(), growth.c1)?;
    let relative_error = riccati_relative_error(&vf, obj, big_c, RICCATI_RADIUS);
    let check = RiccatiCheck {
        lambda: exp.lambda(),
        c: growth.c1,
        big_c,
        radius: RICCATI_RADIUS,
        relative_error,
        tolerance: RICCATI_TOLERANCE,
        pass: relative_error <= RICCATI_TOLERANCE,
    };
    let mut outputs = Outputs::new();
    outputs.add(RICCATI_FILE, to_json(&check));
    outputs.commit(out, &exp.hash, "riccati-check", start.elapsed().as_secs_f64())?;
    println!("C = {big_c:.10}, relative error {relative_error:.4e} on dist <= {RICCATI_RADIUS}");
    if check.pass {
        Ok(())
    } else {
        Err(CliError::new(
            ErrorKind::CheckFailed,
            "check-failed",
            format!("relative error {relative_error:e} exceeds {RICCATI_TOLERANCE}"),
        ))
    }
}

/// Reads a value file and checks its box, node counts and discount against the config.
fn load_value(path: &Path, exp: &Experiment) -> Result<(ValueField, Vec<u8>), CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::new(ErrorKind::Input, "missing-input", format!("cannot read {}: {e}", path.display())))?;
    let vf = ValueField::from_bytes(&bytes)?;
    let g = &vf.grid;
    if g.lower() != exp.grid.lower() || g.upper() != exp.grid.upper() || g.nodes() != exp.grid.nodes() || vf.lambda != exp.lambda() {
        return Err(CliError::new(
            ErrorKind::Input,
            "value-mismatch",
            format!(
                "{} holds box {:?}..{:?}, nodes {:?}, lambda {}; the config asks for {:?}..{:?}, nodes {:?}, lambda {}",
                path.display(),
                g.lower(),
                g.upper(),
                g.nodes(),
                vf.lambda,
                exp.grid.lower(),
                exp.grid.upper(),
                exp.grid.nodes(),
                exp.lambda()
            ),
        ));
    }
    Ok((vf, bytes))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("reports serialize");
    out.push(b'\n');
    out
}
