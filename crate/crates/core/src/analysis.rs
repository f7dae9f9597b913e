//! Constant estimation and pointwise checks of the decay, sandwich and assumption inequalities.
//!
//! Every check is one-sided and reports the tolerances it used. Tolerances come from the
//! grid: [`scheme_tolerance`] is a first-order consistency estimate of the solver error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MinimizerSet;
use crate::grid::ValueField;
use crate::objectives::{estimate_quadratic_growth, for_each_tensor_point, GrowthConstants, ObjectiveSpec};
use crate::solver::riccati_constant;
use crate::trajectory::{running_cost, tail_costs, Trajectory};

/// Default multiplicative tolerance on rate bounds.
pub const RATE_TOLERANCE: f64 = 0.05;
/// Slack subtracted from the scanned gap function.
pub const GAP_SLACK: f64 = 1e-12;
/// Minimum number of samples for an exponential fit.
pub const MIN_FIT_SAMPLES: usize = 10;

/// `½ h_max · max|Du|` over interior nodes: the first-order error scale of the scheme.
pub fn scheme_tolerance(vf: &ValueField) -> f64 {
    scheme_tolerance_below(vf, f64::INFINITY)
}

/// [`scheme_tolerance`] restricted to interior nodes with `u ≤ level`.
///
/// Optimal paths from a point never leave its sublevel set, so this is the error scale
/// that matters along a trajectory started at value `level`.
pub fn scheme_tolerance_below(vf: &ValueField, level: f64) -> f64 {
    let g = &vf.grid;
    let mut worst = 0.0f64;
    for k in 0..g.len() {
        if !g.is_interior(k, 1) || vf.values[k] > level {
            continue;
        }
        let idx = g.multi_index(k);
        let mut norm2 = 0.0;
        for d in 0..g.dim() {
            let mut lo = idx.clone();
            let mut hi = idx.clone();
            lo[d] -= 1;
            hi[d] += 1;
            let slope = (vf.values[g.flat_index(&hi)] - vf.values[g.flat_index(&lo)]) / (2.0 * g.spacing()[d]);
            norm2 += slope * slope;
        }
        worst = worst.max(norm2);
    }
    0.5 * g.max_spacing() * worst.sqrt()
}

/// Value floor near the minimizer set: 20× the scheme tolerance, and at least a rounding
/// level relative to the field so that a constant field still has a positive floor.
pub fn default_floor(vf: &ValueField) -> f64 {
    let scale = vf.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    (20.0 * scheme_tolerance(vf)).max(1e-12 * scale)
}

/// Noise floor for exponential fits: 10× the scheme tolerance.
pub fn default_noise_floor(vf: &ValueField) -> f64 {
    10.0 * scheme_tolerance(vf)
}

/// `min f̃/ũ` over interior nodes with `ũ ≥ floor`.
pub fn estimate_k(vf: &ValueField, obj: &ObjectiveSpec, floor: f64) -> Result<f64> {
    if !(floor > 0.0) {
        return Err(Error::InvalidParameter(format!("floor must be positive, got {floor}")));
    }
    let base = obj.f_min / vf.lambda;
    let g = &vf.grid;
    let mut best = f64::INFINITY;
    for k in 0..g.len() {
        let u_tilde = vf.values[k] - base;
        if !g.is_interior(k, 1) || u_tilde < floor {
            continue;
        }
        best = best.min(obj.shifted(&g.node(k)) / u_tilde);
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::FlatField { floor })
    }
}

/// Fraction of interior nodes with `½|Du|² < (K-λ)ũ - margin`; the margin defaults to `10 h ‖f‖_∞`.
pub fn check_pl(vf: &ValueField, obj: &ObjectiveSpec, k: f64, margin: Option<f64>) -> f64 {
    let g = &vf.grid;
    let margin = margin.unwrap_or(10.0 * g.max_spacing() * obj.sup_norm());
    let base = obj.f_min / vf.lambda;
    let mut total = 0usize;
    let mut bad = 0usize;
    for n in 0..g.len() {
        if !g.is_interior(n, 1) {
            continue;
        }
        total += 1;
        let grad = vf.gradient(&g.node(n)).expect("nodes lie in the box");
        let lhs = 0.5 * grad.iter().map(|v| v * v).sum::<f64>();
        if lhs < (k - vf.lambda) * (vf.values[n] - base) - margin {
            bad += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        bad as f64 / total as f64
    }
}

/// Least-squares line through `(t, ln v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub rate: f64,
    pub amplitude: f64,
    pub r_squared: f64,
    pub samples: usize,
}

/// Fits `v ≈ A e^{-rate·t}` on the samples with `v > floor`.
pub fn fit_exponential_rate(t: &[f64], v: &[f64], floor: f64) -> Result<ExpFit> {
    let pts: Vec<(f64, f64)> =
        t.iter().zip(v).filter(|(_, &v)| v > floor && v > 0.0 && v.is_finite()).map(|(&t, &v)| (t, v.ln())).collect();
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientDecayWindow { usable: pts.len() });
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = if stt > 0.0 { sty / stt } else { 0.0 };
    let intercept = my - slope * mt;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy <= 1e-300 { 1.0 } else { (1.0 - sse / syy).clamp(0.0, 1.0) };
    Ok(ExpFit { rate: -slope, amplitude: intercept.exp(), r_squared, samples: pts.len() })
}

/// Which decay theorem a trajectory is checked against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum RateVariant {
    /// `ũ(t) ≤ e^{-(K-λ)t} ũ(0)`.
    Optimal,
    /// `ũ(t) ≤ (1+η(0)) e^{-δt} ũ(0) + ε∘(1 + 1/δ)` with `δ = (1-‖η‖_∞)K - λ`.
    Quasi { eta_sup: f64, eta0: f64, eps0: f64 },
    /// `ũ(t) ≤ (1+c) e^{-θt} ũ(0)` with `c = (σ/2)e^{-KΔ_max}`.
    Sampled { sigma: f64, delta_min: f64, delta_max: f64 },
}

/// Tolerances of a bound check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTolerance {
    /// A sample violates the bound when `value > (1 + multiplicative)·bound + additive`.
    pub multiplicative: f64,
    pub additive: f64,
    /// Samples at or below this are left out of the rate fit.
    pub noise_floor: f64,
}

impl BoundTolerance {
    /// 5% multiplicative, `5 h` additive, noise floor 10× the scheme tolerance.
    pub fn for_field(vf: &ValueField) -> Self {
        BoundTolerance {
            multiplicative: RATE_TOLERANCE,
            additive: 5.0 * vf.grid.max_spacing(),
            noise_floor: default_noise_floor(vf),
        }
    }

    /// As [`BoundTolerance::for_field`], with the noise floor taken over the sublevel set
    /// the trajectory lives in.
    pub fn for_trajectory(vf: &ValueField, traj: &Trajectory) -> Self {
        let level = traj.u_vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        BoundTolerance { noise_floor: 10.0 * scheme_tolerance_below(vf, level), ..Self::for_field(vf) }
    }

    /// 5% multiplicative and the scheme tolerance as additive slack.
    pub fn scheme(vf: &ValueField) -> Self {
        BoundTolerance {
            multiplicative: RATE_TOLERANCE,
            additive: scheme_tolerance(vf),
            noise_floor: default_noise_floor(vf),
        }
    }

    /// Tolerances for squared distances and speeds: 5% multiplicative, `h²` additive,
    /// noise floor `4h²` (states settle within about one cell of the minimizer set).
    pub fn pathwise(vf: &ValueField) -> Self {
        let h2 = vf.grid.max_spacing().powi(2);
        BoundTolerance { multiplicative: RATE_TOLERANCE, additive: h2, noise_floor: 4.0 * h2 }
    }

    fn violated(&self, value: f64, bound: f64) -> bool {
        value > (1.0 + self.multiplicative) * bound + self.additive
    }
}

/// Violation count and worst excess of one inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub samples: usize,
    pub violations: usize,
    /// Largest `value - bound` seen (negative when every sample is strictly inside).
    pub worst_excess: f64,
    pub worst_time: f64,
}

impl BoundCheck {
    fn new(name: &str) -> Self {
        BoundCheck { name: name.into(), samples: 0, violations: 0, worst_excess: f64::NEG_INFINITY, worst_time: 0.0 }
    }

    fn record(&mut self, t: f64, value: f64, bound: f64, tol: &BoundTolerance) {
        self.samples += 1;
        if tol.violated(value, bound) {
            self.violations += 1;
        }
        if value - bound > self.worst_excess {
            self.worst_excess = value - bound;
            self.worst_time = t;
        }
    }
}

/// Outcome of a rate theorem check along one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub fitted_rate: f64,
    pub fitted_amplitude: f64,
    pub r_squared: f64,
    pub predicted_rate: f64,
    pub bound_violations: usize,
    pub pass: bool,
    pub tolerance: BoundTolerance,
    pub checks: Vec<BoundCheck>,
}

impl RateReport {
    fn assemble(fit: ExpFit, predicted_rate: f64, tolerance: BoundTolerance, checks: Vec<BoundCheck>) -> Self {
        let bound_violations = checks.iter().map(|c| c.violations).sum();
        RateReport {
            fitted_rate: fit.rate,
            fitted_amplitude: fit.amplitude,
            r_squared: fit.r_squared,
            predicted_rate,
            bound_violations,
            pass: bound_violations == 0,
            tolerance,
            checks,
        }
    }
}

/// Predicted rate and bound `t ↦ B(t)` of a variational decay theorem.
pub fn variational_bound(k: f64, lambda: f64, variant: &RateVariant, u0: f64) -> (f64, Box<dyn Fn(f64) -> f64>) {
    match *variant {
        RateVariant::Optimal => {
            let rate = k - lambda;
            (rate, Box::new(move |t| (-rate * t).exp() * u0))
        }
        RateVariant::Quasi { eta_sup, eta0, eps0 } => {
            let delta = (1.0 - eta_sup) * k - lambda;
            (delta, Box::new(move |t| (1.0 + eta0) * (-delta * t).exp() * u0 + eps0 * (1.0 + 1.0 / delta)))
        }
        RateVariant::Sampled { sigma, delta_min, delta_max } => {
            let c = 0.5 * sigma * (-k * delta_max).exp();
            let theta = k - lambda - k * c - c.ln_1p() / delta_min;
            (theta, Box::new(move |t| (1.0 + c) * (-theta * t).exp() * u0))
        }
    }
}

/// Checks the variational decay of `ũ(y(t))` at every sample and fits its rate.
pub fn check_variational_bound(
    traj: &Trajectory,
    obj: &ObjectiveSpec,
    k: f64,
    lambda: f64,
    variant: &RateVariant,
    tol: BoundTolerance,
) -> Result<RateReport> {
    let u_tilde = traj.u_tilde(obj, lambda);
    let fit = fit_exponential_rate(&traj.times, &u_tilde, tol.noise_floor)?;
    let (predicted, bound) = variational_bound(k, lambda, variant, u_tilde[0]);
    if !(predicted > 0.0) {
        return Err(Error::InvalidParameter(format!("predicted rate {predicted} is not positive")));
    }
    let mut check = BoundCheck::new("u_tilde");
    for (j, &t) in traj.times.iter().enumerate() {
        check.record(t, u_tilde[j], bound(t), &tol);
    }
    Ok(RateReport::assemble(fit, predicted, tol, vec![check]))
}

/// Constants entering the pathwise and sandwich bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathConstants {
    pub c1: f64,
    pub c2: f64,
    pub lambda: f64,
    pub eta: f64,
    pub eps0: f64,
}

/// Derived quantities `C₁, C₂, K = c₁/(2C₂), δ, 𝔞, 𝔞̃`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathRates {
    pub big_c1: f64,
    pub big_c2: f64,
    pub k: f64,
    pub delta: f64,
    pub a: f64,
    pub a_turnpike: f64,
}

impl PathConstants {
    pub fn optimal(growth: GrowthConstants, lambda: f64) -> Self {
        PathConstants { c1: growth.c1, c2: growth.c2, lambda, eta: 0.0, eps0: 0.0 }
    }

    pub fn rates(&self) -> Result<PathRates> {
        if !(self.c1 > 0.0 && self.c1 <= self.c2) {
            return Err(Error::InvalidParameter(format!("need 0 < c1 <= c2, got {} and {}", self.c1, self.c2)));
        }
        let big_c1 = riccati_constant(self.lambda, self.c1)?;
        let big_c2 = riccati_constant(self.lambda, self.c2)?;
        let k = self.c1 / (2.0 * big_c2);
        let delta = (1.0 - self.eta) * k - self.lambda;
        if !(delta > 0.0) {
            return Err(Error::InvalidParameter(format!("pathwise rate delta = {delta} is not positive")));
        }
        Ok(PathRates {
            big_c1,
            big_c2,
            k,
            delta,
            a: big_c2 * (1.0 + self.eta) / big_c1,
            a_turnpike: (1.0 + self.c2) * big_c2 / big_c1,
        })
    }

    fn is_optimal(&self) -> bool {
        self.eta == 0.0 && self.eps0 == 0.0
    }
}

/// Smallest sample time after which every remaining sample is within `r` of `set`.
pub fn entry_time(traj: &Trajectory, set: &MinimizerSet, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("tube radius must be positive, got {r}")));
    }
    let outside = traj.states.iter().rposition(|y| set.distance(y).dist > r);
    match outside {
        None => Ok(traj.times[0]),
        Some(j) if j + 1 < traj.len() => Ok(traj.times[j + 1]),
        Some(_) => Err(Error::EntryNotReached { r }),
    }
}

/// Distance, speed and turnpike bounds after the entry time `tau`.
///
/// The speed and turnpike bounds are only stated for optimal pairs and are skipped for
/// perturbed constants.
pub fn check_pathwise_bound(traj: &Trajectory, constants: &PathConstants, tau: f64, tol: BoundTolerance) -> Result<RateReport> {
    let rates = constants.rates()?;
    let j0 = traj.sample_index(tau)?;
    let d_tau2 = traj.dists[j0].powi(2);
    let delta = rates.delta;
    let dist_bound = pathwise_dist2_bound(constants, &rates, tau, d_tau2);
    let mut dist = BoundCheck::new("dist2");
    let mut speed = BoundCheck::new("speed2");
    let mut turnpike = BoundCheck::new("turnpike");
    for j in j0..traj.len() {
        let s = traj.times[j] - tau;
        let decay = (-delta * s).exp();
        let d2 = traj.dists[j].powi(2);
        dist.record(traj.times[j], d2, dist_bound(traj.times[j]), &tol);
        if constants.is_optimal() {
            speed.record(traj.times[j], traj.speed2[j], constants.c2 * rates.a * decay * d_tau2, &tol);
            turnpike.record(traj.times[j], traj.speed2[j] + d2, rates.a_turnpike * decay * d_tau2, &tol);
        }
    }
    let d2: Vec<f64> = traj.dists[j0..].iter().map(|d| d * d).collect();
    let fit = fit_exponential_rate(&traj.times[j0..], &d2, tol.noise_floor)?;
    let mut checks = vec![dist];
    if constants.is_optimal() {
        checks.extend([speed, turnpike]);
    }
    Ok(RateReport::assemble(fit, delta, tol, checks))
}

/// `dist(y(t))² ≤ 𝔞 e^{-δ(t-τ)} dist(y(τ))² + (ε∘/C₁)(1 + 1/δ + (2+η) e^{-δ(t-τ)})` for `t ≥ τ`.
pub fn pathwise_dist2_bound(constants: &PathConstants, rates: &PathRates, tau: f64, d_tau2: f64) -> impl Fn(f64) -> f64 {
    let (eps0, eta, delta, a, big_c1) = (constants.eps0, constants.eta, rates.delta, rates.a, rates.big_c1);
    move |t| {
        let decay = (-delta * (t - tau)).exp();
        a * decay * d_tau2 + eps0 / big_c1 * (1.0 + 1.0 / delta + (2.0 + eta) * decay)
    }
}

/// `C₁d² ≤ ũ + ε` and `ũ + ε ≤ C₂d² + ε + ε∘` with `ε(t) = η(t)ũ + ε∘`, after `tau`.
///
/// The fit reports the decay of `ũ` over the checked window, when it has enough samples.
pub fn check_sandwich(
    traj: &Trajectory,
    obj: &ObjectiveSpec,
    constants: &PathConstants,
    tau: f64,
    eta: &dyn Fn(f64) -> f64,
    tol: BoundTolerance,
) -> Result<RateReport> {
    let rates = constants.rates()?;
    let j0 = traj.sample_index(tau)?;
    let u_tilde = traj.u_tilde(obj, constants.lambda);
    let mut lower = BoundCheck::new("sandwich_lower");
    let mut upper = BoundCheck::new("sandwich_upper");
    for j in j0..traj.len() {
        let t = traj.times[j];
        let d2 = traj.dists[j].powi(2);
        let eps = eta(t) * u_tilde[j] + constants.eps0;
        // lower: C₁d² ≤ ũ + ε, stated as C₁d² - ε ≤ ũ with the tolerance on the left side
        lower.record(t, rates.big_c1 * d2 - eps, u_tilde[j], &tol);
        upper.record(t, u_tilde[j] + eps, rates.big_c2 * d2 + eps + constants.eps0, &tol);
    }
    let fit = fit_exponential_rate(&traj.times[j0..], &u_tilde[j0..], tol.noise_floor).unwrap_or(ExpFit {
        rate: f64::NAN,
        amplitude: f64::NAN,
        r_squared: 0.0,
        samples: 0,
    });
    Ok(RateReport::assemble(fit, rates.delta, tol, vec![lower, upper]))
}

/// Realized quasi-optimality of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiOptimality {
    /// Shifted tail cost minus `ũ(y(t_j))`.
    pub residuals: Vec<f64>,
    pub eta_hat: Vec<f64>,
    pub eps0_hat: f64,
    pub floor: f64,
}

/// Decomposes tail-cost residuals as `r(t) = η̂(t) ũ(y(t)) + ε̂∘` with the default floor.
pub fn verify_assumption_c(traj: &Trajectory, obj: &ObjectiveSpec, lambda: f64, vf: &ValueField) -> Result<QuasiOptimality> {
    verify_assumption_c_with_floor(traj, obj, lambda, vf, default_floor(vf))
}

/// Minimal-`ε̂∘` decomposition: `ε̂∘` covers the residuals where `ũ < floor`, `η̂` the rest.
pub fn verify_assumption_c_with_floor(
    traj: &Trajectory,
    obj: &ObjectiveSpec,
    lambda: f64,
    vf: &ValueField,
    floor: f64,
) -> Result<QuasiOptimality> {
    if traj.is_empty() {
        return Err(Error::EmptySample("trajectory has no samples".into()));
    }
    let base = obj.f_min / lambda;
    let tails = tail_costs(traj, obj, lambda, vf);
    let u_tilde = traj.u_tilde(obj, lambda);
    let residuals: Vec<f64> = tails.iter().zip(&u_tilde).map(|(c, u)| c - base - u).collect();
    let eps0_hat = residuals.iter().zip(&u_tilde).filter(|(_, &u)| u < floor).map(|(r, _)| *r).fold(0.0, f64::max);
    let eta_hat = residuals
        .iter()
        .zip(&u_tilde)
        .map(|(r, &u)| if u < floor { 0.0 } else { ((r - eps0_hat) / u).max(0.0) })
        .collect();
    Ok(QuasiOptimality { residuals, eta_hat, eps0_hat, floor })
}

/// Monotonicity and constancy of the DPP functional along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DppReport {
    /// Steps where `h` drops by more than the step tolerance.
    pub violations: usize,
    /// Largest drop `h(t_j) - h(t_{j+1})` minus its tolerance.
    pub worst_excess: f64,
    /// `max_j |h(t_j) - h(0)| / h(0)`.
    pub max_relative_deviation: f64,
    /// Constancy budget `0.02 + 5h` for optimal runs.
    pub constancy_budget: f64,
    pub monotone: bool,
}

/// Per-step drop tolerance of `h`: `1e-6` plus the quadrature error estimate plus the
/// discounted local interpolation error and HJB residual of the field along the step.
pub fn dpp_step_tolerances(traj: &Trajectory, obj: &ObjectiveSpec, vf: &ValueField) -> Vec<f64> {
    let lambda = vf.lambda;
    let g = running_cost(traj, obj);
    let n = traj.len();
    // (interpolation error bound, |HJB residual|) of the interpolated field at each state
    let local: Vec<(f64, f64)> = traj
        .states
        .iter()
        .map(|y| {
            let u = vf.grid.interp_unchecked(&vf.values, y);
            let grad = vf.gradient(y).expect("states lie in the box");
            let hjb = (lambda * u + 0.5 * grad.iter().map(|v| v * v).sum::<f64>() - obj.eval(y)).abs();
            (vf.interpolation_error_bound(y), hjb)
        })
        .collect();
    (0..n.saturating_sub(1))
        .map(|j| {
            let dt = traj.times[j + 1] - traj.times[j];
            let curvature = if j > 0 && j + 2 < n {
                (g[j - 1] - 2.0 * g[j] + g[j + 1]).abs().max((g[j] - 2.0 * g[j + 1] + g[j + 2]).abs())
            } else {
                0.0
            };
            // dt·|Δ²g|/2 also covers a jump of the running cost, as under a held control
            let quad = dt * curvature / 2.0;
            let interp = 2.0 * local[j].0.max(local[j + 1].0);
            let hjb = dt * local[j].1.max(local[j + 1].1);
            1e-6 + (-lambda * traj.times[j]).exp() * (quad + interp + hjb)
        })
        .collect()
}

/// Checks `h(t_{j+1}) ≥ h(t_j) - tol_j` and measures the deviation of `h` from `h(0)`.
pub fn check_dpp(traj: &Trajectory, obj: &ObjectiveSpec, vf: &ValueField) -> DppReport {
    let tols = dpp_step_tolerances(traj, obj, vf);
    let h = &traj.h_vals;
    let mut violations = 0;
    let mut worst_excess = f64::NEG_INFINITY;
    for j in 0..tols.len() {
        let excess = h[j] - h[j + 1] - tols[j];
        worst_excess = worst_excess.max(excess);
        if excess > 0.0 {
            violations += 1;
        }
    }
    let h0 = h[0];
    let max_relative_deviation = h.iter().map(|v| (v - h0).abs()).fold(0.0, f64::max) / h0.abs().max(1e-300);
    DppReport {
        violations,
        worst_excess,
        max_relative_deviation,
        constancy_budget: 0.02 + 5.0 * vf.grid.max_spacing(),
        monotone: violations == 0,
    }
}

/// `(δ, γ(δ))` with `γ(δ) = inf{f̃ : dist > δ} - slack` over a tensor scan.
pub fn check_gap_a3(obj: &ObjectiveSpec, deltas: &[f64], per_axis: usize) -> Result<Vec<(f64, f64)>> {
    let half = obj.domain.half_width();
    let mut mins = vec![f64::INFINITY; deltas.len()];
    for &d in deltas {
        if !(d > 0.0 && d < half) {
            return Err(Error::InvalidParameter(format!("gap radius {d} must lie in (0, {half})")));
        }
    }
    for_each_tensor_point(&obj.domain, per_axis, |x| {
        let dist = obj.distance(x);
        let v = obj.shifted(x);
        for (m, &d) in mins.iter_mut().zip(deltas) {
            if dist > d && v < *m {
                *m = v;
            }
        }
    });
    deltas
        .iter()
        .zip(mins)
        .map(|(&d, m)| {
            if m.is_finite() {
                Ok((d, m - GAP_SLACK))
            } else {
                Err(Error::EmptySample(format!("no scan point farther than {d} from the minimizer set")))
            }
        })
        .collect()
}

/// Constants of the linear-growth assumption and the resulting controllability constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearGrowth {
    pub c_f: f64,
    pub beta: f64,
    pub k_tilde: f64,
}

/// `C_F = max dist/f̃` over `{0 < dist ≤ r}`, `β = C_F/M` and `K̃ = (1/β)/(½M² + f̄)`.
///
/// The scan is split into dyadic shells `(r/2^{k+1}, r/2^k]`; if the shell maxima keep growing
/// by at least 1.5× over the three innermost shells the ratio is reported as unbounded.
pub fn check_linear_growth_f_and_e(obj: &ObjectiveSpec, r: f64, m: f64, per_axis: usize) -> Result<LinearGrowth> {
    if !(r > 0.0 && m > 0.0) {
        return Err(Error::InvalidParameter(format!("need r > 0 and M > 0, got {r} and {m}")));
    }
    const SHELLS: usize = 40;
    let mut shell_max = [0.0f64; SHELLS];
    let mut shell_count = [0usize; SHELLS];
    let scale = obj.domain.half_width();
    let mut bad_point = None;
    for_each_tensor_point(&obj.domain, per_axis, |x| {
        let d = obj.distance(x);
        if d <= 1e-9 * scale || d > r * (1.0 + 1e-12) {
            return;
        }
        let v = obj.shifted(x);
        if v <= 0.0 {
            bad_point.get_or_insert_with(|| x.to_vec());
            return;
        }
        let k = ((r / d).log2().floor().max(0.0) as usize).min(SHELLS - 1);
        shell_max[k] = shell_max[k].max(d / v);
        shell_count[k] += 1;
    });
    let filled: Vec<f64> = (0..SHELLS).filter(|&k| shell_count[k] > 0).map(|k| shell_max[k]).collect();
    if bad_point.is_some() {
        // f̃ vanishes off the minimizer set, so the ratio is infinite there
        return Err(Error::UnboundedRatio { shell_max: filled.into_iter().chain([f64::INFINITY]).collect() });
    }
    if filled.is_empty() {
        return Err(Error::EmptySample(format!("no scan point within distance {r} of the minimizer set")));
    }
    let n = filled.len();
    if n >= 4 && (n - 3..n).all(|k| filled[k] >= 1.5 * filled[k - 1]) {
        return Err(Error::UnboundedRatio { shell_max: filled });
    }
    let c_f = filled.iter().cloned().fold(0.0, f64::max);
    let beta = c_f / m;
    Ok(LinearGrowth { c_f, beta, k_tilde: (1.0 / beta) / (0.5 * m * m + obj.f_max) })
}

/// Outcome of the metric-regularity check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRegularity {
    pub max_ratio: f64,
    pub bound: f64,
    pub pass: bool,
}

/// `max dist(x)/|∇f(x)|` over `samples`, compared against `2/c₁` with 1% slack.
pub fn check_metric_regularity(obj: &ObjectiveSpec, samples: &[Vec<f64>], c1: f64) -> Result<MetricRegularity> {
    if !(c1 > 0.0) {
        return Err(Error::InvalidParameter(format!("c1 must be positive, got {c1}")));
    }
    let scale = obj.domain.half_width();
    let mut max_ratio = 0.0f64;
    for x in samples {
        let d = obj.distance(x);
        if d <= 1e-9 * scale {
            continue;
        }
        let norm = central_gradient(obj, x).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::VanishingGradient { norm, point: x.clone() });
        }
        max_ratio = max_ratio.max(d / norm);
    }
    let bound = 2.0 / c1;
    Ok(MetricRegularity { max_ratio, bound, pass: max_ratio <= bound * 1.01 })
}

fn central_gradient(obj: &ObjectiveSpec, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|d| {
            let h = 1e-6 * x[d].abs().max(1.0);
            probe[d] = x[d] + h;
            let up = obj.eval(&probe);
            probe[d] = x[d] - h;
            let down = obj.eval(&probe);
            probe[d] = x[d];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Uniform samples of the box with `0 < dist ≤ r`, by rejection.
pub fn tube_samples(obj: &ObjectiveSpec, r: f64, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dom = &obj.domain;
    let mut out = Vec::with_capacity(count);
    let mut tries = 0usize;
    while out.len() < count {
        tries += 1;
        if tries > 1000 * count.max(1) {
            return Err(Error::EmptySample(format!("tube of radius {r} is too thin to sample")));
        }
        let x: Vec<f64> = (0..dom.dim()).map(|d| rng.gen_range(dom.lower[d]..=dom.upper[d])).collect();
        let d = obj.distance(&x);
        if d > 0.0 && d <= r {
            out.push(x);
        }
    }
    Ok(out)
}

/// Comparison of stated growth constants with a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthAudit {
    pub stated: GrowthConstants,
    pub measured: GrowthConstants,
    /// Stated bounds contain the measured ratios.
    pub consistent: bool,
    /// Point and value of `f̃/dist²` with the largest violation of a stated bound.
    pub worst_point: Vec<f64>,
    pub worst_ratio: f64,
}

/// Audits the objective's stated growth constants against [`estimate_quadratic_growth`].
pub fn audit_stated_growth(obj: &ObjectiveSpec, step: f64) -> Result<Option<GrowthAudit>> {
    let Some(stated) = obj.known_growth else {
        return Ok(None);
    };
    let est = estimate_quadratic_growth(obj, stated.r, step)?;
    let measured = est.constants();
    let low = measured.c1 < stated.c1 * (1.0 - 1e-9);
    let high = measured.c2 > stated.c2 * (1.0 + 1e-9);
    // compare relative excess beyond each stated bound
    let (worst_point, worst_ratio) = if high && (!low || measured.c2 / stated.c2 >= stated.c1 / measured.c1) {
        (est.argmax.clone(), measured.c2 / 2.0)
    } else if low {
        (est.argmin.clone(), measured.c1 / 2.0)
    } else {
        (est.argmax.clone(), measured.c2 / 2.0)
    };
    Ok(Some(GrowthAudit { stated, measured, consistent: !(low || high), worst_point, worst_ratio }))
}

/// Assumption-level constants of a solved field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub domain_lower: Vec<f64>,
    pub domain_upper: Vec<f64>,
    pub k_est: f64,
    pub gamma_table: Vec<(f64, f64)>,
    pub a3_holds: bool,
    pub growth: GrowthConstants,
    /// `None` when the linear-growth ratio is unbounded near the minimizer set.
    pub linear_growth_c: Option<f64>,
    pub beta_est: Option<f64>,
    pub k_tilde: Option<f64>,
    pub pl_violation_fraction: f64,
}

/// Settings of [`assumption_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionSettings {
    pub r: f64,
    pub floor: f64,
    pub deltas: Vec<f64>,
    pub scan_per_axis: usize,
    pub growth_step: f64,
}

/// Collects every assumption-level constant of `vf`; flat fields report `k_est = 0`.
pub fn assumption_report(vf: &ValueField, obj: &ObjectiveSpec, settings: &AssumptionSettings, m: f64) -> Result<AssumptionReport> {
    let k_est = match estimate_k(vf, obj, settings.floor) {
        Ok(k) => k,
        Err(Error::FlatField { .. }) => 0.0,
        Err(e) => return Err(e),
    };
    let gamma_table = check_gap_a3(obj, &settings.deltas, settings.scan_per_axis)?;
    let a3_holds = gamma_table.iter().all(|p| p.1 > 0.0);
    let growth = match estimate_quadratic_growth(obj, settings.r, settings.growth_step) {
        Ok(est) => est.constants(),
        Err(Error::NonPositiveRatio { .. }) => GrowthConstants { c1: 0.0, c2: 0.0, r: settings.r },
        Err(e) => return Err(e),
    };
    let linear = match check_linear_growth_f_and_e(obj, settings.r, m, settings.scan_per_axis) {
        Ok(l) => Some(l),
        Err(Error::UnboundedRatio { .. }) => None,
        Err(e) => return Err(e),
    };
    let pl_violation_fraction = if k_est > 0.0 { check_pl(vf, obj, k_est, None) } else { 0.0 };
    Ok(AssumptionReport {
        domain_lower: obj.domain.lower.clone(),
        domain_upper: obj.domain.upper.clone(),
        k_est,
        gamma_table,
        a3_holds,
        growth,
        linear_growth_c: linear.map(|l| l.c_f),
        beta_est: linear.map(|l| l.beta),
        k_tilde: linear.map(|l| l.k_tilde),
        pl_violation_fraction,
    })
}
