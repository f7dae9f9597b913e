//! Closed-loop and open-loop trajectories, discounted costs and the DPP functional.
//!
//! Every integrator samples on the uniform time grid `t_j = j·dt`, clamps states to the
//! grid box and fails with [`Error::LeftBox`] if a step overshoots the box by more than
//! one cell, which only happens with a misconfigured solver or control bound.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::error::{Error, Result};
use crate::grid::ValueField;
use crate::objectives::ObjectiveSpec;

/// Ratio between consecutive gradient norms that is reported as a jump.
pub const GRADIENT_JUMP_RATIO: f64 = 10.0;

/// Gradient norms below this are ignored by the jump detector.
const JUMP_NORM_FLOOR: f64 = 1e-8;

/// Tail-cost residual at an update time of a sampled policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleResidual {
    pub t: f64,
    /// Shifted tail cost minus `ũ(y(t))`.
    pub residual: f64,
    pub u_tilde: f64,
}

/// Provenance recorded by the integrators.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub policy: String,
    pub dt: f64,
    /// Sample indices where `|Du|` changes by more than [`GRADIENT_JUMP_RATIO`].
    pub gradient_jumps: Vec<usize>,
    /// Feedback update times of a sampled policy.
    pub update_times: Vec<f64>,
    pub sample_residuals: Vec<SampleResidual>,
    /// Realized `η̂(t_j)` of a perturbed run.
    pub eta_hat: Vec<f64>,
    pub eps0_hat: Option<f64>,
    /// Accepted `(gain, bias)` amplitudes of a perturbed run.
    pub amplitudes: Option<(f64, f64)>,
}

/// Sampled path with the quantities the analysis needs at every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub u_vals: Vec<f64>,
    pub dists: Vec<f64>,
    pub speed2: Vec<f64>,
    pub h_vals: Vec<f64>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// `ũ(y(t_j)) = u(y(t_j)) - f_min/λ`.
    pub fn u_tilde(&self, obj: &ObjectiveSpec, lambda: f64) -> Vec<f64> {
        let base = obj.f_min / lambda;
        self.u_vals.iter().map(|u| u - base).collect()
    }

    /// Index of the sample at time `t`, within `1e-9` relative.
    pub fn sample_index(&self, t: f64) -> Result<usize> {
        let tol = 1e-9 * t.abs().max(1.0);
        let k = self.times.partition_point(|&s| s < t - tol);
        match self.times.get(k) {
            Some(&s) if (s - t).abs() <= tol => Ok(k),
            _ => Err(Error::NotASampleTime(t)),
        }
    }

    /// CSV with header `t,y1..yn,a1..an,u,dist,speed2,h`, 17 significant digits.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let n = self.dim();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("y{i}")));
        header.extend((1..=n).map(|i| format!("a{i}")));
        header.extend(["u", "dist", "speed2", "h"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for j in 0..self.len() {
            let mut row = vec![self.times[j]];
            row.extend(&self.states[j]);
            row.extend(&self.controls[j]);
            row.extend([self.u_vals[j], self.dists[j], self.speed2[j], self.h_vals[j]]);
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    /// Parses the format written by [`Trajectory::write_csv`]; metadata is left empty.
    pub fn read_csv(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty trajectory file".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.len() < 7 || cols[0] != "t" || (cols.len() - 5) % 2 != 0 {
            return Err(Error::Format(format!("bad trajectory header `{header}`")));
        }
        let n = (cols.len() - 5) / 2;
        let mut expected = vec!["t".to_string()];
        expected.extend((1..=n).map(|i| format!("y{i}")));
        expected.extend((1..=n).map(|i| format!("a{i}")));
        expected.extend(["u", "dist", "speed2", "h"].map(String::from));
        if cols != expected {
            return Err(Error::Format(format!("bad trajectory header `{header}`")));
        }
        let mut traj = Trajectory::empty();
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("row {}: {e}", k + 2)))?;
            if vals.len() != cols.len() {
                return Err(Error::Format(format!("row {}: expected {} fields", k + 2, cols.len())));
            }
            traj.times.push(vals[0]);
            traj.states.push(vals[1..=n].to_vec());
            traj.controls.push(vals[n + 1..=2 * n].to_vec());
            traj.u_vals.push(vals[2 * n + 1]);
            traj.dists.push(vals[2 * n + 2]);
            traj.speed2.push(vals[2 * n + 3]);
            traj.h_vals.push(vals[2 * n + 4]);
        }
        if traj.is_empty() {
            return Err(Error::Format("trajectory file has no samples".into()));
        }
        if traj.times[0] != 0.0 || traj.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Format("sample times must start at 0 and increase".into()));
        }
        traj.meta.dt = if traj.len() > 1 { traj.times[1] - traj.times[0] } else { 0.0 };
        Ok(traj)
    }

    fn empty() -> Self {
        Trajectory {
            times: Vec::new(),
            states: Vec::new(),
            controls: Vec::new(),
            u_vals: Vec::new(),
            dists: Vec::new(),
            speed2: Vec::new(),
            h_vals: Vec::new(),
            meta: TrajectoryMeta::default(),
        }
    }

    /// Fills `u_vals`, `dists`, `speed2` and `h_vals` from states and controls.
    fn finish(&mut self, vf: &ValueField, obj: &ObjectiveSpec) -> Result<()> {
        self.u_vals = self.states.iter().map(|y| vf.interpolate(y)).collect::<Result<_>>()?;
        self.dists = self.states.iter().map(|y| obj.distance(y)).collect();
        self.speed2 = self.controls.iter().map(|a| norm2(a)).collect();
        self.h_vals = dpp_h_series(self, obj, vf.lambda, vf);
        Ok(())
    }
}

/// Perturbed feedback `-Du + b(t)` with declared quasi-optimality `(η, ε∘)`.
///
/// The bias is `b(t) = -κ sin(ω t + φ₁) Du(y) + b₀ sin(ω' t + φ₂) e₁` with phases drawn from
/// `seed`. The gain `κ` defaults to `‖η‖_∞` and the drift `b₀` to `√(2λε∘)`; both are
/// halved until the realized residuals fit the declaration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiOptimalPolicy {
    /// `(t, η(t))` samples, piecewise constant to the right.
    pub eta_schedule: Vec<(f64, f64)>,
    pub eps0: f64,
    /// Growth-to-value constant `K` the policy is declared against.
    pub k_const: f64,
    pub seed: u64,
    pub gain: Option<f64>,
    pub drift: Option<f64>,
    pub frequency: f64,
}

impl QuasiOptimalPolicy {
    pub fn constant(eta: f64, eps0: f64, k_const: f64, seed: u64) -> Self {
        QuasiOptimalPolicy {
            eta_schedule: vec![(0.0, eta)],
            eps0,
            k_const,
            seed,
            gain: None,
            drift: None,
            frequency: 3.0,
        }
    }

    pub fn eta_sup(&self) -> f64 {
        self.eta_schedule.iter().map(|p| p.1).fold(0.0, f64::max)
    }

    pub fn eta_at(&self, t: f64) -> f64 {
        let k = self.eta_schedule.partition_point(|p| p.0 <= t);
        if k == 0 {
            self.eta_schedule.first().map_or(0.0, |p| p.1)
        } else {
            self.eta_schedule[k - 1].1
        }
    }

    /// Requires `0 ≤ η` and `‖η‖_∞ < 1 - λ/K` so the decay rate `δ` is positive.
    pub fn validate(&self, lambda: f64) -> Result<()> {
        if self.eta_schedule.is_empty() || self.eta_schedule.iter().any(|p| !(p.1 >= 0.0 && p.1.is_finite())) {
            return Err(Error::InvalidParameter("eta schedule must be non-empty and nonnegative".into()));
        }
        if self.eta_schedule.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidParameter("eta schedule times must increase".into()));
        }
        if !(self.eps0 >= 0.0 && self.eps0.is_finite()) {
            return Err(Error::InvalidParameter(format!("eps0 must be nonnegative, got {}", self.eps0)));
        }
        if !(self.k_const > lambda) {
            return Err(Error::InvalidParameter(format!("K = {} must exceed lambda = {lambda}", self.k_const)));
        }
        let limit = 1.0 - lambda / self.k_const;
        if self.eta_sup() >= limit {
            return Err(Error::InvalidParameter(format!(
                "sup eta = {} must be below 1 - lambda/K = {limit}",
                self.eta_sup()
            )));
        }
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err(Error::InvalidParameter("perturbation frequency must be positive".into()));
        }
        Ok(())
    }

    /// `δ = (1 - ‖η‖_∞)K - λ`.
    pub fn delta(&self, lambda: f64) -> f64 {
        (1.0 - self.eta_sup()) * self.k_const - lambda
    }
}

/// Zero-order-hold feedback re-sampled at times with gaps in `[delta_min, delta_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledPolicy {
    pub delta_min: f64,
    pub delta_max: f64,
    pub sigma: f64,
    pub k_const: f64,
    pub seed: u64,
}

impl SampledPolicy {
    /// `c = (σ/2) e^{-K Δ_max}`.
    pub fn c(&self) -> f64 {
        0.5 * self.sigma * (-self.k_const * self.delta_max).exp()
    }

    /// `θ = K - λ - Kc - ln(1+c)/Δ_min`.
    pub fn theta(&self, lambda: f64) -> f64 {
        let c = self.c();
        self.k_const - lambda - self.k_const * c - c.ln_1p() / self.delta_min
    }

    pub fn validate(&self, lambda: f64) -> Result<()> {
        if !(self.delta_min > 0.0 && self.delta_min <= self.delta_max && self.delta_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < delta_min <= delta_max, got {} and {}",
                self.delta_min, self.delta_max
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {}", self.sigma)));
        }
        let theta = self.theta(lambda);
        if !(theta > 0.0) {
            return Err(Error::InvalidParameter(format!("sampled decay rate theta = {theta} is not positive")));
        }
        Ok(())
    }

    /// Update times on the `dt` grid, with gaps drawn uniformly from the admissible multiples of `dt`.
    pub fn update_times(&self, horizon: f64, dt: f64) -> Result<Vec<usize>> {
        let lo = (self.delta_min / dt - 1e-9).ceil().max(1.0) as usize;
        let hi = (self.delta_max / dt + 1e-9).floor() as usize;
        if lo > hi {
            return Err(Error::InvalidParameter(format!(
                "no multiple of dt = {dt} lies in [{}, {}]",
                self.delta_min, self.delta_max
            )));
        }
        let steps = steps_for(horizon, dt)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = vec![0];
        let mut k = 0;
        while k < steps {
            k += if lo == hi { lo } else { rng.gen_range(lo..=hi) };
            if k < steps {
                out.push(k);
            }
        }
        Ok(out)
    }
}

/// Optimal feedback `ẏ = -Du(y)` with the classical fourth-order Runge-Kutta scheme.
pub fn integrate_gradient_flow(
    vf: &ValueField,
    obj: &ObjectiveSpec,
    x0: &[f64],
    horizon: f64,
    dt: f64,
) -> Result<Trajectory> {
    let mut traj = integrate_feedback(vf, obj, x0, horizon, dt, |_, y| neg_gradient(vf, y))?;
    traj.meta.policy = "optimal".into();
    Ok(traj)
}

/// RK4 for `ẏ = α(t, y)` with an arbitrary state feedback, recording `α(t_j, y_j)` as the control.
pub fn integrate_feedback(
    vf: &ValueField,
    obj: &ObjectiveSpec,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    control: impl Fn(f64, &[f64]) -> Result<Vec<f64>>,
) -> Result<Trajectory> {
    check_start(vf, obj, x0, dt)?;
    let steps = steps_for(horizon, dt)?;
    let mut traj = Trajectory::empty();
    traj.meta.dt = dt;
    let mut y = x0.to_vec();
    let field = |t: f64, y: &[f64]| control(t, &vf.clamp_to_box(y));
    for j in 0..=steps {
        let t = j as f64 * dt;
        let k1 = field(t, &y)?;
        traj.times.push(t);
        traj.states.push(y.clone());
        traj.controls.push(k1.clone());
        if j == steps {
            break;
        }
        let k2 = field(t + 0.5 * dt, &axpy(&y, 0.5 * dt, &k1))?;
        let k3 = field(t + 0.5 * dt, &axpy(&y, 0.5 * dt, &k2))?;
        let k4 = field(t + dt, &axpy(&y, dt, &k3))?;
        let next: Vec<f64> =
            (0..y.len()).map(|d| y[d] + dt / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d])).collect();
        y = settle(vf, t + dt, next)?;
    }
    traj.meta.gradient_jumps = gradient_jumps(vf, &traj.states)?;
    traj.finish(vf, obj)?;
    Ok(traj)
}

/// Perturbed feedback calibrated so the realized `(η̂, ε̂∘)` stay within the declared values.
pub fn integrate_perturbed(
    vf: &ValueField,
    obj: &ObjectiveSpec,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    policy: &QuasiOptimalPolicy,
) -> Result<Trajectory> {
    const ATTEMPTS: usize = 12;
    let lambda = vf.lambda;
    policy.validate(lambda)?;
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let phase1 = rng.gen_range(0.0..std::f64::consts::TAU);
    let phase2 = rng.gen_range(0.0..std::f64::consts::TAU);
    let omega = policy.frequency;
    let mut gain = policy.gain.unwrap_or_else(|| policy.eta_sup());
    let mut drift = policy.drift.unwrap_or_else(|| (2.0 * lambda * policy.eps0).sqrt());
    let mut worst = (0.0, 0.0);
    for _ in 0..ATTEMPTS {
        let mut traj = integrate_feedback(vf, obj, x0, horizon, dt, |t, y| {
            let g = vf.gradient(y)?;
            let scale = 1.0 + gain * (omega * t + phase1).sin();
            let mut a: Vec<f64> = g.iter().map(|v| -scale * v).collect();
            a[0] += drift * (std::f64::consts::SQRT_2 * omega * t + phase2).sin();
            Ok(a)
        })?;
        let check = analysis::verify_assumption_c(&traj, obj, lambda, vf)?;
        let fits = check.eta_hat.iter().enumerate().all(|(j, &e)| e <= policy.eta_at(traj.times[j]))
            && check.eps0_hat <= policy.eps0;
        worst = (check.eta_hat.iter().cloned().fold(0.0, f64::max), check.eps0_hat);
        // an unperturbed run is optimal by construction; its residuals are pure numerics
        if fits || (gain == 0.0 && drift == 0.0) {
            traj.meta.policy = "quasi".into();
            traj.meta.eta_hat = check.eta_hat;
            traj.meta.eps0_hat = Some(check.eps0_hat);
            traj.meta.amplitudes = Some((gain, drift));
            return Ok(traj);
        }
        gain *= 0.5;
        drift *= 0.5;
    }
    Err(Error::CalibrationFailed { eta: policy.eta_sup(), eps0: policy.eps0, eta_hat: worst.0, eps0_hat: worst.1 })
}

/// Zero-order hold of `-Du(y(τ_i))` between update times; the held control is integrated exactly.
pub fn integrate_receding_horizon(
    vf: &ValueField,
    obj: &ObjectiveSpec,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    policy: &SampledPolicy,
) -> Result<Trajectory> {
    policy.validate(vf.lambda)?;
    check_start(vf, obj, x0, dt)?;
    let steps = steps_for(horizon, dt)?;
    let updates = policy.update_times(horizon, dt)?;
    let mut traj = Trajectory::empty();
    traj.meta.dt = dt;
    traj.meta.policy = "sampled".into();
    let mut y = x0.to_vec();
    let mut held = Vec::new();
    let mut next_update = 0;
    for j in 0..=steps {
        let t = j as f64 * dt;
        if next_update < updates.len() && updates[next_update] == j {
            held = neg_gradient(vf, &y)?;
            next_update += 1;
        }
        traj.times.push(t);
        traj.states.push(y.clone());
        traj.controls.push(held.clone());
        if j < steps {
            y = settle(vf, t + dt, axpy(&y, dt, &held))?;
        }
    }
    traj.meta.update_times = updates.iter().map(|&k| k as f64 * dt).collect();
    traj.meta.gradient_jumps = gradient_jumps(vf, &traj.states)?;
    traj.finish(vf, obj)?;
    let tails = tail_costs(&traj, obj, vf.lambda, vf);
    let base = obj.f_min / vf.lambda;
    traj.meta.sample_residuals = updates
        .iter()
        .map(|&k| {
            let u_tilde = traj.u_vals[k] - base;
            SampleResidual { t: traj.times[k], residual: tails[k] - base - u_tilde, u_tilde }
        })
        .collect();
    Ok(traj)
}

/// Discounted cost of the recorded path from `t_start`, closed by `e^{-λ(T - t_start)} u(y(T))`.
///
/// The running cost `½|α|² + f(y)` is interpolated linearly between samples and the discount
/// weight is integrated exactly, so constant integrands are integrated without error.
pub fn cost_functional(
    traj: &Trajectory,
    obj: &ObjectiveSpec,
    lambda: f64,
    vf: &ValueField,
    t_start: f64,
) -> Result<f64> {
    let j0 = traj.sample_index(t_start)?;
    let g = running_cost(traj, obj);
    let t0 = traj.times[j0];
    let mut total = 0.0;
    for j in j0..traj.len() - 1 {
        let (w0, w1) = step_weights(lambda, traj.times[j + 1] - traj.times[j]);
        total += (-lambda * (traj.times[j] - t0)).exp() * (w0 * g[j] + w1 * g[j + 1]);
    }
    let last = traj.len() - 1;
    let tail = vf.interpolate(&traj.states[last])?;
    Ok(total + (-lambda * (traj.times[last] - t0)).exp() * tail)
}

/// [`cost_functional`] minus `f_min/λ`.
pub fn shifted_cost_functional(
    traj: &Trajectory,
    obj: &ObjectiveSpec,
    lambda: f64,
    vf: &ValueField,
    t_start: f64,
) -> Result<f64> {
    Ok(cost_functional(traj, obj, lambda, vf, t_start)? - obj.f_min / lambda)
}

/// Tail costs from every sample at once, by backward recursion (same quadrature as [`cost_functional`]).
pub fn tail_costs(traj: &Trajectory, obj: &ObjectiveSpec, lambda: f64, vf: &ValueField) -> Vec<f64> {
    let n = traj.len();
    let g = running_cost(traj, obj);
    let mut out = vec![0.0; n];
    out[n - 1] = vf.grid.interp_unchecked(&vf.values, &traj.states[n - 1]);
    for j in (0..n - 1).rev() {
        let dt = traj.times[j + 1] - traj.times[j];
        let (w0, w1) = step_weights(lambda, dt);
        out[j] = w0 * g[j] + w1 * g[j + 1] + (-lambda * dt).exp() * out[j + 1];
    }
    out
}

/// `h(t_j) = ∫₀^{t_j} (½|α|² + f(y)) e^{-λs} ds + u(y(t_j)) e^{-λ t_j}`.
pub fn dpp_h_series(traj: &Trajectory, obj: &ObjectiveSpec, lambda: f64, vf: &ValueField) -> Vec<f64> {
    let g = running_cost(traj, obj);
    let mut running = 0.0;
    let mut out = Vec::with_capacity(traj.len());
    for j in 0..traj.len() {
        if j > 0 {
            let (w0, w1) = step_weights(lambda, traj.times[j] - traj.times[j - 1]);
            running += (-lambda * traj.times[j - 1]).exp() * (w0 * g[j - 1] + w1 * g[j]);
        }
        let u = vf.grid.interp_unchecked(&vf.values, &traj.states[j]);
        out.push(running + u * (-lambda * traj.times[j]).exp());
    }
    out
}

/// `½|α(t_j)|² + f(y(t_j))`.
pub fn running_cost(traj: &Trajectory, obj: &ObjectiveSpec) -> Vec<f64> {
    (0..traj.len()).map(|j| 0.5 * norm2(&traj.controls[j]) + obj.eval(&traj.states[j])).collect()
}

/// Exact weights of `∫₀^Δ ((1-s/Δ) g₀ + (s/Δ) g₁) e^{-λs} ds`.
pub(crate) fn step_weights(lambda: f64, dt: f64) -> (f64, f64) {
    let x = lambda * dt;
    if x < 1e-6 {
        // series to second order in λΔ
        return (dt * (0.5 - x / 6.0 + x * x / 24.0), dt * (0.5 - x / 3.0 + x * x / 8.0));
    }
    let one_minus = -(-x).exp_m1();
    let avg = one_minus / x;
    ((1.0 - avg) / lambda, (avg - (-x).exp()) / lambda)
}

fn steps_for(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
    }
    let steps = (horizon / dt).round();
    if (steps * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::InvalidParameter(format!("horizon {horizon} is not a multiple of dt = {dt}")));
    }
    if steps > 1e8 {
        return Err(Error::InvalidParameter(format!("{steps} steps exceed the 1e8 sample cap")));
    }
    Ok(steps as usize)
}

fn check_start(vf: &ValueField, obj: &ObjectiveSpec, x0: &[f64], dt: f64) -> Result<()> {
    if x0.len() != vf.grid.dim() || !vf.grid.contains(x0) {
        return Err(Error::OutsideBox { point: x0.to_vec() });
    }
    let speed = (6.0 * obj.sup_norm()).sqrt();
    let min_h = vf.grid.spacing().iter().cloned().fold(f64::INFINITY, f64::min);
    if !(dt * speed < 4.0 * min_h) {
        return Err(Error::InvalidParameter(format!(
            "dt = {dt} lets the state skip cells (dt·sqrt(6|f|) = {} >= 4·h = {})",
            dt * speed,
            4.0 * min_h
        )));
    }
    Ok(())
}

/// Clamps a new state to the box, failing if it overshot by more than one cell.
fn settle(vf: &ValueField, t: f64, y: Vec<f64>) -> Result<Vec<f64>> {
    let g = &vf.grid;
    for d in 0..y.len() {
        let h = g.spacing()[d];
        if !y[d].is_finite() || y[d] < g.lower()[d] - h || y[d] > g.upper()[d] + h {
            return Err(Error::LeftBox { t, point: y });
        }
    }
    Ok(g.clamp_to_box(&y))
}

fn neg_gradient(vf: &ValueField, y: &[f64]) -> Result<Vec<f64>> {
    Ok(vf.gradient(y)?.into_iter().map(|v| -v).collect())
}

fn gradient_jumps(vf: &ValueField, states: &[Vec<f64>]) -> Result<Vec<usize>> {
    let norms: Vec<f64> = states.iter().map(|y| vf.gradient(y).map(|g| norm2(&g).sqrt())).collect::<Result<_>>()?;
    Ok((1..norms.len())
        .filter(|&j| {
            let (a, b) = (norms[j - 1], norms[j]);
            a.max(b) > JUMP_NORM_FLOOR && a.max(b) > GRADIENT_JUMP_RATIO * a.min(b)
        })
        .collect())
}

fn axpy(y: &[f64], s: f64, k: &[f64]) -> Vec<f64> {
    y.iter().zip(k).map(|(a, b)| a + s * b).collect()
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}
