//! Semi-Lagrangian value iteration for `λu + ½|Du|² = f` and the closed-form Riccati oracle.
//!
//! One sweep applies the discrete dynamic programming update
//!
//! ```text
//! u_{k+1}(x_i) = min_a { Δτ (½|a|² + f(x_i)) + e^{-λΔτ} u_k(clamp(x_i + Δτ a)) }
//! ```
//!
//! over a sampled control ball `|a| ≤ M`, reading only the previous iterate. The
//! update is a contraction with factor `e^{-λΔτ}`, and iteration stops once the
//! sup-norm change drops below `tol · (1 - e^{-λΔτ})`.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MinimizerSet;
use crate::grid::{FieldMeta, RectGrid, ValueField};
use crate::objectives::ObjectiveSpec;

/// Environment variable capping solver threads.
pub const THREADS_ENV: &str = "HJBOPT_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    /// Pseudo-timestep Δτ.
    pub dtau: f64,
    /// Sup-norm tolerance on the fixed-point gap.
    pub tol: f64,
    pub max_iters: usize,
    /// Number of nonzero speeds on the ladder `{M/k, 2M/k, …, M}`.
    pub control_magnitudes: usize,
    /// Directions per speed (ignored in 1-D, where they are ±1).
    pub control_directions: usize,
    /// Control bound `M`.
    pub m_bound: f64,
    /// Also try the feedback `-Du_k(x_i)` of the current iterate at every node.
    #[serde(default = "default_true")]
    pub feedback_candidate: bool,
    /// Search the whole control set every this many sweeps; in between, only the
    /// neighbours of each node's last best control. Convergence is only declared on a
    /// full sweep.
    #[serde(default = "default_one")]
    pub full_search_every: usize,
}

fn default_one() -> usize {
    1
}

fn default_true() -> bool {
    true
}

impl SolverOptions {
    /// Defaults for `obj` on `grid`: `M = 1.1 √(6‖f‖_∞)` and the largest admissible `Δτ` up to 0.01.
    pub fn for_problem(obj: &ObjectiveSpec, grid: &RectGrid) -> Self {
        let m_bound = 1.1 * (6.0 * obj.sup_norm()).sqrt().max(1e-3);
        let min_width = min_width(grid);
        let dtau = 0.01f64.min(min_width / (4.0 * m_bound));
        SolverOptions {
            dtau,
            tol: 1e-6,
            max_iters: 200_000,
            control_magnitudes: 16,
            control_directions: if grid.dim() == 3 { 128 } else { 32 },
            m_bound,
            feedback_candidate: true,
            full_search_every: if grid.dim() == 1 { 1 } else { 32 },
        }
    }

    pub fn validate(&self, obj: &ObjectiveSpec, grid: &RectGrid) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.dtau > 0.0 && self.dtau.is_finite()) {
            return bad(format!("dtau must be positive, got {}", self.dtau));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if self.max_iters == 0 || self.control_magnitudes == 0 || self.full_search_every == 0 {
            return bad("max_iters, control_magnitudes and full_search_every must be positive".into());
        }
        if grid.dim() > 1 && self.control_directions < 2 {
            return bad("need at least two control directions".into());
        }
        let gradient_bound = (6.0 * obj.sup_norm()).sqrt();
        if !(self.m_bound > gradient_bound) {
            return bad(format!(
                "control bound M = {} must exceed sqrt(6 |f|_inf) = {gradient_bound}",
                self.m_bound
            ));
        }
        if self.dtau * self.m_bound > min_width(grid) / 4.0 {
            return bad(format!(
                "dtau * M = {} exceeds a quarter of the smallest box side ({})",
                self.dtau * self.m_bound,
                min_width(grid) / 4.0
            ));
        }
        Ok(())
    }

    /// Sampled control set: zero plus the speed ladder times the direction set.
    pub fn controls(&self, dim: usize) -> Vec<Vec<f64>> {
        let dirs = directions(dim, self.control_directions);
        let mut out = vec![vec![0.0; dim]];
        for k in 1..=self.control_magnitudes {
            let s = self.m_bound * k as f64 / self.control_magnitudes as f64;
            out.extend(dirs.iter().map(|d| d.iter().map(|v| s * v).collect()));
        }
        out
    }
}

fn min_width(grid: &RectGrid) -> f64 {
    grid.lower()
        .iter()
        .zip(grid.upper())
        .map(|(l, u)| u - l)
        .fold(f64::INFINITY, f64::min)
}

/// Unit directions: ±1 in 1-D, uniform angles in 2-D, a Fibonacci sphere in 3-D.
pub fn directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![-1.0], vec![1.0]],
        2 => (0..count)
            .map(|j| {
                let th = 2.0 * PI * j as f64 / count as f64;
                vec![th.cos(), th.sin()]
            })
            .collect(),
        _ => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|j| {
                    let z = 1.0 - 2.0 * (j as f64 + 0.5) / count as f64;
                    let rad = (1.0 - z * z).sqrt();
                    let th = golden * j as f64;
                    vec![rad * th.cos(), rad * th.sin(), z]
                })
                .collect()
        }
    }
}

/// Candidate lists for the local search: for each sampled control, itself, zero, the
/// adjacent speeds and the nearby directions at each of those speeds.
fn control_neighbours(dim: usize, opts: &SolverOptions) -> Vec<Vec<usize>> {
    let dirs = directions(dim, opts.control_directions);
    let nd = dirs.len();
    let mags = opts.control_magnitudes;
    let near: Vec<Vec<usize>> = (0..nd)
        .map(|j| match dim {
            1 => (0..nd).collect(),
            2 => vec![(j + nd - 1) % nd, j, (j + 1) % nd],
            _ => {
                let mut order: Vec<usize> = (0..nd).collect();
                let dot = |k: usize| -> f64 { dirs[j].iter().zip(&dirs[k]).map(|(a, b)| a * b).sum() };
                order.sort_by(|&a, &b| dot(b).total_cmp(&dot(a)));
                order.truncate(7);
                order
            }
        })
        .collect();
    let index = |k: usize, j: usize| 1 + (k - 1) * nd + j;
    let mut out = vec![(0..=nd).collect::<Vec<usize>>()];
    for k in 1..=mags {
        for j in 0..nd {
            let mut list = vec![0];
            for kk in k.saturating_sub(1).max(1)..=(k + 1).min(mags) {
                list.extend(near[j].iter().map(|&jj| index(kk, jj)));
            }
            out.push(list);
        }
    }
    out
}

/// One row of the convergence log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: usize,
    pub sup_change: f64,
    pub seconds: f64,
    /// Whether the sweep searched the whole control set.
    pub full_search: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveLog {
    pub rows: Vec<LogRow>,
}

impl SolveLog {
    /// CSV with header `iter,sup_change,seconds`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "iter,sup_change,seconds")?;
        for r in &self.rows {
            writeln!(w, "{},{:e},{:.6}", r.iter, r.sup_change, r.seconds)?;
        }
        Ok(())
    }
}

/// Thread pool honoring [`THREADS_ENV`].
pub fn thread_pool() -> rayon::ThreadPool {
    let n = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .expect("thread pool")
}

/// Solves the stationary HJB equation by value iteration from `u_0 = f/λ`.
pub fn solve(obj: &ObjectiveSpec, grid: &RectGrid, lambda: f64, opts: &SolverOptions) -> Result<ValueField> {
    solve_with_log(obj, grid, lambda, opts).map(|(vf, _)| vf)
}

pub fn solve_with_log(
    obj: &ObjectiveSpec,
    grid: &RectGrid,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<(ValueField, SolveLog)> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("discount must be positive, got {lambda}")));
    }
    if obj.dim != grid.dim() {
        return Err(Error::InvalidParameter(format!(
            "objective dimension {} does not match grid dimension {}",
            obj.dim,
            grid.dim()
        )));
    }
    opts.validate(obj, grid)?;

    let start = Instant::now();
    let dim = grid.dim();
    let n = grid.len();
    let points = grid.points();
    let f: Vec<f64> = points.iter().map(|x| obj.eval(x)).collect();
    let controls = opts.controls(dim);
    let discount = (-lambda * opts.dtau).exp();
    let threshold = opts.tol * (1.0 - discount);
    let dtau = opts.dtau;
    // exact discounted weight of a stage cost frozen over [0, Δτ]
    let weight = (1.0 - discount) / lambda;
    let m2 = opts.m_bound * opts.m_bound;

    let mut u: Vec<f64> = f.iter().map(|v| v / lambda).collect();
    let mut next = vec![0.0; n];
    let mut log = SolveLog::default();
    let pool = thread_pool();

    let neighbours = control_neighbours(dim, opts);
    // index of each node's best sampled control from its latest sweep
    let mut cached = vec![0u32; n];

    let node_update = |i: usize, u: &[f64], hint: Option<usize>| -> (f64, u32) {
        let x = &points[i];
        let mut foot = [0.0f64; 3];
        let mut eval = |a: &[f64]| -> f64 {
            let mut a2 = 0.0;
            for d in 0..dim {
                foot[d] = (x[d] + dtau * a[d]).clamp(grid.lower()[d], grid.upper()[d]);
                a2 += a[d] * a[d];
            }
            weight * (0.5 * a2 + f[i]) + discount * grid.interp_unchecked(u, &foot[..dim])
        };
        let (mut best, mut arg) = (f64::INFINITY, 0usize);
        let mut consider = |k: usize, eval: &mut dyn FnMut(&[f64]) -> f64| {
            let v = eval(&controls[k]);
            if v < best {
                best = v;
                arg = k;
            }
        };
        match hint {
            None => (0..controls.len()).for_each(|k| consider(k, &mut eval)),
            Some(h) => neighbours[h].iter().for_each(|&k| consider(k, &mut eval)),
        }
        if opts.feedback_candidate {
            let mut a = [0.0f64; 3];
            let mut a2 = 0.0;
            let mut probe = [0.0f64; 3];
            probe[..dim].copy_from_slice(x);
            for d in 0..dim {
                let h = grid.spacing()[d];
                let up = (x[d] + h).min(grid.upper()[d]);
                let down = (x[d] - h).max(grid.lower()[d]);
                probe[d] = up;
                let fu = grid.interp_unchecked(u, &probe[..dim]);
                probe[d] = down;
                let fd = grid.interp_unchecked(u, &probe[..dim]);
                probe[d] = x[d];
                a[d] = -(fu - fd) / (up - down);
                a2 += a[d] * a[d];
            }
            if a2 > m2 {
                let s = (m2 / a2).sqrt();
                a.iter_mut().for_each(|v| *v *= s);
            }
            best = best.min(eval(&a[..dim]));
        }
        (best, arg as u32)
    };

    let mut iter = 0;
    let mut force_full = true;
    loop {
        iter += 1;
        let full = force_full || (iter - 1) % opts.full_search_every == 0;
        pool.install(|| {
            next.par_iter_mut()
                .zip(cached.par_iter_mut())
                .with_min_len(256)
                .enumerate()
                .for_each(|(i, (out, slot))| {
                    let hint = if full { None } else { Some(*slot as usize) };
                    let (v, k) = node_update(i, &u, hint);
                    *out = v;
                    *slot = k;
                });
        });
        let change = u
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if !change.is_finite() {
            return Err(Error::NonFinite("value iteration"));
        }
        std::mem::swap(&mut u, &mut next);
        log.rows.push(LogRow { iter, sup_change: change, seconds: start.elapsed().as_secs_f64(), full_search: full });
        if change <= threshold {
            if full {
                break;
            }
            force_full = true;
        } else {
            force_full = false;
        }
        if iter >= opts.max_iters {
            return Err(Error::NonConvergence { iters: iter, last_change: change });
        }
    }

    let mut vf = ValueField::new(grid.clone(), u, lambda)?;
    vf.meta = FieldMeta {
        objective: obj.name.clone(),
        achieved_change: log.rows.last().map_or(0.0, |r| r.sup_change),
        iterations: iter,
    };
    Ok((vf, log))
}

/// Node-wise HJB residual `|λu + ½|Du|² - f|`, summarized over nodes at least
/// [`RESIDUAL_MARGIN`] cells from the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    /// One entry per node; `NaN` for excluded boundary nodes.
    pub field: Vec<f64>,
    pub max: f64,
    pub mean: f64,
}

pub const RESIDUAL_MARGIN: usize = 3;

pub fn residual(vf: &ValueField, obj: &ObjectiveSpec) -> Residual {
    let grid = &vf.grid;
    let mut field = vec![f64::NAN; grid.len()];
    let (mut max, mut sum, mut count) = (0.0f64, 0.0, 0usize);
    for (k, slot) in field.iter_mut().enumerate() {
        if !grid.is_interior(k, RESIDUAL_MARGIN) {
            continue;
        }
        let x = grid.node(k);
        let g = vf.gradient(&x).expect("node inside box");
        let g2: f64 = g.iter().map(|v| v * v).sum();
        let r = (vf.lambda * vf.values[k] + 0.5 * g2 - obj.eval(&x)).abs();
        *slot = r;
        max = max.max(r);
        sum += r;
        count += 1;
    }
    Residual { field, max, mean: if count > 0 { sum / count as f64 } else { 0.0 } }
}

/// `C = (-λ + √(λ² + 4c))/4`, the value-function coefficient for `f = (c/2) dist²`.
pub fn riccati_constant(lambda: f64, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!("c must be positive, got {c}")));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be non-negative, got {lambda}")));
    }
    // c/(λ + √(λ² + 4c)) avoids cancellation for large λ
    Ok(c / (lambda + (lambda * lambda + 4.0 * c).sqrt()))
}

/// `C · dist(x, set)²`.
pub fn riccati_reference(lambda: f64, c: f64, set: &MinimizerSet, x: &[f64]) -> Result<f64> {
    let d = set.distance(x).dist;
    Ok(riccati_constant(lambda, c)? * d * d)
}
