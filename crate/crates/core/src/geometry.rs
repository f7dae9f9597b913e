//! Minimizer sets with exact distance and projection oracles.
//!
//! Every variant answers the same three questions for a query point `x`:
//! the Euclidean distance to the set, a nearest point, and the subgradient
//! `x - proj` of half the squared distance. When several nearest points
//! exist the lexicographically smallest one is returned, so every
//! downstream computation is deterministic.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned computational box `[lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidParameter(format!(
                "box bounds must be non-empty and of equal length (got {} and {})",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidParameter(format!(
                    "axis {i}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(DomainBox { lower, upper })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect()
    }

    /// Half of the smallest side length.
    pub fn half_width(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (hi - lo))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Nearest point of a set together with the distance to it.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub dist: f64,
    pub point: Vec<f64>,
}

/// The set of global minimizers of an objective, restricted to the domain box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MinimizerSet {
    /// Finitely many isolated points.
    FinitePoints(Vec<Vec<f64>>),
    /// The diagonal line `{x1 = x2}` in the plane, clipped to the box.
    AffineDiagonal { domain: DomainBox },
    /// `period * Z^n` restricted to the box.
    AxisLattice { period: f64, domain: DomainBox },
    /// The hyperbola `{x1 * x2 = 1}` (both branches), clipped to the box.
    ProductHyperbola { domain: DomainBox },
}

// Search range for the hyperbola parameter |t|.
const HYPERBOLA_T_MIN: f64 = 1e-3;
const HYPERBOLA_T_MAX: f64 = 1e3;

impl MinimizerSet {
    pub fn finite_points(points: Vec<Vec<f64>>, domain: &DomainBox) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("minimizer set must be non-empty".into()));
        }
        for p in &points {
            if !domain.contains(p) {
                return Err(Error::InvalidParameter(format!(
                    "minimizer {p:?} lies outside the domain box"
                )));
            }
        }
        Ok(MinimizerSet::FinitePoints(points))
    }

    pub fn affine_diagonal(domain: &DomainBox) -> Result<Self> {
        if domain.dim() != 2 {
            return Err(Error::InvalidParameter("the diagonal set lives in the plane".into()));
        }
        let set = MinimizerSet::AffineDiagonal { domain: domain.clone() };
        if set.diagonal_range().is_none() {
            return Err(Error::InvalidParameter("diagonal does not meet the box".into()));
        }
        Ok(set)
    }

    pub fn axis_lattice(period: f64, domain: &DomainBox) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::InvalidParameter(format!("lattice period must be positive, got {period}")));
        }
        for (lo, hi) in domain.lower.iter().zip(&domain.upper) {
            if lattice_range(period, *lo, *hi).is_none() {
                return Err(Error::InvalidParameter(format!(
                    "no lattice point of period {period} in [{lo}, {hi}]"
                )));
            }
        }
        Ok(MinimizerSet::AxisLattice { period, domain: domain.clone() })
    }

    pub fn product_hyperbola(domain: &DomainBox) -> Result<Self> {
        if domain.dim() != 2 {
            return Err(Error::InvalidParameter("the hyperbola lives in the plane".into()));
        }
        let set = MinimizerSet::ProductHyperbola { domain: domain.clone() };
        if hyperbola_branches(domain).is_empty() {
            return Err(Error::InvalidParameter("hyperbola does not meet the box".into()));
        }
        Ok(set)
    }

    /// Ambient dimension.
    pub fn dim(&self) -> usize {
        match self {
            MinimizerSet::FinitePoints(pts) => pts[0].len(),
            MinimizerSet::AffineDiagonal { .. } | MinimizerSet::ProductHyperbola { .. } => 2,
            MinimizerSet::AxisLattice { domain, .. } => domain.dim(),
        }
    }

    /// Distance from `x` to the set and the (lexicographically smallest) nearest point.
    pub fn distance(&self, x: &[f64]) -> Projection {
        match self {
            MinimizerSet::FinitePoints(points) => {
                let mut best: Option<(f64, &Vec<f64>)> = None;
                for p in points {
                    let d2 = sq_norm_diff(x, p);
                    best = match best {
                        None => Some((d2, p)),
                        Some((b2, bp)) => match compare_dist(d2, b2) {
                            Ordering::Less => Some((d2, p)),
                            Ordering::Equal if lex_cmp(p, bp) == Ordering::Less => Some((d2, p)),
                            _ => Some((b2, bp)),
                        },
                    };
                }
                let (d2, p) = best.expect("non-empty set");
                Projection { dist: d2.sqrt(), point: p.clone() }
            }
            MinimizerSet::AffineDiagonal { .. } => {
                let (lo, hi) = self.diagonal_range().expect("validated at construction");
                let s = (0.5 * (x[0] + x[1])).clamp(lo, hi);
                let point = vec![s, s];
                Projection { dist: sq_norm_diff(x, &point).sqrt(), point }
            }
            MinimizerSet::AxisLattice { period, domain } => {
                let point: Vec<f64> = x
                    .iter()
                    .zip(domain.lower.iter().zip(&domain.upper))
                    .map(|(v, (lo, hi))| nearest_lattice(*v, *period, *lo, *hi))
                    .collect();
                Projection { dist: sq_norm_diff(x, &point).sqrt(), point }
            }
            MinimizerSet::ProductHyperbola { domain } => {
                let mut best: Option<(f64, Vec<f64>)> = None;
                for (a, b) in hyperbola_branches(domain) {
                    let t = minimize_hyperbola_branch(x, a, b);
                    let p = vec![t, 1.0 / t];
                    let d2 = sq_norm_diff(x, &p);
                    best = match best {
                        None => Some((d2, p)),
                        Some((b2, bp)) => match compare_dist(d2, b2) {
                            Ordering::Less => Some((d2, p)),
                            Ordering::Equal if lex_cmp(&p, &bp) == Ordering::Less => Some((d2, p)),
                            _ => Some((b2, bp)),
                        },
                    };
                }
                let (d2, point) = best.expect("validated at construction");
                Projection { dist: d2.sqrt(), point }
            }
        }
    }

    /// Subgradient `x - proj` of `½ dist(x)²`.
    pub fn sq_dist_subgradient(&self, x: &[f64]) -> Vec<f64> {
        let proj = self.distance(x);
        x.iter().zip(&proj.point).map(|(a, b)| a - b).collect()
    }

    /// A finite sample of points of the set, used to audit objective values on it.
    pub fn representatives(&self) -> Vec<Vec<f64>> {
        match self {
            MinimizerSet::FinitePoints(points) => points.clone(),
            MinimizerSet::AffineDiagonal { .. } => {
                let (lo, hi) = self.diagonal_range().expect("validated");
                (0..=8)
                    .map(|k| {
                        let s = lo + (hi - lo) * k as f64 / 8.0;
                        vec![s, s]
                    })
                    .collect()
            }
            MinimizerSet::AxisLattice { period, domain } => {
                let mut out: Vec<Vec<f64>> = vec![vec![]];
                for (lo, hi) in domain.lower.iter().zip(&domain.upper) {
                    let (k0, k1) = lattice_range(*period, *lo, *hi).expect("validated");
                    let mut next = Vec::new();
                    for prefix in &out {
                        for k in k0..=k1 {
                            let mut p = prefix.clone();
                            p.push(k as f64 * period);
                            next.push(p);
                        }
                    }
                    out = next;
                }
                out
            }
            MinimizerSet::ProductHyperbola { domain } => hyperbola_branches(domain)
                .into_iter()
                .flat_map(|(a, b)| {
                    (0..=6).map(move |k| {
                        let t = a + (b - a) * k as f64 / 6.0;
                        vec![t, 1.0 / t]
                    })
                })
                .collect(),
        }
    }

    fn diagonal_range(&self) -> Option<(f64, f64)> {
        match self {
            MinimizerSet::AffineDiagonal { domain } => {
                let lo = domain.lower[0].max(domain.lower[1]);
                let hi = domain.upper[0].min(domain.upper[1]);
                (lo <= hi).then_some((lo, hi))
            }
            _ => None,
        }
    }
}

fn sq_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

// Squared distances that agree to a few ulps are treated as ties.
fn compare_dist(a: f64, b: f64) -> Ordering {
    if (a - b).abs() <= 1e-14 * a.max(b).max(1e-300) {
        Ordering::Equal
    } else {
        a.partial_cmp(&b).unwrap_or(Ordering::Equal)
    }
}

pub(crate) fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

fn lattice_range(period: f64, lo: f64, hi: f64) -> Option<(i64, i64)> {
    let eps = 1e-12;
    let k0 = (lo / period - eps).ceil() as i64;
    let k1 = (hi / period + eps).floor() as i64;
    (k0 <= k1).then_some((k0, k1))
}

fn nearest_lattice(v: f64, period: f64, lo: f64, hi: f64) -> f64 {
    let (k0, k1) = lattice_range(period, lo, hi).expect("validated");
    let below = ((v / period).floor() as i64).clamp(k0, k1);
    let above = (below + 1).clamp(k0, k1);
    let pb = below as f64 * period;
    let pa = above as f64 * period;
    // ties go to the smaller lattice point
    if (v - pa).abs() < (v - pb).abs() {
        pa
    } else {
        pb
    }
}

/// Admissible parameter intervals `[a, b]` for `t` on each branch of `{(t, 1/t)}` inside the box.
fn hyperbola_branches(domain: &DomainBox) -> Vec<(f64, f64)> {
    let (lo0, hi0) = (domain.lower[0], domain.upper[0]);
    let (lo1, hi1) = (domain.lower[1], domain.upper[1]);
    let mut out = Vec::new();

    // t > 0
    if hi1 > 0.0 {
        let mut a = HYPERBOLA_T_MIN.max(lo0).max(1.0 / hi1);
        let mut b = HYPERBOLA_T_MAX.min(hi0);
        if lo1 > 0.0 {
            b = b.min(1.0 / lo1);
        }
        a = a.max(HYPERBOLA_T_MIN);
        if a <= b {
            out.push((a, b));
        }
    }
    // t < 0
    if lo1 < 0.0 {
        let mut a = (-HYPERBOLA_T_MAX).max(lo0);
        let mut b = (-HYPERBOLA_T_MIN).min(hi0).min(1.0 / lo1);
        if hi1 < 0.0 {
            a = a.max(1.0 / hi1);
        }
        b = b.min(-HYPERBOLA_T_MIN);
        if a <= b {
            out.push((a, b));
        }
    }
    out
}

/// Minimizes `|x - (t, 1/t)|²` over `t ∈ [a, b]` (an interval not containing 0).
fn minimize_hyperbola_branch(x: &[f64], a: f64, b: f64) -> f64 {
    let g = |t: f64| (t - x[0]).powi(2) + (1.0 / t - x[1]).powi(2);
    let dg = |t: f64| 2.0 * (t - x[0]) - 2.0 * (1.0 / t - x[1]) / (t * t);
    let d2g = |t: f64| 2.0 + 2.0 / t.powi(4) + 4.0 * (1.0 / t - x[1]) / t.powi(3);

    // coarse scan, uniform in log|t|, to bracket the global minimizer
    const SAMPLES: usize = 2000;
    let sign = a.signum();
    let (la, lb) = (a.abs().ln(), b.abs().ln());
    let ts: Vec<f64> = (0..=SAMPLES)
        .map(|k| sign * (la + (lb - la) * k as f64 / SAMPLES as f64).exp())
        .map(|t| t.clamp(a, b))
        .collect();
    let mut k_best = 0;
    let mut g_best = f64::INFINITY;
    for (k, &t) in ts.iter().enumerate() {
        let v = g(t);
        if v < g_best {
            g_best = v;
            k_best = k;
        }
    }
    let mut lo = ts[k_best.saturating_sub(1)].min(ts[(k_best + 1).min(SAMPLES)]);
    let mut hi = ts[k_best.saturating_sub(1)].max(ts[(k_best + 1).min(SAMPLES)]);
    if !(dg(lo) < 0.0 && dg(hi) > 0.0) {
        // minimizer sits on an end of the admissible interval
        return ts[k_best];
    }

    // safeguarded Newton on g' = 0 inside the bracket
    let mut t = ts[k_best];
    for _ in 0..100 {
        let d = dg(t);
        if d.abs() < 1e-15 {
            break;
        }
        if d < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let h = d2g(t);
        let newton = t - d / h;
        let next = if h > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - t).abs() <= 1e-15 * t.abs().max(1.0) {
            t = next;
            break;
        }
        t = next;
    }
    t
}
