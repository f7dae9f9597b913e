//! Built-in objectives with known minimizer geometry.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DomainBox, MinimizerSet};

/// Two-sided quadratic growth `c1/2 dist² ≤ f - f_min ≤ c2/2 dist²` on `{dist ≤ r}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthConstants {
    pub c1: f64,
    pub c2: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    /// `½ xᵀQx + bᵀx`
    Quadratic { q: DMatrix<f64>, b: DVector<f64> },
    /// `½ (x1 - x2)²`
    FlatQuadratic,
    /// `(x² - 1)²`
    DoubleWell,
    /// `Σ 1 - cos x_i`
    Cosine,
    /// `|Ax - b|² + mu |x|²`
    RidgeLs { a: DMatrix<f64>, b: DVector<f64>, mu: f64 },
    /// `½ (x1 x2 - 1)²`
    ProductWell,
    /// `(c/2) dist(x, set)²`
    RiccatiDist { c: f64 },
    /// `scale · dist(x, set)`
    ConeDist { scale: f64 },
    Constant { value: f64 },
}

/// An objective on a box, truncated at `f_max`, with its exact minimizer set.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSpec {
    pub name: String,
    pub dim: usize,
    pub domain: DomainBox,
    pub f_min: f64,
    pub f_max: f64,
    pub minimizers: MinimizerSet,
    /// Growth constants as stated for the textbook example, when available.
    pub known_growth: Option<GrowthConstants>,
    kind: Kind,
}

/// Shape of a minimizer set in a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetParams {
    Points { points: Vec<Vec<f64>> },
    Diagonal,
    Lattice { period: f64 },
    Hyperbola,
}

impl SetParams {
    pub fn build(&self, domain: &DomainBox) -> Result<MinimizerSet> {
        match self {
            SetParams::Points { points } => MinimizerSet::finite_points(points.clone(), domain),
            SetParams::Diagonal => MinimizerSet::affine_diagonal(domain),
            SetParams::Lattice { period } => MinimizerSet::axis_lattice(*period, domain),
            SetParams::Hyperbola => MinimizerSet::product_hyperbola(domain),
        }
    }
}

/// Parameters accepted by [`builtin_objective`]; each builtin reads the subset it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveParams {
    /// Domain box; every builtin has a default.
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    /// Truncation level; defaults to the maximum of `f` over the box.
    pub f_max: Option<f64>,
    pub c: Option<f64>,
    pub q: Option<Vec<Vec<f64>>>,
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<f64>>,
    pub mu: Option<f64>,
    pub scale: Option<f64>,
    pub value: Option<f64>,
    pub set: Option<SetParams>,
}

pub const BUILTIN_NAMES: &[&str] = &[
    "quadratic",
    "flat_quadratic",
    "double_well",
    "cosine",
    "ridge_ls",
    "product_well",
    "riccati_dist",
    "cone_dist",
    "constant",
];

impl ObjectiveSpec {
    /// Objective value, truncated at `f_max`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.raw(x).min(self.f_max)
    }

    /// `f - f_min`.
    pub fn shifted(&self, x: &[f64]) -> f64 {
        self.eval(x) - self.f_min
    }

    /// Largest |f| on the box, the `‖f‖_∞` entering the gradient bound of the value function.
    pub fn sup_norm(&self) -> f64 {
        self.f_max.abs().max(self.f_min.abs())
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        self.minimizers.distance(x).dist
    }

    fn raw(&self, x: &[f64]) -> f64 {
        match &self.kind {
            Kind::Quadratic { q, b } => {
                let v = DVector::from_column_slice(x);
                0.5 * v.dot(&(q * &v)) + b.dot(&v)
            }
            Kind::FlatQuadratic => 0.5 * (x[0] - x[1]).powi(2),
            Kind::DoubleWell => (x[0] * x[0] - 1.0).powi(2),
            Kind::Cosine => x.iter().map(|v| 1.0 - v.cos()).sum(),
            Kind::RidgeLs { a, b, mu } => {
                let v = DVector::from_column_slice(x);
                (a * &v - b).norm_squared() + mu * v.norm_squared()
            }
            Kind::ProductWell => 0.5 * (x[0] * x[1] - 1.0).powi(2),
            Kind::RiccatiDist { c } => 0.5 * c * self.minimizers.distance(x).dist.powi(2),
            Kind::ConeDist { scale } => scale * self.minimizers.distance(x).dist,
            Kind::Constant { value } => *value,
        }
    }
}

fn require<T: Clone>(v: &Option<T>, name: &str, field: &str) -> Result<T> {
    v.clone()
        .ok_or_else(|| Error::InvalidParameter(format!("objective `{name}` needs parameter `{field}`")))
}

fn positive(v: f64, what: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidParameter(format!("{what} must be positive, got {v}")))
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidParameter(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn domain_from(params: &ObjectiveParams, dim: usize, lo: f64, hi: f64) -> Result<DomainBox> {
    let lower = params.lower.clone().unwrap_or_else(|| vec![lo; dim]);
    let upper = params.upper.clone().unwrap_or_else(|| vec![hi; dim]);
    if lower.len() != dim || upper.len() != dim {
        return Err(Error::InvalidParameter(format!("domain must have dimension {dim}")));
    }
    DomainBox::new(lower, upper)
}

/// Spectrum `(min, max)` of a symmetric positive-definite matrix.
fn spd_spectrum(m: &DMatrix<f64>, what: &str) -> Result<(f64, f64)> {
    if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return Err(Error::InvalidParameter(format!("{what} must be symmetric")));
    }
    let eig = SymmetricEigen::new(m.clone());
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    if lo <= 0.0 {
        return Err(Error::InvalidParameter(format!("{what} must be positive definite (min eigenvalue {lo})")));
    }
    Ok((lo, hi))
}

/// Builds one of the [`BUILTIN_NAMES`] objectives.
pub fn builtin_objective(name: &str, params: &ObjectiveParams) -> Result<ObjectiveSpec> {
    let (kind, domain, minimizers, known_growth) = match name {
        "quadratic" => {
            let q = matrix(&require(&params.q, name, "q")?, "q")?;
            let n = q.nrows();
            if q.ncols() != n || n > 3 {
                return Err(Error::InvalidParameter("q must be square with dimension 1-3".into()));
            }
            let b = DVector::from_vec(params.b.clone().unwrap_or_else(|| vec![0.0; n]));
            if b.len() != n {
                return Err(Error::InvalidParameter("b must match the dimension of q".into()));
            }
            let (mu, l) = spd_spectrum(&q, "q")?;
            let xstar = q.clone().lu().solve(&(-&b)).ok_or_else(|| Error::InvalidParameter("q is singular".into()))?;
            let domain = domain_from(params, n, -2.0, 2.0)?;
            let set = MinimizerSet::finite_points(vec![xstar.as_slice().to_vec()], &domain)?;
            let growth = GrowthConstants { c1: mu, c2: l, r: f64::INFINITY };
            (Kind::Quadratic { q, b }, domain, set, Some(growth))
        }
        "flat_quadratic" => {
            let domain = domain_from(params, 2, -2.0, 2.0)?;
            let set = MinimizerSet::affine_diagonal(&domain)?;
            // stated as ½ dist² with c1 = c2 = 1; the measured constants differ
            let growth = GrowthConstants { c1: 1.0, c2: 1.0, r: f64::INFINITY };
            (Kind::FlatQuadratic, domain, set, Some(growth))
        }
        "double_well" => {
            let domain = domain_from(params, 1, -2.0, 2.0)?;
            let set = MinimizerSet::finite_points(vec![vec![-1.0], vec![1.0]], &domain)?;
            // stated as 2 dist² ≤ f ≤ 5 dist² for |x - 1| ≤ 0.4
            let growth = GrowthConstants { c1: 4.0, c2: 10.0, r: 0.4 };
            (Kind::DoubleWell, domain, set, Some(growth))
        }
        "cosine" => {
            let dim = params.lower.as_ref().map_or(1, Vec::len);
            let domain = domain_from(params, dim, -7.0, 7.0)?;
            let set = MinimizerSet::axis_lattice(2.0 * PI, &domain)?;
            (Kind::Cosine, domain, set, None)
        }
        "ridge_ls" => {
            let a = matrix(&require(&params.a, name, "a")?, "a")?;
            let n = a.ncols();
            if n > 3 {
                return Err(Error::InvalidParameter("ridge_ls supports 1-3 unknowns".into()));
            }
            let b = DVector::from_vec(require(&params.b, name, "b")?);
            if b.len() != a.nrows() {
                return Err(Error::InvalidParameter("b must have one entry per row of a".into()));
            }
            let mu = params.mu.unwrap_or(0.0);
            if mu < 0.0 {
                return Err(Error::InvalidParameter(format!("mu must be non-negative, got {mu}")));
            }
            let h = a.transpose() * &a + DMatrix::identity(n, n) * mu;
            let (lo, hi) = spd_spectrum(&h, "AᵀA + mu I")?;
            let xstar = h.clone().lu().solve(&(a.transpose() * &b)).ok_or_else(|| Error::InvalidParameter("AᵀA + mu I is singular".into()))?;
            let domain = domain_from(params, n, -2.0, 2.0)?;
            let set = MinimizerSet::finite_points(vec![xstar.as_slice().to_vec()], &domain)?;
            let growth = GrowthConstants { c1: 2.0 * lo, c2: 2.0 * hi, r: f64::INFINITY };
            (Kind::RidgeLs { a, b, mu }, domain, set, Some(growth))
        }
        "product_well" => {
            let domain = domain_from(params, 2, -2.0, 2.0)?;
            let set = MinimizerSet::product_hyperbola(&domain)?;
            (Kind::ProductWell, domain, set, None)
        }
        "riccati_dist" => {
            let c = positive(require(&params.c, name, "c")?, "c")?;
            let spec = params.set.clone().unwrap_or(SetParams::Points { points: vec![vec![0.0]] });
            let dim = match &spec {
                SetParams::Points { points } => points.first().map_or(1, Vec::len),
                SetParams::Diagonal | SetParams::Hyperbola => 2,
                SetParams::Lattice { .. } => params.lower.as_ref().map_or(1, Vec::len),
            };
            let domain = domain_from(params, dim, -2.0, 2.0)?;
            let set = spec.build(&domain)?;
            let growth = GrowthConstants { c1: c, c2: c, r: f64::INFINITY };
            (Kind::RiccatiDist { c }, domain, set, Some(growth))
        }
        "cone_dist" => {
            let scale = positive(params.scale.unwrap_or(1.0), "scale")?;
            let spec = params.set.clone().unwrap_or(SetParams::Points { points: vec![vec![0.0]] });
            let dim = match &spec {
                SetParams::Points { points } => points.first().map_or(1, Vec::len),
                SetParams::Diagonal | SetParams::Hyperbola => 2,
                SetParams::Lattice { .. } => params.lower.as_ref().map_or(1, Vec::len),
            };
            let domain = domain_from(params, dim, -2.0, 2.0)?;
            let set = spec.build(&domain)?;
            (Kind::ConeDist { scale }, domain, set, None)
        }
        "constant" => {
            let value = params.value.unwrap_or(0.0);
            let dim = params.lower.as_ref().map_or(1, Vec::len);
            let domain = domain_from(params, dim, -2.0, 2.0)?;
            // every point minimizes; the box center stands in for the set
            let center: Vec<f64> = domain.lower.iter().zip(&domain.upper).map(|(l, u)| 0.5 * (l + u)).collect();
            let set = MinimizerSet::finite_points(vec![center], &domain)?;
            (Kind::Constant { value }, domain, set, None)
        }
        other => return Err(Error::UnknownObjective(other.to_string())),
    };

    let dim = domain.dim();
    if minimizers.dim() != dim {
        return Err(Error::InvalidParameter(format!(
            "minimizer set has dimension {} but the domain has dimension {dim}",
            minimizers.dim()
        )));
    }
    let mut spec = ObjectiveSpec {
        name: name.to_string(),
        dim,
        domain,
        f_min: 0.0,
        f_max: f64::INFINITY,
        minimizers,
        known_growth,
        kind,
    };
    let reps = spec.minimizers.representatives();
    spec.f_min = spec.raw(&reps[0]);
    spec.f_max = match params.f_max {
        Some(level) => {
            if !(level > spec.f_min) {
                return Err(Error::InvalidParameter(format!(
                    "truncation level {level} must exceed f_min {}",
                    spec.f_min
                )));
            }
            level
        }
        None => scan_max(&spec),
    };
    if !spec.f_max.is_finite() {
        return Err(Error::NonFinite("objective scan"));
    }
    Ok(spec)
}

/// Maximum of the untruncated objective over the box corners and a dense tensor scan.
fn scan_max(spec: &ObjectiveSpec) -> f64 {
    let dim = spec.dim;
    let per_axis = match dim {
        1 => 4001,
        2 => 401,
        _ => 101,
    };
    let mut best = f64::NEG_INFINITY;
    for_each_tensor_point(&spec.domain, per_axis, |x| best = best.max(spec.raw(x)));
    if let Kind::Cosine = spec.kind {
        // 1 - cos peaks at odd multiples of π
        let peaks: f64 = spec
            .domain
            .lower
            .iter()
            .zip(&spec.domain.upper)
            .map(|(lo, hi)| {
                let k = ((lo - PI) / (2.0 * PI)).ceil();
                if k * 2.0 * PI + PI <= *hi { 2.0 } else { 0.0 }
            })
            .sum();
        best = best.max(peaks);
    }
    best
}

/// Calls `f` on every point of a tensor grid with `per_axis` points per axis, corners included.
pub(crate) fn for_each_tensor_point(domain: &DomainBox, per_axis: usize, mut f: impl FnMut(&[f64])) {
    let dim = domain.dim();
    let mut idx = vec![0usize; dim];
    let mut x = domain.lower.clone();
    loop {
        for d in 0..dim {
            x[d] = domain.lower[d] + (domain.upper[d] - domain.lower[d]) * idx[d] as f64 / (per_axis - 1) as f64;
        }
        f(&x);
        let mut d = 0;
        loop {
            if d == dim {
                return;
            }
            idx[d] += 1;
            if idx[d] < per_axis {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Result of a quadratic-growth scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthEstimate {
    pub c1: f64,
    pub c2: f64,
    pub r: f64,
    /// Scan points realizing the smallest and largest ratio `(f - f_min)/dist²`.
    pub argmin: Vec<f64>,
    pub argmax: Vec<f64>,
    pub samples: usize,
}

impl GrowthEstimate {
    pub fn constants(&self) -> GrowthConstants {
        GrowthConstants { c1: self.c1, c2: self.c2, r: self.r }
    }
}

/// Tensor-grid scan of `(f - f_min)/dist²` over the punctured tube `0 < dist ≤ r`.
pub fn estimate_quadratic_growth(obj: &ObjectiveSpec, r: f64, step: f64) -> Result<GrowthEstimate> {
    if !(r > 0.0) || !(step > 0.0) {
        return Err(Error::InvalidParameter(format!("need r > 0 and step > 0, got r={r}, step={step}")));
    }
    let counts: Vec<usize> = obj
        .domain
        .lower
        .iter()
        .zip(&obj.domain.upper)
        .map(|(lo, hi)| ((hi - lo) / step + 1e-9).floor() as usize + 1)
        .collect();
    let total: f64 = counts.iter().map(|&c| c as f64).product();
    if total > 5e7 {
        return Err(Error::InvalidParameter(format!("scan of {total} points is too large; increase step")));
    }

    let dim = obj.dim;
    let mut idx = vec![0usize; dim];
    let mut x = vec![0.0; dim];
    let mut lo_ratio = (f64::INFINITY, Vec::new());
    let mut hi_ratio = (f64::NEG_INFINITY, Vec::new());
    let mut samples = 0usize;
    let mut bad: Option<(f64, Vec<f64>)> = None;
    'scan: loop {
        for d in 0..dim {
            x[d] = obj.domain.lower[d] + idx[d] as f64 * step;
        }
        let dist = obj.distance(&x);
        let scale = 1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if dist > 1e-9 * scale && dist <= r * (1.0 + 1e-12) {
            let ratio = obj.shifted(&x) / (dist * dist);
            if ratio <= 0.0 && bad.is_none() {
                bad = Some((ratio, x.clone()));
            }
            samples += 1;
            if ratio < lo_ratio.0 {
                lo_ratio = (ratio, x.clone());
            }
            if ratio > hi_ratio.0 {
                hi_ratio = (ratio, x.clone());
            }
        }
        let mut d = 0;
        loop {
            if d == dim {
                break 'scan;
            }
            idx[d] += 1;
            if idx[d] < counts[d] {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
    if let Some((ratio, point)) = bad {
        return Err(Error::NonPositiveRatio { ratio, point });
    }
    if samples < 100 {
        return Err(Error::EmptySample(format!(
            "only {samples} scan points with 0 < dist ≤ {r} (need 100); decrease step"
        )));
    }
    Ok(GrowthEstimate {
        c1: 2.0 * lo_ratio.0,
        c2: 2.0 * hi_ratio.0,
        r,
        argmin: lo_ratio.1,
        argmax: hi_ratio.1,
        samples,
    })
}
