//! Experiment configuration: a TOML file validated in full before any computation.
//!
//! ```toml
//! lambda = 0.1
//! output_dir = "out/riccati"          # optional; `--out` overrides it
//!
//! [objective]
//! name = "riccati_dist"
//! params = { c = 1.0, set = { kind = "points", points = [[0.0]] } }
//!
//! [domain]                             # the box is set here, not in params
//! lower = [-2.0]
//! upper = [2.0]
//! nodes = [401]
//!
//! [solver]                             # optional; every field defaults per problem
//! tol = 1e-6
//!
//! [trajectory]                         # needed by `trajectory` and `rates`
//! x0 = [1.0]
//! T = 3.0
//! dt = 1e-3
//! policy = { kind = "optimal" }        # or quasi / sampled, see PolicyConfig
//!
//! [analysis]                           # optional
//! r = 0.4
//! ```

use std::path::{Path, PathBuf};

use hjbopt::analysis::{AssumptionSettings, BoundTolerance};
use hjbopt::grid::RectGrid;
use hjbopt::objectives::{builtin_objective, ObjectiveParams, ObjectiveSpec};
use hjbopt::solver::SolverOptions;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objective: ObjectiveConfig,
    pub domain: DomainConfig,
    pub lambda: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    pub trajectory: Option<TrajectoryConfig>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// One of [`hjbopt::objectives::BUILTIN_NAMES`].
    pub name: String,
    #[serde(default)]
    pub params: ObjectiveParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes: Vec<usize>,
}

/// Overrides of [`SolverOptions::for_problem`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub dtau: Option<f64>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub control_magnitudes: Option<usize>,
    pub control_directions: Option<usize>,
    pub m_bound: Option<f64>,
    pub feedback_candidate: Option<bool>,
    pub full_search_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub x0: Vec<f64>,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub dt: f64,
    #[serde(default)]
    pub policy: PolicyConfig,
}

/// Feedback used by the `trajectory` command.
///
/// `k` is the rate constant `K` of the decay bounds; it is estimated from the value
/// field when absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyConfig {
    #[default]
    Optimal,
    Quasi { eta: f64, eps0: f64, seed: u64, k: Option<f64> },
    Sampled { delta_min: f64, delta_max: f64, sigma: f64, seed: u64, k: Option<f64> },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Tube radius for growth constants, entry times and the linear-growth scan (default 0.4).
    pub r: Option<f64>,
    /// Value floor for estimating `K` (default 20× the scheme tolerance).
    pub floor: Option<f64>,
    /// Gap table radii (default 0.1, 0.25, 0.5).
    pub deltas: Option<Vec<f64>>,
    pub scan_per_axis: Option<usize>,
    pub growth_step: Option<f64>,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
}

/// Overrides of the bound tolerances; `multiplicative` applies to every check, the others
/// to the variational decay check only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    pub multiplicative: Option<f64>,
    pub additive: Option<f64>,
    pub noise_floor: Option<f64>,
}

/// A configuration that passed validation, with its source hash.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub hash: String,
    pub objective: ObjectiveSpec,
    pub grid: RectGrid,
    pub solver: SolverOptions,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(e.message()))
    }
}

impl Experiment {
    /// Reads, parses and validates a config file; `quick` halves the node counts.
    pub fn load(path: &Path, quick: bool) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes).map_err(|_| CliError::config("config is not UTF-8"))?;
        let hash = hex::encode(Sha256::digest(&bytes));
        Self::from_config(ExperimentConfig::parse(text)?, hash, quick)
    }

    pub fn from_config(config: ExperimentConfig, hash: String, quick: bool) -> Result<Self, CliError> {
        let d = &config.domain;
        let dim = d.lower.len();
        if dim == 0 || d.upper.len() != dim || d.nodes.len() != dim {
            return Err(CliError::config("domain lower, upper and nodes must have the same non-zero length"));
        }
        if !(config.lambda > 0.0 && config.lambda.is_finite()) {
            return Err(CliError::config(format!("lambda must be positive, got {}", config.lambda)));
        }
        let p = &config.objective.params;
        if p.lower.is_some() || p.upper.is_some() {
            return Err(CliError::config("set the box under [domain], not in objective params"));
        }
        let params = ObjectiveParams { lower: Some(d.lower.clone()), upper: Some(d.upper.clone()), ..p.clone() };
        let objective = builtin_objective(&config.objective.name, &params).map_err(CliError::config)?;
        if objective.dim != dim {
            return Err(CliError::config(format!(
                "objective `{}` is {}-dimensional but the domain is {dim}-dimensional",
                objective.name, objective.dim
            )));
        }
        let nodes = if quick { d.nodes.iter().map(|&n| (n - 1) / 2 + 1).collect() } else { d.nodes.clone() };
        let grid = RectGrid::new(d.lower.clone(), d.upper.clone(), nodes).map_err(CliError::config)?;
        let solver = config.solver.resolve(&objective, &grid);
        solver.validate(&objective, &grid).map_err(CliError::config)?;
        if let Some(t) = &config.trajectory {
            t.validate(dim)?;
        }
        config.analysis.validate()?;
        Ok(Experiment { config, hash, objective, grid, solver })
    }

    pub fn lambda(&self) -> f64 {
        self.config.lambda
    }

    pub fn trajectory(&self) -> Result<&TrajectoryConfig, CliError> {
        self.config.trajectory.as_ref().ok_or_else(|| CliError::config("config has no [trajectory] section"))
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.config.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from(crate::DEFAULT_OUT))
    }
}

impl SolverConfig {
    pub fn resolve(&self, obj: &ObjectiveSpec, grid: &RectGrid) -> SolverOptions {
        let base = SolverOptions::for_problem(obj, grid);
        SolverOptions {
            dtau: self.dtau.unwrap_or(base.dtau),
            tol: self.tol.unwrap_or(base.tol),
            max_iters: self.max_iters.unwrap_or(base.max_iters),
            control_magnitudes: self.control_magnitudes.unwrap_or(base.control_magnitudes),
            control_directions: self.control_directions.unwrap_or(base.control_directions),
            m_bound: self.m_bound.unwrap_or(base.m_bound),
            feedback_candidate: self.feedback_candidate.unwrap_or(base.feedback_candidate),
            full_search_every: self.full_search_every.unwrap_or(base.full_search_every),
        }
    }
}

impl TrajectoryConfig {
    fn validate(&self, dim: usize) -> Result<(), CliError> {
        if self.x0.len() != dim {
            return Err(CliError::config(format!("x0 has {} entries for a {dim}-dimensional domain", self.x0.len())));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) || !(self.dt > 0.0 && self.dt <= self.horizon) {
            return Err(CliError::config(format!("need 0 < dt <= T, got dt={} and T={}", self.dt, self.horizon)));
        }
        self.policy.validate()
    }
}

impl PolicyConfig {
    /// Checks that do not need `K`; the rate hypotheses are checked once `K` is known.
    fn validate(&self) -> Result<(), CliError> {
        let bad_k = |k: &Option<f64>| matches!(k, Some(k) if !(*k > 0.0 && k.is_finite()));
        match self {
            PolicyConfig::Optimal => Ok(()),
            PolicyConfig::Quasi { eta, eps0, k, .. } => {
                if !(*eta >= 0.0 && *eta < 1.0) || !(*eps0 >= 0.0 && eps0.is_finite()) || bad_k(k) {
                    return Err(CliError::config("quasi policy needs 0 <= eta < 1, eps0 >= 0 and k > 0"));
                }
                Ok(())
            }
            PolicyConfig::Sampled { delta_min, delta_max, sigma, k, .. } => {
                if !(*delta_min > 0.0 && delta_min <= delta_max && delta_max.is_finite()) {
                    return Err(CliError::config(format!(
                        "sampled policy needs 0 < delta_min <= delta_max, got {delta_min} and {delta_max}"
                    )));
                }
                if !(*sigma > 0.0 && sigma.is_finite()) || bad_k(k) {
                    return Err(CliError::config("sampled policy needs sigma > 0 and k > 0"));
                }
                Ok(())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicyConfig::Optimal => "optimal",
            PolicyConfig::Quasi { .. } => "quasi",
            PolicyConfig::Sampled { .. } => "sampled",
        }
    }

    pub fn k(&self) -> Option<f64> {
        match self {
            PolicyConfig::Optimal => None,
            PolicyConfig::Quasi { k, .. } | PolicyConfig::Sampled { k, .. } => *k,
        }
    }

    /// Replaces the perturbation seed.
    pub fn with_seed(mut self, new: Option<u64>) -> Self {
        if let (Some(s), PolicyConfig::Quasi { seed, .. } | PolicyConfig::Sampled { seed, .. }) = (new, &mut self) {
            *seed = s;
        }
        self
    }
}

impl AnalysisConfig {
    fn validate(&self) -> Result<(), CliError> {
        let positive = |v: Option<f64>| v.is_none_or(|v| v > 0.0 && v.is_finite());
        let nonneg = |v: Option<f64>| v.is_none_or(|v| v >= 0.0 && v.is_finite());
        let t = &self.tolerances;
        if !positive(self.r) || !positive(self.floor) || !positive(self.growth_step) {
            return Err(CliError::config("analysis r, floor and growth_step must be positive"));
        }
        if !nonneg(t.multiplicative) || !nonneg(t.additive) || !nonneg(t.noise_floor) {
            return Err(CliError::config("analysis tolerances must be nonnegative"));
        }
        if self.deltas.as_ref().is_some_and(|d| d.is_empty() || d.iter().any(|v| !(*v > 0.0))) {
            return Err(CliError::config("analysis deltas must be a non-empty list of positive radii"));
        }
        if self.scan_per_axis.is_some_and(|n| n < 2) {
            return Err(CliError::config("analysis scan_per_axis must be at least 2"));
        }
        Ok(())
    }

    pub fn r(&self) -> f64 {
        self.r.unwrap_or(0.4)
    }

    /// Scan settings scaled to the dimension: about 4000, 400 or 100 points per axis.
    pub fn settings(&self, obj: &ObjectiveSpec, floor: f64) -> AssumptionSettings {
        let per_axis = match obj.dim {
            1 => 4001,
            2 => 401,
            _ => 101,
        };
        let width = obj.domain.lower.iter().zip(&obj.domain.upper).map(|(l, u)| u - l).fold(0.0, f64::max);
        AssumptionSettings {
            r: self.r(),
            floor: self.floor.unwrap_or(floor),
            deltas: self.deltas.clone().unwrap_or_else(|| vec![0.1, 0.25, 0.5]),
            scan_per_axis: self.scan_per_axis.unwrap_or(per_axis),
            growth_step: self.growth_step.unwrap_or(width / (per_axis - 1) as f64),
        }
    }

    pub fn apply(&self, tol: BoundTolerance, variational: bool) -> BoundTolerance {
        let t = &self.tolerances;
        let mut out = BoundTolerance { multiplicative: t.multiplicative.unwrap_or(tol.multiplicative), ..tol };
        if variational {
            out.additive = t.additive.unwrap_or(tol.additive);
            out.noise_floor = t.noise_floor.unwrap_or(tol.noise_floor);
        }
        out
    }
}
