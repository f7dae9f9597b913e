use thiserror::Error;

/// Errors produced by the solver, integrators and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown objective `{0}`")]
    UnknownObjective(String),

    #[error("point {point:?} lies outside the grid box")]
    OutsideBox { point: Vec<f64> },

    #[error("empty sample set: {0}")]
    EmptySample(String),

    #[error("non-positive growth ratio {ratio} at {point:?}; f_min or the minimizer set is mis-specified")]
    NonPositiveRatio { ratio: f64, point: Vec<f64> },

    #[error("value iteration did not converge after {iters} sweeps (last sup change {last_change:e})")]
    NonConvergence { iters: usize, last_change: f64 },

    #[error("non-finite value encountered during {0}")]
    NonFinite(&'static str),

    #[error("state {point:?} left the box by more than one cell at t = {t}")]
    LeftBox { t: f64, point: Vec<f64> },

    #[error("perturbation calibration failed: realized eta {eta_hat} / eps0 {eps0_hat} exceed declared {eta} / {eps0}")]
    CalibrationFailed {
        eta: f64,
        eps0: f64,
        eta_hat: f64,
        eps0_hat: f64,
    },

    #[error("t = {0} is not a sample time of the trajectory")]
    NotASampleTime(f64),

    #[error("insufficient-decay-window: only {usable} samples above the noise floor (need 10)")]
    InsufficientDecayWindow { usable: usize },

    #[error("trajectory never stays within distance {r} of the minimizer set")]
    EntryNotReached { r: f64 },

    #[error("no node passes the value floor {floor:e}; the field is flat")]
    FlatField { floor: f64 },

    #[error("ratio dist/(f - f_min) is unbounded near the minimizer set (shell maxima {shell_max:?})")]
    UnboundedRatio { shell_max: Vec<f64> },

    #[error("gradient vanishes ({norm:e}) off the minimizer set at {point:?}")]
    VanishingGradient { norm: f64, point: Vec<f64> },

    #[error("malformed value file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
