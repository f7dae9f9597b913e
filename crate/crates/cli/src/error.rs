//! Exit codes and the one-line diagnostic of every failure path.

use std::fmt;

use hjbopt::Error;

/// Failure class; each has its own exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// A check ran and failed (suite row, Riccati tolerance).
    CheckFailed,
    /// Malformed or inconsistent configuration or arguments; nothing was written.
    Config,
    /// An input file does not match the config, or a start point lies outside the box.
    Input,
    /// An output file or directory cannot be written.
    Output,
    /// The solver or an integrator failed.
    Numerical,
    /// An analysis precondition does not hold.
    Analysis,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::CheckFailed => 1,
            ErrorKind::Config => 2,
            ErrorKind::Input => 3,
            ErrorKind::Output => 4,
            ErrorKind::Numerical => 5,
            ErrorKind::Analysis => 6,
        }
    }
}

/// Error printed as `error[<name>] exit=<code>: <message>` on a single line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: ErrorKind,
    /// Stable kebab-case cause, such as `insufficient-decay-window`.
    pub name: String,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, name: &str, message: impl fmt::Display) -> Self {
        CliError { kind, name: name.into(), message: message.to_string() }
    }

    pub fn config(message: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Config, "config", message)
    }

    pub fn output(message: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Output, "unwritable-output", message)
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let message = self.message.replace(['\n', '\r'], " ");
        write!(f, "error[{}] exit={}: {}", self.name, self.exit_code(), message.trim())
    }
}

impl std::error::Error for CliError {}

/// Classifies a library error by its cause.
impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (kind, name) = match &e {
            Error::InvalidParameter(_) | Error::UnknownObjective(_) => (ErrorKind::Config, "config"),
            Error::OutsideBox { .. } => (ErrorKind::Input, "outside-box"),
            Error::Format(_) => (ErrorKind::Input, "malformed-input"),
            Error::NonConvergence { .. } => (ErrorKind::Numerical, "non-convergence"),
            Error::NonFinite(_) => (ErrorKind::Numerical, "non-finite"),
            Error::LeftBox { .. } => (ErrorKind::Numerical, "left-box"),
            Error::CalibrationFailed { .. } => (ErrorKind::Numerical, "calibration-failed"),
            Error::InsufficientDecayWindow { .. } => (ErrorKind::Analysis, "insufficient-decay-window"),
            Error::EntryNotReached { .. } => (ErrorKind::Analysis, "entry-not-reached"),
            Error::FlatField { .. } => (ErrorKind::Analysis, "flat-field"),
            Error::UnboundedRatio { .. } => (ErrorKind::Analysis, "unbounded-ratio"),
            Error::VanishingGradient { .. } => (ErrorKind::Analysis, "vanishing-gradient"),
            Error::NonPositiveRatio { .. } => (ErrorKind::Analysis, "non-positive-ratio"),
            Error::NotASampleTime(_) => (ErrorKind::Analysis, "not-a-sample-time"),
            Error::EmptySample(_) => (ErrorKind::Analysis, "empty-sample"),
            Error::Io(_) => (ErrorKind::Input, "io"),
        };
        CliError::new(kind, name, e)
    }
}
