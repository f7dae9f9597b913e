//! Configuration-driven experiment runner for `hjbopt`.
//!
//! The `hjbopt` binary runs the stages `solve → trajectory → rates` from one TOML config
//! (see [`config`]), writes every artifact into an output directory together with a
//! [`manifest::RunManifest`], and maps each failure to a distinct exit code (see
//! [`error::ErrorKind`]).

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

/// Output directory used when neither `--out` nor `output_dir` is given.
pub const DEFAULT_OUT: &str = "hjbopt-out";
