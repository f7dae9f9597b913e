//! The chapters of the guide in `book/src`, one module each, so that `cargo test --doc`
//! runs every listing against the current library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod ch01_introduction {}
#[doc = include_str!("../../../book/src/value-function.md")]
pub mod ch02_value_function {}
#[doc = include_str!("../../../book/src/trajectories.md")]
pub mod ch03_trajectories {}
#[doc = include_str!("../../../book/src/rates.md")]
pub mod ch04_rates {}
#[doc = include_str!("../../../book/src/assumptions.md")]
pub mod ch05_assumptions {}
#[doc = include_str!("../../../book/src/minimizer-sets.md")]
pub mod ch06_minimizer_sets {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod ch07_cli {}
#[doc = include_str!("../../../book/src/acceptance.md")]
pub mod ch08_acceptance {}
