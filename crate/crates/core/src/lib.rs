//! Global optimization through optimal stabilization.
//!
//! The discounted control problem `inf ∫ (½|α|² + f(y)) e^{-λs} ds` with `ẏ = α` has a value
//! function `u` solving `λu + ½|Du|² = f`. Its optimal feedback `ẏ = -Du(y)` drives every
//! start towards the minimizers of `f`, and the excess value decays exponentially.
//!
//! - [`objectives`] and [`geometry`]: objectives on a box with exact minimizer sets
//! - [`grid`] and [`solver`]: value fields and a semi-Lagrangian value iteration
//! - [`trajectory`]: optimal, quasi-optimal and sampled-feedback paths
//! - [`analysis`]: constant estimation and pointwise checks of the decay bounds
//! - [`suite`]: the acceptance matrix
//!
//! ```
//! use hjbopt::grid::RectGrid;
//! use hjbopt::solver::{riccati_constant, solve, SolverOptions};
//! use hjbopt::suite::{riccati_objective, riccati_relative_error};
//!
//! # fn main() -> hjbopt::Result<()> {
//! // f = ½|x|² has u = C|x|² with C from a scalar Riccati equation
//! let obj = riccati_objective(1.0, vec![vec![0.0]])?;
//! let grid = RectGrid::uniform(&obj.domain, 201)?;
//! let vf = solve(&obj, &grid, 0.1, &SolverOptions::for_problem(&obj, &grid))?;
//! let big_c = riccati_constant(0.1, 1.0)?;
//! assert!(riccati_relative_error(&vf, &obj, big_c, 1.4) < 0.02);
//! # Ok(())
//! # }
//! ```

pub mod analysis;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod objectives;
pub mod solver;
pub mod suite;
pub mod trajectory;

pub use error::{Error, Result};
