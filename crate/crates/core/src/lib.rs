//! Numerical laboratory for the regularized double-phase parabolic problem
//!
//! ```text
//! u_t − div((a_ε w_ε^{(p−2)/2} + b_ε w_ε^{(q−2)/2}) ∇u) = f   in Ω × (0, T),   u = 0 on ∂Ω,
//! ```
//!
//! with `w_ε = ε² + |∇u|²`, `a_ε = ε + a`, `b_ε = ε + b`, variable exponents `p, q` and
//! nonnegative modulating coefficients `a, b`.
//!
//! * [`problem`] holds the data and checks the structural assumptions,
//! * [`flux`] is the pointwise flux algebra,
//! * [`varexp`] evaluates variable-exponent modulars, Luxemburg norms and the
//!   monotonicity functionals used to compare solutions,
//! * [`grid`] provides the cell-centred discretization,
//! * [`solver`] runs backward Euler with damped Newton and ε-continuation,
//! * [`harness`] computes regularity functionals and convergence studies,
//! * [`cli`] is the command-line front end.

pub mod cli;
pub mod config;
pub mod expr;
pub mod flux;
pub mod grid;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod problem;
pub mod solver;
pub mod varexp;

pub use flux::FluxPoint;
pub use grid::{Grid, GridFunction};
pub use problem::{Field, ProblemSpec};
