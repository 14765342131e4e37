//! Data-fusion experiment design: pick `s` of `n` candidate rank-one updates
//! to an existing positive definite information matrix so that the
//! log-determinant of the fused matrix is maximized.
//!
//! The crate is organized bottom-up:
//!
//! * [`linalg`]: dense symmetric kernels (Cholesky, Jacobi eigensolver,
//!   rank-one log-determinant updates, elementary symmetric polynomials).
//! * [`instance`]: problem container with derived factorizations, generators,
//!   reductions to and from principal-submatrix entropy problems, and file
//!   round-tripping.
//! * [`relax`]: continuous relaxations solved by Frank-Wolfe, with dual
//!   certificates that upper-bound the integer optimum regardless of
//!   convergence.
//! * [`approx`]: local search, greedy, proportional subset sampling, and its
//!   derandomization, each with a certified performance floor.
//! * [`exact`]: linear cut machinery, variable fixing by dual shifts, and a
//!   branch-and-bound solver that certifies optimality.
//!
//! All solver entry points are deterministic for a fixed input and seed.

#![allow(clippy::needless_range_loop)]

pub mod approx;
pub mod exact;
pub mod instance;
pub mod linalg;
mod par;
pub mod relax;

pub use instance::{DdfInstance, Selection};
