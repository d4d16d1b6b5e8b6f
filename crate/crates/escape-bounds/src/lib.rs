//! Bounds on the principal eigenvalue of Brownian escape problems, and
//! reconstruction of the quasi-stationary distribution.
//!
//! A particle diffuses in a bounded domain following overdamped Langevin
//! dynamics `dX = -grad V dt + sqrt(2 sigma) dB`, leaving through an absorbing
//! part of the boundary and reflecting off the rest. The exponential escape
//! rate is the principal eigenvalue `lambda_0` of the generator. This crate
//!
//! * compiles a pointwise dual relaxation of the variational problem for
//!   `lambda_0` into weighted sum-of-squares constraints and lowers them to a
//!   semidefinite program ([`soscompile`]),
//! * solves the SDP with a built-in primal-dual interior-point method
//!   ([`sdpsolve`]) and packages verified lower-bound certificates
//!   ([`certify`]),
//! * reconstructs the leading eigenfunction from the near-optimal certificate
//!   and computes Rayleigh-quotient upper bounds, quasi-stationary densities,
//!   and boundary exit probabilities ([`qsd`]),
//! * cross-checks everything against independent finite-difference and
//!   Monte Carlo oracles ([`oracle`]).
//!
//! Start with the runnable examples (`cargo run --example lower_bound`) or
//! the thin CLI (`escape-bounds lower --problem ... --degree N`).

pub mod bundled;
pub mod certify;
pub mod oracle;
pub mod polyalg;
pub mod problem;
pub mod qsd;
pub mod quadrature;
pub mod sdpsolve;
pub mod soscompile;

pub use certify::{degree_sweep, lower_bound, BoundResult, Certificate, SolveOptions};
pub use problem::{load_problem, load_problem_file, EscapeProblem};
pub use qsd::{rayleigh_upper_bound, EigenfunctionApprox};
