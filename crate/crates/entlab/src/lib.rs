//! Numerical laboratory for entropic optimal transport on discrete measures.
//!
//! The crate solves the static entropic problem with quadratic cost
//! `|x - y|^2 / 2` and regularization horizon `T` in the log domain,
//! then studies the objects attached to the solution:
//!
//! * interpolated potentials along the horizon and their derivatives,
//! * curvature schedules and the stability constants they produce,
//! * exact Brownian-bridge mixture samplers and Euler-Maruyama paths,
//! * quantitative stability checks (entropy, gradient, Hessian) between
//!   the plans of nearby marginals,
//! * per-iteration convergence diagnostics for the alternating solver.
//!
//! Notation used throughout: `rho` is the fixed first marginal, `mu` the
//! target second marginal, `nu` a perturbed second marginal, `T` the
//! horizon. Potentials `phi` (rho side) and `psi` (mu side) are stored as
//! log weights `log_f`, `log_g` with the gauge `sum_j b_j log_g_j = 0`.
//! Interpolated values carry the `(d/2) ln(2 pi (T - s))` normalizer so
//! that value differences across times are consistent with the
//! Hamilton-Jacobi flow.
//!
//! Entry points: [`eot::sinkhorn_solve`] for the solver,
//! [`stability::run_campaign`] and [`convergence::run`] for batch checks,
//! [`driver::dispatch`] for the config-driven runner used by the thin CLI.
//! Each major capability also has a runnable example under `examples/`.

#![forbid(unsafe_code)]

pub mod assignment;
pub mod bridge;
pub mod constants;
pub mod convergence;
pub mod emit;
pub mod eot;
pub mod error;
pub mod gaussian;
pub mod linalg;
pub mod measures;
pub mod potentials;
pub mod quad;
pub mod stability;
pub mod stats;

pub use error::{Error, Result};
