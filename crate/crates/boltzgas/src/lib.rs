//! Deterministic kinetic solver and verification suite for the
//! space-inhomogeneous inelastic Boltzmann equation with a hard-sphere
//! kernel and an impact-velocity-dependent restitution coefficient.
//!
//! The solver constructs mild solutions for near-vacuum data with the
//! Kaniel-Shinbrot monotone iteration: a lower and an upper sequence of
//! linear-problem solutions squeeze onto the solution from both sides, and
//! the final bracket width is a two-sided numerical error bar. The crate is
//! organized around that pipeline:
//!
//! * [`restitution`] — restitution-coefficient families, the speed map
//!   `theta(z) = z e(z)`, its inverse, the collision Jacobian, and the
//!   admissibility checks (continuity, strict monotonicity of `theta`,
//!   boundedness of the angular integrability function).
//! * [`kinematics`] — pointwise collision transforms and their
//!   conservation/dissipation identities.
//! * [`grid`] — phase-space grids, distribution fields, Maxwellian-weighted
//!   norms, the trajectory ("sharp") transform, and moment functionals.
//! * [`collision`] — quadrature evaluation of the gain and loss operators,
//!   the dimensional and envelope constants, and numeric verification of
//!   the free-streaming and gain-envelope bounds.
//! * [`solver`] — the linear mild solve, the small-data threshold, the
//!   monotone iteration, and the mild-form residual.
//! * [`diagnostics`] — post-run audits: conservation and dissipation,
//!   density decay, weak-form residuals, pointwise vanishing.
//! * [`scenario`] / [`cli`] — run configuration, orchestration, and the
//!   command-line entry points.
//!
//! The `examples/` directory carries one runnable example per capability;
//! start with `examples/ks_reference_run.rs`.

pub mod cli;
pub mod collision;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod kinematics;
pub mod quad;
pub mod restitution;
pub mod scenario;
pub mod solver;

pub use error::{Error, Result};
