//! Data-driven elastic tube MPC for unknown linear systems under bounded
//! disturbances.
//!
//! The crate identifies constrained-matrix-zonotope model sets from a short
//! noisy input–state batch (optionally fused with prior knowledge), co-designs
//! a contractive polyhedral error tube and ancillary feedback gain via a
//! linear program, and runs the alternating tube-MPC closed loop.
//!
//! Module layout:
//! - [`optim`] — uniform LP/QP solver contract (backed by Clarabel).
//! - [`setops`] — zonotopes, constrained (matrix) zonotopes, H-polytopes,
//!   support functions, vertex enumeration, sampling.
//! - [`sysid`] — data batches and every model/disturbance set construction.
//! - [`tubegain`] — the tube–gain linear program, facet bounds, the one-step
//!   error set, and the polytopic Lyapunov function.
//! - [`tmpc`] — constraint tightening, terminal ingredients, and the nominal
//!   MPC quadratic program.
//! - [`simbench`] — plants, closed-loop simulation, the fixed-tube baseline,
//!   Monte-Carlo feasibility sweeps, and run verification.
//!
//! See the `examples/` directory for one runnable example per capability and
//! the `zonotube` binary for the batch CLI.

pub mod config;
pub mod optim;
pub mod setops;
pub mod simbench;
pub mod sysid;
pub mod tmpc;
pub mod tubegain;

pub use config::Tolerances;
