//! The shared tolerance profile.
//!
//! Contractivity certificates and constraint tightening must measure slack
//! with the same yardstick, so every module draws its tolerances from this
//! one struct instead of scattering magic numbers.

use serde::{Deserialize, Serialize};

/// Numerical tolerances shared by all modules.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Tolerances {
    /// Primal feasibility tolerance requested from the solver.
    pub solver_primal: f64,
    /// Dual feasibility / gap tolerance requested from the solver.
    pub solver_dual: f64,
    /// Acceptance slack for derived quantities (duality gaps, vertex/support
    /// agreement, membership of exact points).
    pub acceptance: f64,
    /// Slack below which a coefficient polytope counts as nonempty.
    pub emptiness: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            solver_primal: 1e-8,
            solver_dual: 1e-8,
            acceptance: 1e-6,
            emptiness: 1e-8,
        }
    }
}

impl Tolerances {
    pub const DEFAULT: Tolerances = Tolerances {
        solver_primal: 1e-8,
        solver_dual: 1e-8,
        acceptance: 1e-6,
        emptiness: 1e-8,
    };
}
