//! Numerical tolerances shared across the crate.

use serde::{Deserialize, Serialize};

/// Tolerance set. Every field is overridable from a scenario file and the
/// whole set can be scaled uniformly with [`Tolerances::scaled`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Structure-constant, Leibniz and bracket-closure residuals.
    pub alg: f64,
    /// Inner-witness least-squares residual.
    pub inner: f64,
    /// Rank decisions in orthogonalization.
    pub rank: f64,
    /// Group membership residual.
    pub grp: f64,
    /// Cross-checks between flow strategies.
    pub num: f64,
    /// Default RK4 step for numeric flows.
    pub rk4_dt: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            alg: 1e-9,
            inner: 1e-7,
            rank: 1e-8,
            grp: 1e-9,
            num: 1e-7,
            rk4_dt: 1e-3,
        }
    }
}

impl Tolerances {
    /// Multiplies every tolerance (not the step size) by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            alg: self.alg * factor,
            inner: self.inner * factor,
            rank: self.rank * factor,
            grp: self.grp * factor,
            num: self.num * factor,
            rk4_dt: self.rk4_dt,
        }
    }

    pub fn all_positive(&self) -> bool {
        [
            self.alg,
            self.inner,
            self.rank,
            self.grp,
            self.num,
            self.rk4_dt,
        ]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0)
    }
}
