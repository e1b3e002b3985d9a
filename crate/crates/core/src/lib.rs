//! Affine and bilinear control systems on matrix Lie groups.
//!
//! Closed-form concatenated-flow solutions, an RK4 oracle, and controllability
//! analysis (rank saturation, sampling probes, invariant-subgroup certificates
//! and solvable/compact verdicts).

pub mod algebra;
pub mod analysis;
pub mod config;
pub mod error;
pub mod fields;
pub mod groups;
pub mod rng;
pub mod scenario;
pub mod systems;

pub use config::Tolerances;
pub use error::{Error, Result};
