//! Cluster states of four delay-coupled Stuart-Landau oscillators in a
//! unidirectional ring: relative equilibria, their characteristic-root
//! stability, symmetry classification, branch continuation in the delay,
//! and direct simulation for cross-checks.

pub mod continuation;
pub mod coupling;
pub mod error;
pub mod equilibria;
pub mod model;
pub mod newton;
pub mod simulate;
pub mod stability;
pub mod symmetry;

pub use error::{Error, Result};
