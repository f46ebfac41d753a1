//! Central Lyapunov exponents of step skew products over the full shift.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approx;
pub mod cli;
pub mod error;
pub mod gikn;
pub mod measures;
pub mod model;
pub mod orbits;
pub mod pliss;
pub mod spectrum;

pub use error::{LabError, Result};
pub use model::{FiberMap, SkewProductModel, Word};
pub use orbits::{OrbitIndex, PeriodicOrbit};
