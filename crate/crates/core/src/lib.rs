//! Slow-fast recursions: simulation, large-deviation rates, quasipotentials
//! and three-scale resonance.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod error;
pub mod numerics;
pub mod operator;
pub mod quasipotential;
pub mod rate;
pub mod resonance;
pub mod rng;
pub mod simulate;
pub mod system;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use system::{CirclePoint, FastDriverSpec, SlowBox, SlowVec, SystemSpec};
