//! Numerical core of the press optimizer.
//!
//! Everything in this crate is pure computation over in-memory data and builds
//! without `std` (an allocator is required). File formats, process control,
//! the optimization loop driver and the HTTP service live in the `pressopt`
//! crate.
//!
//! Module map:
//!
//! * [`space`]: parameter schemas, range expansion and candidate generation.
//! * [`gp`]: the multi-output Gaussian-process surrogate (independent,
//!   coupled-mean and LCM flavors) with a latent input encoder.
//! * [`acquisition`]: expected improvement, attention scaling and parallel
//!   sample selection.
//! * [`moe`]: point clouds, the geometric encoder and mixture-of-experts gating.
//! * [`press`]: the synthetic deep-drawing response used as a simulation backend.
//! * [`policy`]: early termination, end conditions and loop bookkeeping.
//! * [`initial`]: the per-parameter regressor that proposes a starting design.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod acquisition;
pub mod error;
pub mod gp;
pub mod initial;
pub mod math;
pub mod moe;
pub mod nn;
pub mod policy;
pub mod prediction;
pub mod press;
pub mod space;
pub mod values;

pub use error::{Error, Result};
pub use prediction::{Covariance, PosteriorPrediction};
pub use values::{DesignPoint, NamedValues};

/// Names of the seven feasibility classes, in order.
pub const TARGET_NAMES: [&str; 7] = ["L1", "L2", "L3", "L4", "L5", "L6", "L7"];
