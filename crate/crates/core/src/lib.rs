//! Training under label noise with per-class dynamic thresholds and
//! negative-class consistency.
//!
//! Each mini-batch is split by per-class adaptive thresholds on the
//! positive head's weak-view probabilities. Confident samples get
//! cross-entropy on the positive head; the rest get a top-k masked
//! consistency loss between weak and strong views on a separate
//! negative-class head. Both terms share one backbone.

pub mod augment;
pub mod config;
pub mod dataset;
pub mod error;
pub mod losses;
pub mod model;
pub mod optim;
pub mod real;
pub mod report;
pub mod selection;
pub mod trainer;

pub use error::{Error, Result};
pub use real::Real;
