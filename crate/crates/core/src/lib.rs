//! Partial-volume-aware coronary lumen segmentation and lumped-parameter
//! hemodynamic simulation.
//!
//! The crate is organized along the processing chain:
//!
//! * [`io`]: volumes, centerlines, cylindrical resampling and on-disk formats
//! * [`phantom`]: synthetic blurred vessel phantoms with exact ground truth
//! * [`pve`]: centerline intensity-profile model, partial-volume detection and
//!   radius estimation from HU reduction
//! * [`likelihood`]: KNN ray database and lumen probabilities
//! * [`graphcut`]: graph energy over the cylindrical grid, min-cut, surfaces
//! * [`flowsim`]: nonlinear resistor network and FFR
//! * [`metrics`]: overlap, surface distance and diagnostic statistics

// `!(x > 0.0)`-style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod flowsim;
pub mod graphcut;
pub mod io;
pub mod likelihood;
pub mod metrics;
pub mod phantom;
pub mod pve;

pub use io::{Point3, ScalarVolume};

/// Crate version embedded into every written artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
