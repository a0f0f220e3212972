//! Batch pipeline around `coropve-core`: phantom cases, calibration,
//! segmentation in both partial-volume modes, flow simulation, evaluation,
//! parameter sweeps and CSV/SVG reports.

// `!(x > 0.0)`-style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod case;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

pub use config::PipelineConfig;
pub use error::{CliError, ExitKind, Result};
