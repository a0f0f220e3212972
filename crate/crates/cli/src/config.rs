//! Pipeline configuration shared by every command.

use std::path::Path;

use serde::{Deserialize, Serialize};

use coropve_core::flowsim::FlowConfig;
use coropve_core::graphcut::{PveMode, SegmentConfig, DEFAULT_GRAPH_LAMBDA};
use coropve_core::io::{parse_json, GridSpec};
use coropve_core::likelihood::{default_kernel_lambda, CalciumConfig, DEFAULT_K_NEIGHBORS};
use coropve_core::pve::DetectConfig;

use crate::error::{CliError, Result};

/// Diameters (mm) of the blurred cylinders used to calibrate the radius model.
pub const DEFAULT_CALIBRATION_DIAMETERS_MM: [f64; 4] = [0.8, 1.2, 1.6, 2.0];
/// FFR at or below which a case is called hemodynamically significant.
pub const DEFAULT_FFR_THRESHOLD: f64 = 0.8;

/// All tunable parameters. Every field has a default, so `{}` is a valid
/// configuration; unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub grid: GridSpec,
    pub graph_lambda: f64,
    pub k_neighbors: usize,
    /// Ray-distance kernel rate; `None` selects a default from the number
    /// of radial samples.
    pub kernel_lambda: Option<f64>,
    pub calcium: CalciumConfig,
    pub detect: DetectConfig,
    pub pve_mode: PveMode,
    pub flow: FlowConfig,
    pub calibration_diameters_mm: Vec<f64>,
    pub ffr_threshold: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            graph_lambda: DEFAULT_GRAPH_LAMBDA,
            k_neighbors: DEFAULT_K_NEIGHBORS,
            kernel_lambda: None,
            calcium: CalciumConfig::default(),
            detect: DetectConfig::default(),
            pve_mode: PveMode::On,
            flow: FlowConfig::default(),
            calibration_diameters_mm: DEFAULT_CALIBRATION_DIAMETERS_MM.to_vec(),
            ffr_threshold: DEFAULT_FFR_THRESHOLD,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_slice(bytes: &[u8]) -> Result<Self> {
        let cfg: PipelineConfig = parse_json(bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load from `path`, or the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let bytes = std::fs::read(p).map_err(|e| CliError::data(e.to_string()).context(p.display()))?;
                Self::from_json_slice(&bytes).map_err(|e| e.context(p.display()))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.segment_config().validate().map_err(CliError::data)?;
        if let Some(l) = self.kernel_lambda {
            if !(l.is_finite() && l > 0.0) {
                return Err(CliError::data(format!("kernel_lambda must be > 0, got {l}")));
            }
        }
        self.flow.validate().map_err(|e| CliError::data(format!("flow: {e}")))?;
        let d = &self.calibration_diameters_mm;
        if d.len() < 2 || d.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(CliError::data("calibration_diameters_mm needs at least two positive diameters"));
        }
        if !self.ffr_threshold.is_finite() {
            return Err(CliError::data("ffr_threshold must be finite"));
        }
        Ok(())
    }

    pub fn segment_config(&self) -> SegmentConfig {
        SegmentConfig {
            grid: self.grid.clone(),
            graph_lambda: self.graph_lambda,
            k_neighbors: self.k_neighbors,
            calcium: self.calcium,
            detect: self.detect,
        }
    }

    pub fn resolved_kernel_lambda(&self) -> f64 {
        self.kernel_lambda.unwrap_or_else(|| default_kernel_lambda(self.grid.radii_mm.len()))
    }

    /// Copy with every defaulted-by-derivation value made explicit.
    pub fn resolved(&self) -> Self {
        let mut cfg = self.clone();
        cfg.kernel_lambda = Some(self.resolved_kernel_lambda());
        cfg.flow.outlet_scale = Some(self.flow.resolved_outlet_scale());
        cfg
    }

    /// Resolved configuration as embedded in output files.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self.resolved()).expect("config serializes")
    }
}
