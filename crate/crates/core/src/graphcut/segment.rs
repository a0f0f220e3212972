//! Branch segmentation: warp, partial-volume detection, lumen probability,
//! graph min-cut and surface extraction.

use serde::{Deserialize, Serialize};

use super::graph::{solve_min_cut, SegmentationGraph, DEFAULT_GRAPH_LAMBDA};
use super::surface::{extract_surface, LumenSurface};
use crate::io::{warp_to_cylindrical, Centerline, CylindricalGrid, GridSpec, IoError, ScalarVolume};
use crate::likelihood::{
    calcium_mask, combine_probability, knn_grid_probability, CalciumConfig, LikelihoodError, RayDatabase,
    DEFAULT_K_NEIGHBORS,
};
use crate::pve::{
    detect_pve_with, estimated_radii, DetectConfig, IntensityProfile, ProfileModel, PveError, RadiusModel,
};

/// Whether the partial-volume override is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PveMode {
    On,
    Off,
}

impl PveMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PveMode::On => "on",
            PveMode::Off => "off",
        }
    }
}

impl std::str::FromStr for PveMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "on" => Ok(PveMode::On),
            "off" => Ok(PveMode::Off),
            other => Err(format!("pve mode must be 'on' or 'off', got '{other}'")),
        }
    }
}

/// Segmentation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    pub grid: GridSpec,
    pub graph_lambda: f64,
    pub k_neighbors: usize,
    pub calcium: CalciumConfig,
    pub detect: DetectConfig,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            graph_lambda: DEFAULT_GRAPH_LAMBDA,
            k_neighbors: DEFAULT_K_NEIGHBORS,
            calcium: CalciumConfig::default(),
            detect: DetectConfig::default(),
        }
    }
}

impl SegmentConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.grid.validate().map_err(|e| format!("grid: {e}"))?;
        if !(self.graph_lambda.is_finite() && self.graph_lambda >= 0.0) {
            return Err(format!("graph_lambda must be >= 0, got {}", self.graph_lambda));
        }
        if self.k_neighbors == 0 {
            return Err("k_neighbors must be >= 1".into());
        }
        let c = &self.calcium;
        if !c.threshold_hu.is_finite() || !(0.0..=1.0).contains(&c.probability) {
            return Err("calcium: threshold_hu must be finite and probability in [0, 1]".into());
        }
        if !(self.detect.min_sigma_hu.is_finite() && self.detect.min_sigma_hu >= 0.0) {
            return Err("detect.min_sigma_hu must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SegmentError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error("profile analysis failed: {0}")]
    Pve(#[from] PveError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Mode-independent inputs of a branch: the warped grid, the centerline
/// profile and the data-term probabilities.
#[derive(Debug, Clone)]
pub struct BranchInputs {
    pub grid: CylindricalGrid,
    pub profile: IntensityProfile,
    pub pr_d: Vec<f64>,
}

pub fn prepare_branch(
    vol: &ScalarVolume,
    cl: &Centerline,
    db: &RayDatabase,
    cfg: &SegmentConfig,
) -> Result<BranchInputs, SegmentError> {
    cfg.validate().map_err(SegmentError::Config)?;
    let grid = warp_to_cylindrical(vol, cl, &cfg.grid)?;
    let profile = IntensityProfile::along(vol, &grid.frames)?;
    let pr_d = knn_grid_probability(db, &grid, cfg.k_neighbors)?;
    Ok(BranchInputs { grid, profile, pr_d })
}

/// Result of segmenting one branch.
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub surface: LumenSurface,
    pub mode: PveMode,
    /// Robust profile model (partial-volume mode only).
    pub profile_model: Option<ProfileModel>,
    /// Estimated radius on planes that use the partial-volume override.
    pub plane_radius: Vec<Option<f64>>,
    pub calcium_vertices: usize,
    pub energy: f64,
}

impl Segmentation {
    pub fn pve_planes(&self) -> usize {
        self.plane_radius.iter().filter(|r| r.is_some()).count()
    }
}

pub fn segment_prepared(
    inputs: &BranchInputs,
    radius_model: &RadiusModel,
    mode: PveMode,
    cfg: &SegmentConfig,
) -> Result<Segmentation, SegmentError> {
    cfg.validate().map_err(SegmentError::Config)?;
    let grid = &inputs.grid;
    let (profile_model, plane_radius) = match mode {
        PveMode::Off => (None, vec![None; grid.n_planes()]),
        PveMode::On => {
            let model = detect_pve_with(&inputs.profile, &cfg.detect)?;
            let radii = estimated_radii(&inputs.profile, &model, radius_model);
            (Some(model), radii)
        }
    };
    let calcium = calcium_mask(&grid.intensities, cfg.calcium.threshold_hu);
    let field = combine_probability(
        &inputs.pr_d,
        grid.radii(),
        grid.n_angles(),
        &plane_radius,
        &calcium,
        cfg.calcium.probability,
    )?;
    let graph = SegmentationGraph::from_grid(grid, &field.prob, cfg.graph_lambda);
    let labeling = solve_min_cut(&graph);
    Ok(Segmentation {
        surface: extract_surface(&labeling.labels, grid),
        mode,
        profile_model,
        plane_radius,
        calcium_vertices: calcium.iter().filter(|&&c| c).count(),
        energy: labeling.energy,
    })
}

pub fn segment_branch(
    vol: &ScalarVolume,
    cl: &Centerline,
    db: &RayDatabase,
    radius_model: &RadiusModel,
    mode: PveMode,
    cfg: &SegmentConfig,
) -> Result<Segmentation, SegmentError> {
    let inputs = prepare_branch(vol, cl, db, cfg)?;
    segment_prepared(&inputs, radius_model, mode, cfg)
}
