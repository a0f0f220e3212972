//! Lumen segmentation as a star-constrained binary labeling on the
//! cylindrical grid, solved exactly by s-t min-cut.

pub mod graph;
pub mod maxflow;
pub mod segment;
pub mod surface;

pub use graph::{
    effective_variance, pairwise_weight, solve_min_cut, unary_cost, Labeling, SegmentationGraph, UnaryCost,
    DEFAULT_GRAPH_LAMBDA, PROB_EPS,
};
pub use maxflow::{FlowGraph, MinCutResult};
pub use segment::{
    prepare_branch, segment_branch, segment_prepared, BranchInputs, PveMode, SegmentConfig, SegmentError, Segmentation,
};
pub use surface::{effective_diameter, extract_surface, polar_area, LumenSurface, SurfaceDocument, SurfacePlane};
