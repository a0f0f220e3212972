//! Lumped-parameter coronary flow: the segmented tree becomes a network of
//! nonlinear resistors (Poiseuille friction plus an expansion loss) between
//! a fixed ostial pressure and diameter-scaled outlet resistances; the
//! steady flow is found by damped fixed-point iteration on the effective
//! resistances.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::graphcut::LumenSurface;
use crate::io::{parse_json, read_file, write_atomic, CenterlineTree, FormatError, IoError, TreeSide};

/// Pa per mmHg.
pub const PA_PER_MMHG: f64 = 133.322387415;
/// m^3/s per mL/s.
const M3_PER_ML: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum FlowError {
    #[error("topology error: {0}")]
    Topology(String),
    #[error("invalid flow parameter: {0}")]
    Invalid(String),
    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e} mL/s)")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("singular network matrix")]
    Singular,
    #[error("location error: {0}")]
    Location(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Piece of a branch between two nodes with its diameter profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub branch: usize,
    pub start_mm: f64,
    pub end_mm: f64,
    /// `(arc length on the branch, effective diameter)` samples covering
    /// `[start_mm, end_mm]`, strictly increasing in arc length.
    pub profile: Vec<[f64; 2]>,
    pub parent_node: usize,
    pub child_node: usize,
}

impl Segment {
    pub fn length(&self) -> f64 {
        self.end_mm - self.start_mm
    }

    pub fn min_diameter(&self) -> f64 {
        self.profile.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min)
    }

    pub fn distal_diameter(&self) -> f64 {
        self.profile[self.profile.len() - 1][1]
    }
}

/// Segment tree rooted at the ostium (node 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselTree {
    pub n_nodes: usize,
    pub segments: Vec<Segment>,
    pub tree_side: TreeSide,
}

impl VesselTree {
    /// Nodes with no outgoing segment.
    pub fn outlets(&self) -> Vec<usize> {
        let mut has_child = vec![false; self.n_nodes];
        for s in &self.segments {
            has_child[s.parent_node] = true;
        }
        (0..self.n_nodes).filter(|&n| n != 0 && !has_child[n]).collect()
    }

    /// Segment ending at each node (`None` for the root).
    pub fn incoming(&self) -> Vec<Option<usize>> {
        let mut inc = vec![None; self.n_nodes];
        for (k, s) in self.segments.iter().enumerate() {
            inc[s.child_node] = Some(k);
        }
        inc
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        let bad = |m: String| Err(FlowError::Topology(m));
        if self.n_nodes < 2 || self.segments.len() != self.n_nodes - 1 {
            return bad(format!("{} segments for {} nodes is not a tree", self.segments.len(), self.n_nodes));
        }
        let mut seen_child = vec![false; self.n_nodes];
        for (k, s) in self.segments.iter().enumerate() {
            if s.parent_node >= self.n_nodes || s.child_node >= self.n_nodes || s.child_node == 0 {
                return bad(format!("segment {k} has invalid nodes"));
            }
            if std::mem::replace(&mut seen_child[s.child_node], true) {
                return bad(format!("node {} has two incoming segments", s.child_node));
            }
            if !(s.length() > 0.0) {
                return bad(format!("segment {k} has length {}", s.length()));
            }
            if s.profile.len() < 2
                || s.profile.iter().any(|p| !(p[1].is_finite() && p[1] > 0.0 && p[0].is_finite()))
                || s.profile.windows(2).any(|w| !(w[1][0] > w[0][0]))
            {
                return bad(format!("segment {k} needs an increasing profile with positive diameters"));
            }
        }
        // every node must reach the root
        let inc = self.incoming();
        for start in 1..self.n_nodes {
            let (mut n, mut steps) = (start, 0);
            while n != 0 {
                let Some(k) = inc[n] else { return bad(format!("node {start} is disconnected")) };
                n = self.segments[k].parent_node;
                steps += 1;
                if steps > self.n_nodes {
                    return bad("cycle in segment tree".into());
                }
            }
        }
        Ok(())
    }
}

fn interpolate(profile: &[[f64; 2]], s: f64) -> f64 {
    if s <= profile[0][0] {
        return profile[0][1];
    }
    for w in profile.windows(2) {
        if s <= w[1][0] {
            let t = (s - w[0][0]) / (w[1][0] - w[0][0]);
            return w[0][1] + t * (w[1][1] - w[0][1]);
        }
    }
    profile[profile.len() - 1][1]
}

/// Moving median over a window of three samples; ends keep their value.
pub fn median3(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            if i == 0 || i + 1 == n {
                values[i]
            } else {
                let mut w = [values[i - 1], values[i], values[i + 1]];
                w.sort_by(f64::total_cmp);
                w[1]
            }
        })
        .collect()
}

/// Split every branch at the attachment points of its children and attach
/// the smoothed per-plane effective diameters.
pub fn tree_from_surfaces(surfaces: &[LumenSurface], topology: &CenterlineTree) -> Result<VesselTree, FlowError> {
    let n_branches = topology.branches.len();
    if surfaces.len() != n_branches {
        return Err(FlowError::Topology(format!("{} surfaces for {n_branches} branches", surfaces.len())));
    }
    topology.validate().map_err(|e| FlowError::Topology(e.to_string()))?;
    let profiles: Vec<Vec<[f64; 2]>> = surfaces
        .iter()
        .enumerate()
        .map(|(b, s)| {
            if s.planes.len() < 2 {
                return Err(FlowError::Topology(format!("surface of branch {b} has fewer than 2 planes")));
            }
            let smooth = median3(&s.effective_diameters());
            Ok(s.arc_lengths().into_iter().zip(smooth).map(|(a, d)| [a, d]).collect())
        })
        .collect::<Result<_, _>>()?;

    let mut segments = Vec::new();
    let mut n_nodes = 1;
    // node at the start of each branch; the root starts at node 0
    let mut start_node = vec![usize::MAX; n_branches];
    let root = topology.root();
    start_node[root] = 0;
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(b) = queue.pop_front() {
        let length = topology.branches[b].length();
        let mut children = topology.children(b);
        children.sort_by(|&x, &y| {
            let (ax, ay) = (topology.parents[x].as_ref(), topology.parents[y].as_ref());
            ax.map(|a| a.arc_length_mm).partial_cmp(&ay.map(|a| a.arc_length_mm)).expect("finite").then(x.cmp(&y))
        });
        let mut cuts: Vec<f64> = children
            .iter()
            .map(|&c| topology.parents[c].as_ref().expect("child has parent").arc_length_mm)
            .filter(|&s| s > 0.0 && s < length)
            .collect();
        cuts.dedup();
        cuts.push(length);
        let mut node = start_node[b];
        let mut s0 = 0.0;
        let mut node_at = vec![(0.0, node)];
        for &s1 in &cuts {
            let profile = &profiles[b];
            let mut samples = vec![[s0, interpolate(profile, s0)]];
            samples.extend(profile.iter().filter(|p| p[0] > s0 + 1e-9 && p[0] < s1 - 1e-9).copied());
            samples.push([s1, interpolate(profile, s1)]);
            let child = n_nodes;
            n_nodes += 1;
            segments.push(Segment {
                branch: b,
                start_mm: s0,
                end_mm: s1,
                profile: samples,
                parent_node: node,
                child_node: child,
            });
            node = child;
            s0 = s1;
            node_at.push((s1, child));
        }
        for &c in &children {
            let at = topology.parents[c].as_ref().expect("child has parent").arc_length_mm;
            let (_, n) =
                node_at.iter().min_by(|x, y| (x.0 - at).abs().total_cmp(&(y.0 - at).abs())).copied().expect("nonempty");
            start_node[c] = n;
            queue.push_back(c);
        }
    }
    let tree = VesselTree { n_nodes, segments, tree_side: topology.tree_side };
    tree.validate()?;
    Ok(tree)
}

/// Fluid and boundary parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub viscosity_pa_s: f64,
    pub density_kg_m3: f64,
    pub expansion_loss_coefficient: f64,
    pub outlet_exponent: f64,
    /// Total parallel outlet resistance per tree, mmHg s/mL; `None` uses
    /// the healthy-reference calibration.
    pub outlet_scale: Option<f64>,
    pub ostial_pressure_mmhg: f64,
    pub venous_pressure_mmhg: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            viscosity_pa_s: 0.0035,
            density_kg_m3: 1050.0,
            expansion_loss_coefficient: 1.0,
            outlet_exponent: -1.0 / 3.0,
            outlet_scale: None,
            ostial_pressure_mmhg: 100.0,
            venous_pressure_mmhg: 0.0,
        }
    }
}

/// Healthy reference used to calibrate the outlet scale: a uniform tube of
/// this diameter and length reaches this FFR at its outlet.
pub const REFERENCE_DIAMETER_MM: f64 = 3.0;
pub const REFERENCE_LENGTH_MM: f64 = 100.0;
pub const REFERENCE_FFR: f64 = 0.97;

impl FlowConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        let pos = [
            ("viscosity_pa_s", self.viscosity_pa_s),
            ("density_kg_m3", self.density_kg_m3),
            ("ostial_pressure_mmhg", self.ostial_pressure_mmhg),
        ];
        for (name, v) in pos {
            if !(v.is_finite() && v > 0.0) {
                return Err(FlowError::Invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.expansion_loss_coefficient.is_finite() && self.expansion_loss_coefficient >= 0.0) {
            return Err(FlowError::Invalid("expansion_loss_coefficient must be >= 0".into()));
        }
        if !self.outlet_exponent.is_finite() {
            return Err(FlowError::Invalid("outlet_exponent must be finite".into()));
        }
        if !(self.venous_pressure_mmhg.is_finite() && self.venous_pressure_mmhg < self.ostial_pressure_mmhg) {
            return Err(FlowError::Invalid("venous_pressure_mmhg must be below the ostial pressure".into()));
        }
        if let Some(s) = self.outlet_scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(FlowError::Invalid(format!("outlet_scale must be > 0, got {s}")));
            }
        }
        Ok(())
    }

    pub fn resolved_outlet_scale(&self) -> f64 {
        self.outlet_scale.unwrap_or_else(|| calibrate_outlet_scale(self))
    }
}

/// Poiseuille resistance (mmHg s/mL) of a uniform tube, dimensions in mm.
pub fn poiseuille_resistance(viscosity_pa_s: f64, length_mm: f64, diameter_mm: f64) -> f64 {
    let (l, d) = (length_mm * 1e-3, diameter_mm * 1e-3);
    128.0 * viscosity_pa_s * l / (std::f64::consts::PI * d.powi(4)) / PA_PER_MMHG * M3_PER_ML
}

/// Outlet scale for which the healthy reference tube has FFR 0.97.
pub fn calibrate_outlet_scale(cfg: &FlowConfig) -> f64 {
    let r = poiseuille_resistance(cfg.viscosity_pa_s, REFERENCE_LENGTH_MM, REFERENCE_DIAMETER_MM);
    r * REFERENCE_FFR / (1.0 - REFERENCE_FFR)
}

/// Edge law `dP = r_lin Q + r_quad Q |Q|` (mmHg, mL/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resistor {
    pub from: usize,
    /// `None` for an outlet resistor draining to the venous pressure.
    pub to: Option<usize>,
    pub r_lin: f64,
    pub r_quad: f64,
}

impl Resistor {
    /// Exact flow for a pressure drop.
    pub fn flow(&self, dp: f64) -> f64 {
        if self.r_quad <= 0.0 {
            return dp / self.r_lin;
        }
        // rationalized root of r_quad q^2 + r_lin q = |dp|: no cancellation
        // when r_quad is tiny
        let q = 2.0 * dp.abs() / (self.r_lin + (self.r_lin * self.r_lin + 4.0 * self.r_quad * dp.abs()).sqrt());
        q.copysign(dp)
    }
}

/// Resistor network between the ostium (node 0) and the outlets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowNetwork {
    pub n_nodes: usize,
    /// One per tree segment, in segment order, followed by the outlets.
    pub edges: Vec<Resistor>,
    /// `(node, diameter mm, resistance)` per outlet.
    pub outlets: Vec<(usize, f64, f64)>,
    pub ostial_pressure_mmhg: f64,
    pub venous_pressure_mmhg: f64,
}

/// Resistance terms of one segment.
pub fn segment_resistance(seg: &Segment, cfg: &FlowConfig) -> (f64, f64) {
    let p = &seg.profile;
    // trapezoid rule on 1/d^4 along the piecewise-linear profile
    let mut integral = 0.0;
    for w in p.windows(2) {
        let ds = w[1][0] - w[0][0];
        integral += 0.5 * ds * (w[0][1].powi(-4) + w[1][1].powi(-4));
    }
    // mm^-3 -> m^-3
    let r_lin = 128.0 * cfg.viscosity_pa_s * integral * 1e9 / std::f64::consts::PI / PA_PER_MMHG * M3_PER_ML;
    let area = |d_mm: f64| std::f64::consts::PI * (0.5e-3 * d_mm).powi(2);
    let (a_min, a_dist) = (area(seg.min_diameter()), area(seg.distal_diameter()));
    let r_quad_si = cfg.expansion_loss_coefficient * cfg.density_kg_m3 / 2.0 * (1.0 / a_min - 1.0 / a_dist).powi(2);
    let r_quad = r_quad_si / PA_PER_MMHG * M3_PER_ML * M3_PER_ML;
    (r_lin, r_quad)
}

/// Outlet resistances `R_i = scale * c_i * sum_j 1/c_j` with
/// `c_i = d_i^exponent`, so that the outlets in parallel total `scale`.
pub fn outlet_resistances(diameters: &[f64], exponent: f64, scale: f64) -> Vec<f64> {
    let c: Vec<f64> = diameters.iter().map(|d| d.powf(exponent)).collect();
    let inv_sum: f64 = c.iter().map(|c| 1.0 / c).sum();
    c.iter().map(|ci| scale * ci * inv_sum).collect()
}

pub fn build_network(tree: &VesselTree, cfg: &FlowConfig) -> Result<FlowNetwork, FlowError> {
    cfg.validate()?;
    tree.validate()?;
    let mut edges: Vec<Resistor> = tree
        .segments
        .iter()
        .map(|s| {
            let (r_lin, r_quad) = segment_resistance(s, cfg);
            Resistor { from: s.parent_node, to: Some(s.child_node), r_lin, r_quad }
        })
        .collect();
    let inc = tree.incoming();
    let outlet_nodes = tree.outlets();
    let diameters: Vec<f64> =
        outlet_nodes.iter().map(|&n| tree.segments[inc[n].expect("outlet has a segment")].distal_diameter()).collect();
    let r_out = outlet_resistances(&diameters, cfg.outlet_exponent, cfg.resolved_outlet_scale());
    let mut outlets = Vec::new();
    for ((&n, &d), &r) in outlet_nodes.iter().zip(&diameters).zip(&r_out) {
        edges.push(Resistor { from: n, to: None, r_lin: r, r_quad: 0.0 });
        outlets.push((n, d, r));
    }
    Ok(FlowNetwork {
        n_nodes: tree.n_nodes,
        edges,
        outlets,
        ostial_pressure_mmhg: cfg.ostial_pressure_mmhg,
        venous_pressure_mmhg: cfg.venous_pressure_mmhg,
    })
}

pub const FLOW_TOLERANCE: f64 = 1e-9;
pub const PRESSURE_TOLERANCE: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 200;
const DAMPING: f64 = 0.5;

/// Solved pressures and flows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    pub node_pressures: Vec<f64>,
    pub edge_flows: Vec<f64>,
    pub ostial_pressure_mmhg: f64,
    pub iterations: usize,
    /// Largest nodal flow imbalance under the exact edge laws, mL/s.
    pub solver_residual: f64,
}

impl FlowResult {
    pub fn ffr_at_node(&self, node: usize) -> f64 {
        self.node_pressures[node] / self.ostial_pressure_mmhg
    }
}

fn node_pressures(net: &FlowNetwork, resistance: &[f64]) -> Result<Vec<f64>, FlowError> {
    // unknowns: nodes 1..n
    let m = net.n_nodes - 1;
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut b = DVector::<f64>::zeros(m);
    let p0 = net.ostial_pressure_mmhg;
    for (e, r) in net.edges.iter().zip(resistance) {
        let g = 1.0 / r;
        let nodes = [Some(e.from), e.to];
        for (x, y) in [(nodes[0], nodes[1]), (nodes[1], nodes[0])] {
            let Some(x) = x else { continue };
            if x == 0 {
                continue;
            }
            a[(x - 1, x - 1)] += g;
            match y {
                Some(0) => b[x - 1] += g * p0,
                Some(y) => a[(x - 1, y - 1)] -= g,
                None => b[x - 1] += g * net.venous_pressure_mmhg,
            }
        }
    }
    let x = a.lu().solve(&b).ok_or(FlowError::Singular)?;
    let mut p = vec![p0];
    p.extend(x.iter().copied());
    Ok(p)
}

fn edge_drop(net: &FlowNetwork, e: &Resistor, p: &[f64]) -> f64 {
    p[e.from] - e.to.map_or(net.venous_pressure_mmhg, |t| p[t])
}

/// Largest flow imbalance over non-root nodes using the exact edge laws.
fn imbalance(net: &FlowNetwork, p: &[f64]) -> (Vec<f64>, f64) {
    let flows: Vec<f64> = net.edges.iter().map(|e| e.flow(edge_drop(net, e, p))).collect();
    let mut net_in = vec![0.0; net.n_nodes];
    for (e, &q) in net.edges.iter().zip(&flows) {
        net_in[e.from] -= q;
        if let Some(t) = e.to {
            net_in[t] += q;
        }
    }
    let worst = net_in[1..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (flows, worst)
}

/// Steady flow by damped fixed point on `R_eff(Q) = r_lin + r_quad |Q|`.
pub fn solve_flow(net: &FlowNetwork) -> Result<FlowResult, FlowError> {
    if net.n_nodes < 2 {
        return Err(FlowError::Topology("network needs at least two nodes".into()));
    }
    if net.edges.iter().any(|e| !(e.r_lin > 0.0 && e.r_lin.is_finite() && e.r_quad >= 0.0 && e.r_quad.is_finite())) {
        return Err(FlowError::Invalid("edge resistances must be positive and finite".into()));
    }
    let mut q = vec![0.0; net.edges.len()];
    let mut p_prev: Option<Vec<f64>> = None;
    let mut residual = f64::INFINITY;
    for it in 1..=MAX_ITERATIONS {
        let r_eff: Vec<f64> =
            net.edges.iter().zip(&q).map(|(e, q): (&Resistor, &f64)| e.r_lin + e.r_quad * q.abs()).collect();
        let p = node_pressures(net, &r_eff)?;
        let (flows, worst) = imbalance(net, &p);
        residual = worst;
        let dp = p_prev.as_ref().map_or(f64::INFINITY, |prev| {
            p.iter().zip(prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / net.ostial_pressure_mmhg
        });
        let linear = net.edges.iter().all(|e| e.r_quad == 0.0);
        if worst < FLOW_TOLERANCE && (dp < PRESSURE_TOLERANCE || linear) {
            return Ok(FlowResult {
                node_pressures: p,
                edge_flows: flows,
                ostial_pressure_mmhg: net.ostial_pressure_mmhg,
                iterations: it,
                solver_residual: worst,
            });
        }
        for ((qk, e), r) in q.iter_mut().zip(&net.edges).zip(&r_eff) {
            let q_new = edge_drop(net, e, &p) / r;
            *qk = DAMPING * q_new + (1.0 - DAMPING) * *qk;
        }
        p_prev = Some(p);
    }
    Err(FlowError::NoConvergence { iterations: MAX_ITERATIONS, residual })
}

/// Point on a segment, `arc_mm` measured on its branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub segment: usize,
    pub arc_mm: f64,
}

/// FFR at a location, interpolating pressure linearly along the segment.
pub fn ffr_at(tree: &VesselTree, result: &FlowResult, loc: Location) -> Result<f64, FlowError> {
    let seg = tree
        .segments
        .get(loc.segment)
        .ok_or_else(|| FlowError::Location(format!("segment {} does not exist", loc.segment)))?;
    if !(loc.arc_mm >= seg.start_mm - 1e-9 && loc.arc_mm <= seg.end_mm + 1e-9) {
        return Err(FlowError::Location(format!(
            "arc {} mm outside segment {} [{}, {}]",
            loc.arc_mm, loc.segment, seg.start_mm, seg.end_mm
        )));
    }
    let t = ((loc.arc_mm - seg.start_mm) / seg.length()).clamp(0.0, 1.0);
    let (pa, pb) = (result.node_pressures[seg.parent_node], result.node_pressures[seg.child_node]);
    Ok((pa + t * (pb - pa)) / result.ostial_pressure_mmhg)
}

/// Per-tree flow report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeReport {
    pub tree_side: TreeSide,
    pub ostial_pressure_mmhg: f64,
    pub outlet_scale: f64,
    pub outlets: Vec<OutletReport>,
    pub node_pressures_mmhg: Vec<f64>,
    pub edge_flows_ml_s: Vec<f64>,
    pub lesions: Vec<LesionReport>,
    pub min_outlet_ffr: f64,
    pub iterations: usize,
    pub solver_residual_ml_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutletReport {
    pub node: usize,
    pub diameter_mm: f64,
    pub resistance_mmhg_s_ml: f64,
    pub ffr: f64,
}

/// Narrowest point of a segment that has an expansion loss, with the FFR
/// just distal to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionReport {
    pub segment: usize,
    pub branch: usize,
    pub min_diameter_mm: f64,
    pub arc_mm: f64,
    pub ffr: f64,
}

/// Build, solve and summarize one tree.
pub fn simulate_tree(tree: &VesselTree, cfg: &FlowConfig) -> Result<TreeReport, FlowError> {
    let net = build_network(tree, cfg)?;
    let result = solve_flow(&net)?;
    let outlets: Vec<OutletReport> = net
        .outlets
        .iter()
        .map(|&(node, d, r)| OutletReport {
            node,
            diameter_mm: d,
            resistance_mmhg_s_ml: r,
            ffr: result.ffr_at_node(node),
        })
        .collect();
    let mut lesions = Vec::new();
    for (k, seg) in tree.segments.iter().enumerate() {
        if net.edges[k].r_quad > 0.0 {
            let narrow = seg.profile.iter().min_by(|a, b| a[1].total_cmp(&b[1])).expect("nonempty");
            lesions.push(LesionReport {
                segment: k,
                branch: seg.branch,
                min_diameter_mm: narrow[1],
                arc_mm: narrow[0],
                ffr: result.ffr_at_node(seg.child_node),
            });
        }
    }
    Ok(TreeReport {
        tree_side: tree.tree_side,
        ostial_pressure_mmhg: net.ostial_pressure_mmhg,
        outlet_scale: cfg.resolved_outlet_scale(),
        min_outlet_ffr: outlets.iter().map(|o| o.ffr).fold(f64::INFINITY, f64::min),
        outlets,
        node_pressures_mmhg: result.node_pressures,
        edge_flows_ml_s: result.edge_flows,
        lesions,
        iterations: result.iterations,
        solver_residual_ml_s: result.solver_residual,
    })
}

/// `*.ffr.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfrDocument {
    pub tool_version: String,
    pub config: serde_json::Value,
    pub trees: Vec<TreeReport>,
}

impl FfrDocument {
    pub fn from_json_slice(bytes: &[u8]) -> Result<Self, FormatError> {
        parse_json(bytes)
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serializes");
        out.push(b'\n');
        out
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let bytes = read_file(path)?;
        Self::from_json_slice(&bytes).map_err(|e| e.in_file(path).into())
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        write_atomic(path, &self.to_json())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(branch: usize, parent: usize, child: usize, len: f64, d: f64) -> Segment {
        Segment {
            branch,
            start_mm: 0.0,
            end_mm: len,
            profile: vec![[0.0, d], [len, d]],
            parent_node: parent,
            child_node: child,
        }
    }

    #[test]
    fn poiseuille_reference_value() {
        // 128 * 0.0035 * 0.1 / (pi * 0.003^4) Pa s/m^3
        let si = 128.0 * 0.0035 * 0.1 / (std::f64::consts::PI * 8.1e-11);
        let r = poiseuille_resistance(0.0035, 100.0, 3.0);
        assert!((r - si / 133.322387415 / 1e6).abs() < 1e-12);
        assert!((r - 1.3205).abs() < 1e-3);
    }

    #[test]
    fn voltage_divider() {
        let net = FlowNetwork {
            n_nodes: 2,
            edges: vec![
                Resistor { from: 0, to: Some(1), r_lin: 2.0, r_quad: 0.0 },
                Resistor { from: 1, to: None, r_lin: 30.0, r_quad: 0.0 },
            ],
            outlets: vec![(1, 3.0, 30.0)],
            ostial_pressure_mmhg: 100.0,
            venous_pressure_mmhg: 0.0,
        };
        let r = solve_flow(&net).unwrap();
        assert!((r.node_pressures[1] - 100.0 * 30.0 / 32.0).abs() < 1e-9);
    }

    #[test]
    fn outlet_ratio_follows_exponent() {
        let r = outlet_resistances(&[8.0, 1.0], -1.0 / 3.0, 10.0);
        assert!((r[0] / r[1] - 0.5).abs() < 1e-15);
        let parallel = 1.0 / (1.0 / r[0] + 1.0 / r[1]);
        assert!((parallel - 10.0).abs() < 1e-12);
    }

    #[test]
    fn reference_tube_reaches_calibrated_ffr() {
        let tree = VesselTree { n_nodes: 2, segments: vec![uniform(0, 0, 1, 100.0, 3.0)], tree_side: TreeSide::Left };
        let rep = simulate_tree(&tree, &FlowConfig::default()).unwrap();
        assert!((rep.min_outlet_ffr - 0.97).abs() < 1e-12);
        assert!(rep.lesions.is_empty());
    }

    #[test]
    fn symmetric_bifurcation_splits_evenly() {
        let tree = VesselTree {
            n_nodes: 4,
            segments: vec![uniform(0, 0, 1, 30.0, 3.0), uniform(1, 1, 2, 20.0, 2.0), uniform(2, 1, 3, 20.0, 2.0)],
            tree_side: TreeSide::Right,
        };
        let net = build_network(&tree, &FlowConfig::default()).unwrap();
        let r = solve_flow(&net).unwrap();
        assert_eq!(r.edge_flows[1], r.edge_flows[2]);
        assert!((r.edge_flows[0] - r.edge_flows[1] - r.edge_flows[2]).abs() < 1e-12);
    }

    #[test]
    fn median_smoothing_removes_single_spikes() {
        assert_eq!(median3(&[2.0, 2.0, 9.0, 2.0, 2.0]), vec![2.0; 5]);
    }

    #[test]
    fn ffr_location_checks() {
        let tree = VesselTree { n_nodes: 2, segments: vec![uniform(0, 0, 1, 10.0, 3.0)], tree_side: TreeSide::Left };
        let net = build_network(&tree, &FlowConfig { outlet_scale: Some(8.0), ..Default::default() }).unwrap();
        let res = solve_flow(&net).unwrap();
        assert_eq!(ffr_at(&tree, &res, Location { segment: 0, arc_mm: 0.0 }).unwrap(), 1.0);
        assert!(matches!(ffr_at(&tree, &res, Location { segment: 3, arc_mm: 0.0 }), Err(FlowError::Location(_))));
        assert!(matches!(ffr_at(&tree, &res, Location { segment: 0, arc_mm: 11.0 }), Err(FlowError::Location(_))));
    }
}
