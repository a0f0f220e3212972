//! Binary labeling energy over the cylindrical grid and its exact
//! minimization by s-t min-cut under a star-shape constraint.

use serde::{Deserialize, Serialize};

use super::maxflow::FlowGraph;
use crate::io::CylindricalGrid;

/// Probability floor inside the logarithm of the unary term.
pub const PROB_EPS: f64 = 1e-6;
/// Smallest usable cross-section variance, HU^2.
pub const MIN_PLANE_VARIANCE: f64 = 1e-6;
/// Variance substituted for degenerate (near-constant) cross-sections, HU^2.
pub const PLANE_VARIANCE_FLOOR: f64 = 1.0;
pub const DEFAULT_GRAPH_LAMBDA: f64 = 1.75;

/// Data cost of labeling a vertex lumen or background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnaryCost {
    pub lumen: f64,
    pub background: f64,
}

/// `-log` of the (floored) lumen and background probabilities.
pub fn unary_cost(prob: f64) -> UnaryCost {
    let p = prob.clamp(0.0, 1.0);
    UnaryCost { lumen: -(p.max(PROB_EPS)).ln(), background: -((1.0 - p).max(PROB_EPS)).ln() }
}

/// Smoothness weight `exp(-(I_p - I_q)^2 / sigma_c) * exp(-d^2)`; a variance
/// below [`MIN_PLANE_VARIANCE`] is replaced by [`PLANE_VARIANCE_FLOOR`].
pub fn pairwise_weight(i_p: f64, i_q: f64, sigma_c: f64, spatial_dist: f64) -> f64 {
    let sigma = effective_variance(sigma_c);
    let di = i_p - i_q;
    (-(di * di) / sigma).exp() * (-(spatial_dist * spatial_dist)).exp()
}

pub fn effective_variance(sigma_c: f64) -> f64 {
    if sigma_c.is_finite() && sigma_c >= MIN_PLANE_VARIANCE {
        sigma_c
    } else {
        PLANE_VARIANCE_FLOOR
    }
}

/// Energy `sum unary + lambda * sum_{p~q} w_pq [x_p != x_q]` with hard
/// constraints `x_outer = lumen => x_inner = lumen`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationGraph {
    pub unary: Vec<UnaryCost>,
    /// Undirected neighbor pairs with unscaled weights.
    pub pairs: Vec<(usize, usize, f64)>,
    /// `(outer, inner)` star constraints.
    pub star: Vec<(usize, usize)>,
    pub graph_lambda: f64,
}

/// Optimal labeling (`true` = lumen) and its energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeling {
    pub labels: Vec<bool>,
    pub energy: f64,
}

impl SegmentationGraph {
    pub fn new(unary: Vec<UnaryCost>, graph_lambda: f64) -> Self {
        Self { unary, pairs: Vec::new(), star: Vec::new(), graph_lambda }
    }

    pub fn n_vertices(&self) -> usize {
        self.unary.len()
    }

    pub fn add_pair(&mut self, p: usize, q: usize, weight: f64) {
        debug_assert!(weight >= 0.0);
        self.pairs.push((p, q, weight));
    }

    pub fn add_star(&mut self, outer: usize, inner: usize) {
        self.star.push((outer, inner));
    }

    /// Graph over a cylindrical grid: 6-neighborhood in `(plane, angle,
    /// radius)` with angular wrap-around, weights from intensities and metric
    /// sample distances, star edges inward along every ray.
    pub fn from_grid(grid: &CylindricalGrid, prob: &[f64], graph_lambda: f64) -> Self {
        assert_eq!(prob.len(), grid.len(), "probability field does not match grid");
        let (n_p, n_a, n_r) = (grid.n_planes(), grid.n_angles(), grid.n_radii());
        let mut g = Self::new(prob.iter().map(|&p| unary_cost(p)).collect(), graph_lambda);
        let variance: Vec<f64> = (0..n_p).map(|i| population_variance(grid.plane_values(i))).collect();
        let positions: Vec<_> = (0..grid.len())
            .map(|v| {
                let (i, a, j) = grid.coords(v);
                grid.position(i, a, j)
            })
            .collect();
        let link = |g: &mut Self, p: usize, q: usize, sigma_c: f64| {
            let d = (positions[p] - positions[q]).norm();
            g.add_pair(p, q, pairwise_weight(grid.intensities[p], grid.intensities[q], sigma_c, d));
        };
        for (i, &var) in variance.iter().enumerate() {
            for a in 0..n_a {
                for j in 0..n_r {
                    let p = grid.index(i, a, j);
                    if i + 1 < n_p {
                        link(&mut g, p, grid.index(i + 1, a, j), var);
                    }
                    if a + 1 < n_a || (n_a > 2 && a + 1 == n_a) {
                        link(&mut g, p, grid.index(i, (a + 1) % n_a, j), var);
                    }
                    if j + 1 < n_r {
                        link(&mut g, p, grid.index(i, a, j + 1), var);
                    }
                    if j > 0 {
                        g.add_star(p, grid.index(i, a, j - 1));
                    }
                }
            }
        }
        g
    }

    pub fn is_star_feasible(&self, labels: &[bool]) -> bool {
        self.star.iter().all(|&(outer, inner)| !labels[outer] || labels[inner])
    }

    /// Energy of a labeling; infinite if it violates a star constraint.
    pub fn energy(&self, labels: &[bool]) -> f64 {
        assert_eq!(labels.len(), self.n_vertices());
        if !self.is_star_feasible(labels) {
            return f64::INFINITY;
        }
        let unary: f64 = self.unary.iter().zip(labels).map(|(u, &l)| if l { u.lumen } else { u.background }).sum();
        let pairwise: f64 = self.pairs.iter().filter(|&&(p, q, _)| labels[p] != labels[q]).map(|&(_, _, w)| w).sum();
        unary + self.graph_lambda * pairwise
    }
}

fn population_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Global minimum of the energy. Lumen vertices are the source side of the
/// minimal cut, so the result is deterministic for a given graph.
pub fn solve_min_cut(graph: &SegmentationGraph) -> Labeling {
    let mut flow = FlowGraph::new(graph.n_vertices());
    for (v, u) in graph.unary.iter().enumerate() {
        // source arc is cut when v is background, sink arc when lumen
        let shift = u.lumen.min(u.background);
        flow.add_terminal(v, u.background - shift, u.lumen - shift);
    }
    for &(p, q, w) in &graph.pairs {
        let c = graph.graph_lambda * w;
        if c > 0.0 {
            flow.add_edge(p, q, c, c);
        }
    }
    for &(outer, inner) in &graph.star {
        flow.add_edge(outer, inner, f64::INFINITY, 0.0);
    }
    let labels = flow.solve().source_side;
    let energy = graph.energy(&labels);
    Labeling { labels, energy }
}
