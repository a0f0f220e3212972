use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parse_json, read_file, write_atomic, FormatError, IoError, Point3};

/// Centerlines are densified to at most this point spacing on load.
pub const DEFAULT_MAX_POINT_SPACING_MM: f64 = 0.5;

/// Ordered vessel axis starting at the ostium, with cumulative arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct Centerline {
    points: Vec<Point3>,
    arc_length: Vec<f64>,
}

impl Centerline {
    pub fn new(points: Vec<Point3>) -> Result<Self, IoError> {
        if points.len() < 2 {
            return Err(IoError::Invalid(format!("centerline needs at least 2 points, got {}", points.len())));
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(IoError::Invalid("centerline point is not finite".into()));
        }
        let mut arc_length = Vec::with_capacity(points.len());
        arc_length.push(0.0);
        for (i, w) in points.windows(2).enumerate() {
            let d = (w[1] - w[0]).norm();
            if d < 1e-9 {
                return Err(IoError::DegenerateTangent { index: i });
            }
            arc_length.push(arc_length[i] + d);
        }
        Ok(Self { points, arc_length })
    }

    /// Straight line from `start` to `end`, at most `max_spacing` apart.
    pub fn straight(start: Point3, end: Point3, max_spacing: f64) -> Result<Self, IoError> {
        Self::new(vec![start, end]).map(|c| c.resampled(max_spacing))
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn arc_length(&self) -> &[f64] {
        &self.arc_length
    }

    pub fn length(&self) -> f64 {
        *self.arc_length.last().unwrap()
    }

    /// Insert linearly interpolated points so consecutive points are at most
    /// `max_spacing` apart. Existing points are kept.
    pub fn resampled(&self, max_spacing: f64) -> Centerline {
        assert!(max_spacing > 0.0, "max_spacing must be positive");
        let mut points = vec![self.points[0]];
        for w in self.points.windows(2) {
            let d = (w[1] - w[0]).norm();
            let pieces = (d / max_spacing).ceil().max(1.0) as usize;
            for k in 1..=pieces {
                let t = k as f64 / pieces as f64;
                points.push(w[0] + (w[1] - w[0]) * t);
            }
        }
        Centerline::new(points).expect("resampling keeps points distinct")
    }

    fn locate(&self, s: f64) -> (usize, f64) {
        let s = s.clamp(0.0, self.length());
        let k = match self.arc_length.binary_search_by(|a| a.total_cmp(&s)) {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => (i.max(1) - 1).min(self.points.len() - 2),
        };
        let seg = self.arc_length[k + 1] - self.arc_length[k];
        (k, ((s - self.arc_length[k]) / seg).clamp(0.0, 1.0))
    }

    /// Position at arc length `s` (clamped to the curve).
    pub fn position_at(&self, s: f64) -> Point3 {
        let (k, t) = self.locate(s);
        self.points[k] + (self.points[k + 1] - self.points[k]) * t
    }

    fn vertex_tangent(&self, i: usize) -> Point3 {
        let n = self.points.len();
        let fwd = |j: usize| (self.points[j + 1] - self.points[j]).normalize();
        if i == 0 {
            return fwd(0);
        }
        if i == n - 1 {
            return fwd(n - 2);
        }
        let sum = fwd(i - 1) + fwd(i);
        if sum.norm() < 1e-9 {
            fwd(i)
        } else {
            sum.normalize()
        }
    }

    /// Unit tangent at arc length `s`, interpolated between vertex tangents.
    pub fn tangent_at(&self, s: f64) -> Point3 {
        let (k, t) = self.locate(s);
        let blended = self.vertex_tangent(k) * (1.0 - t) + self.vertex_tangent(k + 1) * t;
        if blended.norm() < 1e-9 {
            (self.points[k + 1] - self.points[k]).normalize()
        } else {
            blended.normalize()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeSide {
    Left,
    Right,
}

/// Where a branch leaves its parent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub branch: usize,
    pub arc_length_mm: f64,
}

/// One coronary tree: branches with parent links. Exactly one branch is the
/// root and starts at the ostium.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterlineTree {
    pub branches: Vec<Centerline>,
    pub parents: Vec<Option<Attachment>>,
    pub tree_side: TreeSide,
}

#[derive(Debug, Serialize, Deserialize)]
struct TreeFile {
    tree_side: TreeSide,
    branches: Vec<BranchFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BranchFile {
    ostium_index: usize,
    points_mm: Vec<[f64; 3]>,
    parent: Option<Attachment>,
}

impl CenterlineTree {
    pub fn new(
        branches: Vec<Centerline>,
        parents: Vec<Option<Attachment>>,
        tree_side: TreeSide,
    ) -> Result<Self, IoError> {
        let tree = Self { branches, parents, tree_side };
        tree.validate().map_err(IoError::Format)?;
        Ok(tree)
    }

    pub fn single(centerline: Centerline, tree_side: TreeSide) -> Self {
        Self { branches: vec![centerline], parents: vec![None], tree_side }
    }

    pub fn root(&self) -> usize {
        self.parents.iter().position(Option::is_none).expect("validated tree has a root")
    }

    /// Branch indices attached to `branch`, in index order.
    pub fn children(&self, branch: usize) -> Vec<usize> {
        (0..self.branches.len()).filter(|&c| matches!(self.parents[c], Some(a) if a.branch == branch)).collect()
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        let n = self.branches.len();
        if n == 0 {
            return Err(FormatError::new("branches", "tree has no branches"));
        }
        if self.parents.len() != n {
            return Err(FormatError::new("branches", "parent list length mismatch"));
        }
        let roots = self.parents.iter().filter(|p| p.is_none()).count();
        if roots != 1 {
            return Err(FormatError::new("branches", format!("expected exactly one root branch, found {roots}")));
        }
        for (i, parent) in self.parents.iter().enumerate() {
            let Some(a) = parent else { continue };
            let ctx = format!("branches[{i}].parent");
            if a.branch >= n || a.branch == i {
                return Err(FormatError::new(format!("{ctx}.branch"), format!("invalid parent index {}", a.branch)));
            }
            let len = self.branches[a.branch].length();
            if !(a.arc_length_mm >= 0.0 && a.arc_length_mm <= len + 1e-9) {
                return Err(FormatError::new(
                    format!("{ctx}.arc_length_mm"),
                    format!("{} outside parent branch [0, {len}]", a.arc_length_mm),
                ));
            }
        }
        // every branch must reach the root
        for start in 0..n {
            let mut cur = start;
            for _ in 0..=n {
                match self.parents[cur] {
                    None => break,
                    Some(a) => cur = a.branch,
                }
            }
            if self.parents[cur].is_some() {
                return Err(FormatError::new(format!("branches[{start}].parent"), "parent links form a cycle"));
            }
        }
        Ok(())
    }

    /// Parse a `*.cl.json` document; branches are densified to `max_spacing`.
    pub fn from_json_slice(bytes: &[u8], max_spacing: f64) -> Result<Self, FormatError> {
        let file: TreeFile = parse_json(bytes)?;
        let mut branches = Vec::with_capacity(file.branches.len());
        let mut parents = Vec::with_capacity(file.branches.len());
        for (i, b) in file.branches.into_iter().enumerate() {
            if b.ostium_index != 0 {
                return Err(FormatError::new(
                    format!("branches[{i}].ostium_index"),
                    format!("must be 0, got {}", b.ostium_index),
                ));
            }
            let points = b.points_mm.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect();
            let cl = Centerline::new(points)
                .map_err(|e| FormatError::new(format!("branches[{i}].points_mm"), e.to_string()))?;
            // bound the densified size before resampling
            if cl.length() / max_spacing > 1e7 {
                return Err(FormatError::new(format!("branches[{i}].points_mm"), "centerline too long"));
            }
            branches.push(cl.resampled(max_spacing));
            parents.push(b.parent);
        }
        let tree = Self { branches, parents, tree_side: file.tree_side };
        tree.validate()?;
        Ok(tree)
    }

    pub fn to_json(&self) -> Vec<u8> {
        let file = TreeFile {
            tree_side: self.tree_side,
            branches: self
                .branches
                .iter()
                .zip(&self.parents)
                .map(|(cl, parent)| BranchFile {
                    ostium_index: 0,
                    points_mm: cl.points().iter().map(|p| [p.x, p.y, p.z]).collect(),
                    parent: *parent,
                })
                .collect(),
        };
        let mut out = serde_json::to_vec_pretty(&file).expect("tree serializes");
        out.push(b'\n');
        out
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        Ok(Self::from_json_slice(&read_file(path)?, DEFAULT_MAX_POINT_SPACING_MM).map_err(|e| e.in_file(path))?)
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        write_atomic(path, &self.to_json())
    }
}
