//! Lumen surface `r*(plane, angle)` from a min-cut labeling, its cross
//! sections, contour points and voxel rasterization.

use std::path::Path;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use serde::{Deserialize, Serialize};

use crate::io::{
    parse_json, read_file, write_atomic, CylindricalGrid, FormatError, IoError, LabelVolume, PlaneFrame, Point3,
    Volume, VolumeGeometry,
};

/// Boundary radii of one cross-section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfacePlane {
    pub index: usize,
    pub arc_length_mm: f64,
    pub center_mm: [f64; 3],
    pub normal: [f64; 3],
    pub u: [f64; 3],
    pub v: [f64; 3],
    pub area_mm2: f64,
    pub effective_diameter_mm: f64,
    /// Boundary radius per angle, angles uniform over `[0, 2 pi)`.
    pub r_star: Vec<f64>,
}

impl SurfacePlane {
    pub fn frame(&self) -> PlaneFrame {
        PlaneFrame {
            arc_length: self.arc_length_mm,
            center: Point3::from(self.center_mm),
            normal: Point3::from(self.normal),
            u: Point3::from(self.u),
            v: Point3::from(self.v),
        }
    }

    /// Boundary radius at an arbitrary angle, linear between samples.
    pub fn radius_at_angle(&self, angle: f64) -> f64 {
        let n = self.r_star.len();
        let pos = angle.rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU * n as f64;
        let k = (pos.floor() as usize).min(n - 1);
        let t = pos - k as f64;
        let (a, b) = (self.r_star[k], self.r_star[(k + 1) % n]);
        a + (b - a) * t
    }
}

/// Area enclosed by a polar boundary sampled at uniform angles:
/// the periodic trapezoid rule on `r^2 / 2`.
pub fn polar_area(r_star: &[f64]) -> f64 {
    let dtheta = std::f64::consts::TAU / r_star.len() as f64;
    r_star.iter().map(|r| 0.5 * r * r).sum::<f64>() * dtheta
}

pub fn effective_diameter(area: f64) -> f64 {
    2.0 * (area / std::f64::consts::PI).sqrt()
}

/// Lumen boundary over all planes of a branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LumenSurface {
    pub plane_spacing_mm: f64,
    pub n_angles: usize,
    pub radii_mm: Vec<f64>,
    pub planes: Vec<SurfacePlane>,
}

fn plane_from(index: usize, frame: &PlaneFrame, r_star: Vec<f64>) -> SurfacePlane {
    let area = polar_area(&r_star);
    SurfacePlane {
        index,
        arc_length_mm: frame.arc_length,
        center_mm: frame.center.into(),
        normal: frame.normal.into(),
        u: frame.u.into(),
        v: frame.v.into(),
        area_mm2: area,
        effective_diameter_mm: effective_diameter(area),
        r_star,
    }
}

/// Surface from a star-feasible labeling (`true` = lumen) on `grid`. Each
/// ray's boundary is the midpoint between its outermost lumen sample and the
/// next sample; empty rays collapse to the innermost radius and full rays
/// saturate at the outermost.
pub fn extract_surface(labels: &[bool], grid: &CylindricalGrid) -> LumenSurface {
    assert_eq!(labels.len(), grid.len(), "labeling does not match grid");
    let radii = grid.radii();
    let n_r = radii.len();
    let mut saturated = 0usize;
    let planes = grid
        .frames
        .iter()
        .enumerate()
        .map(|(i, frame)| {
            let r_star = (0..grid.n_angles())
                .map(|a| {
                    let base = grid.index(i, a, 0);
                    let inside = labels[base..base + n_r].iter().take_while(|&&l| l).count();
                    match inside {
                        0 => radii[0],
                        n if n == n_r => {
                            saturated += 1;
                            radii[n_r - 1]
                        }
                        n => 0.5 * (radii[n - 1] + radii[n]),
                    }
                })
                .collect();
            plane_from(i, frame, r_star)
        })
        .collect();
    if saturated > 0 {
        log::warn!("{saturated} rays are lumen up to the outermost radius; the surface is saturated there");
    }
    LumenSurface {
        plane_spacing_mm: grid.spec.plane_spacing_mm,
        n_angles: grid.n_angles(),
        radii_mm: radii.to_vec(),
        planes,
    }
}

impl LumenSurface {
    /// Surface with a prescribed radius per arc length on the given frames.
    pub fn from_radius_fn(
        frames: &[PlaneFrame],
        plane_spacing_mm: f64,
        n_angles: usize,
        radii_mm: Vec<f64>,
        radius: impl Fn(f64) -> f64,
    ) -> Self {
        let planes =
            frames.iter().enumerate().map(|(i, f)| plane_from(i, f, vec![radius(f.arc_length); n_angles])).collect();
        Self { plane_spacing_mm, n_angles, radii_mm, planes }
    }

    pub fn arc_lengths(&self) -> Vec<f64> {
        self.planes.iter().map(|p| p.arc_length_mm).collect()
    }

    pub fn effective_diameters(&self) -> Vec<f64> {
        self.planes.iter().map(|p| p.effective_diameter_mm).collect()
    }

    pub fn min_effective_diameter(&self) -> f64 {
        self.planes.iter().map(|p| p.effective_diameter_mm).fold(f64::INFINITY, f64::min)
    }

    /// Boundary points in mm, plane-major.
    pub fn contour_points(&self) -> Vec<Point3> {
        let mut pts = Vec::with_capacity(self.planes.len() * self.n_angles);
        for plane in &self.planes {
            let frame = plane.frame();
            for (a, &r) in plane.r_star.iter().enumerate() {
                let angle = std::f64::consts::TAU * a as f64 / self.n_angles as f64;
                pts.push(frame.point(angle, r));
            }
        }
        pts
    }

    /// Voxel mask of the lumen on `geometry`: a voxel is inside if its
    /// center lies within half a plane spacing of its nearest plane and
    /// inside that plane's boundary.
    pub fn rasterize(&self, geometry: VolumeGeometry) -> LabelVolume {
        let mut mask = Volume::filled(geometry, false);
        if self.planes.is_empty() {
            return mask;
        }
        let centers: Vec<[f64; 3]> = self.planes.iter().map(|p| p.center_mm).collect();
        let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(&centers).expect("nonempty planes");
        let frames: Vec<PlaneFrame> = self.planes.iter().map(SurfacePlane::frame).collect();
        let half = 0.5 * self.plane_spacing_mm;
        let reach = self.radii_mm.last().copied().unwrap_or(0.0) + half;
        for (idx, value) in mask.values_mut().iter_mut().enumerate() {
            let [x, y, z] = geometry.coords(idx);
            let c = geometry.voxel_center(x, y, z);
            let nearest = tree.query(&[c.x, c.y, c.z]).nearest_one::<SquaredEuclidean<f64>>().execute();
            if nearest.distance > reach * reach {
                continue;
            }
            let k = nearest.item as usize;
            let f = &frames[k];
            let w = c - f.center;
            if w.dot(&f.normal).abs() > half + 1e-9 {
                continue;
            }
            let (a, b) = (w.dot(&f.u), w.dot(&f.v));
            let rho = a.hypot(b);
            *value = rho <= self.planes[k].radius_at_angle(b.atan2(a));
        }
        mask
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.plane_spacing_mm.is_finite() && self.plane_spacing_mm > 0.0) {
            return Err("plane_spacing_mm must be > 0".into());
        }
        if self.n_angles == 0 {
            return Err("n_angles must be >= 1".into());
        }
        crate::io::GridSpec {
            plane_spacing_mm: self.plane_spacing_mm,
            n_angles: self.n_angles,
            radii_mm: self.radii_mm.clone(),
        }
        .validate()
        .map_err(|e| e.to_string())?;
        let (lo, hi) = (self.radii_mm[0], self.radii_mm[self.radii_mm.len() - 1]);
        for (k, p) in self.planes.iter().enumerate() {
            if p.r_star.len() != self.n_angles {
                return Err(format!("planes[{k}].r_star has {} entries, expected {}", p.r_star.len(), self.n_angles));
            }
            if p.r_star.iter().any(|r| !(r.is_finite() && *r >= lo && *r <= hi)) {
                return Err(format!("planes[{k}].r_star must lie in [{lo}, {hi}]"));
            }
            let vecs = [p.center_mm, p.normal, p.u, p.v];
            if vecs.iter().flatten().any(|x| !x.is_finite()) || !p.arc_length_mm.is_finite() {
                return Err(format!("planes[{k}]: non-finite geometry"));
            }
            let (n, u, v) = (Point3::from(p.normal), Point3::from(p.u), Point3::from(p.v));
            let ortho = [n.norm() - 1.0, u.norm() - 1.0, v.norm() - 1.0, n.dot(&u), n.dot(&v), u.dot(&v)];
            if ortho.iter().any(|e| e.abs() > 1e-6) {
                return Err(format!("planes[{k}]: normal/u/v are not orthonormal"));
            }
            let area = polar_area(&p.r_star);
            if (p.area_mm2 - area).abs() > 1e-9 * area.max(1.0) {
                return Err(format!("planes[{k}].area_mm2 {} disagrees with r_star ({area})", p.area_mm2));
            }
            if (p.effective_diameter_mm - effective_diameter(area)).abs() > 1e-9 * area.max(1.0) {
                return Err(format!("planes[{k}].effective_diameter_mm disagrees with area"));
            }
        }
        Ok(())
    }
}

/// `*.surface.json`: the surface plus the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDocument {
    pub tool_version: String,
    pub config: serde_json::Value,
    /// Index of the centerline branch this surface belongs to.
    #[serde(default)]
    pub branch: usize,
    #[serde(flatten)]
    pub surface: LumenSurface,
}

impl SurfaceDocument {
    pub fn from_json_slice(bytes: &[u8]) -> Result<Self, FormatError> {
        let doc: SurfaceDocument = parse_json(bytes)?;
        doc.surface.validate().map_err(|e| FormatError::new("", e))?;
        Ok(doc)
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("surface serializes");
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
