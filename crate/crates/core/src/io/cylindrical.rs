use std::path::Path;

use serde::{Deserialize, Serialize};

use super::volume::{check_data_name, decode_values, encode_values, Dtype};
use super::{
    data_stem, parse_json, read_file, sibling, write_atomic, Centerline, FormatError, IoError, Point3, ScalarVolume,
};

/// Sampling layout of the cylindrical grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub plane_spacing_mm: f64,
    pub n_angles: usize,
    pub radii_mm: Vec<f64>,
}

impl Default for GridSpec {
    /// 0.5 mm planes, 32 angles, radii 0.1..=4.0 mm in 0.1 mm steps.
    fn default() -> Self {
        Self { plane_spacing_mm: 0.5, n_angles: 32, radii_mm: (1..=40).map(|k| k as f64 / 10.0).collect() }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), IoError> {
        if !(self.plane_spacing_mm.is_finite() && self.plane_spacing_mm > 0.0) {
            return Err(IoError::Invalid("plane_spacing_mm must be > 0".into()));
        }
        if self.n_angles == 0 {
            return Err(IoError::Invalid("n_angles must be >= 1".into()));
        }
        validate_radii(&self.radii_mm).map_err(IoError::Invalid)
    }

    pub fn angle(&self, a: usize) -> f64 {
        std::f64::consts::TAU * a as f64 / self.n_angles as f64
    }
}

fn validate_radii(radii: &[f64]) -> Result<(), String> {
    if radii.is_empty() {
        return Err("radii must be nonempty".into());
    }
    if !(radii[0].is_finite() && radii[0] > 0.0) {
        return Err(format!("radii[0] must be > 0, got {}", radii[0]));
    }
    if radii.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
        return Err("radii must be strictly increasing".into());
    }
    Ok(())
}

/// Cross-sectional plane: center on the centerline, unit normal along the
/// local tangent and an orthonormal in-plane basis `(u, v)`; angle 0 points
/// along `u`, angle pi/2 along `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFrame {
    pub arc_length: f64,
    pub center: Point3,
    pub normal: Point3,
    pub u: Point3,
    pub v: Point3,
}

impl PlaneFrame {
    pub fn point(&self, angle: f64, radius: f64) -> Point3 {
        self.center + (self.u * angle.cos() + self.v * angle.sin()) * radius
    }
}

fn orthonormal_to(t: &Point3, r: &Point3) -> (Point3, Point3) {
    let u = (r - t * r.dot(t)).normalize();
    let v = t.cross(&u);
    (u, v)
}

/// Planes every `plane_spacing` of arc length with rotation-minimizing frames
/// (double-reflection transport of the in-plane basis).
pub fn plane_frames(cl: &Centerline, plane_spacing: f64) -> Vec<PlaneFrame> {
    let n_planes = (cl.length() / plane_spacing + 1e-9).floor() as usize + 1;
    let mut frames: Vec<PlaneFrame> = Vec::with_capacity(n_planes);
    for i in 0..n_planes {
        let s = (i as f64 * plane_spacing).min(cl.length());
        let center = cl.position_at(s);
        let t = cl.tangent_at(s);
        let r = match frames.last() {
            None => {
                // axis least aligned with the tangent
                let axes = [Point3::x(), Point3::y(), Point3::z()];
                let mut best = axes[0];
                for a in &axes[1..] {
                    if a.dot(&t).abs() < best.dot(&t).abs() - 1e-12 {
                        best = *a;
                    }
                }
                best
            }
            Some(prev) => {
                let v1 = center - prev.center;
                let c1 = v1.dot(&v1);
                let (r_l, t_l) = if c1 > 1e-24 {
                    (prev.u - v1 * (2.0 / c1 * v1.dot(&prev.u)), prev.normal - v1 * (2.0 / c1 * v1.dot(&prev.normal)))
                } else {
                    (prev.u, prev.normal)
                };
                let v2 = t - t_l;
                let c2 = v2.dot(&v2);
                if c2 > 1e-24 {
                    r_l - v2 * (2.0 / c2 * v2.dot(&r_l))
                } else {
                    r_l
                }
            }
        };
        let (u, v) = orthonormal_to(&t, &r);
        frames.push(PlaneFrame { arc_length: s, center, normal: t, u, v });
    }
    frames
}

/// Intensities resampled on `(plane i, angle, radius)` around a centerline.
#[derive(Debug, Clone, PartialEq)]
pub struct CylindricalGrid {
    pub spec: GridSpec,
    pub frames: Vec<PlaneFrame>,
    /// Row-major `(plane, angle, radius)`.
    pub intensities: Vec<f64>,
}

impl CylindricalGrid {
    pub fn n_planes(&self) -> usize {
        self.frames.len()
    }

    pub fn n_angles(&self) -> usize {
        self.spec.n_angles
    }

    pub fn n_radii(&self) -> usize {
        self.spec.radii_mm.len()
    }

    pub fn radii(&self) -> &[f64] {
        &self.spec.radii_mm
    }

    pub fn len(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }

    #[inline]
    pub fn index(&self, plane: usize, angle: usize, radius: usize) -> usize {
        (plane * self.spec.n_angles + angle) * self.n_radii() + radius
    }

    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let nr = self.n_radii();
        let j = index % nr;
        let rest = index / nr;
        (rest / self.spec.n_angles, rest % self.spec.n_angles, j)
    }

    /// Radial intensity ray at `(plane, angle)`.
    pub fn ray(&self, plane: usize, angle: usize) -> &[f64] {
        let start = self.index(plane, angle, 0);
        &self.intensities[start..start + self.n_radii()]
    }

    pub fn position(&self, plane: usize, angle: usize, radius: usize) -> Point3 {
        self.frames[plane].point(self.spec.angle(angle), self.spec.radii_mm[radius])
    }

    pub fn plane_values(&self, plane: usize) -> &[f64] {
        let per = self.spec.n_angles * self.n_radii();
        &self.intensities[plane * per..(plane + 1) * per]
    }
}

/// Resample `vol` on a cylindrical grid around `cl`.
///
/// Samples falling outside the volume take the nearest face value; a warning
/// is logged when more than 1% of them do.
pub fn warp_to_cylindrical(vol: &ScalarVolume, cl: &Centerline, spec: &GridSpec) -> Result<CylindricalGrid, IoError> {
    spec.validate()?;
    if let Some(i) = cl.points().windows(2).position(|w| (w[1] - w[0]).norm() < 1e-9) {
        return Err(IoError::DegenerateTangent { index: i });
    }
    let frames = plane_frames(cl, spec.plane_spacing_mm);
    let mut intensities = Vec::with_capacity(frames.len() * spec.n_angles * spec.radii_mm.len());
    let mut clamped = 0usize;
    for frame in &frames {
        for a in 0..spec.n_angles {
            let angle = spec.angle(a);
            for &r in &spec.radii_mm {
                let (v, c) = vol.sample_trilinear_checked(&frame.point(angle, r));
                clamped += usize::from(c);
                intensities.push(v);
            }
        }
    }
    if clamped * 100 > intensities.len() {
        log::warn!(
            "cylindrical warp: {clamped} of {} samples fell outside the volume and were clamped",
            intensities.len()
        );
    }
    Ok(CylindricalGrid { spec: spec.clone(), frames, intensities })
}

/// Contents of a `*.cyl.json` sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylindricalHeader {
    pub n_planes: usize,
    pub plane_spacing_mm: f64,
    pub n_angles: usize,
    pub radii_mm: Vec<f64>,
    pub plane_arc_length_mm: Vec<f64>,
    pub plane_centers_mm: Vec<[f64; 3]>,
    pub plane_normals: Vec<[f64; 3]>,
    pub plane_u: Vec<[f64; 3]>,
    pub plane_v: Vec<[f64; 3]>,
    pub dtype: Dtype,
    pub data: String,
}

fn arr(p: &Point3) -> [f64; 3] {
    [p.x, p.y, p.z]
}

fn pt(a: &[f64; 3]) -> Point3 {
    Point3::new(a[0], a[1], a[2])
}

impl CylindricalHeader {
    pub fn from_json_slice(bytes: &[u8]) -> Result<Self, FormatError> {
        let h: CylindricalHeader = parse_json(bytes)?;
        validate_radii(&h.radii_mm).map_err(|m| FormatError::new("radii_mm", m))?;
        if h.n_angles == 0 {
            return Err(FormatError::new("n_angles", "must be >= 1"));
        }
        if !(h.plane_spacing_mm.is_finite() && h.plane_spacing_mm > 0.0) {
            return Err(FormatError::new("plane_spacing_mm", "must be > 0"));
        }
        for (name, len) in [
            ("plane_arc_length_mm", h.plane_arc_length_mm.len()),
            ("plane_centers_mm", h.plane_centers_mm.len()),
            ("plane_normals", h.plane_normals.len()),
            ("plane_u", h.plane_u.len()),
            ("plane_v", h.plane_v.len()),
        ] {
            if len != h.n_planes {
                return Err(FormatError::new(name, format!("expected {} entries, got {len}", h.n_planes)));
            }
        }
        check_data_name(&h.data)?;
        Ok(h)
    }

    pub fn decode(&self, raw: &[u8]) -> Result<CylindricalGrid, FormatError> {
        let expected = self
            .n_planes
            .checked_mul(self.n_angles)
            .and_then(|n| n.checked_mul(self.radii_mm.len()))
            .and_then(|n| n.checked_mul(self.dtype.size()))
            .ok_or_else(|| FormatError::new("n_planes", "sample count overflows"))?;
        if raw.len() != expected {
            return Err(FormatError::at(
                "raw payload",
                raw.len().min(expected) as u64,
                format!("expected {expected} bytes, got {}", raw.len()),
            ));
        }
        let intensities = decode_values(self.dtype, raw, "raw payload")?;
        let frames = (0..self.n_planes)
            .map(|i| PlaneFrame {
                arc_length: self.plane_arc_length_mm[i],
                center: pt(&self.plane_centers_mm[i]),
                normal: pt(&self.plane_normals[i]),
                u: pt(&self.plane_u[i]),
                v: pt(&self.plane_v[i]),
            })
            .collect();
        Ok(CylindricalGrid {
            spec: GridSpec {
                plane_spacing_mm: self.plane_spacing_mm,
                n_angles: self.n_angles,
                radii_mm: self.radii_mm.clone(),
            },
            frames,
            intensities,
        })
    }
}

pub fn save_cylindrical(path: &Path, grid: &CylindricalGrid) -> Result<(), IoError> {
    let data = format!("{}.raw", data_stem(path, ".cyl.json"));
    let header = CylindricalHeader {
        n_planes: grid.n_planes(),
        plane_spacing_mm: grid.spec.plane_spacing_mm,
        n_angles: grid.spec.n_angles,
        radii_mm: grid.spec.radii_mm.clone(),
        plane_arc_length_mm: grid.frames.iter().map(|f| f.arc_length).collect(),
        plane_centers_mm: grid.frames.iter().map(|f| arr(&f.center)).collect(),
        plane_normals: grid.frames.iter().map(|f| arr(&f.normal)).collect(),
        plane_u: grid.frames.iter().map(|f| arr(&f.u)).collect(),
        plane_v: grid.frames.iter().map(|f| arr(&f.v)).collect(),
        dtype: Dtype::Float64,
        data: data.clone(),
    };
    write_atomic(&sibling(path, &data), &encode_values(Dtype::Float64, &grid.intensities))?;
    let mut json = serde_json::to_vec_pretty(&header).expect("header serializes");
    json.push(b'\n');
    write_atomic(path, &json)
}

pub fn load_cylindrical(path: &Path) -> Result<CylindricalGrid, IoError> {
    let header = CylindricalHeader::from_json_slice(&read_file(path)?).map_err(|e| e.in_file(path))?;
    let raw_path = sibling(path, &header.data);
    let raw = read_file(&raw_path)?;
    Ok(header.decode(&raw).map_err(|e| e.in_file(&raw_path))?)
}
