//! Lumen likelihood on the cylindrical grid: a database of training
//! intensity rays with matched binary lumen rays, kernel-weighted K nearest
//! neighbor voting, the radius-based override on partial-volume planes and
//! the calcium override.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::io::{read_file, write_atomic, CylindricalGrid, FormatError, GridSpec, IoError};
use crate::phantom::PhantomTruth;

pub const RAYDB_MAGIC: &[u8; 8] = b"CRAYDB1\0";
const HEADER_LEN: usize = 16;

pub const DEFAULT_K_NEIGHBORS: usize = 100;
pub const DEFAULT_CALCIUM_THRESHOLD_HU: f64 = 600.0;
pub const DEFAULT_CALCIUM_PROBABILITY: f64 = 0.01;

/// Kernel decay for which a 50 HU RMS difference per sample costs `e^-1`.
pub fn default_kernel_lambda(n_radii: usize) -> f64 {
    1.0 / (n_radii.max(1) as f64 * 50.0 * 50.0)
}

#[derive(Debug, thiserror::Error)]
pub enum LikelihoodError {
    #[error("ray database is empty")]
    EmptyDatabase,
    #[error("ray length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("grid radii do not match the database radii")]
    RadiiMismatch,
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Training rays on a shared radius set. Intensities are held at `f32`
/// precision so that the binary format round-trips exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct RayDatabase {
    radii: Vec<f64>,
    intensities: Vec<f64>,
    labels: Vec<bool>,
    pub kernel_lambda: f64,
    pub k_neighbors: usize,
    pub provenance: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Footer {
    kernel_lambda: f64,
    k_neighbors: usize,
    #[serde(default)]
    provenance: serde_json::Value,
}

fn to_f32_precision(x: f64) -> f64 {
    x as f32 as f64
}

/// Number of leading lumen labels, or `None` if the labels are not a prefix.
fn prefix_len(labels: &[bool]) -> Option<usize> {
    let n = labels.iter().take_while(|&&l| l).count();
    labels[n..].iter().all(|&l| !l).then_some(n)
}

impl RayDatabase {
    /// Empty database over `radii`.
    pub fn new(radii: Vec<f64>, kernel_lambda: f64, k_neighbors: usize) -> Result<Self, LikelihoodError> {
        GridSpec { plane_spacing_mm: 1.0, n_angles: 1, radii_mm: radii.clone() }.validate()?;
        if !(kernel_lambda.is_finite() && kernel_lambda > 0.0) {
            return Err(LikelihoodError::Invalid(format!("kernel_lambda must be > 0, got {kernel_lambda}")));
        }
        if k_neighbors == 0 {
            return Err(LikelihoodError::Invalid("k_neighbors must be >= 1".into()));
        }
        Ok(Self {
            radii: radii.into_iter().map(to_f32_precision).collect(),
            intensities: Vec::new(),
            labels: Vec::new(),
            kernel_lambda,
            k_neighbors,
            provenance: serde_json::Value::Null,
        })
    }

    /// Append a ray. Labels are truncated at the first background sample so
    /// that every stored label ray is a lumen prefix.
    pub fn push(&mut self, intensity: &[f64], labels: &[bool]) -> Result<(), LikelihoodError> {
        for len in [intensity.len(), labels.len()] {
            if len != self.radii.len() {
                return Err(LikelihoodError::LengthMismatch { expected: self.radii.len(), got: len });
            }
        }
        if intensity.iter().any(|v| !v.is_finite()) {
            return Err(LikelihoodError::Invalid("ray intensities must be finite".into()));
        }
        let prefix = labels.iter().take_while(|&&l| l).count();
        self.intensities.extend(intensity.iter().map(|&v| to_f32_precision(v)));
        self.labels.extend((0..labels.len()).map(|j| j < prefix));
        Ok(())
    }

    pub fn n_rays(&self) -> usize {
        self.labels.len() / self.radii.len()
    }

    pub fn n_radii(&self) -> usize {
        self.radii.len()
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn intensity_ray(&self, k: usize) -> &[f64] {
        let n = self.radii.len();
        &self.intensities[k * n..(k + 1) * n]
    }

    pub fn label_ray(&self, k: usize) -> &[bool] {
        let n = self.radii.len();
        &self.labels[k * n..(k + 1) * n]
    }

    /// Whether `radii` matches the database radii at storage precision.
    pub fn matches_radii(&self, radii: &[f64]) -> bool {
        radii.len() == self.radii.len() && radii.iter().zip(&self.radii).all(|(&a, &b)| to_f32_precision(a) == b)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.n_rays();
        let m = self.radii.len();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * m + 5 * n * m + 128);
        out.extend_from_slice(RAYDB_MAGIC);
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(m as u32).to_le_bytes());
        for &r in &self.radii {
            out.extend_from_slice(&(r as f32).to_le_bytes());
        }
        for &v in &self.intensities {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.extend(self.labels.iter().map(|&l| u8::from(l)));
        let footer = Footer {
            kernel_lambda: self.kernel_lambda,
            k_neighbors: self.k_neighbors,
            provenance: self.provenance.clone(),
        };
        out.extend(serde_json::to_vec(&footer).expect("footer serializes"));
        out
    }

    /// Decode a `.raydb` image. Sizes are checked against the input length
    /// before anything is allocated.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < HEADER_LEN {
            return Err(FormatError::at(
                "header",
                0,
                format!("expected at least {HEADER_LEN} bytes, got {}", bytes.len()),
            ));
        }
        if &bytes[..8] != RAYDB_MAGIC {
            return Err(FormatError::at("magic", 0, "not a ray database (bad magic)"));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
        let (n, m) = (word(8), word(12));
        if m == 0 {
            return Err(FormatError::at("n_radii", 12, "n_radii must be >= 1"));
        }
        let cells = n.checked_mul(m).ok_or_else(|| FormatError::at("n_rays", 8, "size overflow"))?;
        let body = m
            .checked_mul(4)
            .and_then(|r| cells.checked_mul(5).and_then(|c| c.checked_add(r)))
            .and_then(|b| b.checked_add(HEADER_LEN))
            .ok_or_else(|| FormatError::at("n_rays", 8, "size overflow"))?;
        if bytes.len() < body {
            return Err(FormatError::at(
                "payload",
                HEADER_LEN as u64,
                format!("expected at least {body} bytes for {n} rays x {m} radii, got {}", bytes.len()),
            ));
        }
        let f32_at = |at: usize| f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as f64;
        let radii: Vec<f64> = (0..m).map(|j| f32_at(HEADER_LEN + 4 * j)).collect();
        if let Err(e) = (GridSpec { plane_spacing_mm: 1.0, n_angles: 1, radii_mm: radii.clone() }).validate() {
            return Err(FormatError::at("radii", HEADER_LEN as u64, e.to_string()));
        }
        let int_start = HEADER_LEN + 4 * m;
        let mut intensities = Vec::with_capacity(cells);
        for c in 0..cells {
            let v = f32_at(int_start + 4 * c);
            if !v.is_finite() {
                return Err(FormatError::at("intensities", (int_start + 4 * c) as u64, "non-finite intensity"));
            }
            intensities.push(v);
        }
        let label_start = int_start + 4 * cells;
        let mut labels = Vec::with_capacity(cells);
        for (c, &b) in bytes[label_start..label_start + cells].iter().enumerate() {
            match b {
                0 | 1 => labels.push(b == 1),
                _ => {
                    return Err(FormatError::at(
                        "labels",
                        (label_start + c) as u64,
                        format!("label byte must be 0 or 1, got {b}"),
                    ))
                }
            }
        }
        for k in 0..n {
            if prefix_len(&labels[k * m..(k + 1) * m]).is_none() {
                return Err(FormatError::at(
                    "labels",
                    (label_start + k * m) as u64,
                    format!("label ray {k} is not a lumen prefix"),
                ));
            }
        }
        let footer: Footer = crate::io::parse_json(&bytes[body..])
            .map_err(|e| FormatError::at(format!("footer.{}", e.context), body as u64, e.message))?;
        if !(footer.kernel_lambda.is_finite() && footer.kernel_lambda > 0.0) {
            return Err(FormatError::at("footer.kernel_lambda", body as u64, "kernel_lambda must be > 0"));
        }
        if footer.k_neighbors == 0 {
            return Err(FormatError::at("footer.k_neighbors", body as u64, "k_neighbors must be >= 1"));
        }
        Ok(Self {
            radii,
            intensities,
            labels,
            kernel_lambda: footer.kernel_lambda,
            k_neighbors: footer.k_neighbors,
            provenance: footer.provenance,
        })
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let bytes = read_file(path)?;
        Self::from_bytes(&bytes).map_err(|e| e.in_file(path).into())
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        write_atomic(path, &self.to_bytes())
    }
}

/// Ray database from labeled phantoms. Each phantom is warped along its
/// centerline; the label ray at plane `i` marks radii inside the true lumen
/// radius at that plane's arc length.
pub fn build_ray_database(
    phantoms: &[PhantomTruth],
    spec: &GridSpec,
    kernel_lambda: Option<f64>,
    k_neighbors: usize,
) -> Result<RayDatabase, LikelihoodError> {
    spec.validate()?;
    let lambda = kernel_lambda.unwrap_or_else(|| default_kernel_lambda(spec.radii_mm.len()));
    let mut db = RayDatabase::new(spec.radii_mm.clone(), lambda, k_neighbors)?;
    for phantom in phantoms {
        let grid = crate::io::warp_to_cylindrical(&phantom.volume, &phantom.centerline, spec)?;
        for (i, frame) in grid.frames.iter().enumerate() {
            let truth = phantom.radius_at(frame.arc_length);
            let labels: Vec<bool> = spec.radii_mm.iter().map(|&r| r <= truth).collect();
            for a in 0..grid.n_angles() {
                db.push(grid.ray(i, a), &labels)?;
            }
        }
    }
    if db.is_empty() {
        return Err(LikelihoodError::EmptyDatabase);
    }
    Ok(db)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Kernel weight `exp(-lambda * |test - train|^2)`.
pub fn ray_weight(test: &[f64], train: &[f64], kernel_lambda: f64) -> Result<f64, LikelihoodError> {
    if test.len() != train.len() {
        return Err(LikelihoodError::LengthMismatch { expected: train.len(), got: test.len() });
    }
    Ok((-kernel_lambda * squared_distance(test, train)).exp())
}

/// Indices and squared distances of the `k` nearest rays, ordered by
/// distance with ties going to the lower index. Exact linear scan.
pub fn nearest_rays(db: &RayDatabase, test: &[f64], k: usize) -> Result<Vec<(usize, f64)>, LikelihoodError> {
    if db.is_empty() {
        return Err(LikelihoodError::EmptyDatabase);
    }
    if test.len() != db.n_radii() {
        return Err(LikelihoodError::LengthMismatch { expected: db.n_radii(), got: test.len() });
    }
    let mut all: Vec<(usize, f64)> =
        (0..db.n_rays()).map(|r| (r, squared_distance(test, db.intensity_ray(r)))).collect();
    let order = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    let k = k.clamp(1, all.len());
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, order);
        all.truncate(k);
    }
    all.sort_by(order);
    Ok(all)
}

/// Lumen probability per radius: kernel-weighted vote of the `k` nearest
/// training label rays.
pub fn knn_lumen_probability(db: &RayDatabase, test: &[f64], k: usize) -> Result<Vec<f64>, LikelihoodError> {
    let neighbors = nearest_rays(db, test, k)?;
    // weights relative to the nearest neighbor: the common factor cancels
    let d_min = neighbors[0].1;
    let weights: Vec<f64> = neighbors.iter().map(|&(_, d)| (-db.kernel_lambda * (d - d_min)).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut prob = vec![0.0; db.n_radii()];
    for (j, p) in prob.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (&(r, _), &w) in neighbors.iter().zip(&weights) {
            if db.label_ray(r)[j] {
                acc += w;
            }
        }
        *p = (acc / total).min(1.0);
    }
    Ok(prob)
}

/// Data-term probability for every grid vertex, rows in grid order.
pub fn knn_grid_probability(db: &RayDatabase, grid: &CylindricalGrid, k: usize) -> Result<Vec<f64>, LikelihoodError> {
    if !db.matches_radii(grid.radii()) {
        return Err(LikelihoodError::RadiiMismatch);
    }
    if db.is_empty() {
        return Err(LikelihoodError::EmptyDatabase);
    }
    let n_r = grid.n_radii();
    let rays: Vec<Vec<f64>> = (0..grid.n_planes() * grid.n_angles())
        .into_par_iter()
        .map(|ray| knn_lumen_probability(db, &grid.intensities[ray * n_r..(ray + 1) * n_r], k))
        .collect::<Result<_, _>>()?;
    Ok(rays.concat())
}

/// Step probability from an estimated radius: 1 inside (`r <= r_est`),
/// 0 outside.
pub fn pve_probability(radii: &[f64], estimated_radius: f64) -> Vec<f64> {
    radii.iter().map(|&r| if r <= estimated_radius { 1.0 } else { 0.0 }).collect()
}

/// Which rule produced a vertex probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilitySource {
    Data,
    PveOverride,
    CalciumOverride,
}

/// Calcium override parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalciumConfig {
    pub threshold_hu: f64,
    pub probability: f64,
}

impl Default for CalciumConfig {
    fn default() -> Self {
        Self { threshold_hu: DEFAULT_CALCIUM_THRESHOLD_HU, probability: DEFAULT_CALCIUM_PROBABILITY }
    }
}

/// Vertices at or above the calcium threshold.
pub fn calcium_mask(intensities: &[f64], threshold_hu: f64) -> Vec<bool> {
    intensities.iter().map(|&v| v >= threshold_hu).collect()
}

/// Lumen probability per cylindrical vertex with its source tag.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityField {
    pub prob: Vec<f64>,
    pub source: Vec<ProbabilitySource>,
}

/// Final probabilities: the radius step on planes with an estimated radius
/// (flagged partial-volume planes), the data term elsewhere, then the
/// calcium constant on calcified vertices.
///
/// `pr_d` and `calcium` are in `(plane, angle, radius)` order;
/// `plane_radius` has one entry per plane.
pub fn combine_probability(
    pr_d: &[f64],
    radii: &[f64],
    n_angles: usize,
    plane_radius: &[Option<f64>],
    calcium: &[bool],
    calcium_probability: f64,
) -> Result<ProbabilityField, LikelihoodError> {
    let per_plane = n_angles * radii.len();
    let expected = plane_radius.len() * per_plane;
    for len in [pr_d.len(), calcium.len()] {
        if len != expected {
            return Err(LikelihoodError::LengthMismatch { expected, got: len });
        }
    }
    let mut prob = pr_d.to_vec();
    let mut source = vec![ProbabilitySource::Data; expected];
    for (i, r_est) in plane_radius.iter().enumerate() {
        if let Some(r_est) = r_est {
            let step = pve_probability(radii, *r_est);
            for a in 0..n_angles {
                let base = i * per_plane + a * radii.len();
                prob[base..base + radii.len()].copy_from_slice(&step);
                source[base..base + radii.len()].fill(ProbabilitySource::PveOverride);
            }
        }
    }
    for (v, &c) in calcium.iter().enumerate() {
        if c {
            prob[v] = calcium_probability;
            source[v] = ProbabilitySource::CalciumOverride;
        }
    }
    Ok(ProbabilityField { prob, source })
}
