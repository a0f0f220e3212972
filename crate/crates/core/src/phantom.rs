//! Synthetic straight-vessel phantoms with stenoses, Gaussian PSF blur and
//! optional noise, plus the FWHM radius rule and the centerline HU-reduction
//! curve used to calibrate the radius model.
//!
//! The vessel axis runs along +z through `x = y = 0`, from the ostium at
//! `z = 0` to `z = length`; voxel centers lie on the axis.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::io::{
    parse_json, Centerline, FormatError, IoError, LabelVolume, Point3, ScalarVolume, Volume, VolumeGeometry,
};

/// Subsamples per axis when rasterizing the ideal volume.
pub const SUPERSAMPLING: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    Spec(String),
    #[error("profile has no peak above background")]
    NoPeak,
    #[error("profile does not fall below half maximum on the {0} side")]
    Unbounded(&'static str),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// True lumen radius as a piecewise-linear function of arc length, given by
/// `(arc_length_mm, radius_mm)` knots. Constant beyond the end knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RadiusProfile(pub Vec<[f64; 2]>);

impl RadiusProfile {
    pub fn constant(radius: f64) -> Self {
        Self(vec![[0.0, radius]])
    }

    pub fn radius_at(&self, s: f64) -> f64 {
        let k = &self.0;
        if s <= k[0][0] {
            return k[0][1];
        }
        for w in k.windows(2) {
            if s <= w[1][0] {
                let span = w[1][0] - w[0][0];
                if span <= 0.0 {
                    return w[1][1];
                }
                let t = (s - w[0][0]) / span;
                return w[0][1] + t * (w[1][1] - w[0][1]);
            }
        }
        k[k.len() - 1][1]
    }

    pub fn max_radius(&self) -> f64 {
        self.0.iter().map(|k| k[1]).fold(0.0, f64::max)
    }

    pub fn min_radius(&self) -> f64 {
        self.0.iter().map(|k| k[1]).fold(f64::INFINITY, f64::min)
    }

    /// Smooth cosine-shaped narrowing from `nominal` down to `minimum` over
    /// `[center - half_width, center + half_width]`, sampled every `step`.
    pub fn cosine_stenosis(nominal: f64, minimum: f64, center: f64, half_width: f64, step: f64) -> Self {
        let mut knots = vec![[0.0, nominal]];
        let start = center - half_width;
        let n = ((2.0 * half_width) / step).ceil().max(1.0) as usize;
        for k in 0..=n {
            let s = start + 2.0 * half_width * k as f64 / n as f64;
            let x = (s - center) / half_width;
            let depth = 0.5 * (1.0 + (std::f64::consts::PI * x).cos());
            knots.push([s, nominal - (nominal - minimum) * depth]);
        }
        knots.retain(|k| k[0] >= 0.0);
        knots.dedup_by(|b, a| b[0] <= a[0]);
        Self(knots)
    }

    fn validate(&self) -> Result<(), String> {
        if self.0.is_empty() {
            return Err("radius_profile needs at least one knot".into());
        }
        for (i, k) in self.0.iter().enumerate() {
            if !(k[0].is_finite() && k[1].is_finite() && k[1] > 0.0) {
                return Err(format!("radius_profile[{i}] must have finite position and radius > 0"));
            }
        }
        if self.0.windows(2).any(|w| w[1][0] < w[0][0]) {
            return Err("radius_profile knots must be sorted by arc length".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaqueSegment {
    pub start_mm: f64,
    pub end_mm: f64,
    pub plaque_hu: f64,
    pub outer_radius_mm: f64,
}

/// `phantom-spec.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub length_mm: f64,
    pub radius_profile: RadiusProfile,
    #[serde(default)]
    pub plaque_segments: Vec<PlaqueSegment>,
    pub lumen_hu: f64,
    pub background_hu: f64,
    pub psf_sigma_mm: f64,
    pub voxel_spacing_mm: [f64; 3],
    #[serde(default)]
    pub noise_sigma_hu: f64,
}

impl PhantomSpec {
    pub fn from_json_slice(bytes: &[u8]) -> Result<Self, FormatError> {
        let spec: PhantomSpec = parse_json(bytes)?;
        spec.validate().map_err(|e| FormatError::new("", e.to_string()))?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::Spec(m));
        if !(self.length_mm.is_finite() && self.length_mm > 0.0) {
            return bad(format!("length_mm must be > 0, got {}", self.length_mm));
        }
        self.radius_profile.validate().map_err(PhantomError::Spec)?;
        if !(self.psf_sigma_mm.is_finite() && self.psf_sigma_mm >= 0.0) {
            return bad("psf_sigma_mm must be >= 0".into());
        }
        if !(self.noise_sigma_hu.is_finite() && self.noise_sigma_hu >= 0.0) {
            return bad("noise_sigma_hu must be >= 0".into());
        }
        if !(self.lumen_hu.is_finite() && self.background_hu.is_finite() && self.lumen_hu > self.background_hu) {
            return bad("lumen_hu must exceed background_hu".into());
        }
        if self.voxel_spacing_mm.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("voxel_spacing_mm must be > 0".into());
        }
        for (i, p) in self.plaque_segments.iter().enumerate() {
            if !(p.start_mm.is_finite() && p.end_mm.is_finite() && p.end_mm >= p.start_mm) {
                return bad(format!("plaque_segments[{i}]: end_mm must be >= start_mm"));
            }
            if !p.plaque_hu.is_finite() || !p.outer_radius_mm.is_finite() {
                return bad(format!("plaque_segments[{i}]: values must be finite"));
            }
            // radius is piecewise linear, so checking the ends and interior knots suffices
            let mut probes = vec![p.start_mm, p.end_mm];
            probes.extend(self.radius_profile.0.iter().map(|k| k[0]).filter(|&s| s > p.start_mm && s < p.end_mm));
            for s in probes {
                let r = self.radius_profile.radius_at(s);
                if p.outer_radius_mm < r {
                    return bad(format!(
                        "plaque_segments[{i}]: outer radius {} below lumen radius {r} at {s} mm",
                        p.outer_radius_mm
                    ));
                }
            }
        }
        // keep generated volumes bounded
        let g = self.geometry();
        if g.dims.iter().map(|&d| d as f64).product::<f64>() > 2.0e8 {
            return bad("phantom volume would exceed 2e8 voxels".into());
        }
        Ok(())
    }

    fn outer_extent(&self) -> f64 {
        self.plaque_segments.iter().map(|p| p.outer_radius_mm).fold(self.radius_profile.max_radius(), f64::max)
    }

    /// Volume geometry: centered on the axis in x/y with room for the blur
    /// tail, voxel planes from `z = 0` to `z = length`.
    pub fn geometry(&self) -> VolumeGeometry {
        let half = self.outer_extent() + 4.0 * self.psf_sigma_mm + 2.0;
        let [sx, sy, sz] = self.voxel_spacing_mm;
        let hx = (half / sx).ceil() as usize;
        let hy = (half / sy).ceil() as usize;
        let nz = (self.length_mm / sz + 1e-9).floor() as usize + 1;
        VolumeGeometry {
            dims: [2 * hx + 1, 2 * hy + 1, nz],
            spacing: self.voxel_spacing_mm,
            origin: [-(hx as f64) * sx, -(hy as f64) * sy, 0.0],
        }
    }

    /// Ideal (unblurred) HU at a point.
    pub fn ideal_hu(&self, p: &Point3) -> f64 {
        let rho = p.x.hypot(p.y);
        if rho <= self.radius_profile.radius_at(p.z) {
            return self.lumen_hu;
        }
        for plaque in &self.plaque_segments {
            if p.z >= plaque.start_mm && p.z <= plaque.end_mm && rho <= plaque.outer_radius_mm {
                return plaque.plaque_hu;
            }
        }
        self.background_hu
    }

    pub fn is_lumen(&self, p: &Point3) -> bool {
        p.x.hypot(p.y) <= self.radius_profile.radius_at(p.z)
    }
}

/// Generated phantom with its ground truth.
#[derive(Debug, Clone)]
pub struct PhantomTruth {
    pub spec: PhantomSpec,
    /// Blurred (and noisy) volume.
    pub volume: ScalarVolume,
    pub ideal_volume: ScalarVolume,
    pub lumen_mask: LabelVolume,
    pub centerline: Centerline,
}

impl PhantomTruth {
    pub fn radius_profile(&self) -> &RadiusProfile {
        &self.spec.radius_profile
    }

    /// True radius at arc length `s` along the centerline.
    pub fn radius_at(&self, s: f64) -> f64 {
        self.spec.radius_profile.radius_at(s)
    }
}

/// Rasterize, blur and add noise.
pub fn generate_phantom(spec: &PhantomSpec, seed: u64) -> Result<PhantomTruth, PhantomError> {
    spec.validate()?;
    let geometry = spec.geometry();
    let n = SUPERSAMPLING;
    let offsets: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) / n as f64 - 0.5).collect();
    let inv = 1.0 / (n * n * n) as f64;
    let mut ideal = Vec::with_capacity(geometry.len());
    let mut mask = Vec::with_capacity(geometry.len());
    for i in 0..geometry.len() {
        let [x, y, z] = geometry.coords(i);
        let c = geometry.voxel_center(x, y, z);
        let mut acc = 0.0;
        for oz in &offsets {
            for oy in &offsets {
                for ox in &offsets {
                    let p = Point3::new(
                        c.x + ox * geometry.spacing[0],
                        c.y + oy * geometry.spacing[1],
                        c.z + oz * geometry.spacing[2],
                    );
                    acc += spec.ideal_hu(&p);
                }
            }
        }
        ideal.push(acc * inv);
        mask.push(spec.is_lumen(&c));
    }
    let ideal_volume = Volume::new(geometry, ideal)?;
    let mut volume = gaussian_blur(&ideal_volume, spec.psf_sigma_mm);
    if spec.noise_sigma_hu > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, spec.noise_sigma_hu).expect("validated sigma");
        for v in volume.values_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    let centerline = Centerline::straight(Point3::zeros(), Point3::new(0.0, 0.0, spec.length_mm), 0.5)?;
    Ok(PhantomTruth { spec: spec.clone(), volume, ideal_volume, lumen_mask: Volume::new(geometry, mask)?, centerline })
}

fn gaussian_kernel(sigma_vox: f64) -> Vec<f64> {
    let half = (4.0 * sigma_vox).ceil() as i64;
    let mut k: Vec<f64> = (-half..=half).map(|i| (-(i * i) as f64 / (2.0 * sigma_vox * sigma_vox)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= sum);
    k
}

/// Half-sample symmetric reflection into `[0, n)`.
fn mirror(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Separable isotropic Gaussian blur with mirror boundaries. `sigma_mm = 0`
/// returns the input unchanged.
pub fn gaussian_blur(vol: &ScalarVolume, sigma_mm: f64) -> ScalarVolume {
    if sigma_mm <= 0.0 {
        return vol.clone();
    }
    let g = *vol.geometry();
    let mut data = vol.values().to_vec();
    let mut scratch = vec![0.0; data.len()];
    for axis in 0..3 {
        let n = g.dims[axis];
        let kernel = gaussian_kernel(sigma_mm / g.spacing[axis]);
        let half = (kernel.len() / 2) as i64;
        let stride = match axis {
            0 => 1,
            1 => g.dims[0],
            _ => g.dims[0] * g.dims[1],
        };
        for (i, out) in scratch.iter_mut().enumerate() {
            let pos = (i / stride) % n;
            let base = i - pos * stride;
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let j = mirror(pos as i64 + k as i64 - half, n);
                acc += w * data[base + j * stride];
            }
            *out = acc;
        }
        std::mem::swap(&mut data, &mut scratch);
    }
    Volume::new(g, data).expect("same geometry")
}

/// FWHM radius of a cross profile: half the distance between the two
/// half-maximum crossings around the peak, where the half level is
/// `(max + background) / 2`. Crossings are linearly interpolated.
pub fn fwhm_radius(profile: &[f64], spacing: f64, background_hu: f64) -> Result<f64, PhantomError> {
    let (peak, &max) =
        profile
            .iter()
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |best, (i, v)| if *v > *best.1 { (i, v) } else { best });
    if profile.is_empty() || !(max > background_hu) {
        return Err(PhantomError::NoPeak);
    }
    let half = 0.5 * (max + background_hu);
    let crossing = |a: usize, b: usize| {
        // a is below half, b at or above
        let (pa, pb) = (profile[a], profile[b]);
        a as f64 + (b as f64 - a as f64) * (half - pa) / (pb - pa)
    };
    let left = (0..peak)
        .rev()
        .find(|&i| profile[i] < half)
        .map(|i| crossing(i, i + 1))
        .ok_or(PhantomError::Unbounded("left"))?;
    let right = (peak + 1..profile.len())
        .find(|&i| profile[i] < half)
        .map(|i| crossing(i, i - 1))
        .ok_or(PhantomError::Unbounded("right"))?;
    Ok(0.5 * (right - left) * spacing)
}

/// Profile through the vessel axis along x at arc length `s`.
pub fn axial_cross_profile(vol: &ScalarVolume, s: f64) -> (Vec<f64>, f64) {
    let g = vol.geometry();
    let spacing = g.spacing[0];
    let z = ((s - g.origin[2]) / g.spacing[2]).round().clamp(0.0, (g.dims[2] - 1) as f64) as usize;
    let y = ((0.0 - g.origin[1]) / g.spacing[1]).round().clamp(0.0, (g.dims[1] - 1) as f64) as usize;
    ((0..g.dims[0]).map(|x| *vol.get(x, y, z)).collect(), spacing)
}

/// Centerline HU reduction `1 - HU_center / lumen_hu` of an infinitely long
/// blurred cylinder, for each diameter.
///
/// The cross-section is rasterized on a fine 2D grid (4x4 supersampling) and
/// the blurred center value is the Gaussian-weighted sum of that grid.
pub fn hu_reduction_curve(diameters: &[f64], lumen_hu: f64, background_hu: f64, psf_sigma: f64) -> Vec<(f64, f64)> {
    diameters
        .iter()
        .map(|&d| {
            let center = blurred_center_hu(d * 0.5, lumen_hu, background_hu, psf_sigma);
            (d, 1.0 - center / lumen_hu)
        })
        .collect()
}

fn blurred_center_hu(radius: f64, lumen_hu: f64, background_hu: f64, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return lumen_hu;
    }
    // the kernel is negligible beyond 5.5 sigma
    let extent = 5.5 * sigma;
    let h = (sigma.min(2.0 * radius) / 16.0).max(extent / 1000.0);
    let half = (extent / h).ceil() as i64;
    const SUB: usize = 4;
    let sub: Vec<f64> = (0..SUB).map(|k| ((k as f64 + 0.5) / SUB as f64 - 0.5) * h).collect();
    let weights: Vec<f64> = (-half..=half)
        .map(|i| {
            let x = i as f64 * h;
            (-(x * x) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let (mut num, mut den) = (0.0, 0.0);
    let r2 = radius * radius;
    for (iy, wy) in weights.iter().enumerate() {
        let y = (iy as i64 - half) as f64 * h;
        for (ix, wx) in weights.iter().enumerate() {
            let x = (ix as i64 - half) as f64 * h;
            let w = wx * wy;
            // pixels entirely inside or outside skip supersampling
            let near = x.abs() - h <= radius && y.abs() - h <= radius;
            let frac = if !near {
                0.0
            } else if (x.abs() + h) * (x.abs() + h) + (y.abs() + h) * (y.abs() + h) <= r2 {
                1.0
            } else {
                let mut inside = 0usize;
                for oy in &sub {
                    for ox in &sub {
                        if (x + ox) * (x + ox) + (y + oy) * (y + oy) <= r2 {
                            inside += 1;
                        }
                    }
                }
                inside as f64 / (SUB * SUB) as f64
            };
            num += w * (background_hu + frac * (lumen_hu - background_hu));
            den += w;
        }
    }
    num / den
}

/// Write `spec` as `phantom-spec.json` content.
pub fn spec_to_json(spec: &PhantomSpec) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(spec).expect("spec serializes");
    v.push(b'\n');
    v
}

pub fn load_spec(path: &Path) -> Result<PhantomSpec, IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::Io { path: path.to_path_buf(), source: e })?;
    Ok(PhantomSpec::from_json_slice(&bytes).map_err(|e| e.in_file(path))?)
}
