//! Centerline intensity-profile model and partial-volume detection.
//!
//! The expected intensity along a centerline is a quadratic in arc length.
//! A first least-squares fit flags samples at least two residual standard
//! deviations below the model; the model is refit without them and the flags
//! are re-evaluated against the refit. In flagged regions the lumen radius is
//! estimated from the relative intensity drop with a linear model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::io::{PlaneFrame, ScalarVolume};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PveError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("arc lengths are not distinct enough for a quadratic fit")]
    RankDeficient,
    #[error("only {remaining} samples left after outlier removal")]
    AllOutliers { remaining: usize },
    #[error("only {usable} usable calibration points (reduction in (0.02, 0.8))")]
    InsufficientRange { usable: usize },
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("invalid radius model: {0}")]
    InvalidModel(String),
}

/// Centerline intensities `I(c)` against arc length `dist(c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityProfile {
    arc_length: Vec<f64>,
    intensity: Vec<f64>,
}

impl IntensityProfile {
    pub fn new(arc_length: Vec<f64>, intensity: Vec<f64>) -> Result<Self, PveError> {
        if arc_length.len() != intensity.len() {
            return Err(PveError::InvalidProfile(format!(
                "{} arc lengths vs {} intensities",
                arc_length.len(),
                intensity.len()
            )));
        }
        if arc_length.iter().chain(&intensity).any(|v| !v.is_finite()) {
            return Err(PveError::InvalidProfile("non-finite sample".into()));
        }
        if arc_length.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(PveError::InvalidProfile("arc length must be strictly increasing".into()));
        }
        Ok(Self { arc_length, intensity })
    }

    /// Sample `vol` at each plane center.
    pub fn along(vol: &ScalarVolume, frames: &[PlaneFrame]) -> Result<Self, PveError> {
        Self::new(
            frames.iter().map(|f| f.arc_length).collect(),
            frames.iter().map(|f| vol.sample_trilinear(&f.center)).collect(),
        )
    }

    pub fn arc_length(&self) -> &[f64] {
        &self.arc_length
    }

    pub fn intensity(&self) -> &[f64] {
        &self.intensity
    }

    pub fn len(&self) -> usize {
        self.arc_length.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arc_length.is_empty()
    }
}

/// Quadratic intensity model with its residual spread and PVE flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileModel {
    /// `(beta0 HU, beta1 HU/mm, beta2 HU/mm^2)`
    pub beta: [f64; 3],
    /// Residual standard deviation (HU).
    pub sigma: f64,
    pub pve_mask: Vec<bool>,
    /// Residual spread of the first-phase fit, when the model came from
    /// [`detect_pve`].
    #[serde(default)]
    pub phase1_sigma: Option<f64>,
}

impl ProfileModel {
    pub fn eval(&self, s: f64) -> f64 {
        self.beta[0] + s * (self.beta[1] + s * self.beta[2])
    }

    pub fn any_pve(&self) -> bool {
        self.pve_mask.iter().any(|&b| b)
    }
}

/// Detection settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    /// Floor on the residual spread used in the outlier threshold. Keeps
    /// noise-free profiles from flagging samples that sit on the model.
    pub min_sigma_hu: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self { min_sigma_hu: 1.0 }
    }
}

/// Least-squares quadratic on the samples selected by `keep`.
fn fit_subset(s: &[f64], y: &[f64], keep: &[usize]) -> Result<[f64; 3], PveError> {
    let mut distinct: Vec<f64> = keep.iter().map(|&i| s[i]).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(PveError::RankDeficient);
    }
    let center = keep.iter().map(|&i| s[i]).sum::<f64>() / keep.len() as f64;
    let scale = keep.iter().map(|&i| (s[i] - center).abs()).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(PveError::RankDeficient);
    }
    let a = DMatrix::from_fn(keep.len(), 3, |row, col| ((s[keep[row]] - center) / scale).powi(col as i32));
    let b = DVector::from_iterator(keep.len(), keep.iter().map(|&i| y[i]));
    let qr = a.qr();
    let r = qr.r();
    let rmax = (0..3).map(|k| r[(k, k)].abs()).fold(0.0, f64::max);
    if (0..3).any(|k| r[(k, k)].abs() <= 1e-10 * rmax) {
        return Err(PveError::RankDeficient);
    }
    let qtb = qr.q().transpose() * b;
    let c = r.solve_upper_triangular(&qtb).ok_or(PveError::RankDeficient)?;
    // back to raw arc length: c0 + c1 t + c2 t^2 with t = (s - center) / scale
    let (c0, c1, c2) = (c[0], c[1] / scale, c[2] / (scale * scale));
    Ok([c0 - c1 * center + c2 * center * center, c1 - 2.0 * c2 * center, c2])
}

fn residual_std(s: &[f64], y: &[f64], keep: &[usize], beta: &[f64; 3]) -> f64 {
    let res: Vec<f64> = keep.iter().map(|&i| y[i] - (beta[0] + s[i] * (beta[1] + s[i] * beta[2]))).collect();
    let mean = res.iter().sum::<f64>() / res.len() as f64;
    (res.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / res.len() as f64).sqrt()
}

/// Ordinary least-squares quadratic fit. The mask is all-clear and `sigma`
/// is the residual standard deviation.
pub fn fit_polynomial(profile: &IntensityProfile) -> Result<ProfileModel, PveError> {
    if profile.len() < 3 {
        return Err(PveError::TooFewSamples { needed: 3, got: profile.len() });
    }
    let all: Vec<usize> = (0..profile.len()).collect();
    let beta = fit_subset(&profile.arc_length, &profile.intensity, &all)?;
    Ok(ProfileModel {
        beta,
        sigma: residual_std(&profile.arc_length, &profile.intensity, &all, &beta),
        pve_mask: vec![false; profile.len()],
        phase1_sigma: None,
    })
}

fn flag_low(profile: &IntensityProfile, beta: &[f64; 3], sigma: f64, cfg: &DetectConfig) -> Vec<bool> {
    let threshold = 2.0 * sigma.max(cfg.min_sigma_hu);
    profile
        .arc_length
        .iter()
        .zip(&profile.intensity)
        .map(|(&s, &i)| i <= beta[0] + s * (beta[1] + s * beta[2]) - threshold)
        .collect()
}

/// Two-phase robust fit with default settings.
pub fn detect_pve(profile: &IntensityProfile) -> Result<ProfileModel, PveError> {
    detect_pve_with(profile, &DetectConfig::default())
}

/// Two-phase robust fit: fit all samples, drop those at or below
/// `model - 2 sigma`, refit on the rest, and flag every sample at or below
/// the refit model minus twice its residual spread.
pub fn detect_pve_with(profile: &IntensityProfile, cfg: &DetectConfig) -> Result<ProfileModel, PveError> {
    if profile.len() < 10 {
        return Err(PveError::TooFewSamples { needed: 10, got: profile.len() });
    }
    let phase1 = fit_polynomial(profile)?;
    let outliers = flag_low(profile, &phase1.beta, phase1.sigma, cfg);
    let clean: Vec<usize> = (0..profile.len()).filter(|&i| !outliers[i]).collect();
    if clean.len() < 3 {
        return Err(PveError::AllOutliers { remaining: clean.len() });
    }
    let beta = fit_subset(&profile.arc_length, &profile.intensity, &clean)?;
    let sigma = residual_std(&profile.arc_length, &profile.intensity, &clean, &beta);
    Ok(ProfileModel { beta, sigma, pve_mask: flag_low(profile, &beta, sigma, cfg), phase1_sigma: Some(phase1.sigma) })
}

/// Linear model of lumen radius against centerline HU reduction:
/// `r = 0.5 * (alpha * (1 - I / I_p) + beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusModel {
    pub alpha_mm: f64,
    pub beta_mm: f64,
}

impl Default for RadiusModel {
    fn default() -> Self {
        Self { alpha_mm: -2.0, beta_mm: 1.4 }
    }
}

/// Smallest radius `estimate_radius` returns.
pub const MIN_ESTIMATED_RADIUS_MM: f64 = 0.25;

impl RadiusModel {
    pub fn new(alpha_mm: f64, beta_mm: f64) -> Result<Self, PveError> {
        let m = Self { alpha_mm, beta_mm };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), PveError> {
        if !(self.alpha_mm.is_finite() && self.alpha_mm < 0.0) {
            return Err(PveError::InvalidModel(format!("alpha must be < 0, got {}", self.alpha_mm)));
        }
        if !(self.beta_mm.is_finite() && self.beta_mm > 0.0) {
            return Err(PveError::InvalidModel(format!("beta must be > 0, got {}", self.beta_mm)));
        }
        Ok(())
    }

    pub fn from_json_slice(bytes: &[u8]) -> Result<Self, crate::io::FormatError> {
        let m: RadiusModel = crate::io::parse_json(bytes)?;
        m.validate().map_err(|e| crate::io::FormatError::new("", e.to_string()))?;
        Ok(m)
    }
}

/// Radius (mm) for a centerline intensity ratio `I / I_p`. The ratio is
/// clamped to `[0, 1.5]` and the result floored at 0.25 mm.
pub fn estimate_radius(model: &RadiusModel, intensity_ratio: f64) -> f64 {
    let ratio = if intensity_ratio.is_nan() { 1.0 } else { intensity_ratio.clamp(0.0, 1.5) };
    (0.5 * (model.alpha_mm * (1.0 - ratio) + model.beta_mm)).max(MIN_ESTIMATED_RADIUS_MM)
}

/// Per-sample estimated radius from a robust model; `None` where the sample
/// is not flagged.
pub fn estimated_radii(
    profile: &IntensityProfile,
    model: &ProfileModel,
    radius_model: &RadiusModel,
) -> Vec<Option<f64>> {
    profile
        .arc_length
        .iter()
        .zip(&profile.intensity)
        .zip(&model.pve_mask)
        .map(|((&s, &i), &flag)| {
            flag.then(|| {
                let expected = model.eval(s);
                let ratio = if expected > 0.0 { i / expected } else { 1.0 };
                estimate_radius(radius_model, ratio)
            })
        })
        .collect()
}

/// Fit `diameter = alpha * reduction + beta` to `(diameter, reduction)`
/// points with reduction in `(0.02, 0.8)`.
pub fn calibrate_radius_model(curve: &[(f64, f64)]) -> Result<RadiusModel, PveError> {
    let usable: Vec<(f64, f64)> =
        curve.iter().copied().filter(|&(d, red)| d.is_finite() && red > 0.02 && red < 0.8).collect();
    let mut diameters: Vec<f64> = usable.iter().map(|p| p.0).collect();
    diameters.sort_by(f64::total_cmp);
    diameters.dedup();
    if diameters.len() < 2 {
        return Err(PveError::InsufficientRange { usable: diameters.len() });
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|p| p.1).sum::<f64>() / n;
    let my = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let sxx: f64 = usable.iter().map(|p| (p.1 - mx) * (p.1 - mx)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.1 - mx) * (p.0 - my)).sum();
    if !(sxx > 0.0) {
        return Err(PveError::InsufficientRange { usable: 1 });
    }
    let alpha = sxy / sxx;
    RadiusModel::new(alpha, my - alpha * mx)
}
