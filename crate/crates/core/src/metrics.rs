//! Segmentation accuracy (Dice, symmetric surface distances) and diagnostic
//! statistics (confusion rates, ROC/AUC, DeLong's paired AUC test).

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use serde::{Deserialize, Serialize};

use crate::io::{LabelVolume, Point3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("mask dimensions differ: {0:?} vs {1:?}")]
    DimMismatch([usize; 3], [usize; 3]),
    #[error("surface point set is empty")]
    EmptySurface,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least one positive and one negative case ({positives} positive, {negatives} negative)")]
    DegenerateLabels { positives: usize, negatives: usize },
    #[error("variance of the AUC difference is {variance:e}; the test is undefined (AUCs {auc_a} and {auc_b})")]
    DegenerateVariance { auc_a: f64, auc_b: f64, variance: f64 },
    #[error("scores must be finite")]
    NonFinite,
}

/// `2|A and B| / (|A| + |B|)`, 1 when both masks are empty.
pub fn dice(a: &LabelVolume, b: &LabelVolume) -> Result<f64, MetricsError> {
    if a.dims() != b.dims() {
        return Err(MetricsError::DimMismatch(a.dims(), b.dims()));
    }
    let (mut both, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.values().iter().zip(b.values()) {
        na += usize::from(x);
        nb += usize::from(y);
        both += usize::from(x && y);
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Mean and maximum of the pooled directed nearest-point distances, mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDistance {
    pub mean_mm: f64,
    pub max_mm: f64,
}

fn directed(from: &[Point3], to: &[Point3]) -> Vec<f64> {
    let pts: Vec<[f64; 3]> = to.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(&pts).expect("nonempty point set");
    from.iter()
        .map(|p| tree.query(&[p.x, p.y, p.z]).nearest_one::<SquaredEuclidean<f64>>().execute().distance.sqrt())
        .collect()
}

pub fn surface_distances(a: &[Point3], b: &[Point3]) -> Result<SurfaceDistance, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptySurface);
    }
    if a.iter().chain(b).any(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(MetricsError::NonFinite);
    }
    let mut d = directed(a, b);
    d.extend(directed(b, a));
    Ok(SurfaceDistance {
        mean_mm: d.iter().sum::<f64>() / d.len() as f64,
        max_mm: d.iter().copied().fold(0.0, f64::max),
    })
}

/// Which side of the threshold counts as a positive (diseased) call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `score <= threshold` is positive, as for FFR.
    LowerIsPositive,
    /// `score >= threshold` is positive.
    HigherIsPositive,
}

impl Direction {
    /// Score oriented so that larger means more positive.
    fn orient(self, score: f64) -> f64 {
        match self {
            Direction::LowerIsPositive => -score,
            Direction::HigherIsPositive => score,
        }
    }
}

/// Confusion counts and rates; a rate is `None` when its denominator is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionStats {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub accuracy: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn confusion(
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
    direction: Direction,
) -> Result<ConfusionStats, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        let called = direction.orient(s) >= direction.orient(threshold);
        match (called, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(ConfusionStats {
        tp,
        fp,
        tn,
        fn_,
        sensitivity: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
        ppv: ratio(tp, tp + fp),
        npv: ratio(tn, tn + fn_),
        accuracy: ratio(tp + tn, scores.len()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Score at which this point is reached (`None` for the `(0, 0)` start).
    pub threshold: Option<f64>,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    /// Trapezoidal area under the stored points.
    pub fn trapezoid_area(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * 0.5 * (w[0].tpr + w[1].tpr)).sum()
    }
}

fn class_counts(labels: &[bool]) -> Result<(usize, usize), MetricsError> {
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::DegenerateLabels { positives, negatives });
    }
    Ok((positives, negatives))
}

/// Midranks (1-based) of `values`, ties sharing the average rank.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// ROC curve over all distinct thresholds and the Mann-Whitney AUC
/// `(concordant + ties / 2) / (n_pos * n_neg)`.
pub fn roc_auc(scores: &[f64], labels: &[bool], direction: Direction) -> Result<RocCurve, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let (n_pos, n_neg) = class_counts(labels)?;
    let oriented: Vec<f64> = scores.iter().map(|&s| direction.orient(s)).collect();
    let ranks = midranks(&oriented);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    let auc = u / (n_pos as f64 * n_neg as f64);

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| oriented[b].total_cmp(&oriented[a]));
    let mut points = vec![RocPoint { threshold: None, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = oriented[order[i]];
        while i < order.len() && oriented[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: Some(scores[order[i - 1]]),
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    Ok(RocCurve { points, auc })
}

/// Paired comparison of two AUCs on the same cases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeLongResult {
    pub auc_a: f64,
    pub auc_b: f64,
    pub variance: f64,
    pub z: f64,
    pub p_value: f64,
}

fn psi(pos: f64, neg: f64) -> f64 {
    if pos > neg {
        1.0
    } else if pos == neg {
        0.5
    } else {
        0.0
    }
}

/// Structural components `(V10 per positive, V01 per negative)` of one
/// score vector.
fn placements(oriented: &[f64], labels: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let pos: Vec<f64> = oriented.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = oriented.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    let v10 = pos.iter().map(|&x| neg.iter().map(|&y| psi(x, y)).sum::<f64>() / neg.len() as f64).collect();
    let v01 = neg.iter().map(|&y| pos.iter().map(|&x| psi(x, y)).sum::<f64>() / pos.len() as f64).collect();
    (v10, v01)
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0)
}

/// DeLong's test for `AUC_a = AUC_b` with a two-sided normal p-value.
pub fn delong_test(
    scores_a: &[f64],
    scores_b: &[f64],
    labels: &[bool],
    direction: Direction,
) -> Result<DeLongResult, MetricsError> {
    for s in [scores_a, scores_b] {
        if s.len() != labels.len() {
            return Err(MetricsError::LengthMismatch(s.len(), labels.len()));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite);
        }
    }
    let (m, n) = class_counts(labels)?;
    let orient = |s: &[f64]| -> Vec<f64> { s.iter().map(|&v| direction.orient(v)).collect() };
    let (a10, a01) = placements(&orient(scores_a), labels);
    let (b10, b01) = placements(&orient(scores_b), labels);
    let auc_a = a10.iter().sum::<f64>() / m as f64;
    let auc_b = b10.iter().sum::<f64>() / m as f64;
    let var_term = |x: &[f64], y: &[f64], k: usize| {
        if k < 2 {
            0.0
        } else {
            (covariance(x, x) + covariance(y, y) - 2.0 * covariance(x, y)) / k as f64
        }
    };
    let variance = var_term(&a10, &b10, m) + var_term(&a01, &b01, n);
    if !(variance > 1e-15) {
        return Err(MetricsError::DegenerateVariance { auc_a, auc_b, variance });
    }
    let z = (auc_a - auc_b) / variance.sqrt();
    let p_value = statrs::function::erf::erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0);
    Ok(DeLongResult { auc_a, auc_b, variance, z, p_value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{Volume, VolumeGeometry};

    fn mask(bits: &[bool]) -> LabelVolume {
        Volume::new(VolumeGeometry::new([bits.len(), 1, 1], [1.0; 3], [0.0; 3]).unwrap(), bits.to_vec()).unwrap()
    }

    #[test]
    fn dice_examples() {
        let a = mask(&[true, true, false, false]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &mask(&[false, false, true, true])).unwrap(), 0.0);
        assert_eq!(dice(&mask(&[false; 4]), &mask(&[false; 4])).unwrap(), 1.0);
        assert_eq!(dice(&a, &mask(&[true, false, true, false])).unwrap(), 0.5);
        assert!(matches!(dice(&a, &mask(&[true])), Err(MetricsError::DimMismatch(..))));
    }

    #[test]
    fn concentric_circles() {
        let circle = |r: f64| -> Vec<Point3> {
            (0..720)
                .map(|k| {
                    let t = std::f64::consts::TAU * k as f64 / 720.0;
                    Point3::new(r * t.cos(), r * t.sin(), 0.0)
                })
                .collect()
        };
        let d = surface_distances(&circle(2.0), &circle(2.5)).unwrap();
        assert!((d.mean_mm - 0.5).abs() < 1e-3 && (d.max_mm - 0.5).abs() < 1e-3);
        assert_eq!(
            surface_distances(&circle(1.0), &circle(1.0)).unwrap(),
            SurfaceDistance { mean_mm: 0.0, max_mm: 0.0 }
        );
        assert_eq!(surface_distances(&[], &circle(1.0)), Err(MetricsError::EmptySurface));
    }

    #[test]
    fn confusion_extremes() {
        let scores = [0.6, 0.7, 0.9, 0.95];
        let labels = [true, true, false, false];
        let s = confusion(&scores, &labels, 0.8, Direction::LowerIsPositive).unwrap();
        assert_eq!((s.sensitivity, s.specificity), (Some(1.0), Some(1.0)));
        let all = confusion(&scores, &labels, 1.0, Direction::LowerIsPositive).unwrap();
        assert_eq!((all.sensitivity, all.specificity, all.npv), (Some(1.0), Some(0.0), None));
    }

    #[test]
    fn auc_extremes_and_ties() {
        let labels = [true, true, false, false];
        assert_eq!(roc_auc(&[0.1, 0.2, 0.9, 0.8], &labels, Direction::LowerIsPositive).unwrap().auc, 1.0);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.1, 0.2], &labels, Direction::LowerIsPositive).unwrap().auc, 0.0);
        let tied = roc_auc(&[0.5; 4], &labels, Direction::HigherIsPositive).unwrap();
        assert_eq!(tied.auc, 0.5);
        assert_eq!(tied.trapezoid_area(), 0.5);
        assert!(matches!(
            roc_auc(&[1.0], &[true], Direction::HigherIsPositive),
            Err(MetricsError::DegenerateLabels { .. })
        ));
    }

    #[test]
    fn identical_models_have_degenerate_delong_variance() {
        let scores = [0.3, 0.9, 0.5, 0.7, 0.6];
        let labels = [false, true, false, true, true];
        assert!(matches!(
            delong_test(&scores, &scores, &labels, Direction::HigherIsPositive),
            Err(MetricsError::DegenerateVariance { .. })
        ));
    }
}
