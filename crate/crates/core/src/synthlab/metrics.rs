use thiserror::Error;

use crate::geometry::{rotation_angle, rotation_error_deg, RelativePose};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("trajectory lengths differ: {estimated} estimated vs {truth} ground truth")]
    LengthMismatch { estimated: usize, truth: usize },
    #[error("empty input")]
    Empty,
}

/// Errors of one estimated trajectory against its ground truth.
///
/// Percentages are relative to the largest displacement (rotation angle or
/// camera-center distance) between any two ground-truth frames; they are NaN
/// when that displacement is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub rot_err_deg: Vec<f64>,
    /// Camera-center error after the least-squares global scale alignment.
    pub trans_err: Vec<f64>,
    pub rot_err_pct: Vec<f64>,
    pub trans_err_pct: Vec<f64>,
    /// Maximum error over the trajectory as a percentage.
    pub max_rot_err_pct: f64,
    pub max_trans_err_pct: f64,
    /// Scale applied to the estimated camera centers.
    pub scale: f64,
}

fn percent(value: f64, reference: f64) -> f64 {
    if reference > 0.0 {
        100.0 * value / reference
    } else {
        f64::NAN
    }
}

/// Both poses lists map a common reference frame into each frame.
pub fn trajectory_error_metrics(
    estimated: &[RelativePose],
    ground_truth: &[RelativePose],
) -> Result<TrialResult, MetricsError> {
    if estimated.len() != ground_truth.len() {
        return Err(MetricsError::LengthMismatch { estimated: estimated.len(), truth: ground_truth.len() });
    }
    if estimated.is_empty() {
        return Err(MetricsError::Empty);
    }
    let c_est: Vec<_> = estimated.iter().map(|p| p.camera_center()).collect();
    let c_gt: Vec<_> = ground_truth.iter().map(|p| p.camera_center()).collect();
    let num: f64 = c_est.iter().zip(&c_gt).map(|(a, b)| a.dot(b)).sum();
    let den: f64 = c_est.iter().map(|a| a.norm_squared()).sum();
    let scale = if den > 0.0 { num / den } else { 1.0 };

    let rot_err_deg: Vec<f64> = estimated
        .iter()
        .zip(ground_truth)
        .map(|(e, g)| rotation_error_deg(&e.rotation, &g.rotation))
        .collect();
    let trans_err: Vec<f64> = c_est.iter().zip(&c_gt).map(|(e, g)| (e * scale - g).norm()).collect();

    let mut max_rot = 0.0f64;
    let mut max_trans = 0.0f64;
    for i in 0..ground_truth.len() {
        for j in i + 1..ground_truth.len() {
            let rel = ground_truth[j].rotation * ground_truth[i].rotation.inverse();
            max_rot = max_rot.max(rotation_angle(&rel).to_degrees());
            max_trans = max_trans.max((c_gt[j] - c_gt[i]).norm());
        }
    }
    let rot_err_pct: Vec<f64> = rot_err_deg.iter().map(|e| percent(*e, max_rot)).collect();
    let trans_err_pct: Vec<f64> = trans_err.iter().map(|e| percent(*e, max_trans)).collect();
    let max_rot_err_pct = percent(rot_err_deg.iter().cloned().fold(0.0, f64::max), max_rot);
    let max_trans_err_pct = percent(trans_err.iter().cloned().fold(0.0, f64::max), max_trans);
    Ok(TrialResult { rot_err_deg, trans_err, rot_err_pct, trans_err_pct, max_rot_err_pct, max_trans_err_pct, scale })
}

/// P5, P25, median, P75 and P95.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WhiskerStats {
    pub p5: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
}

/// Linear interpolation between order statistics at rank `q·(n−1)`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Whisker statistics of the finite values; `None` if there are none.
pub fn whisker(values: &[f64]) -> Option<WhiskerStats> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(WhiskerStats {
        p5: percentile(&v, 0.05),
        p25: percentile(&v, 0.25),
        p50: percentile(&v, 0.50),
        p75: percentile(&v, 0.75),
        p95: percentile(&v, 0.95),
    })
}
