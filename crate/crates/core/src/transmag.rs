//! One-DoF translation magnitude: with `(R, u)` fixed, find the `s` that
//! best reprojects keyframe features of known depth into the current frame.

use nalgebra::{DVector, Vector2, Vector3};
use thiserror::Error;

use crate::geometry::{Bearing, CameraModel, Rotation, UnitDirection};
use crate::optim::{lm_minimize, EuclideanProblem, LmConfig, LmStatus, TerminationReason};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransMagError {
    #[error("depth must be positive and finite, got {0}")]
    InvalidDepth(f64),
    #[error("pixel sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("robust kernel delta must be positive, got {0}")]
    InvalidDelta(f64),
}

/// A keyframe feature with depth along its keyframe bearing, and its
/// observation in the current frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthFeature {
    pub f: Bearing,
    pub f_prime: Bearing,
    depth: f64,
    sigma: f64,
}

impl DepthFeature {
    pub fn new(f: Bearing, f_prime: Bearing, depth: f64, sigma: f64) -> Result<Self, TransMagError> {
        if !(depth > 0.0 && depth.is_finite()) {
            return Err(TransMagError::InvalidDepth(depth));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(TransMagError::InvalidSigma(sigma));
        }
        Ok(Self { f, f_prime, depth, sigma })
    }

    pub fn depth(&self) -> f64 {
        self.depth
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Same feature with every depth multiplied by `scale`.
    pub fn rescaled(&self, scale: f64) -> Result<Self, TransMagError> {
        Self::new(self.f, self.f_prime, self.depth * scale, self.sigma)
    }

    /// The keyframe point mapped into the current frame by `(R, t)`.
    pub fn transferred(&self, r: &Rotation, t: &Vector3<f64>) -> Vector3<f64> {
        r * (self.f.as_ref() * self.depth) + t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RobustKind {
    Huber,
}

/// Robust kernel applied to the σ-normalised squared pixel error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustCost {
    kind: RobustKind,
    delta: f64,
}

impl RobustCost {
    pub fn huber(delta_px: f64) -> Result<Self, TransMagError> {
        if !(delta_px > 0.0) {
            return Err(TransMagError::InvalidDelta(delta_px));
        }
        Ok(Self { kind: RobustKind::Huber, delta: delta_px })
    }

    pub fn kind(&self) -> RobustKind {
        self.kind
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `g(e²/σ²)`: quadratic up to `delta/σ`, linear beyond it.
    pub fn evaluate(&self, squared_error_px: f64, sigma: f64) -> f64 {
        let z = squared_error_px / (sigma * sigma);
        let k = self.delta / sigma;
        if z <= k * k {
            z
        } else {
            2.0 * k * z.sqrt() - k * k
        }
    }
}

impl Default for RobustCost {
    fn default() -> Self {
        Self { kind: RobustKind::Huber, delta: 2.0 }
    }
}

/// Stand-in pixel error for points the camera cannot image (pinhole,
/// behind the camera); keeps the cost finite while strongly penalising it.
const UNPROJECTABLE_PX: f64 = 1e4;

fn pixel_error(cam: &CameraModel, point: &Vector3<f64>, observed: &Bearing) -> Vector2<f64> {
    cam.reprojection_residual(point, observed)
        .unwrap_or_else(|_| Vector2::new(UNPROJECTABLE_PX, UNPROJECTABLE_PX))
}

/// Per-feature 2-vectors whose squared norms are the robust costs, so that
/// their stacked sum of squares is the objective.
pub fn robust_residuals(
    features: &[DepthFeature],
    r: &Rotation,
    t: &Vector3<f64>,
    cam: &CameraModel,
    robust: &RobustCost,
) -> DVector<f64> {
    let mut out = DVector::zeros(2 * features.len());
    for (i, feat) in features.iter().enumerate() {
        let e = pixel_error(cam, &feat.transferred(r, t), &feat.f_prime);
        let e2 = e.norm_squared();
        let scale = if e2 > 0.0 {
            (robust.evaluate(e2, feat.sigma) / e2).sqrt()
        } else {
            1.0 / feat.sigma
        };
        out[2 * i] = e.x * scale;
        out[2 * i + 1] = e.y * scale;
    }
    out
}

/// Robust objective at translation `t`.
pub fn robust_cost(
    features: &[DepthFeature],
    r: &Rotation,
    t: &Vector3<f64>,
    cam: &CameraModel,
    robust: &RobustCost,
) -> f64 {
    robust_residuals(features, r, t, cam, robust).norm_squared()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MagnitudeStatus {
    Converged,
    TooFewFeatures,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeResult {
    pub s: f64,
    pub final_cost: f64,
    /// Features left in the linear (down-weighted) branch of the robust
    /// kernel at `s`. The stricter post-estimation check is
    /// [`magnitude_outliers`].
    pub outlier_mask: Vec<bool>,
    pub status: MagnitudeStatus,
    pub lm_status: Option<LmStatus>,
}

/// Starting magnitude for a new frame.
///
/// Against a keyframe that is the previous frame the translation is close to
/// zero. Otherwise the last estimate is reused, with its sign flipped when the
/// direction estimate flipped (the eigenvector initialisation is sign-blind).
pub fn magnitude_initial_guess(
    prev_s: f64,
    prev_u: &UnitDirection,
    new_u: &UnitDirection,
    keyframe_is_previous_frame: bool,
) -> f64 {
    if keyframe_is_previous_frame {
        0.0
    } else if new_u.vector().dot(&prev_u.vector()) < 0.0 {
        -prev_s
    } else {
        prev_s
    }
}

/// Minimises the robust reprojection cost over `s` with `t = s u`. The
/// rotation and direction are inputs only and are never modified.
pub fn estimate_magnitude(
    features: &[DepthFeature],
    r: &Rotation,
    u: &UnitDirection,
    s0: f64,
    cam: &CameraModel,
    robust: &RobustCost,
    lm: &LmConfig,
) -> MagnitudeResult {
    if features.is_empty() {
        return MagnitudeResult {
            s: s0,
            final_cost: 0.0,
            outlier_mask: Vec::new(),
            status: MagnitudeStatus::TooFewFeatures,
            lm_status: None,
        };
    }
    let uv = u.vector();
    let problem = EuclideanProblem::new(1, |x: &DVector<f64>| robust_residuals(features, r, &(uv * x[0]), cam, robust));
    let (x, st) = lm_minimize(&problem, DVector::from_element(1, s0), lm);
    let status = if st.reason == TerminationReason::NumericalFailure || !x[0].is_finite() {
        MagnitudeStatus::NumericalFailure
    } else {
        MagnitudeStatus::Converged
    };
    let outlier_mask = magnitude_outliers(features, r, u, x[0], cam, robust.delta);
    MagnitudeResult {
        s: x[0],
        final_cost: st.final_cost,
        outlier_mask,
        status,
        lm_status: Some(st),
    }
}

/// Reprojection error in pixels of every feature at `t = s u`.
pub fn reprojection_errors(
    features: &[DepthFeature],
    r: &Rotation,
    u: &UnitDirection,
    s: f64,
    cam: &CameraModel,
) -> Vec<f64> {
    let t = u.vector() * s;
    features
        .iter()
        .map(|feat| pixel_error(cam, &feat.transferred(r, &t), &feat.f_prime).norm())
        .collect()
}

/// True where the reprojection error exceeds `threshold_px`.
pub fn magnitude_outliers(
    features: &[DepthFeature],
    r: &Rotation,
    u: &UnitDirection,
    s: f64,
    cam: &CameraModel,
    threshold_px: f64,
) -> Vec<bool> {
    reprojection_errors(features, r, u, s, cam)
        .into_iter()
        .map(|e| e > threshold_px)
        .collect()
}
