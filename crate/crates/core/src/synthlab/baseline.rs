use nalgebra::{DVector, Vector3};
use thiserror::Error;

use crate::geometry::{so3_exp, CameraModel, Rotation};
use crate::optim::{lm_minimize, LeastSquaresProblem, LmConfig, LmStatus, TerminationReason};
use crate::transmag::{robust_residuals, DepthFeature, RobustCost};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaselineError {
    #[error("need at least 6 features, got {0}")]
    TooFewFeatures(usize),
    #[error("optimizer failed numerically")]
    NumericalFailure(LmStatus),
}

/// Motion-only bundle adjustment: the full 6-DoF pose minimising the same
/// robust reprojection cost as the magnitude estimator, with the points held
/// fixed at their given depths.
struct PoseProblem<'a> {
    features: &'a [DepthFeature],
    cam: &'a CameraModel,
    robust: &'a RobustCost,
}

impl LeastSquaresProblem for PoseProblem<'_> {
    type Point = (Rotation, Vector3<f64>);

    fn tangent_dim(&self) -> usize {
        6
    }

    fn residual(&self, x: &Self::Point) -> DVector<f64> {
        robust_residuals(self.features, &x.0, &x.1, self.cam, self.robust)
    }

    fn retract(&self, x: &Self::Point, delta: &DVector<f64>) -> Self::Point {
        let mut r = x.0 * so3_exp(&Vector3::new(delta[0], delta[1], delta[2]));
        r.renormalize();
        (r, x.1 + Vector3::new(delta[3], delta[4], delta[5]))
    }
}

pub fn baseline_6dof(
    features: &[DepthFeature],
    r0: &Rotation,
    t0: &Vector3<f64>,
    cam: &CameraModel,
    robust: &RobustCost,
    lm: &LmConfig,
) -> Result<(Rotation, Vector3<f64>, LmStatus), BaselineError> {
    if features.len() < 6 {
        return Err(BaselineError::TooFewFeatures(features.len()));
    }
    let problem = PoseProblem { features, cam, robust };
    let ((r, t), st) = lm_minimize(&problem, (*r0, *t0), lm);
    if st.reason == TerminationReason::NumericalFailure {
        return Err(BaselineError::NumericalFailure(st));
    }
    Ok((r, t, st))
}
