//! Five-DoF relative pose (rotation and unit translation direction) from
//! bearing correspondences alone.
//!
//! Every epipolar-plane normal `mᵢ = R fᵢ × fᵢ'` is orthogonal to the
//! translation direction, so `uᵀ M(R) u` with `M(R) = Σ mᵢ mᵢᵀ` vanishes at
//! the true pose. The functional is rewritten as a quadratic form
//! `x C xᵀ` in `x = vec(r uᵀ)` and minimised with Levenberg–Marquardt over a
//! residual made of its five chart derivatives plus the weighted functional.
//! No depth enters anywhere in this module.

mod data_matrix;
mod ransac;
mod residual;

use nalgebra::{Matrix3, SymmetricEigen};
use thiserror::Error;

use crate::geometry::{Bearing, Rotation, UnitDirection};

pub use data_matrix::{build_data_matrix, functional_value, DataMatrixC, Matrix27, Vector27};
pub use ransac::{ransac_relative_pose, RansacConfig, RelPoseResult, RelPoseStatus};
pub use residual::{
    functional_gradient, refine_relative_pose, refine_with_data_matrix, residual_vector,
    RelativePoseProblem,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RelPoseError {
    #[error("no correspondences given")]
    EmptyInput,
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewPairs { needed: usize, got: usize },
    #[error("minimum eigenvalue is not isolated; translation direction is undetermined")]
    Degenerate,
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}

/// A keyframe bearing and the matching bearing in the current frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BearingPair {
    pub f: Bearing,
    pub f_prime: Bearing,
}

impl BearingPair {
    pub fn new(f: Bearing, f_prime: Bearing) -> Self {
        Self { f, f_prime }
    }

    /// Epipolar-plane normal `R f × f'`.
    pub fn normal(&self, r: &Rotation) -> nalgebra::Vector3<f64> {
        (r * self.f.as_ref()).cross(self.f_prime.as_ref())
    }
}

/// Weight `W` of the functional row in the residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverWeights {
    functional: f64,
}

impl SolverWeights {
    pub fn new(functional: f64) -> Result<Self, RelPoseError> {
        if !(functional >= 0.0 && functional.is_finite()) {
            return Err(RelPoseError::InvalidConfig("functional weight must be finite and non-negative"));
        }
        Ok(Self { functional })
    }

    pub fn functional_weight(&self) -> f64 {
        self.functional
    }
}

impl Default for SolverWeights {
    fn default() -> Self {
        Self { functional: 50.0 }
    }
}

/// `M(R) = Σ mᵢ mᵢᵀ` over the epipolar-plane normals.
pub fn epipolar_normal_covariance(r: &Rotation, pairs: &[BearingPair]) -> Result<Matrix3<f64>, RelPoseError> {
    if pairs.is_empty() {
        return Err(RelPoseError::EmptyInput);
    }
    Ok(pairs.iter().fold(Matrix3::zeros(), |acc, p| {
        let m = p.normal(r);
        acc + m * m.transpose()
    }))
}

/// Eigenvector of the smallest eigenvalue of `M`; either sign is valid.
///
/// Fails with [`RelPoseError::Degenerate`] when the two smallest eigenvalues
/// are within `1e-9·trace(M)` of each other.
pub fn translation_from_rotation(m: &Matrix3<f64>) -> Result<UnitDirection, RelPoseError> {
    let eig = SymmetricEigen::new(*m);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    // Normals at rounding level (angles ~1e-12 rad) carry no direction.
    let trace = m.trace().abs();
    if trace < 1e-24 || l2 - l1 <= 1e-9 * trace {
        return Err(RelPoseError::Degenerate);
    }
    UnitDirection::from_vector(&eig.eigenvectors.column(order[0]).into_owned()).ok_or(RelPoseError::Degenerate)
}

/// `R·exp(θ)` with each component of `θ` uniform in `±max_deg`; seeds the
/// search from the previous rotation when no external prior is available.
pub fn jitter_rotation<G: rand::Rng + ?Sized>(r: &Rotation, max_deg: f64, rng: &mut G) -> Rotation {
    if !(max_deg > 0.0) {
        return *r;
    }
    let m = max_deg.to_radians();
    let theta = nalgebra::Vector3::new(rng.random_range(-m..=m), rng.random_range(-m..=m), rng.random_range(-m..=m));
    r * crate::geometry::so3_exp(&theta)
}
