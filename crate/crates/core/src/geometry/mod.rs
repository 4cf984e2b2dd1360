//! Shared geometric vocabulary: rotations, unit directions, poses, camera
//! projection and two-view epipolar helpers.

mod camera;
mod direction;
mod epipolar;
mod pose;
mod so3;

use nalgebra::{Unit, Vector3};
use thiserror::Error;

pub use camera::{CameraKind, CameraModel};
pub use direction::UnitDirection;
pub use epipolar::{
    essential, parallax_angle, sampson_distance, triangulate_two_view, MIN_TRIANGULATION_PARALLAX,
};
pub use pose::RelativePose;
pub use so3::{
    angle_between, rotation_angle, rotation_error_deg, skew, so3_exp, so3_log, Rotation,
};

/// Unit vector from a camera centre towards an observed feature.
pub type Bearing = Unit<Vector3<f64>>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("log branch ambiguous: rotation angle is π")]
    LogBranchAmbiguous,
    #[error("point is behind the camera")]
    BehindCamera,
    #[error("degenerate point")]
    DegeneratePoint,
    #[error("insufficient parallax")]
    InsufficientParallax,
    #[error("triangulated point is not in front of the first camera")]
    NegativeDepth,
    #[error("invalid camera: {0}")]
    InvalidCamera(&'static str),
}
