use nalgebra::Vector3;

use super::{Rotation, UnitDirection};

/// Rigid transform `p' = R p + s u` split into rotation, unit translation
/// direction and signed magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub rotation: Rotation,
    pub direction: UnitDirection,
    pub magnitude: f64,
}

impl RelativePose {
    pub fn new(rotation: Rotation, direction: UnitDirection, magnitude: f64) -> Self {
        Self { rotation, direction, magnitude }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Rotation::identity(),
            direction: UnitDirection::from_host(Rotation::identity()),
            magnitude: 0.0,
        }
    }

    /// Splits a full translation; a zero translation keeps the +z direction.
    pub fn from_rotation_translation(rotation: Rotation, t: &Vector3<f64>) -> Self {
        match UnitDirection::from_vector(t) {
            Some(direction) => Self { rotation, direction, magnitude: t.norm() },
            None => Self { rotation, ..Self::identity() },
        }
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.direction.vector() * self.magnitude
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation()
    }

    /// `self ∘ rhs`: applies `rhs` first.
    pub fn compose(&self, rhs: &RelativePose) -> RelativePose {
        let mut rotation = self.rotation * rhs.rotation;
        rotation.renormalize();
        let t = self.rotation * rhs.translation() + self.translation();
        Self::from_rotation_translation(rotation, &t)
    }

    pub fn inverse(&self) -> RelativePose {
        let rotation = self.rotation.inverse();
        let t = -(rotation * self.translation());
        Self::from_rotation_translation(rotation, &t)
    }

    /// Position of the target frame's origin expressed in the source frame.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation())
    }
}

impl Default for RelativePose {
    fn default() -> Self {
        Self::identity()
    }
}
