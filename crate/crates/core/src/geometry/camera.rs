use nalgebra::{Unit, Vector2, Vector3};

use super::{Bearing, GeometryError, UnitDirection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CameraKind {
    Pinhole,
    /// Central camera that observes bearings on the full sphere; pixel
    /// coordinates are tangent-plane coordinates scaled by the focal length.
    Spherical,
}

/// Intrinsics of a calibrated, distortion-free camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    kind: CameraKind,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: f64,
    height: f64,
}

impl CameraModel {
    pub fn new(
        kind: CameraKind,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: f64,
        height: f64,
    ) -> Result<Self, GeometryError> {
        let finite = [fx, fy, cx, cy, width, height].iter().all(|v| v.is_finite());
        if !finite || fx <= 0.0 || fy <= 0.0 {
            return Err(GeometryError::InvalidCamera("focal lengths must be positive"));
        }
        if !(cx > 0.0 && cx < width && cy > 0.0 && cy < height) {
            return Err(GeometryError::InvalidCamera("principal point must lie inside the image"));
        }
        Ok(Self { kind, fx, fy, cx, cy, width, height })
    }

    /// Square-pixel camera with the principal point at the image centre.
    pub fn centered(kind: CameraKind, focal: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        Self::new(kind, focal, focal, width / 2.0, height / 2.0, width, height)
    }

    pub fn kind(&self) -> CameraKind {
        self.kind
    }

    pub fn focal(&self) -> (f64, f64) {
        (self.fx, self.fy)
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.cx, self.cy)
    }

    pub fn image_size(&self) -> (f64, f64) {
        (self.width, self.height)
    }

    /// Mean focal length, used to convert pixel noise to angles.
    pub fn mean_focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }

    pub fn project(&self, point: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        let norm = point.norm();
        if !(norm > 0.0) {
            return Err(GeometryError::DegeneratePoint);
        }
        match self.kind {
            CameraKind::Pinhole => {
                if point.z <= 0.0 {
                    return Err(GeometryError::BehindCamera);
                }
                Ok(Vector2::new(
                    self.fx * point.x / point.z + self.cx,
                    self.fy * point.y / point.z + self.cy,
                ))
            }
            CameraKind::Spherical => {
                let b = point / norm;
                Ok(Vector2::new(self.fx * b.x + self.cx, self.fy * b.y + self.cy))
            }
        }
    }

    /// Pixel-domain difference between the projection of `point` and the
    /// observed bearing.
    ///
    /// Pinhole cameras compare image coordinates. Spherical cameras rotate into
    /// the frame whose z axis is the observed bearing and compare tangent-plane
    /// coordinates scaled by the focal length.
    pub fn reprojection_residual(
        &self,
        point: &Vector3<f64>,
        observed: &Bearing,
    ) -> Result<Vector2<f64>, GeometryError> {
        match self.kind {
            CameraKind::Pinhole => Ok(self.project(point)? - self.project(observed.as_ref())?),
            CameraKind::Spherical => {
                let norm = point.norm();
                if !(norm > 0.0) {
                    return Err(GeometryError::DegeneratePoint);
                }
                let frame = UnitDirection::from_vector(observed.as_ref())
                    .ok_or(GeometryError::DegeneratePoint)?;
                let h = frame.host().matrix();
                let b = point / norm;
                Ok(Vector2::new(
                    self.fx * h.column(0).dot(&b),
                    self.fy * h.column(1).dot(&b),
                ))
            }
        }
    }

    /// Whether the point falls inside the image under perspective projection.
    ///
    /// Both camera kinds share this field of view so that scenes generated for
    /// one model remain comparable with the other.
    pub fn is_visible(&self, point: &Vector3<f64>) -> bool {
        if !(point.z > 1e-9 * point.norm()) {
            return false;
        }
        let u = self.fx * point.x / point.z + self.cx;
        let v = self.fy * point.y / point.z + self.cy;
        (0.0..self.width).contains(&u) && (0.0..self.height).contains(&v)
    }

    /// Bearing of the perspective ray through a pixel.
    pub fn ray_through_pixel(&self, pixel: &Vector2<f64>) -> Bearing {
        Unit::new_normalize(Vector3::new(
            (pixel.x - self.cx) / self.fx,
            (pixel.y - self.cy) / self.fy,
            1.0,
        ))
    }

    /// Applies pixel-domain noise to a bearing.
    pub fn perturb_bearing(&self, bearing: &Bearing, noise_px: &Vector2<f64>) -> Bearing {
        match self.kind {
            CameraKind::Pinhole if bearing.z > 0.0 => {
                let p = bearing.as_ref();
                let pixel = Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy);
                self.ray_through_pixel(&(pixel + noise_px))
            }
            _ => {
                let frame = UnitDirection::from_vector(bearing.as_ref())
                    .expect("bearing has unit norm");
                let h = frame.host().matrix();
                let offset = h.column(0) * (noise_px.x / self.fx) + h.column(1) * (noise_px.y / self.fy);
                Unit::new_normalize(bearing.as_ref() + offset)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pinhole() -> CameraModel {
        CameraModel::new(CameraKind::Pinhole, 200.0, 200.0, 320.0, 240.0, 640.0, 480.0).unwrap()
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let px = pinhole().project(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(px, Vector2::new(320.0, 240.0));
    }

    #[test]
    fn pinhole_projection_formula() {
        let px = pinhole().project(&Vector3::new(1.0, 0.0, 1.0)).unwrap();
        assert_eq!(px, Vector2::new(520.0, 240.0));
    }

    #[test]
    fn behind_camera_and_degenerate_points() {
        let cam = pinhole();
        assert!(matches!(cam.project(&Vector3::new(0.0, 0.0, -1.0)), Err(GeometryError::BehindCamera)));
        assert!(matches!(cam.project(&Vector3::zeros()), Err(GeometryError::DegeneratePoint)));
        let sph = CameraModel::centered(CameraKind::Spherical, 200.0, 640.0, 480.0).unwrap();
        assert!(sph.project(&Vector3::new(0.0, 0.0, -1.0)).is_ok());
        assert!(matches!(sph.project(&Vector3::zeros()), Err(GeometryError::DegeneratePoint)));
    }

    #[test]
    fn pinhole_projection_is_scale_invariant() {
        let cam = pinhole();
        let p = Vector3::new(0.3, -0.7, 2.1);
        for lambda in [0.01, 0.5, 3.0, 1e4] {
            assert!((cam.project(&p).unwrap() - cam.project(&(p * lambda)).unwrap()).norm() < 1e-9);
        }
    }

    #[test]
    fn invalid_intrinsics_are_rejected() {
        assert!(CameraModel::new(CameraKind::Pinhole, 0.0, 200.0, 320.0, 240.0, 640.0, 480.0).is_err());
        assert!(CameraModel::new(CameraKind::Pinhole, 200.0, 200.0, 700.0, 240.0, 640.0, 480.0).is_err());
    }

    #[test]
    fn residual_vanishes_on_exact_observation() {
        for kind in [CameraKind::Pinhole, CameraKind::Spherical] {
            let cam = CameraModel::centered(kind, 200.0, 640.0, 480.0).unwrap();
            let p = Vector3::new(0.4, 0.2, 3.0);
            let r = cam.reprojection_residual(&p, &Unit::new_normalize(p)).unwrap();
            assert!(r.norm() < 1e-12);
        }
    }

    #[test]
    fn perturbation_is_measured_back_in_pixels() {
        for kind in [CameraKind::Pinhole, CameraKind::Spherical] {
            let cam = CameraModel::centered(kind, 200.0, 640.0, 480.0).unwrap();
            let b = Unit::new_normalize(Vector3::new(0.1, -0.05, 1.0));
            let noisy = cam.perturb_bearing(&b, &Vector2::new(0.6, -0.45));
            let r = cam.reprojection_residual(b.as_ref(), &noisy).unwrap();
            assert!((r.norm() - 0.75).abs() < 0.02, "{kind:?}: {}", r.norm());
        }
    }
}
