use nalgebra::{Matrix3, Rotation3, Vector3};

use super::GeometryError;

/// Element of SO(3).
pub type Rotation = Rotation3<f64>;

/// Rotations closer than this to angle π are rejected by [`so3_log`].
const LOG_BRANCH_MARGIN: f64 = 1e-9;

/// Cross-product matrix, `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map so(3) -> SO(3) (Rodrigues).
pub fn so3_exp(theta: &Vector3<f64>) -> Rotation {
    let angle_sq = theta.norm_squared();
    let k = skew(theta);
    let (a, b) = if angle_sq < 1e-12 {
        // Taylor expansions of sin(x)/x and (1 - cos x)/x^2.
        (1.0 - angle_sq / 6.0, 0.5 - angle_sq / 24.0)
    } else {
        let angle = angle_sq.sqrt();
        (angle.sin() / angle, (1.0 - angle.cos()) / angle_sq)
    };
    let m = Matrix3::identity() + k * a + k * k * b;
    let mut r = Rotation::from_matrix_unchecked(m);
    r.renormalize();
    r
}

/// Rotation angle in radians, in `[0, π]`.
///
/// Uses `atan2` on the skew and trace parts, which stays accurate for both
/// tiny angles and angles close to π.
pub fn rotation_angle(r: &Rotation) -> f64 {
    let m = r.matrix();
    let w = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let sin = 0.5 * w.norm();
    let cos = 0.5 * (m.trace() - 1.0);
    sin.atan2(cos)
}

/// Logarithm map SO(3) -> so(3) on the principal branch.
pub fn so3_log(r: &Rotation) -> Result<Vector3<f64>, GeometryError> {
    let m = r.matrix();
    let w = 0.5 * Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let sin = w.norm();
    let cos = 0.5 * (m.trace() - 1.0);
    let angle = sin.atan2(cos);

    if angle > std::f64::consts::PI - LOG_BRANCH_MARGIN {
        return Err(GeometryError::LogBranchAmbiguous);
    }
    if angle < 1e-6 {
        // theta = w * angle / sin(angle), series in angle^2.
        return Ok(w * (1.0 + angle * angle / 6.0));
    }
    if angle < 2.5 {
        return Ok(w * (angle / sin));
    }

    // Near π the skew part is small; recover the axis from the symmetric part
    // (R + R^T)/2 - cos I = (1 - cos) a a^T and fix its sign with w.
    let b = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos;
    let col = (0..3)
        .max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)]))
        .unwrap_or(0);
    let mut axis = b.column(col).into_owned();
    axis /= axis.norm();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    Ok(axis * angle)
}

/// Angle between two (not necessarily unit) vectors in radians.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Geodesic distance between two rotations in degrees.
pub fn rotation_error_deg(estimate: &Rotation, truth: &Rotation) -> f64 {
    rotation_angle(&(estimate * truth.inverse())).to_degrees()
}
