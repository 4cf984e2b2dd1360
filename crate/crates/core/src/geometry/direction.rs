use nalgebra::{Matrix3x2, Vector2, Vector3};

use super::so3::{so3_exp, Rotation};

/// A point on the unit sphere, stored as the third column of a host rotation.
///
/// The host gives a singularity-free 2-D chart around the direction: a tangent
/// step `beta` maps to `host * exp([beta_1, beta_2, 0]) * e_z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitDirection {
    host: Rotation,
}

impl UnitDirection {
    pub fn from_host(host: Rotation) -> Self {
        Self { host }
    }

    /// Builds a host rotation whose third column is `v / |v|`.
    ///
    /// Returns `None` for a zero or non-finite vector.
    pub fn from_vector(v: &Vector3<f64>) -> Option<Self> {
        let norm = v.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return None;
        }
        let z = v / norm;
        // Helper axis least aligned with z.
        let helper = if z.x.abs() <= z.y.abs() && z.x.abs() <= z.z.abs() {
            Vector3::x()
        } else if z.y.abs() <= z.z.abs() {
            Vector3::y()
        } else {
            Vector3::z()
        };
        let x = helper.cross(&z).normalize();
        let y = z.cross(&x);
        let m = nalgebra::Matrix3::from_columns(&[x, y, z]);
        Some(Self {
            host: Rotation::from_matrix_unchecked(m),
        })
    }

    pub fn host(&self) -> &Rotation {
        &self.host
    }

    /// The unit vector itself.
    pub fn vector(&self) -> Vector3<f64> {
        self.host.matrix().column(2).into_owned()
    }

    pub fn retract(&self, beta: &Vector2<f64>) -> Self {
        if beta.x == 0.0 && beta.y == 0.0 {
            return *self;
        }
        let mut host = self.host * so3_exp(&Vector3::new(beta.x, beta.y, 0.0));
        host.renormalize();
        Self { host }
    }

    /// Derivative of [`retract`](Self::retract) at `beta = 0`: columns are
    /// `host * (e_x × e_z)` and `host * (e_y × e_z)`.
    pub fn tangent_basis(&self) -> Matrix3x2<f64> {
        let m = self.host.matrix();
        Matrix3x2::from_columns(&[-m.column(1).into_owned(), m.column(0).into_owned()])
    }

    /// Antipodal direction, with the host turned by π about its x axis.
    pub fn negated(&self) -> Self {
        let flip = Rotation::from_matrix_unchecked(nalgebra::Matrix3::new(
            1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0,
        ));
        Self {
            host: self.host * flip,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_direction(rng: &mut impl Rng) -> UnitDirection {
        let theta = Vector3::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        );
        UnitDirection::from_host(so3_exp(&theta))
    }

    #[test]
    fn zero_step_is_identity() {
        let u = UnitDirection::from_vector(&Vector3::new(0.2, -0.4, 0.9)).unwrap();
        assert_eq!(u.retract(&Vector2::zeros()).vector(), u.vector());
    }

    #[test]
    fn from_vector_keeps_direction_and_handedness() {
        for v in [Vector3::x(), -Vector3::y(), Vector3::new(1.0, 2.0, -3.0)] {
            let u = UnitDirection::from_vector(&v).unwrap();
            assert!((u.vector() - v.normalize()).norm() < 1e-15);
            assert!((u.host().matrix().determinant() - 1.0).abs() < 1e-12);
        }
        assert!(UnitDirection::from_vector(&Vector3::zeros()).is_none());
    }

    #[test]
    fn retraction_stays_on_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let u = random_direction(&mut rng);
            let beta = Vector2::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
            assert!((u.retract(&beta).vector().norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tangent_basis_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..200 {
            let u = random_direction(&mut rng);
            let basis = u.tangent_basis();
            for j in 0..2 {
                let mut step = Vector2::zeros();
                step[j] = h;
                let fd = (u.retract(&step).vector() - u.retract(&-step).vector()) / (2.0 * h);
                assert!((fd - basis.column(j)).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn negated_points_the_other_way() {
        let u = UnitDirection::from_vector(&Vector3::new(0.3, 0.1, -0.2)).unwrap();
        assert!((u.negated().vector() + u.vector()).norm() < 1e-15);
    }
}
