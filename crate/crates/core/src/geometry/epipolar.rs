use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use super::so3::{angle_between, skew, Rotation};
use super::{Bearing, GeometryError, UnitDirection};

/// Rays closer than this (radians) are treated as parallel.
pub const MIN_TRIANGULATION_PARALLAX: f64 = 1e-4;

/// Essential matrix `[u]_x R` for the convention `p' = R p + s u`.
pub fn essential(r: &Rotation, u: &UnitDirection) -> Matrix3<f64> {
    skew(&u.vector()) * r.matrix()
}

/// Sampson distance of a bearing correspondence to the epipolar model.
///
/// Bearings are perturbed in their own tangent planes, so the gradient of the
/// epipolar error `f'^T E f` is projected with `I - b b^T` for each bearing.
/// When that gradient vanishes the absolute algebraic error is returned.
pub fn sampson_distance(r: &Rotation, u: &UnitDirection, f: &Bearing, f_prime: &Bearing) -> f64 {
    let e = essential(r, u);
    let f = f.as_ref();
    let fp = f_prime.as_ref();
    let ef = e * f;
    let etfp = e.transpose() * fp;
    let algebraic = fp.dot(&ef);
    let g_prime = ef - fp * fp.dot(&ef);
    let g = etfp - f * f.dot(&etfp);
    let denom = g_prime.norm_squared() + g.norm_squared();
    if denom <= f64::MIN_POSITIVE {
        return algebraic.abs();
    }
    algebraic.abs() / denom.sqrt()
}

/// Angle between the rotation-compensated rays `R f` and `f'`, in degrees.
pub fn parallax_angle(r: &Rotation, f: &Bearing, f_prime: &Bearing) -> f64 {
    angle_between(&(r * f.as_ref()), f_prime.as_ref()).to_degrees()
}

/// Midpoint triangulation; returns the depth along `f` in the first camera.
///
/// `r` and `t` map first-camera coordinates into the second camera,
/// `p' = r p + t`.
pub fn triangulate_two_view(
    r: &Rotation,
    t: &Vector3<f64>,
    f: &Bearing,
    f_prime: &Bearing,
) -> Result<f64, GeometryError> {
    let a = f.into_inner();
    let b = r.inverse() * f_prime.as_ref();
    let parallax = angle_between(&a, &b);
    if parallax < MIN_TRIANGULATION_PARALLAX || t.norm() == 0.0 {
        return Err(GeometryError::InsufficientParallax);
    }
    // Second camera centre in first-camera coordinates.
    let c = -(r.inverse() * t);
    // Minimise |lambda a - (c + mu b)|^2.
    let ab = a.dot(&b);
    let m = Matrix2::new(1.0, -ab, ab, -1.0);
    let rhs = Vector2::new(a.dot(&c), b.dot(&c));
    let sol = m
        .try_inverse()
        .ok_or(GeometryError::InsufficientParallax)?
        * rhs;
    let midpoint = 0.5 * (a * sol.x + c + b * sol.y);
    let depth = midpoint.dot(&a);
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(GeometryError::NegativeDepth);
    }
    Ok(depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::so3::so3_exp;
    use nalgebra::Unit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if v.norm() > 0.1 && v.norm() < 1.0 {
                return v.normalize();
            }
        }
    }

    fn random_rotation(rng: &mut impl Rng, max_angle: f64) -> Rotation {
        so3_exp(&(random_unit(rng) * rng.random_range(0.0..max_angle)))
    }

    /// Epipolar error as a function of small rotations of each bearing; the
    /// Sampson distance is |e| / |grad e| over the four tangent coordinates.
    fn sampson_by_finite_differences(r: &Rotation, u: &UnitDirection, f: &Vector3<f64>, fp: &Vector3<f64>) -> f64 {
        let eval = |a: &Vector3<f64>, b: &Vector3<f64>| u.vector().dot(&(r * a).cross(b));
        let basis = |v: &Vector3<f64>| {
            let d = UnitDirection::from_vector(v).unwrap();
            let m = *d.host().matrix();
            [m.column(0).into_owned(), m.column(1).into_owned()]
        };
        let h = 1e-6;
        let mut grad_sq = 0.0;
        for dir in basis(f) {
            let plus = (f + dir * h).normalize();
            let minus = (f - dir * h).normalize();
            grad_sq += ((eval(&plus, fp) - eval(&minus, fp)) / (2.0 * h)).powi(2);
        }
        for dir in basis(fp) {
            let plus = (fp + dir * h).normalize();
            let minus = (fp - dir * h).normalize();
            grad_sq += ((eval(f, &plus) - eval(f, &minus)) / (2.0 * h)).powi(2);
        }
        eval(f, fp).abs() / grad_sq.sqrt()
    }

    #[test]
    fn noiseless_correspondence_has_zero_sampson() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let r = random_rotation(&mut rng, 1.0);
            let u = UnitDirection::from_vector(&random_unit(&mut rng)).unwrap();
            let p = random_unit(&mut rng) * rng.random_range(1.0..6.0);
            let q = r * p + u.vector() * rng.random_range(0.1..1.0);
            let d = sampson_distance(&r, &u, &Unit::new_normalize(p), &Unit::new_normalize(q));
            assert!(d < 1e-12, "{d}");
        }
    }

    #[test]
    fn pure_rotation_satisfies_any_direction() {
        let r = so3_exp(&Vector3::new(0.1, -0.2, 0.05));
        let f = Unit::new_normalize(Vector3::new(0.3, 0.1, 1.0));
        let fp = Unit::new_normalize(r * f.as_ref());
        for v in [Vector3::x(), Vector3::new(1.0, 1.0, 1.0), Vector3::new(-0.2, 0.0, 0.9)] {
            let u = UnitDirection::from_vector(&v).unwrap();
            assert!(sampson_distance(&r, &u, &f, &fp) < 1e-15);
        }
    }

    #[test]
    fn sampson_matches_first_order_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let r = random_rotation(&mut rng, 1.0);
            let u = UnitDirection::from_vector(&random_unit(&mut rng)).unwrap();
            let f = random_unit(&mut rng);
            let fp = random_unit(&mut rng);
            let d = sampson_distance(&r, &u, &Unit::new_normalize(f), &Unit::new_normalize(fp));
            let oracle = sampson_by_finite_differences(&r, &u, &f, &fp);
            assert!(d > 0.0);
            assert!((d - oracle).abs() <= 1e-6 * oracle.max(1e-3), "{d} vs {oracle}");
        }
    }

    #[test]
    fn sampson_is_symmetric_in_direction_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let r = random_rotation(&mut rng, 2.0);
            let u = UnitDirection::from_vector(&random_unit(&mut rng)).unwrap();
            let f = Unit::new_normalize(random_unit(&mut rng));
            let fp = Unit::new_normalize(random_unit(&mut rng));
            let a = sampson_distance(&r, &u, &f, &fp);
            let b = sampson_distance(&r, &u.negated(), &f, &fp);
            assert!((a - b).abs() <= 1e-14 * a.max(1.0));
        }
    }

    #[test]
    fn triangulates_symmetric_two_ray_geometry() {
        let r = Rotation::identity();
        let t = Vector3::new(1.0, 0.0, 0.0);
        let p = Vector3::new(0.0, 0.0, 2.0);
        let d = triangulate_two_view(&r, &t, &Unit::new_normalize(p), &Unit::new_normalize(p + t)).unwrap();
        assert!((d - 2.0).abs() < 1e-9);
    }

    #[test]
    fn zero_baseline_is_rejected() {
        let f = Unit::new_normalize(Vector3::new(0.1, 0.0, 1.0));
        let res = triangulate_two_view(&Rotation::identity(), &Vector3::zeros(), &f, &f);
        assert!(matches!(res, Err(GeometryError::InsufficientParallax)));
    }

    #[test]
    fn triangulation_recovers_generative_depth() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        while checked < 1000 {
            let r = random_rotation(&mut rng, 0.5);
            let t = random_unit(&mut rng) * rng.random_range(0.05..1.0);
            let depth = rng.random_range(1.0..6.0);
            let f = Unit::new_normalize(random_unit(&mut rng));
            let p = f.as_ref() * depth;
            let fp = Unit::new_normalize(r * p + t);
            if parallax_angle(&r, &f, &fp).to_radians() < 1e-2 {
                continue;
            }
            let d = triangulate_two_view(&r, &t, &f, &fp).unwrap();
            assert!((d - depth).abs() <= 1e-8 * depth, "{d} vs {depth}");
            checked += 1;
        }
    }

    #[test]
    fn parallax_of_pure_rotation_is_zero() {
        let r = so3_exp(&Vector3::new(0.3, 0.2, -0.1));
        let f = Unit::new_normalize(Vector3::new(0.2, 0.3, 1.0));
        let fp = Unit::new_normalize(r * f.as_ref());
        assert!(parallax_angle(&r, &f, &fp) < 1e-6);
    }

    #[test]
    fn parallax_of_constructed_angle() {
        let a = 2f64.to_radians();
        let f = Unit::new_normalize(Vector3::z());
        let fp = Unit::new_normalize(Vector3::new(a.sin(), 0.0, a.cos()));
        assert!((parallax_angle(&Rotation::identity(), &f, &fp) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn parallax_grows_with_baseline() {
        let landmark = Vector3::new(0.5, -0.2, 3.0);
        let f = Unit::new_normalize(landmark);
        let dir = Vector3::new(1.0, 0.3, 0.1).normalize();
        let mut last = -1.0;
        for k in 1..50 {
            let t = dir * (0.02 * k as f64);
            let fp = Unit::new_normalize(landmark + t);
            let angle = parallax_angle(&Rotation::identity(), &f, &fp);
            assert!(angle > last);
            last = angle;
        }
    }
}
