use nalgebra::{DVector, Vector3, Vector6};

use super::data_matrix::{functional_value, lifted_vector, DataMatrixC};
use super::{build_data_matrix, BearingPair, RelPoseError, SolverWeights};
use crate::geometry::{skew, so3_exp, Rotation, UnitDirection};
use crate::optim::{lm_minimize, LeastSquaresProblem, LmConfig, LmStatus};

/// Analytic gradient of `x C xᵀ` in the (θ, β) chart at the current point.
///
/// Chain rule: `∂f/∂x = 2 C x`, `∂x/∂r = u ⊗ I₉`, `∂x/∂u = I₃ ⊗ r`,
/// `∂r/∂θᵢ = vec(R [eᵢ]ₓ)` and `∂u/∂β` from the direction's tangent basis.
pub fn functional_gradient(c: &DataMatrixC, r: &Rotation, u: &UnitDirection) -> [f64; 5] {
    let x = lifted_vector(r, u);
    let g = (c.matrix() * x) * 2.0;
    let uv = u.vector();
    let rv = r.matrix().as_slice();

    // (2Cx)ᵀ (u ⊗ I₉): weighted sum of the three 9-blocks.
    let mut grad_r = [0.0; 9];
    // (2Cx)ᵀ (I₃ ⊗ r): each 9-block dotted with r.
    let mut grad_u = Vector3::zeros();
    for k in 0..3 {
        for j in 0..9 {
            grad_r[j] += uv[k] * g[9 * k + j];
            grad_u[k] += g[9 * k + j] * rv[j];
        }
    }

    let mut out = [0.0; 5];
    for (i, axis) in [Vector3::x(), Vector3::y(), Vector3::z()].iter().enumerate() {
        let dr = r.matrix() * skew(axis);
        out[i] = dr.as_slice().iter().zip(grad_r.iter()).map(|(a, b)| a * b).sum();
    }
    let dbeta = grad_u.transpose() * u.tangent_basis();
    out[3] = dbeta[0];
    out[4] = dbeta[1];
    out
}

/// Five gradient components followed by the weighted functional.
pub fn residual_vector(c: &DataMatrixC, r: &Rotation, u: &UnitDirection, w: SolverWeights) -> Vector6<f64> {
    let g = functional_gradient(c, r, u);
    Vector6::new(g[0], g[1], g[2], g[3], g[4], w.functional_weight() * functional_value(c, r, u))
}

/// LM problem on SO(3) × S² whose residual is [`residual_vector`].
pub struct RelativePoseProblem<'a> {
    pub data: &'a DataMatrixC,
    pub weights: SolverWeights,
}

impl LeastSquaresProblem for RelativePoseProblem<'_> {
    type Point = (Rotation, UnitDirection);

    fn tangent_dim(&self) -> usize {
        5
    }

    fn residual(&self, x: &Self::Point) -> DVector<f64> {
        let r = residual_vector(self.data, &x.0, &x.1, self.weights);
        DVector::from_column_slice(r.as_slice())
    }

    fn retract(&self, x: &Self::Point, delta: &DVector<f64>) -> Self::Point {
        let mut r = x.0 * so3_exp(&Vector3::new(delta[0], delta[1], delta[2]));
        r.renormalize();
        (r, x.1.retract(&nalgebra::Vector2::new(delta[3], delta[4])))
    }
}

/// LM refinement from a given data matrix. The returned pose never has a
/// larger functional than the starting pose.
pub fn refine_with_data_matrix(
    c: &DataMatrixC,
    r0: &Rotation,
    u0: &UnitDirection,
    w: SolverWeights,
    cfg: &LmConfig,
) -> (Rotation, UnitDirection, LmStatus) {
    let problem = RelativePoseProblem { data: c, weights: w };
    let ((r, u), status) = lm_minimize(&problem, (*r0, *u0), cfg);
    if functional_value(c, &r, &u) > functional_value(c, r0, u0) {
        log::debug!("refinement increased the functional; keeping the initial pose");
        return (*r0, *u0, status);
    }
    (r, u, status)
}

pub fn refine_relative_pose(
    pairs: &[BearingPair],
    r0: &Rotation,
    u0: &UnitDirection,
    w: SolverWeights,
    cfg: &LmConfig,
) -> Result<(Rotation, UnitDirection, LmStatus), RelPoseError> {
    if pairs.len() < 5 {
        return Err(RelPoseError::TooFewPairs { needed: 5, got: pairs.len() });
    }
    let c = build_data_matrix(pairs)?;
    Ok(refine_with_data_matrix(&c, r0, u0, w, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_error_deg;
    use crate::relpose5::tests::{noiseless_scene_pairs, random_pairs, random_rotation, random_unit};
    use nalgebra::Vector2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fd_gradient(c: &DataMatrixC, r: &Rotation, u: &UnitDirection) -> [f64; 5] {
        let h = 1e-6;
        let f = |dt: Vector3<f64>, db: Vector2<f64>| {
            functional_value(c, &(r * so3_exp(&dt)), &u.retract(&db))
        };
        let mut out = [0.0; 5];
        for i in 0..3 {
            let mut e = Vector3::zeros();
            e[i] = h;
            out[i] = (f(e, Vector2::zeros()) - f(-e, Vector2::zeros())) / (2.0 * h);
        }
        for i in 0..2 {
            let mut e = Vector2::zeros();
            e[i] = h;
            out[3 + i] = (f(Vector3::zeros(), e) - f(Vector3::zeros(), -e)) / (2.0 * h);
        }
        out
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..1000 {
            let pairs = random_pairs(&mut rng, 15);
            let c = build_data_matrix(&pairs).unwrap();
            let r = random_rotation(&mut rng, 3.0);
            let u = UnitDirection::from_host(random_rotation(&mut rng, 3.0));
            let analytic = functional_gradient(&c, &r, &u);
            let numeric = fd_gradient(&c, &r, &u);
            let scale = analytic.iter().map(|v| v.abs()).fold(0.0, f64::max);
            for k in 0..5 {
                assert!(
                    (analytic[k] - numeric[k]).abs() <= 1e-5 * scale,
                    "component {k}: {} vs {}",
                    analytic[k],
                    numeric[k]
                );
            }
        }
    }

    #[test]
    fn zero_weight_drops_functional_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let pairs = random_pairs(&mut rng, 10);
        let c = build_data_matrix(&pairs).unwrap();
        let r = random_rotation(&mut rng, 1.0);
        let u = UnitDirection::from_vector(&random_unit(&mut rng)).unwrap();
        let res = residual_vector(&c, &r, &u, SolverWeights::new(0.0).unwrap());
        assert_eq!(res[5], 0.0);
        let res = residual_vector(&c, &r, &u, SolverWeights::new(50.0).unwrap());
        assert!((res[5] - 50.0 * functional_value(&c, &r, &u)).abs() < 1e-12 * res[5].abs());
    }

    #[test]
    fn residual_vanishes_at_noiseless_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let (pairs, r, u) = noiseless_scene_pairs(&mut rng, 30);
            let c = build_data_matrix(&pairs).unwrap();
            let res = residual_vector(&c, &r, &u, SolverWeights::default());
            assert!(res.amax() < 1e-9 * c.trace(), "{res:?}");
            assert!(functional_value(&c, &r, &u) <= 1e-12 * c.trace());
        }
    }

    #[test]
    fn sign_symmetry_of_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..200 {
            let pairs = random_pairs(&mut rng, 10);
            let c = build_data_matrix(&pairs).unwrap();
            let r = random_rotation(&mut rng, 2.0);
            let u = UnitDirection::from_host(random_rotation(&mut rng, 3.0));
            let a = residual_vector(&c, &r, &u, SolverWeights::default());
            let b = residual_vector(&c, &r, &u.negated(), SolverWeights::default());
            let tol = 1e-12 * a.amax().max(1e-12);
            for k in [0, 1, 2, 3, 5] {
                assert!((a[k] - b[k]).abs() <= tol, "component {k}");
            }
            // The chart of -u has its second basis vector reversed.
            assert!((a[4] + b[4]).abs() <= tol);
        }
    }

    #[test]
    fn refinement_at_truth_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for _ in 0..20 {
            let (pairs, r, u) = noiseless_scene_pairs(&mut rng, 40);
            let (r_hat, u_hat, st) =
                refine_relative_pose(&pairs, &r, &u, SolverWeights::default(), &LmConfig::default()).unwrap();
            assert!(st.iterations <= 2, "{st:?}");
            assert!((r_hat.matrix() - r.matrix()).amax() < 1e-9);
            assert!((u_hat.vector() - u.vector()).amax() < 1e-9);
        }
    }

    #[test]
    fn refinement_recovers_noiseless_pose_from_nearby_guess() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for _ in 0..20 {
            let (pairs, r, u) = noiseless_scene_pairs(&mut rng, 30);
            let r0 = r * so3_exp(&(random_unit(&mut rng) * rng.random_range(0.0..0.05)));
            let u0 = u.retract(&Vector2::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)));
            let (r_hat, u_hat, _) =
                refine_relative_pose(&pairs, &r0, &u0, SolverWeights::default(), &LmConfig::default()).unwrap();
            assert!(rotation_error_deg(&r_hat, &r) < 0.01);
            let dir_err = crate::geometry::angle_between(&u_hat.vector(), &u.vector()).to_degrees();
            assert!(dir_err.min(180.0 - dir_err) < 0.1);
        }
    }

    #[test]
    fn too_few_pairs_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let pairs = random_pairs(&mut rng, 4);
        let u = UnitDirection::from_vector(&Vector3::z()).unwrap();
        let res = refine_relative_pose(&pairs, &Rotation::identity(), &u, SolverWeights::default(), &LmConfig::default());
        assert!(matches!(res, Err(RelPoseError::TooFewPairs { needed: 5, got: 4 })));
    }
}
