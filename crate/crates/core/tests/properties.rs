//! Invariants of the public API on random inputs.

use nalgebra::{Unit, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vo_core::datasetio::{format_dataset, parse_dataset};
use vo_core::geometry::{rotation_angle, sampson_distance, so3_exp};
use vo_core::relpose5::ransac_relative_pose;
use vo_core::synthlab::experiments::{random_two_view, synthetic_records, TwoViewConfig};
use vo_core::synthlab::perturbed_guess;
use vo_core::{LmConfig, RansacConfig, RelativePose, SolverWeights, UnitDirection};

fn axis_angle() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, 0.0..3.0f64)
        .prop_filter("non-degenerate axis", |(x, y, z, _)| x * x + y * y + z * z > 1e-2)
        .prop_map(|(x, y, z, a)| Vector3::new(x, y, z).normalize() * a)
}

fn direction() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("non-degenerate", |(x, y, z)| x * x + y * y + z * z > 1e-2)
        .prop_map(|(x, y, z)| Vector3::new(x, y, z).normalize())
}

proptest! {
    #[test]
    fn guess_shrinks_the_rotation_angle(theta in axis_angle(), gamma in 0.0..=1.0f64) {
        let r = so3_exp(&theta);
        let guess = perturbed_guess(&r, gamma).unwrap();
        prop_assert!((rotation_angle(&guess) - (1.0 - gamma) * rotation_angle(&r)).abs() < 1e-9);
    }

    #[test]
    fn pose_inverse_composes_to_identity(theta in axis_angle(), t in direction(), s in 0.01..5.0f64, p in direction()) {
        let pose = RelativePose::new(so3_exp(&theta), UnitDirection::from_vector(&t).unwrap(), s);
        let back = pose.compose(&pose.inverse());
        prop_assert!((back.transform_point(&p) - p).norm() < 1e-9);
        prop_assert!((pose.transform_point(&pose.camera_center())).norm() < 1e-9);
    }

    #[test]
    fn sampson_distance_vanishes_on_consistent_pairs(theta in axis_angle(), t in direction(), p in direction(), depth in 1.0..10.0f64) {
        let r = so3_exp(&theta);
        let u = UnitDirection::from_vector(&t).unwrap();
        let x = p * depth;
        let x_prime = r * x + u.vector() * 0.5;
        let d = sampson_distance(&r, &u, &Unit::new_normalize(x), &Unit::new_normalize(x_prime));
        prop_assert!(d.abs() < 1e-9);
        // The sign of the direction does not change the distance.
        let d_neg = sampson_distance(&r, &u.negated(), &Unit::new_normalize(x), &Unit::new_normalize(x_prime));
        prop_assert!((d - d_neg).abs() < 1e-12);
    }

    #[test]
    fn dataset_text_roundtrips(seed in 0u64..1000, count in 1usize..4) {
        let records = synthetic_records(&TwoViewConfig { n_points: 12, ..TwoViewConfig::default() }, count, "prop", seed % 2 == 0, seed);
        let text = format_dataset(&records).unwrap();
        let parsed = parse_dataset(&text, std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(parsed.len(), records.len());
        for (a, b) in records.iter().zip(&parsed) {
            prop_assert_eq!(a.pair_id, b.pair_id);
            prop_assert_eq!(&a.source_sequence, &b.source_sequence);
            prop_assert_eq!(a.noiseless, b.noiseless);
            prop_assert!((a.gt_rotation.matrix() - b.gt_rotation.matrix()).norm() < 1e-12);
            prop_assert!((a.gt_translation - b.gt_translation).norm() < 1e-12);
            for (x, y) in a.bearings.iter().zip(&b.bearings) {
                prop_assert!((x.f.into_inner() - y.f.into_inner()).norm() < 1e-12);
                prop_assert!((x.f_prime.into_inner() - y.f_prime.into_inner()).norm() < 1e-12);
            }
        }
    }
}

#[test]
fn ransac_is_reproducible_for_a_seed() {
    let cfg = TwoViewConfig::default();
    let (r, _, pairs, _) = random_two_view(&cfg, &mut ChaCha8Rng::seed_from_u64(5));
    let run = |seed| {
        ransac_relative_pose(
            &pairs,
            &r,
            SolverWeights::default(),
            &RansacConfig::default(),
            &LmConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap()
    };
    assert_eq!(run(9), run(9));
}
