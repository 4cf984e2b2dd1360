use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vo_core::pipeline::run_session;
use vo_core::relpose5::{build_data_matrix, ransac_relative_pose, refine_relative_pose};
use vo_core::synthlab::experiments::{two_view_problem, TwoViewConfig};
use vo_core::synthlab::{generate_scene, synth_observations, SceneConfig, SyntheticSequence};
use vo_core::transmag::estimate_magnitude;
use vo_core::{LmConfig, RansacConfig, RobustCost, SolverWeights, VoConfig};

fn relative_pose(c: &mut Criterion) {
    let problem = two_view_problem(&TwoViewConfig::default(), 7);
    let lm = LmConfig::default();
    c.bench_function("data_matrix_170", |b| b.iter(|| build_data_matrix(black_box(&problem.pairs)).unwrap()));
    c.bench_function("refine_relative_pose_170", |b| {
        b.iter(|| refine_relative_pose(black_box(&problem.pairs), &problem.r0, &problem.u0, SolverWeights::default(), &lm).unwrap())
    });
    c.bench_function("ransac_relative_pose_170", |b| {
        b.iter_batched(
            || ChaCha8Rng::seed_from_u64(1),
            |mut rng| {
                ransac_relative_pose(&problem.pairs, &problem.r0, SolverWeights::default(), &RansacConfig::default(), &lm, &mut rng)
                    .unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

fn magnitude(c: &mut Criterion) {
    let cfg = SceneConfig::default();
    let scene = generate_scene(&cfg).unwrap();
    let obs = synth_observations(&scene, 0, 20, cfg.pixel_sigma, 0.0, 3).unwrap();
    let feats: Vec<_> = obs.iter().map(|o| o.feature(o.depth, cfg.pixel_sigma)).collect();
    let truth = scene.relative_pose(0, 20);
    c.bench_function("estimate_magnitude", |b| {
        b.iter(|| {
            estimate_magnitude(
                black_box(&feats),
                &truth.rotation,
                &truth.direction,
                0.5 * truth.magnitude,
                &cfg.camera,
                &RobustCost::default(),
                &LmConfig::default(),
            )
        })
    });
}

fn session(c: &mut Criterion) {
    let scene = generate_scene(&SceneConfig { seed: 2, ..SceneConfig::default() }).unwrap();
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    group.bench_function("session_37_frames", |b| {
        b.iter_batched(
            || SyntheticSequence::new(scene.clone(), 0.75, 2, None),
            |mut seq| run_session(&mut seq, VoConfig::default()).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, relative_pose, magnitude, session);
criterion_main!(benches);
