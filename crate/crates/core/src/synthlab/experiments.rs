//! Trial runners for the benchmark studies. Every trial derives its seeds
//! from the master seed and its index, so running trials in parallel (on the
//! current rayon pool) never changes results.

use nalgebra::{Unit, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    baseline_6dof, derive_seed, generate_scene, perturbed_guess, synth_observations, trajectory_error_metrics,
    SceneConfig, SynthError, TrialResult,
};
use crate::datasetio::CorrespondenceRecord;
use crate::geometry::{angle_between, CameraKind, CameraModel, rotation_error_deg, so3_exp, RelativePose, Rotation, UnitDirection};
use crate::optim::LmConfig;
use crate::relpose5::{
    epipolar_normal_covariance, jitter_rotation, ransac_relative_pose, refine_relative_pose, translation_from_rotation,
    BearingPair, RansacConfig, RelPoseStatus, SolverWeights,
};
use crate::transmag::{estimate_magnitude, magnitude_initial_guess, DepthFeature, RobustCost};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DepthMode {
    /// Every feature gets the same assumed depth.
    Constant,
    /// Ground-truth depths.
    Known,
}

impl DepthMode {
    pub fn name(&self) -> &'static str {
        match self {
            DepthMode::Constant => "constant",
            DepthMode::Known => "known",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    /// Relative pose followed by translation magnitude.
    FivePlusOne,
    /// Motion-only bundle adjustment.
    SixDof,
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::FivePlusOne => "5+1dof",
            Estimator::SixDof => "6dof",
        }
    }
}

/// Where each frame's starting rotation comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorSource {
    /// The previous frame's estimate, jittered by `prior_jitter_deg`.
    PreviousEstimate,
    /// A simulated gyro: the true rotation jittered by `prior_jitter_deg`.
    Gyro,
}

impl PriorSource {
    pub fn name(&self) -> &'static str {
        match self {
            PriorSource::PreviousEstimate => "previous",
            PriorSource::Gyro => "gyro",
        }
    }
}

/// Settings shared by the estimator comparison trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareConfig {
    pub scene: SceneConfig,
    pub depth_mode: DepthMode,
    pub constant_depth: f64,
    pub weights: SolverWeights,
    pub ransac: RansacConfig,
    pub lm: LmConfig,
    pub robust: RobustCost,
    pub prior: PriorSource,
    /// Per-axis half-width (degrees) of the uniform jitter applied to the
    /// prior rotation.
    pub prior_jitter_deg: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            depth_mode: DepthMode::Constant,
            constant_depth: 0.75,
            weights: SolverWeights::default(),
            ransac: RansacConfig::default(),
            lm: LmConfig::default(),
            robust: RobustCost::default(),
            prior: PriorSource::Gyro,
            prior_jitter_deg: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorTrial {
    pub trial: usize,
    pub estimator: Estimator,
    /// Per-frame poses from frame 0 (frame 0 itself is the identity).
    pub poses: Vec<RelativePose>,
    pub metrics: TrialResult,
    /// Frames where the estimator failed and the previous pose was kept.
    pub failed_frames: usize,
}

fn features(obs: &[super::SynthCorrespondence], cfg: &CompareConfig, keep: impl Fn(usize) -> bool) -> Vec<DepthFeature> {
    let sigma = if cfg.scene.pixel_sigma > 0.0 { cfg.scene.pixel_sigma } else { 1.0 };
    obs.iter()
        .enumerate()
        .filter(|(i, _)| keep(*i))
        .map(|(_, c)| {
            let d = match cfg.depth_mode {
                DepthMode::Constant => cfg.constant_depth,
                DepthMode::Known => c.depth,
            };
            c.feature(d, sigma)
        })
        .collect()
}

/// One trial of both estimators on the same scene and observations, every
/// frame estimated against frame 0.
pub fn compare_trial(cfg: &CompareConfig, master_seed: u64, trial: usize) -> Result<[EstimatorTrial; 2], SynthError> {
    let scene_seed = derive_seed(master_seed, 2 * trial as u64);
    let obs_seed = derive_seed(master_seed, 2 * trial as u64 + 1);
    let scene = generate_scene(&SceneConfig { seed: scene_seed, ..cfg.scene })?;
    let mut rng = ChaCha8Rng::seed_from_u64(obs_seed);
    let n = scene.n_frames();

    let mut ours = vec![RelativePose::identity(); n];
    let mut base = vec![RelativePose::identity(); n];
    let (mut ours_failed, mut base_failed) = (0, 0);
    for k in 1..n {
        let obs = synth_observations(&scene, 0, k, cfg.scene.pixel_sigma, cfg.scene.outlier_rate, obs_seed)?;
        let pairs: Vec<BearingPair> = obs.iter().map(|c| c.pair).collect();

        let prior_center = match cfg.prior {
            PriorSource::PreviousEstimate => ours[k - 1].rotation,
            PriorSource::Gyro => scene.poses[k].rotation,
        };
        let prior = jitter_rotation(&prior_center, cfg.prior_jitter_deg, &mut rng);
        let prev = ours[k - 1];
        match ransac_relative_pose(&pairs, &prior, cfg.weights, &cfg.ransac, &cfg.lm, &mut rng) {
            Ok(rel) if rel.status != RelPoseStatus::TooFewInliers => {
                let feats = features(&obs, cfg, |i| rel.inlier_mask[i]);
                let s0 = magnitude_initial_guess(prev.magnitude, &prev.direction, &rel.direction, k == 1);
                let mag = estimate_magnitude(&feats, &rel.rotation, &rel.direction, s0, &cfg.scene.camera, &cfg.robust, &cfg.lm);
                ours[k] = RelativePose::new(rel.rotation, rel.direction, mag.s);
            }
            _ => {
                ours[k] = prev;
                ours_failed += 1;
            }
        }

        // Same starting rotation for both estimators.
        let prev = base[k - 1];
        let r0 = match cfg.prior {
            PriorSource::PreviousEstimate => prev.rotation,
            PriorSource::Gyro => prior,
        };
        let feats = features(&obs, cfg, |_| true);
        match baseline_6dof(&feats, &r0, &prev.translation(), &cfg.scene.camera, &cfg.robust, &cfg.lm) {
            Ok((r, t, _)) => base[k] = RelativePose::from_rotation_translation(r, &t),
            Err(_) => {
                base[k] = prev;
                base_failed += 1;
            }
        }
    }
    let metrics_ours = trajectory_error_metrics(&ours, &scene.poses).expect("equal lengths");
    let metrics_base = trajectory_error_metrics(&base, &scene.poses).expect("equal lengths");
    Ok([
        EstimatorTrial { trial, estimator: Estimator::FivePlusOne, poses: ours, metrics: metrics_ours, failed_frames: ours_failed },
        EstimatorTrial { trial, estimator: Estimator::SixDof, poses: base, metrics: metrics_base, failed_frames: base_failed },
    ])
}

pub fn compare_estimators(cfg: &CompareConfig, trials: usize, master_seed: u64) -> Result<Vec<EstimatorTrial>, SynthError> {
    let per_trial: Result<Vec<[EstimatorTrial; 2]>, SynthError> =
        (0..trials).into_par_iter().map(|t| compare_trial(cfg, master_seed, t)).collect();
    Ok(per_trial?.into_iter().flatten().collect())
}

/// Two-view problem with a perturbed starting point.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoViewProblem {
    pub pairs: Vec<BearingPair>,
    pub r_gt: Rotation,
    pub u_gt: UnitDirection,
    pub r0: Rotation,
    pub u0: UnitDirection,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoViewConfig {
    pub n_points: usize,
    pub pixel_sigma: f64,
    /// Range of the true relative rotation angle (degrees).
    pub rotation_deg: (f64, f64),
    pub baseline_m: f64,
    /// Range of the starting rotation error (degrees).
    pub guess_rotation_err_deg: (f64, f64),
    /// Range of the starting direction error (degrees).
    pub guess_direction_err_deg: (f64, f64),
    pub scene: SceneConfig,
}

impl Default for TwoViewConfig {
    fn default() -> Self {
        Self {
            n_points: 170,
            pixel_sigma: 0.75,
            rotation_deg: (5.0, 25.0),
            baseline_m: 1.0,
            guess_rotation_err_deg: (5.0, 15.0),
            guess_direction_err_deg: (25.0, 75.0),
            scene: SceneConfig::default(),
        }
    }
}

impl TwoViewConfig {
    /// Narrow-FOV pinhole pairs with a short baseline relative to the
    /// rotation: the regime where the starting rotation matters.
    pub fn low_parallax() -> Self {
        let camera = CameraModel::centered(CameraKind::Pinhole, 525.0, 640.0, 480.0).expect("valid camera");
        Self {
            rotation_deg: (20.0, 40.0),
            baseline_m: 0.2,
            scene: SceneConfig { camera, ..SceneConfig::default() },
            ..Self::default()
        }
    }
}

fn random_axis(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Random relative pose and noisy correspondences of points seen by both
/// cameras; returns `(R, t, pairs, noiseless pairs)`.
pub fn random_two_view(
    cfg: &TwoViewConfig,
    rng: &mut ChaCha8Rng,
) -> (Rotation, Vector3<f64>, Vec<BearingPair>, Vec<BearingPair>) {
    let cam = cfg.scene.camera;
    let (w, h) = cam.image_size();
    let (lo, hi) = cfg.scene.depth_range;
    let angle = rng.random_range(cfg.rotation_deg.0..=cfg.rotation_deg.1).to_radians();
    let r = so3_exp(&(random_axis(rng) * angle));
    let t = random_axis(rng) * cfg.baseline_m;
    let mut noisy = Vec::with_capacity(cfg.n_points);
    let mut clean = Vec::with_capacity(cfg.n_points);
    let mut attempts = 0;
    while noisy.len() < cfg.n_points && attempts < 1000 * cfg.n_points {
        attempts += 1;
        let pixel = Vector2::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
        let p = cam.ray_through_pixel(&pixel).into_inner() * rng.random_range(lo..=hi);
        let q = r * p + t;
        if !cam.is_visible(&q) {
            continue;
        }
        let (f, fp) = (Unit::new_normalize(p), Unit::new_normalize(q));
        clean.push(BearingPair::new(f, fp));
        let mut noise = || Vector2::new(gauss(rng) * cfg.pixel_sigma, gauss(rng) * cfg.pixel_sigma);
        let nf = noise();
        let nfp = noise();
        noisy.push(BearingPair::new(cam.perturb_bearing(&f, &nf), cam.perturb_bearing(&fp, &nfp)));
    }
    (r, t, noisy, clean)
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
}

/// Rotates `u` by `angle` about a random axis perpendicular to it.
fn tilt_direction(u: &UnitDirection, angle: f64, rng: &mut ChaCha8Rng) -> UnitDirection {
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let host = u.host().matrix();
    let axis = host.column(0) * phi.cos() + host.column(1) * phi.sin();
    UnitDirection::from_vector(&(so3_exp(&(axis * angle)) * u.vector())).expect("unit input")
}

pub fn two_view_problem(cfg: &TwoViewConfig, seed: u64) -> TwoViewProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r_gt, t, pairs, _) = random_two_view(cfg, &mut rng);
    let u_gt = UnitDirection::from_vector(&t).expect("non-zero baseline");
    let rot_err = rng.random_range(cfg.guess_rotation_err_deg.0..=cfg.guess_rotation_err_deg.1).to_radians();
    let r0 = r_gt * so3_exp(&(random_axis(&mut rng) * rot_err));
    let dir_err = rng.random_range(cfg.guess_direction_err_deg.0..=cfg.guess_direction_err_deg.1).to_radians();
    let u0 = tilt_direction(&u_gt, dir_err, &mut rng);
    TwoViewProblem { pairs, r_gt, u_gt, r0, u0 }
}

/// Sign-blind angle between two directions, in degrees.
pub fn direction_error_deg(a: &UnitDirection, b: &UnitDirection) -> f64 {
    let d = angle_between(&a.vector(), &b.vector()).to_degrees();
    d.min(180.0 - d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseErrors {
    pub rot_err_deg: f64,
    pub dir_err_deg: f64,
    pub converged: bool,
}

/// Refinement without RANSAC from the problem's starting point.
pub fn solve_two_view(problem: &TwoViewProblem, w: SolverWeights, lm: &LmConfig) -> PoseErrors {
    match refine_relative_pose(&problem.pairs, &problem.r0, &problem.u0, w, lm) {
        Ok((r, u, st)) => PoseErrors {
            rot_err_deg: rotation_error_deg(&r, &problem.r_gt),
            dir_err_deg: direction_error_deg(&u, &problem.u_gt),
            converged: st.converged,
        },
        Err(_) => PoseErrors { rot_err_deg: f64::NAN, dir_err_deg: f64::NAN, converged: false },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepTrial {
    pub trial: usize,
    pub value: f64,
    pub errors: PoseErrors,
}

/// Every trial problem is solved with every weight.
pub fn sweep_weight(cfg: &TwoViewConfig, weights: &[f64], trials: usize, lm: &LmConfig, master_seed: u64) -> Result<Vec<SweepTrial>, crate::relpose5::RelPoseError> {
    let solvers = weights.iter().map(|&w| SolverWeights::new(w)).collect::<Result<Vec<_>, _>>()?;
    let per_trial: Vec<Vec<SweepTrial>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let problem = two_view_problem(cfg, derive_seed(master_seed, trial as u64));
            weights
                .iter()
                .zip(&solvers)
                .map(|(&value, &w)| SweepTrial { trial, value, errors: solve_two_view(&problem, w, lm) })
                .collect()
        })
        .collect();
    Ok(per_trial.into_iter().flatten().collect())
}

/// Starting point of a record at guess error `gamma`: the shrunk rotation,
/// and the direction from the minimum eigenvector at that rotation.
pub fn guess_for_record(record: &CorrespondenceRecord, gamma: f64) -> Result<(Rotation, UnitDirection), SynthError> {
    let r0 = perturbed_guess(&record.gt_rotation, gamma)?;
    let u0 = epipolar_normal_covariance(&r0, &record.bearings)
        .ok()
        .and_then(|m| translation_from_rotation(&m).ok())
        .unwrap_or_else(|| UnitDirection::from_host(Rotation::identity()));
    Ok((r0, u0))
}

/// Rotation and direction errors of one record refined from `gamma`.
pub fn evaluate_record(record: &CorrespondenceRecord, gamma: f64, w: SolverWeights, lm: &LmConfig) -> Result<PoseErrors, SynthError> {
    let (r0, u0) = guess_for_record(record, gamma)?;
    let u_gt = UnitDirection::from_vector(&record.gt_translation);
    let out = match refine_relative_pose(&record.bearings, &r0, &u0, w, lm) {
        Ok((r, u, st)) => PoseErrors {
            rot_err_deg: rotation_error_deg(&r, &record.gt_rotation),
            dir_err_deg: u_gt.map_or(f64::NAN, |g| direction_error_deg(&u, &g)),
            converged: st.converged,
        },
        Err(_) => PoseErrors { rot_err_deg: f64::NAN, dir_err_deg: f64::NAN, converged: false },
    };
    Ok(out)
}

/// Every record evaluated at every gamma; `trial` is the record index.
pub fn sweep_guess(records: &[CorrespondenceRecord], gammas: &[f64], w: SolverWeights, lm: &LmConfig) -> Result<Vec<SweepTrial>, SynthError> {
    let per_record: Result<Vec<Vec<SweepTrial>>, SynthError> = records
        .par_iter()
        .enumerate()
        .map(|(trial, rec)| {
            gammas
                .iter()
                .map(|&g| Ok(SweepTrial { trial, value: g, errors: evaluate_record(rec, g, w, lm)? }))
                .collect()
        })
        .collect();
    Ok(per_record?.into_iter().flatten().collect())
}

/// Synthetic keyframe-to-frame records for the dataset tooling; with
/// `noiseless` the bearings are exact.
pub fn synthetic_records(cfg: &TwoViewConfig, count: usize, sequence: &str, noiseless: bool, master_seed: u64) -> Vec<CorrespondenceRecord> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, i as u64));
            let (r, t, noisy, clean) = random_two_view(cfg, &mut rng);
            CorrespondenceRecord {
                pair_id: i as u64,
                source_sequence: sequence.to_string(),
                bearings: if noiseless { clean } else { noisy },
                gt_rotation: r,
                gt_translation: t,
                noiseless,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasetio::{read_dataset, write_dataset};

    #[test]
    fn trials_are_order_independent() {
        let cfg = CompareConfig { scene: SceneConfig { n_frames: 6, ..SceneConfig::default() }, ..CompareConfig::default() };
        let all = compare_estimators(&cfg, 3, 42).unwrap();
        let single = compare_trial(&cfg, 42, 2).unwrap();
        assert_eq!(all[4], single[0]);
        assert_eq!(all[5], single[1]);
    }

    #[test]
    fn noiseless_known_depth_trial_is_exact() {
        let scene = SceneConfig { n_frames: 8, pixel_sigma: 0.0, ..SceneConfig::default() };
        let cfg = CompareConfig { scene, depth_mode: DepthMode::Known, ..CompareConfig::default() };
        let [ours, base] = compare_trial(&cfg, 7, 0).unwrap();
        assert!(ours.metrics.max_rot_err_pct < 1e-3, "{:?}", ours.metrics);
        assert!(ours.metrics.max_trans_err_pct < 1e-2, "{:?}", ours.metrics);
        assert!(base.metrics.max_rot_err_pct < 1e-3);
        assert!(base.metrics.max_trans_err_pct < 1e-2);
        assert_eq!(ours.failed_frames, 0);
    }

    #[test]
    fn noiseless_records_satisfy_epipolar_constraint() {
        let records = synthetic_records(&TwoViewConfig::default(), 20, "synth", true, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("noiseless.txt");
        write_dataset(&records, &path).unwrap();
        for rec in read_dataset(&path).unwrap() {
            assert!(rec.noiseless);
            let u = UnitDirection::from_vector(&rec.gt_translation).unwrap();
            for p in &rec.bearings {
                assert!(u.vector().dot(&p.normal(&rec.gt_rotation)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn perfect_guess_on_noiseless_record_is_exact() {
        let records = synthetic_records(&TwoViewConfig::default(), 5, "synth", true, 4);
        for rec in &records {
            let e = evaluate_record(rec, 0.0, SolverWeights::default(), &LmConfig::default()).unwrap();
            assert!(e.rot_err_deg < 1e-6 && e.dir_err_deg < 1e-5, "{e:?}");
        }
    }
}
