//! Synthetic scenes, noisy correspondences, perturbed initial guesses, the
//! 6-DoF reprojection baseline and the trajectory error metrics used by the
//! benchmark experiments.

mod baseline;
pub mod experiments;
mod metrics;
mod sequence;

use nalgebra::{Unit, Vector2, Vector3};
use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geometry::{so3_exp, so3_log, CameraKind, CameraModel, GeometryError, RelativePose, Rotation};
use crate::relpose5::BearingPair;
use crate::transmag::DepthFeature;

pub use baseline::{baseline_6dof, BaselineError};
pub use sequence::SyntheticSequence;
pub use metrics::{trajectory_error_metrics, whisker, MetricsError, TrialResult, WhiskerStats};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid scene configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("frame {index} out of range (scene has {len} frames)")]
    FrameOutOfRange { index: usize, len: usize },
    #[error("gamma must lie in [0, 1], got {0}")]
    InvalidGamma(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Deterministic sub-seed: stream `index` of the master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub n_landmarks: usize,
    /// Distance range (m) of the landmarks from the first camera.
    pub depth_range: (f64, f64),
    pub n_frames: usize,
    pub total_rotation_deg: f64,
    pub total_translation_m: f64,
    pub pixel_sigma: f64,
    pub camera: CameraModel,
    pub outlier_rate: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_landmarks: 200,
            depth_range: (1.0, 6.0),
            n_frames: 37,
            total_rotation_deg: 25.0,
            total_translation_m: 1.0,
            pixel_sigma: 0.75,
            camera: CameraModel::centered(CameraKind::Spherical, 200.0, 640.0, 480.0)
                .expect("default camera is valid"),
            outlier_rate: 0.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let (lo, hi) = self.depth_range;
        if self.n_landmarks == 0 || self.n_frames < 2 {
            return Err(SynthError::InvalidConfig("need landmarks and at least two frames"));
        }
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(SynthError::InvalidConfig("depth range must be positive and ordered"));
        }
        if !(self.total_rotation_deg >= 0.0 && self.total_rotation_deg < 180.0) {
            return Err(SynthError::InvalidConfig("total rotation must lie in [0, 180) degrees"));
        }
        if !(self.total_translation_m >= 0.0 && self.total_translation_m.is_finite()) {
            return Err(SynthError::InvalidConfig("total translation must be non-negative"));
        }
        if !(self.pixel_sigma >= 0.0 && self.pixel_sigma.is_finite()) {
            return Err(SynthError::InvalidConfig("pixel sigma must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.outlier_rate) {
            return Err(SynthError::InvalidConfig("outlier rate must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Landmarks in the first camera's frame and, per frame, the transform from
/// the first camera's frame into that frame (frame 0 is the identity).
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub config: SceneConfig,
    pub landmarks: Vec<Vector3<f64>>,
    pub poses: Vec<RelativePose>,
}

impl Scene {
    pub fn n_frames(&self) -> usize {
        self.poses.len()
    }

    /// Transform from frame `a` into frame `b`.
    pub fn relative_pose(&self, a: usize, b: usize) -> RelativePose {
        self.poses[b].compose(&self.poses[a].inverse())
    }

    pub fn landmark_in_frame(&self, landmark: usize, frame: usize) -> Vector3<f64> {
        self.poses[frame].transform_point(&self.landmarks[landmark])
    }

    pub fn visible(&self, landmark: usize, frame: usize) -> bool {
        self.config.camera.is_visible(&self.landmark_in_frame(landmark, frame))
    }

    pub fn visible_count(&self, frame: usize) -> usize {
        (0..self.landmarks.len()).filter(|&j| self.visible(j, frame)).count()
    }

    fn check_frame(&self, index: usize) -> Result<(), SynthError> {
        if index >= self.poses.len() {
            return Err(SynthError::FrameOutOfRange { index, len: self.poses.len() });
        }
        Ok(())
    }
}

/// Landmarks are spread over the first image at distances drawn from the
/// depth range. The camera rotates about a mostly vertical axis and
/// translates mostly sideways at constant rates, with a small smooth wobble
/// that vanishes at both ends so the configured totals are met exactly.
pub fn generate_scene(cfg: &SceneConfig) -> Result<Scene, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cam = &cfg.camera;
    let (w, h) = cam.image_size();
    let (lo, hi) = cfg.depth_range;
    let landmarks: Vec<Vector3<f64>> = (0..cfg.n_landmarks)
        .map(|_| {
            let pixel = Vector2::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
            let d = if hi > lo { rng.random_range(lo..hi) } else { lo };
            cam.ray_through_pixel(&pixel).into_inner() * d
        })
        .collect();

    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let axis = Vector3::new(rng.random_range(-0.3..0.3), sign, rng.random_range(-0.3..0.3)).normalize();
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let travel = Vector3::new(sign, rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)).normalize();
    let wobble_axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let wobble_offset = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));

    let total_angle = cfg.total_rotation_deg.to_radians();
    let last = (cfg.n_frames - 1) as f64;
    let poses = (0..cfg.n_frames)
        .map(|k| {
            let a = k as f64 / last;
            let bump = (std::f64::consts::PI * a).sin();
            // Camera-to-first-frame orientation and position.
            let orient = so3_exp(&(axis * (total_angle * a) + wobble_axis * (0.02 * total_angle * bump)));
            let center = travel * (cfg.total_translation_m * a) + wobble_offset * (0.02 * cfg.total_translation_m * bump);
            let r = orient.inverse();
            RelativePose::from_rotation_translation(r, &-(r * center))
        })
        .collect();
    Ok(Scene { config: *cfg, landmarks, poses })
}

/// One keyframe-to-frame correspondence with its generative ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthCorrespondence {
    pub landmark: usize,
    pub pair: BearingPair,
    /// True distance of the landmark along the keyframe bearing.
    pub depth: f64,
    pub is_outlier: bool,
}

impl SynthCorrespondence {
    /// Feature for the magnitude estimator with the given depth.
    pub fn feature(&self, depth: f64, sigma: f64) -> DepthFeature {
        DepthFeature::new(self.pair.f, self.pair.f_prime, depth, sigma).expect("positive depth and sigma")
    }
}

/// Noisy bearings of every landmark in one frame (`None` when not visible).
///
/// Noise is drawn for every landmark in a fixed order from a stream keyed
/// by `(seed, frame)`, so an observation does not depend on which pairs it
/// is later used in.
pub fn frame_observations(scene: &Scene, frame: usize, pixel_sigma: f64, seed: u64) -> Result<Vec<Option<Unit<Vector3<f64>>>>, SynthError> {
    scene.check_frame(frame)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame as u64);
    let normal = Normal::new(0.0, pixel_sigma.max(0.0)).map_err(|_| SynthError::InvalidConfig("pixel sigma"))?;
    let cam = &scene.config.camera;
    Ok((0..scene.landmarks.len())
        .map(|j| {
            let noise = Vector2::new(normal.sample(&mut rng), normal.sample(&mut rng));
            let p = scene.landmark_in_frame(j, frame);
            if !cam.is_visible(&p) {
                return None;
            }
            let b = Unit::new_normalize(p);
            Some(if pixel_sigma > 0.0 { cam.perturb_bearing(&b, &noise) } else { b })
        })
        .collect())
}

/// Correspondences between `keyframe` and `frame` for landmarks visible in
/// both. A fraction `outlier_rate` of them (rounded) get their current
/// bearing replaced by the ray through a uniformly random pixel.
pub fn synth_observations(
    scene: &Scene,
    keyframe: usize,
    frame: usize,
    pixel_sigma: f64,
    outlier_rate: f64,
    seed: u64,
) -> Result<Vec<SynthCorrespondence>, SynthError> {
    if !(0.0..1.0).contains(&outlier_rate) {
        return Err(SynthError::InvalidConfig("outlier rate must lie in [0, 1)"));
    }
    let key_obs = frame_observations(scene, keyframe, pixel_sigma, seed)?;
    let cur_obs = frame_observations(scene, frame, pixel_sigma, seed)?;
    let mut out: Vec<SynthCorrespondence> = key_obs
        .iter()
        .zip(&cur_obs)
        .enumerate()
        .filter_map(|(j, (a, b))| {
            let (f, f_prime) = ((*a)?, (*b)?);
            Some(SynthCorrespondence {
                landmark: j,
                pair: BearingPair::new(f, f_prime),
                depth: scene.landmark_in_frame(j, keyframe).norm(),
                is_outlier: false,
            })
        })
        .collect();

    let n_out = (outlier_rate * out.len() as f64).round() as usize;
    if n_out > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1 << 40 | (keyframe as u64) << 20 | frame as u64));
        let cam = &scene.config.camera;
        let (w, h) = cam.image_size();
        for i in sample(&mut rng, out.len(), n_out) {
            let pixel = Vector2::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
            out[i].pair.f_prime = cam.ray_through_pixel(&pixel);
            out[i].is_outlier = true;
        }
    }
    Ok(out)
}

/// `exp(log(R_gt)·(1 − Γ))`: the ground truth shrunk towards the identity
/// along its geodesic.
pub fn perturbed_guess(r_gt: &Rotation, gamma: f64) -> Result<Rotation, SynthError> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(SynthError::InvalidGamma(gamma));
    }
    Ok(so3_exp(&(so3_log(r_gt)? * (1.0 - gamma))))
}
