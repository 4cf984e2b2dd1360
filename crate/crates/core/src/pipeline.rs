//! Frame-by-frame monocular odometry: keyframe-to-frame 5-DoF relative pose,
//! 1-DoF translation magnitude from feature depths, a constant-depth
//! bootstrap until enough depths are triangulated, keyframe heuristics and
//! outlier removal.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{
    angle_between, parallax_angle, triangulate_two_view, Bearing, CameraKind, CameraModel, RelativePose, Rotation,
};
use crate::optim::LmConfig;
use crate::relpose5::{jitter_rotation, ransac_relative_pose, BearingPair, RansacConfig, RelPoseResult, RelPoseStatus, SolverWeights};
use crate::transmag::{
    estimate_magnitude, magnitude_initial_guess, reprojection_errors, DepthFeature, MagnitudeResult, MagnitudeStatus,
    RobustCost,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("frame index {got} does not follow {last}")]
    NonMonotoneFrame { last: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoConfig {
    /// Depth assumed for every feature until enough are triangulated (m).
    pub constant_depth: f64,
    /// Minimum rotation-compensated parallax for triangulation (degrees).
    pub min_parallax_deg: f64,
    /// The parallax must also exceed this many standard deviations of the
    /// parallax that pixel noise alone produces.
    pub parallax_noise_factor: f64,
    /// Depths stop being refined once the relative standard deviation of
    /// the inverse depth drops to this value.
    pub converged_inv_depth_rel_sigma: f64,
    /// Triangulated tracks needed to drop the constant-depth assumption.
    pub min_triangulated_for_release: usize,
    /// Frames a track survives without being observed.
    pub track_retention_frames: usize,
    pub min_inliers_keyframe: usize,
    /// Inliers with triangulated depth needed once the bootstrap is over.
    pub min_overlap_keyframe: usize,
    /// Features reprojecting worse than this (px) are magnitude outliers.
    pub magnitude_outlier_px: f64,
    /// The magnitude-outlier threshold is raised to at least this many
    /// standard deviations of the reprojection error pixel noise alone
    /// produces.
    pub magnitude_outlier_noise_factor: f64,
    /// Mean reprojection error (px) above which a keyframe is requested.
    pub max_mean_reproj_px: f64,
    /// Per-axis half-width (degrees) of the jitter on the previous rotation
    /// when no external prior is given.
    pub prior_jitter_deg: f64,
    pub pixel_sigma: f64,
    pub camera: CameraModel,
    pub weights: SolverWeights,
    pub ransac: RansacConfig,
    pub lm: LmConfig,
    pub robust: RobustCost,
    pub seed: u64,
}

impl Default for VoConfig {
    fn default() -> Self {
        Self {
            constant_depth: 0.75,
            min_parallax_deg: 1.0,
            parallax_noise_factor: 5.0,
            converged_inv_depth_rel_sigma: 0.05,
            min_triangulated_for_release: 10,
            track_retention_frames: 150,
            min_inliers_keyframe: 30,
            min_overlap_keyframe: 10,
            magnitude_outlier_px: 1.5,
            magnitude_outlier_noise_factor: 3.0,
            max_mean_reproj_px: 2.5,
            prior_jitter_deg: 0.5,
            pixel_sigma: 0.75,
            camera: CameraModel::centered(CameraKind::Spherical, 200.0, 640.0, 480.0).expect("valid camera"),
            weights: SolverWeights::default(),
            ransac: RansacConfig::default(),
            lm: LmConfig::default(),
            robust: RobustCost::default(),
            seed: 0,
        }
    }
}

impl VoConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.constant_depth) {
            return Err(PipelineError::InvalidConfig("constant_depth must be positive"));
        }
        if !positive(self.min_parallax_deg) {
            return Err(PipelineError::InvalidConfig("min_parallax_deg must be positive"));
        }
        if !(self.parallax_noise_factor >= 0.0) || !(self.magnitude_outlier_noise_factor >= 0.0) {
            return Err(PipelineError::InvalidConfig("noise factors must be non-negative"));
        }
        if self.min_triangulated_for_release == 0 || self.track_retention_frames == 0 {
            return Err(PipelineError::InvalidConfig("release threshold and retention must be positive"));
        }
        if self.min_inliers_keyframe == 0 || self.min_overlap_keyframe == 0 {
            return Err(PipelineError::InvalidConfig("keyframe thresholds must be positive"));
        }
        if !positive(self.magnitude_outlier_px) || !positive(self.max_mean_reproj_px) {
            return Err(PipelineError::InvalidConfig("reprojection thresholds must be positive"));
        }
        if !positive(self.pixel_sigma) {
            return Err(PipelineError::InvalidConfig("pixel_sigma must be positive"));
        }
        if !(self.prior_jitter_deg >= 0.0) {
            return Err(PipelineError::InvalidConfig("prior_jitter_deg must be non-negative"));
        }
        self.ransac.validate().map_err(|_| PipelineError::InvalidConfig("ransac"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DepthState {
    Unknown,
    Assumed(f64),
    /// Depth along the keyframe bearing and the standard deviation of its
    /// inverse.
    Triangulated { depth: f64, inv_depth_sigma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrack {
    pub id: u64,
    /// Bearing in the current keyframe; `None` until the track is seen in a
    /// keyframe.
    pub keyframe_bearing: Option<Bearing>,
    pub current_bearing: Bearing,
    pub depth_state: DepthState,
    pub sigma_px: f64,
    pub frames_since_observed: usize,
    pub age: usize,
    /// Widest triangulation angle (degrees) against the reference
    /// observation used so far.
    pub best_parallax_deg: f64,
    /// First observation with a known pose (bearing, world-to-frame pose);
    /// depths are triangulated against it.
    reference: Option<(Bearing, RelativePose)>,
    /// Depth along the reference bearing and its inverse-depth sigma.
    reference_depth: Option<(f64, f64)>,
}

impl FeatureTrack {
    fn new(id: u64, bearing: Bearing, sigma_px: f64) -> Self {
        Self {
            id,
            keyframe_bearing: None,
            current_bearing: bearing,
            depth_state: DepthState::Unknown,
            sigma_px,
            frames_since_observed: 0,
            age: 0,
            best_parallax_deg: 0.0,
            reference: None,
            reference_depth: None,
        }
    }

    /// Recomputes `depth_state` relative to the keyframe at `kf_world`.
    fn sync_depth(&mut self, kf_world: &RelativePose, constant_depth: f64) {
        self.depth_state = match (self.keyframe_bearing, self.reference, self.reference_depth) {
            (None, _, _) => DepthState::Unknown,
            (Some(_), Some((f_ref, ref_world)), Some((d_ref, sigma_ref))) => {
                let point = ref_world.inverse().transform_point(&(f_ref.into_inner() * d_ref));
                let d = kf_world.transform_point(&point).norm();
                if d > 0.0 && d.is_finite() {
                    DepthState::Triangulated { depth: d, inv_depth_sigma: sigma_ref * (d_ref / d).powi(2) }
                } else {
                    DepthState::Assumed(constant_depth)
                }
            }
            (Some(_), _, _) => DepthState::Assumed(constant_depth),
        };
    }

    pub fn is_triangulated(&self) -> bool {
        matches!(self.depth_state, DepthState::Triangulated { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keyframe {
    pub frame_index: usize,
    /// World-to-keyframe transform.
    pub world_pose: RelativePose,
}

/// One frame of tracker output.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub observations: Vec<(u64, Bearing)>,
    /// World-to-frame rotation, e.g. from gyro integration.
    pub rotation_prior: Option<Rotation>,
}

/// Pull-based source of frames with increasing indices.
pub trait ObservationProvider {
    fn next_frame(&mut self) -> Option<Frame>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameStatus {
    Initialized,
    Tracked,
    /// Both estimation attempts failed; the previous pose was kept.
    Coasted,
    /// Fewer than five correspondences with the keyframe.
    TrackingLost,
}

impl FrameStatus {
    pub fn name(&self) -> &'static str {
        match self {
            FrameStatus::Initialized => "initialized",
            FrameStatus::Tracked => "tracked",
            FrameStatus::Coasted => "coasted",
            FrameStatus::TrackingLost => "tracking_lost",
        }
    }
}

/// Why a keyframe was requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KeyframeReason {
    EstimationFailed,
    FewInliers,
    FewDepthOverlap,
    HighReprojection,
}

impl KeyframeReason {
    pub fn name(&self) -> &'static str {
        match self {
            KeyframeReason::EstimationFailed => "estimation_failed",
            KeyframeReason::FewInliers => "few_inliers",
            KeyframeReason::FewDepthOverlap => "few_depth_overlap",
            KeyframeReason::HighReprojection => "high_reprojection",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDiagnostics {
    pub frame_index: usize,
    pub status: FrameStatus,
    pub keyframe_index: usize,
    pub keyframe_inserted: bool,
    /// Set when a keyframe was requested, whether or not one was inserted.
    pub keyframe_reason: Option<KeyframeReason>,
    pub correspondences: usize,
    pub inliers: usize,
    pub magnitude_features: usize,
    pub mean_reproj_px: f64,
    pub depth_released: bool,
    pub n_unknown: usize,
    pub n_assumed: usize,
    pub n_triangulated: usize,
}

/// Result of one keyframe-to-frame estimate.
#[derive(Debug, Clone)]
pub struct FrameEstimate {
    pub ids: Vec<u64>,
    pub relpose: RelPoseResult,
    pub magnitude: MagnitudeResult,
    /// Track ids used by the magnitude estimator.
    pub magnitude_ids: Vec<u64>,
    /// Inliers with triangulated depth.
    pub overlap: usize,
    pub mean_reproj_px: f64,
}

impl FrameEstimate {
    pub fn pose(&self) -> RelativePose {
        RelativePose::new(self.relpose.rotation, self.relpose.direction, self.magnitude.s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EstimateFailure {
    TooFewCorrespondences,
    RelativePose,
    Magnitude,
}

#[derive(Debug, Clone)]
pub struct VoState {
    config: VoConfig,
    tracks: BTreeMap<u64, FeatureTrack>,
    keyframe: Option<Keyframe>,
    last_frame: Option<usize>,
    /// World-to-frame pose of the last processed frame.
    last_world: RelativePose,
    /// Keyframe-to-last-frame pose.
    last_rel: RelativePose,
    prev_observations: BTreeMap<u64, Bearing>,
    released: bool,
    trajectory: Vec<RelativePose>,
    rng: ChaCha8Rng,
}

impl VoState {
    pub fn new(config: VoConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self {
            config,
            tracks: BTreeMap::new(),
            keyframe: None,
            last_frame: None,
            last_world: RelativePose::identity(),
            last_rel: RelativePose::identity(),
            prev_observations: BTreeMap::new(),
            released: false,
            trajectory: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        })
    }

    pub fn config(&self) -> &VoConfig {
        &self.config
    }

    pub fn tracks(&self) -> &BTreeMap<u64, FeatureTrack> {
        &self.tracks
    }

    pub fn keyframe(&self) -> Option<&Keyframe> {
        self.keyframe.as_ref()
    }

    /// World-to-frame poses of every processed frame.
    pub fn trajectory(&self) -> &[RelativePose] {
        &self.trajectory
    }

    /// True once the constant-depth assumption has been dropped.
    pub fn depth_released(&self) -> bool {
        self.released
    }

    /// Track counts as `(unknown, assumed, triangulated)`.
    pub fn depth_census(&self) -> (usize, usize, usize) {
        self.tracks.values().fold((0, 0, 0), |(u, a, t), tr| match tr.depth_state {
            DepthState::Unknown => (u + 1, a, t),
            DepthState::Assumed(_) => (u, a + 1, t),
            DepthState::Triangulated { .. } => (u, a, t + 1),
        })
    }

    fn keyframe_is_previous(&self) -> bool {
        matches!((self.keyframe, self.last_frame), (Some(k), Some(l)) if k.frame_index == l)
    }

    /// Whether the estimate calls for a new keyframe: too few inliers, too
    /// few inliers with triangulated depth, or a high reprojection error.
    /// The depth-based criteria only apply after the bootstrap.
    pub fn keyframe_decision(&self, estimate: &FrameEstimate) -> bool {
        self.keyframe_reason(estimate).is_some()
    }

    pub fn keyframe_reason(&self, estimate: &FrameEstimate) -> Option<KeyframeReason> {
        if estimate.relpose.status == RelPoseStatus::TooFewInliers {
            Some(KeyframeReason::EstimationFailed)
        } else if estimate.relpose.inlier_count() < self.config.min_inliers_keyframe {
            Some(KeyframeReason::FewInliers)
        } else if self.released && estimate.overlap < self.config.min_overlap_keyframe {
            Some(KeyframeReason::FewDepthOverlap)
        } else if self.released && estimate.mean_reproj_px > self.config.max_mean_reproj_px {
            Some(KeyframeReason::HighReprojection)
        } else {
            None
        }
    }

    /// Processes one frame and returns its world-to-frame pose.
    pub fn process_frame(&mut self, frame: &Frame) -> Result<(RelativePose, FrameDiagnostics), PipelineError> {
        if let Some(last) = self.last_frame {
            if frame.index <= last {
                return Err(PipelineError::NonMonotoneFrame { last, got: frame.index });
            }
        }
        if self.keyframe.is_none() {
            return Ok(self.initialize(frame));
        }
        self.observe(frame);

        let mut inserted = false;
        let mut attempt = self.estimate(frame);
        let reason = match &attempt {
            Ok(est) => self.keyframe_reason(est),
            Err(_) => Some(KeyframeReason::EstimationFailed),
        };
        if reason.is_some() && !self.keyframe_is_previous() {
            self.insert_keyframe_at_previous();
            inserted = true;
            attempt = self.estimate(frame);
        }

        let keyframe = self.keyframe.expect("initialized");
        let (world, status, est) = match attempt {
            Ok(est) => (est.pose().compose(&keyframe.world_pose), FrameStatus::Tracked, Some(est)),
            Err(failure) => {
                let mut held = self.last_world;
                if let Some(prior) = frame.rotation_prior {
                    let c = held.camera_center();
                    held = RelativePose::from_rotation_translation(prior, &-(prior * c));
                }
                let status = if failure == EstimateFailure::TooFewCorrespondences {
                    FrameStatus::TrackingLost
                } else {
                    FrameStatus::Coasted
                };
                log::debug!("frame {}: {:?}, holding pose", frame.index, failure);
                (held, status, None)
            }
        };
        let rel = world.compose(&keyframe.world_pose.inverse());

        if let Some(est) = &est {
            self.remove_outliers(est, &rel);
            self.update_depths(&world);
        } else {
            self.drop_stale_tracks();
        }

        self.last_rel = rel;
        self.last_world = world;
        self.last_frame = Some(frame.index);
        self.prev_observations = frame.observations.iter().copied().collect();
        self.trajectory.push(world);

        let (n_unknown, n_assumed, n_triangulated) = self.depth_census();
        let diag = FrameDiagnostics {
            frame_index: frame.index,
            status,
            keyframe_index: keyframe.frame_index,
            keyframe_inserted: inserted,
            keyframe_reason: reason,
            correspondences: est.as_ref().map_or(0, |e| e.ids.len()),
            inliers: est.as_ref().map_or(0, |e| e.relpose.inlier_count()),
            magnitude_features: est.as_ref().map_or(0, |e| e.magnitude_ids.len()),
            mean_reproj_px: est.as_ref().map_or(f64::NAN, |e| e.mean_reproj_px),
            depth_released: self.released,
            n_unknown,
            n_assumed,
            n_triangulated,
        };
        Ok((world, diag))
    }

    fn initialize(&mut self, frame: &Frame) -> (RelativePose, FrameDiagnostics) {
        let world = RelativePose::identity();
        for &(id, b) in &frame.observations {
            let mut track = FeatureTrack::new(id, b, self.config.pixel_sigma);
            track.keyframe_bearing = Some(b);
            track.reference = Some((b, world));
            track.depth_state = DepthState::Assumed(self.config.constant_depth);
            self.tracks.insert(id, track);
        }
        self.keyframe = Some(Keyframe { frame_index: frame.index, world_pose: world });
        self.last_frame = Some(frame.index);
        self.last_world = world;
        self.last_rel = world;
        self.prev_observations = frame.observations.iter().copied().collect();
        self.trajectory.push(world);
        let (n_unknown, n_assumed, n_triangulated) = self.depth_census();
        let diag = FrameDiagnostics {
            frame_index: frame.index,
            status: FrameStatus::Initialized,
            keyframe_index: frame.index,
            keyframe_inserted: true,
            keyframe_reason: None,
            correspondences: 0,
            inliers: 0,
            magnitude_features: 0,
            mean_reproj_px: f64::NAN,
            depth_released: false,
            n_unknown,
            n_assumed,
            n_triangulated,
        };
        (world, diag)
    }

    fn observe(&mut self, frame: &Frame) {
        for track in self.tracks.values_mut() {
            track.frames_since_observed += 1;
        }
        for &(id, b) in &frame.observations {
            let sigma = self.config.pixel_sigma;
            let track = self.tracks.entry(id).or_insert_with(|| FeatureTrack::new(id, b, sigma));
            track.current_bearing = b;
            track.frames_since_observed = 0;
            track.age += 1;
        }
    }

    fn estimate(&mut self, frame: &Frame) -> Result<FrameEstimate, EstimateFailure> {
        let keyframe = self.keyframe.expect("initialized");
        let current: BTreeMap<u64, Bearing> = frame.observations.iter().copied().collect();
        let mut ids = Vec::new();
        let mut pairs = Vec::new();
        for (id, b) in &current {
            if let Some(kb) = self.tracks.get(id).and_then(|t| t.keyframe_bearing) {
                ids.push(*id);
                pairs.push(BearingPair::new(kb, *b));
            }
        }
        if pairs.len() < 5 {
            return Err(EstimateFailure::TooFewCorrespondences);
        }

        let previous = self.keyframe_is_previous();
        let prior = match frame.rotation_prior {
            Some(r) => r * keyframe.world_pose.rotation.inverse(),
            None => jitter_rotation(&self.last_rel.rotation, self.config.prior_jitter_deg, &mut self.rng),
        };
        let relpose = ransac_relative_pose(&pairs, &prior, self.config.weights, &self.config.ransac, &self.config.lm, &mut self.rng)
            .map_err(|_| EstimateFailure::RelativePose)?;
        if relpose.status == RelPoseStatus::TooFewInliers {
            return Err(EstimateFailure::RelativePose);
        }

        let mut features = Vec::new();
        let mut magnitude_ids = Vec::new();
        let mut overlap = 0;
        for (k, id) in ids.iter().enumerate() {
            if !relpose.inlier_mask[k] {
                continue;
            }
            let track = &self.tracks[id];
            if track.is_triangulated() {
                overlap += 1;
            }
            let depth = match (self.released, track.depth_state) {
                (false, _) => Some(self.config.constant_depth),
                (true, DepthState::Triangulated { depth, .. }) => Some(depth),
                (true, _) => None,
            };
            if let Some(d) = depth {
                let feat = DepthFeature::new(pairs[k].f, pairs[k].f_prime, d, track.sigma_px)
                    .map_err(|_| EstimateFailure::Magnitude)?;
                features.push(feat);
                magnitude_ids.push(*id);
            }
        }
        if features.is_empty() {
            // No inlier has depth: fall back to the constant-depth assumption
            // for this frame.
            for (k, id) in ids.iter().enumerate().filter(|(k, _)| relpose.inlier_mask[*k]) {
                let feat = DepthFeature::new(pairs[k].f, pairs[k].f_prime, self.config.constant_depth, self.tracks[id].sigma_px)
                    .map_err(|_| EstimateFailure::Magnitude)?;
                features.push(feat);
                magnitude_ids.push(*id);
            }
        }
        let s0 = magnitude_initial_guess(self.last_rel.magnitude, &self.last_rel.direction, &relpose.direction, previous);
        let magnitude = estimate_magnitude(
            &features,
            &relpose.rotation,
            &relpose.direction,
            s0,
            &self.config.camera,
            &self.config.robust,
            &self.config.lm,
        );
        if magnitude.status != MagnitudeStatus::Converged {
            return Err(EstimateFailure::Magnitude);
        }
        let errors = reprojection_errors(&features, &relpose.rotation, &relpose.direction, magnitude.s, &self.config.camera);
        let mean_reproj_px = errors.iter().sum::<f64>() / errors.len() as f64;
        Ok(FrameEstimate { ids, relpose, magnitude, magnitude_ids, overlap, mean_reproj_px })
    }

    /// Makes the previous frame the keyframe. Tracks seen there are anchored
    /// to their bearing in it; triangulated depths carry across because they
    /// live on each track's reference observation.
    fn insert_keyframe_at_previous(&mut self) {
        let new_world = self.last_world;
        for track in self.tracks.values_mut() {
            track.keyframe_bearing = self.prev_observations.get(&track.id).copied();
            track.sync_depth(&new_world, self.config.constant_depth);
        }
        self.keyframe = Some(Keyframe { frame_index: self.last_frame.expect("initialized"), world_pose: new_world });
        self.last_rel = RelativePose::identity();
        log::debug!("keyframe inserted at frame {}", self.last_frame.unwrap_or(0));
    }

    /// Drops relative-pose outliers and, once depths are estimated,
    /// magnitude outliers from the tracker.
    fn remove_outliers(&mut self, est: &FrameEstimate, rel: &RelativePose) {
        let mut drop: BTreeSet<u64> = est
            .ids
            .iter()
            .zip(&est.relpose.inlier_mask)
            .filter(|(_, &inlier)| !inlier)
            .map(|(id, _)| *id)
            .collect();
        if self.released {
            // Depth-based check only where the depth is estimated.
            let mut feats = Vec::new();
            let mut feat_ids = Vec::new();
            for id in &est.magnitude_ids {
                let t = &self.tracks[id];
                if let (Some(kb), DepthState::Triangulated { depth, .. }) = (t.keyframe_bearing, t.depth_state) {
                    if let Ok(f) = DepthFeature::new(kb, t.current_bearing, depth, t.sigma_px) {
                        feats.push(f);
                        feat_ids.push(*id);
                    }
                }
            }
            let errors = reprojection_errors(&feats, &rel.rotation, &rel.direction, rel.magnitude, &self.config.camera);
            let threshold = self
                .config
                .magnitude_outlier_px
                .max(self.config.magnitude_outlier_noise_factor * std::f64::consts::SQRT_2 * self.config.pixel_sigma);
            for (id, e) in feat_ids.iter().zip(errors) {
                if e > threshold {
                    drop.insert(*id);
                }
            }
        }
        for id in drop {
            self.tracks.remove(&id);
        }
    }

    /// Triangulates every track observed in the frame at `world` (its
    /// world-to-frame pose) against the track's reference observation when
    /// the parallax reaches the threshold and the widest seen so far,
    /// blending with the earlier estimate by inverse-variance weighting in
    /// inverse depth. Tracks without a reference take this observation as
    /// theirs. Then drops tracks unobserved for longer than the retention
    /// limit and releases the constant-depth assumption once enough tracks
    /// have depth.
    pub fn update_depths(&mut self, world: &RelativePose) {
        let pixel_angle = self.config.pixel_sigma / self.config.camera.mean_focal();
        let min_parallax = self
            .config
            .min_parallax_deg
            .max(self.config.parallax_noise_factor * std::f64::consts::SQRT_2 * pixel_angle.to_degrees());
        let kf_world = self.keyframe.expect("initialized").world_pose;
        for track in self.tracks.values_mut() {
            if track.frames_since_observed != 0 {
                continue;
            }
            let Some((f_ref, ref_world)) = track.reference else {
                track.reference = Some((track.current_bearing, *world));
                continue;
            };
            if matches!(track.reference_depth, Some((d, sigma)) if sigma * d <= self.config.converged_inv_depth_rel_sigma) {
                continue;
            }
            let rel = world.compose(&ref_world.inverse());
            let parallax = parallax_angle(&rel.rotation, &f_ref, &track.current_bearing);
            if parallax < min_parallax {
                continue;
            }
            // Widest pair so far judged by the angle the two camera centres
            // subtend at the current point estimate, not by the measured
            // parallax, which would favour observations with noise pointing
            // outwards and bias the depth low.
            let angle = match track.reference_depth {
                Some((d, _)) => {
                    let p = f_ref.into_inner() * d;
                    angle_between(&-p, &(rel.camera_center() - p)).to_degrees()
                }
                None => parallax,
            };
            if angle < track.best_parallax_deg {
                continue;
            }
            let Ok(depth) = triangulate_two_view(&rel.rotation, &rel.translation(), &f_ref, &track.current_bearing) else {
                continue;
            };
            track.best_parallax_deg = angle;
            let rho = 1.0 / depth;
            let sigma = pixel_angle * rho / angle.to_radians();
            track.reference_depth = Some(match track.reference_depth {
                Some((d0, s0)) => {
                    let (w0, w1) = (1.0 / (s0 * s0), 1.0 / (sigma * sigma));
                    let rho_blend = (w0 / d0 + w1 * rho) / (w0 + w1);
                    (1.0 / rho_blend, (w0 + w1).sqrt().recip())
                }
                None => (depth, sigma),
            });
            track.sync_depth(&kf_world, self.config.constant_depth);
        }
        self.drop_stale_tracks();
        if !self.released {
            let n = self.tracks.values().filter(|t| t.keyframe_bearing.is_some() && t.is_triangulated()).count();
            if n >= self.config.min_triangulated_for_release {
                self.released = true;
                log::debug!("constant-depth assumption released with {n} triangulated tracks");
            }
        }
    }

    fn drop_stale_tracks(&mut self) {
        let limit = self.config.track_retention_frames;
        self.tracks.retain(|_, t| t.frames_since_observed <= limit);
    }
}

/// Runs a whole session and returns the trajectory and per-frame
/// diagnostics.
pub fn run_session<P: ObservationProvider>(
    provider: &mut P,
    config: VoConfig,
) -> Result<(Vec<RelativePose>, Vec<FrameDiagnostics>), PipelineError> {
    let mut state = VoState::new(config)?;
    let mut diagnostics = Vec::new();
    while let Some(frame) = provider.next_frame() {
        let (_, diag) = state.process_frame(&frame)?;
        diagnostics.push(diag);
    }
    Ok((state.trajectory, diagnostics))
}
