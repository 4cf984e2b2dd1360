//! Monocular visual odometry that splits each keyframe-to-frame pose into a
//! depth-free 5-DoF relative pose (rotation and translation direction from
//! bearing correspondences) and a 1-DoF translation magnitude from feature
//! depths.
//!
//! - [`geometry`]: rotations, unit directions, poses, cameras, epipolar helpers.
//! - [`optim`]: Levenberg–Marquardt on manifolds.
//! - [`relpose5`]: the 5-DoF estimator and its RANSAC wrapper.
//! - [`transmag`]: the translation-magnitude estimator.
//! - [`pipeline`]: the frame-by-frame odometry state machine.
//! - [`synthlab`]: synthetic scenes, the 6-DoF baseline, metrics and experiments.
//! - [`datasetio`]: plain-text correspondence datasets.

pub mod datasetio;
pub mod geometry;
pub mod optim;
pub mod pipeline;
pub mod relpose5;
pub mod synthlab;
pub mod transmag;

pub use datasetio::CorrespondenceRecord;
pub use geometry::{Bearing, CameraKind, CameraModel, RelativePose, Rotation, UnitDirection};
pub use optim::LmConfig;
pub use pipeline::{Frame, ObservationProvider, VoConfig, VoState};
pub use relpose5::{BearingPair, RansacConfig, SolverWeights};
pub use transmag::{DepthFeature, RobustCost};
