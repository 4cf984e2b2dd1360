use rand::seq::index::sample;
use rand::Rng;

use super::residual::refine_with_data_matrix;
use super::{
    build_data_matrix, epipolar_normal_covariance, translation_from_rotation, BearingPair, RelPoseError,
    SolverWeights,
};
use crate::geometry::{sampson_distance, Rotation, UnitDirection};
use crate::optim::{LmConfig, LmStatus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    /// Upper bound on the squared Sampson distance (normalized bearing units)
    /// for a correspondence to count as an inlier.
    pub sampson_inlier_threshold: f64,
    /// Pairs per direction hypothesis. Two normals already fix `u`; a third
    /// keeps nearly parallel noisy normals from producing a random direction.
    pub subsample_size: usize,
    /// Hypothesis rounds: rotation from the best estimate so far, direction
    /// from a subsample of the current inliers.
    pub ransac_iterations: usize,
    /// Refinement rounds over the whole inlier set.
    pub refine_iterations: usize,
    pub min_inliers: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            // (4 σ)² with σ = 0.75 px at a 200 px focal length.
            sampson_inlier_threshold: 2.25e-4,
            subsample_size: 3,
            ransac_iterations: 5,
            refine_iterations: 7,
            min_inliers: 10,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), RelPoseError> {
        if !(self.sampson_inlier_threshold > 0.0 && self.sampson_inlier_threshold.is_finite()) {
            return Err(RelPoseError::InvalidConfig("sampson_inlier_threshold must be positive"));
        }
        if self.subsample_size < 2 {
            return Err(RelPoseError::InvalidConfig("subsample_size must be at least 2"));
        }
        if self.ransac_iterations == 0 || self.refine_iterations == 0 || self.min_inliers == 0 {
            return Err(RelPoseError::InvalidConfig("iteration counts and min_inliers must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelPoseStatus {
    Converged,
    /// Direction is unreliable (isolated minimum eigenvalue not found).
    Degenerate,
    TooFewInliers,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelPoseResult {
    pub rotation: Rotation,
    pub direction: UnitDirection,
    pub inlier_mask: Vec<bool>,
    /// Functional over the inliers.
    pub final_functional: f64,
    pub status: RelPoseStatus,
    pub lm_status: Option<LmStatus>,
}

impl RelPoseResult {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone)]
struct Hypothesis {
    rotation: Rotation,
    direction: UnitDirection,
    mask: Vec<bool>,
    count: usize,
    /// Mean squared epipolar error over the inliers.
    cost: f64,
}

impl Hypothesis {
    fn score(
        pairs: &[BearingPair],
        rotation: Rotation,
        direction: UnitDirection,
        threshold: f64,
    ) -> Self {
        let uv = direction.vector();
        let mut mask = Vec::with_capacity(pairs.len());
        let mut count = 0;
        let mut sum = 0.0;
        for p in pairs {
            let d = sampson_distance(&rotation, &direction, &p.f, &p.f_prime);
            let inlier = d * d <= threshold;
            if inlier {
                count += 1;
                sum += uv.dot(&p.normal(&rotation)).powi(2);
            }
            mask.push(inlier);
        }
        let cost = if count > 0 { sum / count as f64 } else { f64::INFINITY };
        Self { rotation, direction, mask, count, cost }
    }

    fn beats(&self, other: &Hypothesis) -> bool {
        self.count > other.count || (self.count == other.count && self.cost < other.cost)
    }

    fn inlier_pairs(&self, pairs: &[BearingPair]) -> Vec<BearingPair> {
        pairs.iter().zip(&self.mask).filter(|(_, &m)| m).map(|(p, _)| *p).collect()
    }
}

/// Robust 5-DoF estimate.
///
/// Hypotheses keep the best rotation so far and take the direction from the
/// minimum eigenvector of `M(R)` over a random subsample of the current
/// inliers. The best hypothesis is then refined with LM on its inliers for up
/// to `refine_iterations` rounds, re-classifying every correspondence after
/// each round and stopping once the error no longer drops and the inlier
/// count no longer grows.
pub fn ransac_relative_pose<G: Rng + ?Sized>(
    pairs: &[BearingPair],
    r_prior: &Rotation,
    w: SolverWeights,
    cfg: &RansacConfig,
    lm: &LmConfig,
    rng: &mut G,
) -> Result<RelPoseResult, RelPoseError> {
    cfg.validate()?;
    let n = pairs.len();
    if n < cfg.subsample_size.max(5) {
        return Err(RelPoseError::TooFewPairs { needed: cfg.subsample_size.max(5), got: n });
    }

    let threshold = cfg.sampson_inlier_threshold;
    let mut best: Option<Hypothesis> = None;
    let mut lm_status = None;

    for _ in 0..cfg.ransac_iterations {
        let rotation = best.as_ref().map_or(*r_prior, |b| b.rotation);
        let pool: Vec<usize> = match &best {
            Some(b) => (0..n).filter(|&i| b.mask[i]).collect(),
            None => (0..n).collect(),
        };
        let source = if pool.len() >= cfg.subsample_size { pool } else { (0..n).collect() };
        let subset: Vec<BearingPair> = sample(rng, source.len(), cfg.subsample_size)
            .iter()
            .map(|i| pairs[source[i]])
            .collect();
        let m = epipolar_normal_covariance(&rotation, &subset)?;
        let direction = match translation_from_rotation(&m) {
            Ok(u) => u,
            Err(RelPoseError::Degenerate) => match &best {
                Some(b) => b.direction,
                None => UnitDirection::from_host(Rotation::identity()),
            },
            Err(e) => return Err(e),
        };
        let hyp = Hypothesis::score(pairs, rotation, direction, threshold);
        if best.as_ref().is_none_or(|b| hyp.beats(b)) {
            best = Some(hyp);
        }
    }
    let mut best = best.expect("at least one hypothesis round");

    for _ in 0..cfg.refine_iterations {
        if best.count < 5 {
            break;
        }
        let inliers = best.inlier_pairs(pairs);
        let c = build_data_matrix(&inliers)?;
        let (r, u, st) = refine_with_data_matrix(&c, &best.rotation, &best.direction, w, lm);
        let candidate = Hypothesis::score(pairs, r, u, threshold);
        if candidate.cost >= best.cost && candidate.count <= best.count {
            break;
        }
        lm_status = Some(st);
        best = candidate;
    }

    let inliers = best.inlier_pairs(pairs);
    let (final_functional, status) = if best.count < cfg.min_inliers || inliers.is_empty() {
        (0.0, RelPoseStatus::TooFewInliers)
    } else {
        let c = build_data_matrix(&inliers)?;
        let value = super::functional_value(&c, &best.rotation, &best.direction);
        let m = epipolar_normal_covariance(&best.rotation, &inliers)?;
        let status = match translation_from_rotation(&m) {
            Ok(_) => RelPoseStatus::Converged,
            Err(_) => RelPoseStatus::Degenerate,
        };
        (value, status)
    };

    Ok(RelPoseResult {
        rotation: best.rotation,
        direction: best.direction,
        inlier_mask: best.mask,
        final_functional,
        status,
        lm_status,
    })
}
