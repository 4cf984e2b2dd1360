use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{frame_observations, Scene};
use crate::pipeline::{Frame, ObservationProvider};
use crate::relpose5::jitter_rotation;

/// Replays a synthetic scene frame by frame; track ids are landmark
/// indices. With `gyro_noise_deg` set, every frame carries the true rotation
/// jittered by up to that many degrees per axis as its rotation prior.
#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    scene: Scene,
    pixel_sigma: f64,
    seed: u64,
    gyro_noise_deg: Option<f64>,
    gyro_rng: ChaCha8Rng,
    next: usize,
}

impl SyntheticSequence {
    pub fn new(scene: Scene, pixel_sigma: f64, seed: u64, gyro_noise_deg: Option<f64>) -> Self {
        let mut gyro_rng = ChaCha8Rng::seed_from_u64(seed);
        gyro_rng.set_stream(u64::MAX);
        Self { scene, pixel_sigma, seed, gyro_noise_deg, gyro_rng, next: 0 }
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }
}

impl ObservationProvider for SyntheticSequence {
    fn next_frame(&mut self) -> Option<Frame> {
        let index = self.next;
        if index >= self.scene.n_frames() {
            return None;
        }
        self.next += 1;
        let obs = frame_observations(&self.scene, index, self.pixel_sigma, self.seed).ok()?;
        let observations = obs.into_iter().enumerate().filter_map(|(j, b)| b.map(|b| (j as u64, b))).collect();
        let rotation_prior =
            self.gyro_noise_deg.map(|deg| jitter_rotation(&self.scene.poses[index].rotation, deg, &mut self.gyro_rng));
        Some(Frame { index, observations, rotation_prior })
    }
}
