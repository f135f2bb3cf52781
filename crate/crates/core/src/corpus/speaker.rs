use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;

/// Number of harmonics in a speaker's timbre.
pub const HARMONICS: usize = 8;

/// Parametric voice: harmonic timbre plus pitch statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpeaker {
    pub speaker_id: u32,
    /// Non-negative, unit L1 norm; the fundamental is always the largest.
    pub harmonic_amplitudes: Vec<f64>,
    pub f0_mean: f64,
    pub f0_std: f64,
    pub vibrato_rate: f64,
    pub vibrato_depth: f64,
}

pub const F0_MIN_HZ: f64 = 90.0;
pub const F0_MAX_HZ: f64 = 300.0;

/// Deterministic speaker for `seed`.
pub fn generate_speaker(speaker_id: u32, seed: u64) -> SyntheticSpeaker {
    let mut rng = seed::rng(seed, "speaker", 0);
    let f0_mean = rng.random_range(F0_MIN_HZ..=F0_MAX_HZ);
    let f0_std = f0_mean * rng.random_range(0.02..0.06);
    let mut amps: Vec<f64> = (0..HARMONICS)
        .map(|h| rng.random_range(0.05..1.0) / (1.0 + 0.25 * h as f64))
        .collect();
    let max_upper = amps[1..].iter().cloned().fold(0.0, f64::max);
    amps[0] = amps[0].max(max_upper * rng.random_range(1.15..1.6));
    let total: f64 = amps.iter().sum();
    amps.iter_mut().for_each(|a| *a /= total);
    SyntheticSpeaker {
        speaker_id,
        harmonic_amplitudes: amps,
        f0_mean,
        f0_std,
        vibrato_rate: rng.random_range(3.0..7.0),
        vibrato_depth: rng.random_range(0.005..0.03),
    }
}

impl SyntheticSpeaker {
    /// Identity feature vector: `(log f0_mean, harmonic amplitudes...)`.
    pub fn identity_features(&self) -> Vec<f64> {
        let mut v = vec![self.f0_mean.ln()];
        v.extend_from_slice(&self.harmonic_amplitudes);
        v
    }
}
