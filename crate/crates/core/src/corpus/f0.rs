use serde::{Deserialize, Serialize};

use super::utterance::Utterance;
use crate::error::{Error, Result};

/// Floor on the log-f0 standard deviation of a speaker with (nearly)
/// constant pitch.
pub const STD_FLOOR: f64 = 1e-3;

/// Log-domain pitch statistics of one speaker over voiced frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeakerF0Stats {
    pub speaker_id: u32,
    pub mean: f64,
    pub std: f64,
}

/// Pooled statistics of log f0 over every voiced frame (`f0 > 0`).
pub fn compute_f0_stats<'a>(
    speaker_id: u32,
    utterances: impl IntoIterator<Item = &'a Utterance>,
) -> Result<SpeakerF0Stats> {
    let logs: Vec<f64> = utterances
        .into_iter()
        .flat_map(|u| u.f0_hz.iter().copied())
        .filter(|&f| f > 0.0)
        .map(f64::ln)
        .collect();
    stats_from_log_f0(speaker_id, &logs)
}

pub fn stats_from_log_f0(speaker_id: u32, logs: &[f64]) -> Result<SpeakerF0Stats> {
    if logs.is_empty() {
        return Err(Error::Empty("no voiced frames for f0 statistics"));
    }
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(SpeakerF0Stats {
        speaker_id,
        mean,
        std: var.sqrt().max(STD_FLOOR),
    })
}

/// Normalized log f0 per frame and the matching voicing flags. Unvoiced
/// frames map to 0.
pub fn normalize_f0(f0_hz: &[f64], stats: &SpeakerF0Stats) -> Result<(Vec<f64>, Vec<bool>)> {
    if stats.std <= 0.0 || !stats.std.is_finite() {
        return Err(Error::Degenerate(format!("f0 std {} for speaker {}", stats.std, stats.speaker_id)));
    }
    let voiced: Vec<bool> = f0_hz.iter().map(|&f| f > 0.0).collect();
    let norm = f0_hz
        .iter()
        .map(|&f| if f > 0.0 { (f.ln() - stats.mean) / stats.std } else { 0.0 })
        .collect();
    Ok((norm, voiced))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_speaker, generate_utterance, random_phoneme_sequence};

    fn utt_with_f0(f0: Vec<f64>) -> Utterance {
        let sp = generate_speaker(0, 0);
        let mut u = generate_utterance(&sp, &vec![1; f0.len()], 0, 8, 4000).unwrap();
        u.f0_hz = f0;
        u
    }

    #[test]
    fn hand_computed_log_stats() {
        let u = utt_with_f0(vec![4.6f64.exp(), 4.8f64.exp(), 5.0f64.exp()]);
        let s = compute_f0_stats(0, [&u]).unwrap();
        assert!((s.mean - 4.8).abs() < 1e-12);
        // sqrt(((-0.2)^2 + 0 + 0.2^2) / 3)
        assert!((s.std - (0.08f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((s.std - 0.1633).abs() < 1e-4);
    }

    #[test]
    fn constant_pitch_hits_floor() {
        let u = utt_with_f0(vec![150.0; 10]);
        let s = compute_f0_stats(0, [&u]).unwrap();
        assert!((s.mean - 150f64.ln()).abs() < 1e-12);
        assert_eq!(s.std, STD_FLOOR);
    }

    #[test]
    fn unvoiced_frames_do_not_count() {
        let a = utt_with_f0(vec![100.0, 120.0, 140.0]);
        let b = utt_with_f0(vec![100.0, 0.0, 120.0, 0.0, 140.0, 0.0]);
        assert_eq!(compute_f0_stats(0, [&a]).unwrap(), compute_f0_stats(0, [&b]).unwrap());
        assert!(compute_f0_stats(0, [&utt_with_f0(vec![0.0; 4])]).is_err());
    }

    #[test]
    fn exp_mean_normalizes_to_zero() {
        let stats = SpeakerF0Stats { speaker_id: 0, mean: 5.1, std: 0.2 };
        let (n, v) = normalize_f0(&[5.1f64.exp(); 6], &stats).unwrap();
        assert!(n.iter().all(|x| x.abs() < 1e-12));
        assert!(v.iter().all(|&b| b));
    }

    #[test]
    fn own_voiced_frames_are_standardized() {
        let sp = generate_speaker(3, 21);
        let utts: Vec<_> = (0..5)
            .map(|i| generate_utterance(&sp, &random_phoneme_sequence(50, i), i, 64, 4000).unwrap())
            .collect();
        let stats = compute_f0_stats(3, &utts).unwrap();
        let mut pooled = Vec::new();
        for u in &utts {
            let (n, v) = normalize_f0(&u.f0_hz, &stats).unwrap();
            pooled.extend(n.iter().zip(&v).filter(|(_, &b)| b).map(|(x, _)| *x));
        }
        let m = pooled.iter().sum::<f64>() / pooled.len() as f64;
        let sd = (pooled.iter().map(|x| (x - m).powi(2)).sum::<f64>() / pooled.len() as f64).sqrt();
        assert!(m.abs() <= 1e-10, "{m}");
        assert!((sd - 1.0).abs() <= 1e-10, "{sd}");
    }

    #[test]
    fn higher_pitched_speaker_normalizes_positive() {
        let a = generate_speaker(0, 5);
        let mut b = a.clone();
        b.speaker_id = 1;
        b.f0_mean = 2.0 * a.f0_mean;
        b.f0_std = 2.0 * a.f0_std;
        let seq = random_phoneme_sequence(60, 1);
        let ua = generate_utterance(&a, &seq, 2, 64, 8000).unwrap();
        let ub = generate_utterance(&b, &seq, 2, 64, 8000).unwrap();
        let stats_a = compute_f0_stats(0, [&ua]).unwrap();
        let (n, v) = normalize_f0(&ub.f0_hz, &stats_a).unwrap();
        let voiced: Vec<f64> = n.iter().zip(&v).filter(|(_, &b)| b).map(|(x, _)| *x).collect();
        assert!(voiced.iter().sum::<f64>() / voiced.len() as f64 > 0.0);
    }
}
