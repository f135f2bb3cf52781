use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::speaker::{SyntheticSpeaker, HARMONICS};
use crate::codec::Waveform;
use crate::error::{Error, Result};
use crate::seed;

/// Size of the phoneme inventory.
pub const PHONEME_CLASSES: usize = 16;
/// Code 0 is silence.
pub const SILENCE: u16 = 0;
/// Codes `1..FIRST_UNVOICED` are voiced; the rest are noise-excited.
pub const FIRST_UNVOICED: u16 = 12;
const PEAK: f64 = 0.95;
const PCM_STEPS: f64 = 32767.0;
const RAMP: usize = 16;

/// Per-phoneme excitation recipe, fixed for the whole corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeTemplate {
    pub voiced: bool,
    pub amplitude: f64,
    /// Multiplier on each harmonic of the speaker's timbre.
    pub harmonic_gain: [f64; HARMONICS],
    pub noise_gain: f64,
    /// One-pole smoothing coefficient applied to the noise excitation.
    pub noise_pole: f64,
}

pub fn phoneme_template(code: u16) -> PhonemeTemplate {
    if code == SILENCE {
        return PhonemeTemplate {
            voiced: false,
            amplitude: 0.0,
            harmonic_gain: [0.0; HARMONICS],
            noise_gain: 0.0,
            noise_pole: 0.0,
        };
    }
    let mut rng = seed::rng(0x5EED_F00D, "phoneme", code as u64);
    let voiced = code < FIRST_UNVOICED;
    let mut harmonic_gain = [1.0; HARMONICS];
    for g in harmonic_gain.iter_mut().skip(1) {
        *g = rng.random_range(0.3..1.0);
    }
    PhonemeTemplate {
        voiced,
        amplitude: if voiced {
            rng.random_range(0.55..1.0)
        } else {
            rng.random_range(0.15..0.35)
        },
        harmonic_gain,
        noise_gain: if voiced { 0.02 } else { 1.0 },
        noise_pole: rng.random_range(-0.6..0.8),
    }
}

pub fn is_voiced_code(code: u16) -> bool {
    code != SILENCE && code < FIRST_UNVOICED
}

/// One synthetic utterance with frame-aligned features.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: u32,
    pub waveform: Waveform,
    pub phoneme_codes: Vec<u16>,
    /// Raw f0 in Hz per frame; 0 on unvoiced frames.
    pub f0_hz: Vec<f64>,
    pub frame_stride: usize,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.phoneme_codes.len()
    }

    pub fn voiced(&self) -> Vec<bool> {
        self.f0_hz.iter().map(|&f| f > 0.0).collect()
    }
}

/// Random frame-level phoneme sequence made of short segments.
pub fn random_phoneme_sequence(frames: usize, seed: u64) -> Vec<u16> {
    let mut rng = seed::rng(seed, "phonemes", 0);
    let mut out = Vec::with_capacity(frames);
    while out.len() < frames {
        let len = rng.random_range(2..=6);
        let roll: f64 = rng.random();
        let code = if roll < 0.12 {
            SILENCE
        } else if roll < 0.8 {
            rng.random_range(1..FIRST_UNVOICED)
        } else {
            rng.random_range(FIRST_UNVOICED..PHONEME_CLASSES as u16)
        };
        out.extend(std::iter::repeat_n(code, len));
    }
    out.truncate(frames);
    out
}

/// Additive-harmonic rendering of `phoneme_seq` in `speaker`'s voice.
///
/// The f0 contour is a smooth log-domain AR(1) walk around the speaker mean
/// with sinusoidal vibrato, constant within each frame. Samples are snapped
/// to the 16-bit PCM grid so that WAV storage is lossless.
pub fn generate_utterance(
    speaker: &SyntheticSpeaker,
    phoneme_seq: &[u16],
    seed: u64,
    frame_stride: usize,
    sample_rate: u32,
) -> Result<Utterance> {
    if phoneme_seq.is_empty() {
        return Err(Error::Empty("phoneme sequence"));
    }
    if frame_stride == 0 || sample_rate == 0 {
        return Err(Error::Config("frame stride and sample rate must be positive".into()));
    }
    if let Some(&bad) = phoneme_seq.iter().find(|&&c| c as usize >= PHONEME_CLASSES) {
        return Err(Error::OutOfRange {
            what: "phoneme code",
            detail: format!("{bad} not in [0, {PHONEME_CLASSES})"),
        });
    }
    let mut rng = seed::rng(seed, "utterance", speaker.speaker_id as u64);
    let sr = sample_rate as f64;
    let frames = phoneme_seq.len();
    let templates: Vec<PhonemeTemplate> = (0..PHONEME_CLASSES as u16).map(phoneme_template).collect();

    let sigma = (1.0 + speaker.f0_std / speaker.f0_mean).ln();
    let rho: f64 = 0.9;
    let mut walk: f64 = StandardNormal.sample(&mut rng);
    let vib_phase = rng.random_range(0.0..2.0 * PI);
    let mut f0_hz = Vec::with_capacity(frames);
    for (f, &code) in phoneme_seq.iter().enumerate() {
        let z: f64 = StandardNormal.sample(&mut rng);
        walk = rho * walk + (1.0 - rho * rho).sqrt() * z;
        if is_voiced_code(code) {
            let t = (f * frame_stride) as f64 / sr;
            let vibrato = 1.0 + speaker.vibrato_depth * (2.0 * PI * speaker.vibrato_rate * t + vib_phase).sin();
            let f0 = speaker.f0_mean * (sigma * walk).exp() * vibrato;
            f0_hz.push(f0.clamp(0.5 * speaker.f0_mean, sr / 4.0));
        } else {
            f0_hz.push(0.0);
        }
    }

    let mut samples = Vec::with_capacity(frames * frame_stride);
    let mut phase = rng.random_range(0.0..2.0 * PI);
    let mut noise_state = 0.0;
    let mut prev_amp = 0.0;
    for (f, &code) in phoneme_seq.iter().enumerate() {
        let tpl = &templates[code as usize];
        let f0 = f0_hz[f];
        let weights: Vec<f64> = (0..HARMONICS)
            .map(|h| {
                if tpl.voiced && (h + 1) as f64 * f0 < sr / 2.0 {
                    speaker.harmonic_amplitudes[h] * tpl.harmonic_gain[h]
                } else {
                    0.0
                }
            })
            .collect();
        let norm: f64 = weights.iter().sum::<f64>().max(1e-12);
        for n in 0..frame_stride {
            let ramp = (n as f64 / RAMP as f64).min(1.0);
            let amp = prev_amp + (tpl.amplitude - prev_amp) * ramp;
            let mut s = 0.0;
            if tpl.voiced {
                phase = (phase + 2.0 * PI * f0 / sr) % (2.0 * PI);
                s += weights
                    .iter()
                    .enumerate()
                    .map(|(h, w)| w * ((h + 1) as f64 * phase).sin())
                    .sum::<f64>()
                    / norm;
            }
            let white: f64 = StandardNormal.sample(&mut rng);
            noise_state = tpl.noise_pole * noise_state + (1.0 - tpl.noise_pole.abs()) * white;
            s += tpl.noise_gain * noise_state;
            samples.push(amp * s);
        }
        prev_amp = tpl.amplitude;
    }

    // The loudest sample lands exactly on the largest grid point <= PEAK.
    let peak = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let peak_steps = (PEAK * PCM_STEPS).floor();
    let gain = if peak > 0.0 { peak_steps / peak } else { 0.0 };
    for s in &mut samples {
        *s = (*s * gain).round() / PCM_STEPS;
    }
    Ok(Utterance {
        id: String::new(),
        speaker_id: speaker.speaker_id,
        waveform: Waveform::new(samples, sample_rate)?,
        phoneme_codes: phoneme_seq.to_vec(),
        f0_hz,
        frame_stride,
    })
}
