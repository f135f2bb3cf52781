use rand::Rng;

use crate::autodiff::op_suite;
use crate::codec::MuLaw;
use crate::corpus::{compute_f0_stats, generate_speaker, generate_utterance, random_phoneme_sequence, SpeakerF0Stats};
use crate::error::Result;
use crate::seed;
use crate::wavenet::{nll_grad_check, PreparedUtterance, WaveNet, WaveNetConfig, HEAD_BIAS2, HEAD_CONV2};

/// Maximum relative error of one gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckLine {
    pub name: String,
    pub max_rel_error: f64,
}

/// Every differentiable op in isolation, then the full WaveNet NLL on a
/// `samples`-long utterance. The model's zero-initialized output layer gets
/// random values first so every path carries gradient.
pub fn grad_check_all(model_config: &WaveNetConfig, samples: usize, eps: f64, probes: usize, seed_value: u64) -> Result<Vec<GradCheckLine>> {
    let mut out: Vec<GradCheckLine> = op_suite(eps, probes, seed_value)?
        .into_iter()
        .map(|(name, r)| GradCheckLine {
            name: name.to_string(),
            max_rel_error: r.max_rel_error,
        })
        .collect();

    let cfg = WaveNetConfig {
        num_speakers: model_config.num_speakers.max(1),
        ..model_config.clone()
    };
    let model = WaveNet::new(cfg.clone())?;
    let mut params = model.init_params(seed::derive(seed_value, "grad-check-init", 0))?;
    let mut rng = seed::rng(seed_value, "grad-check-head", 0);
    for name in [HEAD_CONV2, HEAD_BIAS2] {
        params
            .get_mut(name)?
            .tensor
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-0.5..0.5));
    }
    let frames = samples.div_ceil(cfg.frame_stride).max(1);
    let speaker = generate_speaker(0, seed_value);
    let codes = random_phoneme_sequence(frames, seed_value);
    let u = generate_utterance(&speaker, &codes, seed_value, cfg.frame_stride, 4000)?;
    let stats = compute_f0_stats(0, [&u]).unwrap_or(SpeakerF0Stats {
        speaker_id: 0,
        mean: speaker.f0_mean.ln(),
        std: 0.05,
    });
    let codec = MuLaw::new(cfg.mu, cfg.quantization)?;
    let prepared = PreparedUtterance::new(&u, &stats, &codec, &cfg)?;
    let report = nll_grad_check(&model, &params, &prepared, eps, probes, seed_value)?;
    out.push(GradCheckLine {
        name: format!("wavenet_nll_{}_samples", prepared.len()),
        max_rel_error: report.max_rel_error,
    });
    Ok(out)
}
