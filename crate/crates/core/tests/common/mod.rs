//! Tiny end-to-end configuration shared by the integration tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use fewshot_tts::adapt::{AdaptConfig, EncoderConfig};
use fewshot_tts::corpus::CorpusSpec;
use fewshot_tts::pipeline::{EvalConfig, ExperimentConfig};
use fewshot_tts::verify::VerifierConfig;
use fewshot_tts::wavenet::{TrainConfig, WaveNetConfig};

/// Two training and two held-out speakers, a few hundred milliseconds of
/// audio each, and networks small enough that the whole pipeline runs in
/// about a second.
pub fn tiny_config(out: &Path) -> ExperimentConfig {
    let corpus = CorpusSpec {
        train_speakers: 2,
        heldout_speakers: 2,
        verifier_speakers: 4,
        train_utterances: 4,
        heldout_utterances: 12,
        verifier_utterances: 4,
        min_frames: 20,
        max_frames: 24,
        test_count: 3,
        ..CorpusSpec::default()
    };
    let model = WaveNetConfig {
        residual_channels: 4,
        skip_channels: 8,
        dilation_cycle: vec![1, 2, 4],
        cycles: 1,
        embedding_dim: 4,
        num_speakers: 2,
        ..WaveNetConfig::default()
    };
    ExperimentConfig {
        corpus,
        model,
        train: TrainConfig {
            steps: 6,
            batch_size: 2,
            crop_samples: 128,
            ..TrainConfig::default()
        },
        verifier: VerifierConfig {
            hidden: 8,
            dvector_dim: 4,
            steps: 10,
            batch_size: 4,
            heldout_per_speaker: 1,
            ..VerifierConfig::default()
        },
        encoder: EncoderConfig {
            hidden: 4,
            conv_channels: 4,
            steps: 4,
            batch_size: 2,
            crop_samples: 128,
            ..EncoderConfig::default()
        },
        adapt: AdaptConfig {
            emb_steps: 4,
            all_steps: 4,
            eval_interval: 2,
            patience: 1,
            batch_size: 2,
            crop_samples: 128,
            ..AdaptConfig::default()
        },
        eval: EvalConfig {
            demo_seconds: vec![0.5, 2.0],
            synth_per_speaker: 2,
            ..EvalConfig::default()
        },
        out_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

/// Relative paths and contents of every regular file under `root`, sorted.
pub fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
