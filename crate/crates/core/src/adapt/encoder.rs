//! Speaker encoder: a frozen verifier d-vector with a trainable projection,
//! summed with a strided convolution stack over the raw demo waveform.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::{Adam, AdamConfig, ParamStore, Tape, Tensor, Var};
use crate::checkpoint;
use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::seed;
use crate::verify::{Verifier, VerifierConfig};
use crate::wavenet::{optimize_step, random_window, PreparedUtterance, WaveNet, WaveNetConfig};

const PREFIX: &str = "enc.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Width of the d-vector projection MLP.
    pub hidden: usize,
    pub conv_channels: usize,
    /// One convolution per entry; kernel width equals the stride.
    pub strides: Vec<usize>,
    pub steps: u64,
    pub batch_size: usize,
    pub crop_samples: usize,
    pub lr: f64,
    pub clip_norm: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            conv_channels: 16,
            // 1024 samples per pooled frame, 256 ms at 4 kHz
            strides: vec![4, 4, 4, 2, 2, 2],
            steps: 2000,
            batch_size: 4,
            crop_samples: 512,
            lr: 1e-3,
            clip_norm: 10.0,
        }
    }
}

impl EncoderConfig {
    /// Shortest waveform that yields at least one pooled frame.
    pub fn min_samples(&self) -> usize {
        self.strides.iter().product()
    }
}

/// Precomputed encoder input for one demo utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderInput {
    pub dvector: Vec<f64>,
    /// `[2 x T]`: waveform row, then the per-sample voicing flag.
    pub signal: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub embedding_dim: usize,
    pub verifier: Verifier,
    /// Trainable parameters, all named under `enc.`.
    pub params: ParamStore,
}

fn name(part: &str) -> String {
    format!("{PREFIX}{part}")
}

fn conv_name(i: usize) -> String {
    name(&format!("conv{i}"))
}

fn conv_bias_name(i: usize) -> String {
    name(&format!("conv{i}_bias"))
}

/// Fresh encoder parameters under the `enc.` prefix.
pub fn init_encoder_params(cfg: &EncoderConfig, dvector_dim: usize, embedding_dim: usize, seed_value: u64) -> Result<ParamStore> {
    if cfg.strides.is_empty() || cfg.strides.contains(&0) {
        return Err(Error::Config("encoder needs at least one positive stride".into()));
    }
    let mut rng = seed::rng(seed_value, "encoder-init", 0);
    let kaiming = |rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize| {
        let b = (6.0 / fan_in as f64).sqrt();
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-b..b)).collect())
    };
    let (h, c, d) = (cfg.hidden, cfg.conv_channels, embedding_dim);
    let mut p = ParamStore::new();
    p.insert(name("a.w1"), kaiming(&mut rng, &[h, dvector_dim], dvector_dim)?, true)?;
    p.insert(name("a.b1"), Tensor::zeros(&[h]), true)?;
    p.insert(name("a.w2"), kaiming(&mut rng, &[d, h], h)?, true)?;
    p.insert(name("a.b2"), Tensor::zeros(&[d]), true)?;
    let mut c_in = 2;
    for (i, &s) in cfg.strides.iter().enumerate() {
        p.insert(conv_name(i), kaiming(&mut rng, &[c, c_in, s], c_in * s)?, true)?;
        p.insert(conv_bias_name(i), Tensor::zeros(&[c]), true)?;
        c_in = c;
    }
    p.insert(name("b.proj"), kaiming(&mut rng, &[d, c], c)?, true)?;
    p.insert(name("b.proj_bias"), Tensor::zeros(&[d]), true)?;
    Ok(p)
}

/// Both branches and their sum; `params` must hold the `enc.` names.
pub fn encoder_graph(tape: &mut Tape, params: &ParamStore, cfg: &EncoderConfig, input: &EncoderInput) -> Result<Var> {
    let t = input.signal.shape()[1];
    if t < cfg.min_samples() {
        return Err(Error::Insufficient(format!(
            "demo of {t} samples is shorter than the encoder minimum {}",
            cfg.min_samples()
        )));
    }
    let dv = tape.constant(Tensor::vector(input.dvector.clone()))?;
    let w1 = tape.param(params, &name("a.w1"))?;
    let b1 = tape.param(params, &name("a.b1"))?;
    let a = tape.matvec(w1, dv)?;
    let a = tape.add(a, b1)?;
    let a = tape.relu(a)?;
    let w2 = tape.param(params, &name("a.w2"))?;
    let b2 = tape.param(params, &name("a.b2"))?;
    let a = tape.matvec(w2, a)?;
    let a = tape.add(a, b2)?;

    let mut h = tape.constant(input.signal.clone())?;
    for (i, &s) in cfg.strides.iter().enumerate() {
        let w = tape.param(params, &conv_name(i))?;
        let b = tape.param(params, &conv_bias_name(i))?;
        h = tape.strided_conv1d(h, w, s)?;
        h = tape.add_bias(h, b)?;
        h = tape.relu(h)?;
    }
    let pooled = tape.mean_time(h)?;
    let wp = tape.param(params, &name("b.proj"))?;
    let bp = tape.param(params, &name("b.proj_bias"))?;
    let b = tape.matvec(wp, pooled)?;
    let b = tape.add(b, bp)?;
    tape.add(a, b)
}

impl Encoder {
    pub fn input(&self, u: &Utterance) -> Result<EncoderInput> {
        let samples = &u.waveform.samples;
        let voiced = u.voiced();
        let mut data = Vec::with_capacity(2 * samples.len());
        data.extend_from_slice(samples);
        data.extend((0..samples.len()).map(|t| {
            let f = (t / u.frame_stride).min(voiced.len().saturating_sub(1));
            if voiced.get(f).copied().unwrap_or(false) {
                1.0
            } else {
                0.0
            }
        }));
        Ok(EncoderInput {
            dvector: self.verifier.dvector(samples)?,
            signal: Tensor::new(vec![2, samples.len()], data)?,
        })
    }

    pub fn embed_input(&self, input: &EncoderInput) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let e = encoder_graph(&mut tape, &self.params, &self.config, input)?;
        Ok(tape.value(e).data().to_vec())
    }

    /// Predicted speaker embedding for one demo utterance.
    pub fn embed(&self, u: &Utterance) -> Result<Vec<f64>> {
        self.embed_input(&self.input(u)?)
    }
}

/// Jointly trained table-free WaveNet and encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderTraining {
    pub model_params: ParamStore,
    pub encoder: Encoder,
    pub trace: Vec<f64>,
}

/// Trains a WaveNet without a speaker table together with an encoder from
/// scratch. Every example draws a crop of one utterance and, as the demo,
/// a different random utterance of the same speaker. `raw` and `data` are
/// parallel slices.
pub fn train_encoder(
    model: &WaveNet,
    raw: &[&Utterance],
    data: &[PreparedUtterance],
    verifier: &Verifier,
    cfg: &EncoderConfig,
    seed_value: u64,
) -> Result<EncoderTraining> {
    if model.config.num_speakers != 0 {
        return Err(Error::Config("the encoder replaces the speaker table; num_speakers must be 0".into()));
    }
    if raw.len() != data.len() {
        return Err(Error::shape("train_encoder", format!("{} utterances, {} prepared", raw.len(), data.len())));
    }
    let mut by_speaker: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, u) in data.iter().enumerate() {
        by_speaker.entry(u.speaker_id).or_default().push(i);
    }
    if by_speaker.len() < 2 {
        return Err(Error::Insufficient(format!(
            "encoder training needs at least 2 speakers, got {}",
            by_speaker.len()
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut params = model.init_params(seed::derive(seed_value, "init", 0))?;
    let enc_params = init_encoder_params(cfg, verifier.config.dvector_dim, model.config.embedding_dim, seed_value)?;
    params.extend_prefixed(&enc_params, "")?;
    let mut encoder = Encoder {
        config: cfg.clone(),
        embedding_dim: model.config.embedding_dim,
        verifier: verifier.clone(),
        params: ParamStore::new(),
    };
    // verifier features are frozen, so each demo's input is computed once
    let inputs = raw.iter().map(|u| encoder.input(u)).collect::<Result<Vec<_>>>()?;

    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let history = model.config.receptive_field() - 1;
    let q = model.config.quantization;
    let mut trace = Vec::with_capacity(cfg.steps as usize);
    for step in 0..cfg.steps {
        let mut rng = seed::rng(seed_value, "encoder-step", step);
        let picks = (0..cfg.batch_size)
            .map(|_| {
                let i = rng.random_range(0..data.len());
                let same = &by_speaker[&data[i].speaker_id];
                let demo = if same.len() > 1 {
                    let others: Vec<usize> = same.iter().copied().filter(|&j| j != i).collect();
                    others[rng.random_range(0..others.len())]
                } else {
                    i
                };
                random_window(&mut rng, &data[i], cfg.crop_samples, history, q).map(|w| (demo, w))
            })
            .collect::<Result<Vec<_>>>()?;
        let loss = optimize_step(&mut params, &mut adam, step, cfg.batch_size, cfg.clip_norm, |tape, p, b| {
            let (demo, w) = &picks[b];
            let e = encoder_graph(tape, p, cfg, &inputs[*demo])?;
            model.nll(tape, p, w, e)
        })?;
        trace.push(loss);
        if (step + 1) % 100 == 0 {
            log::info!("encoder step {} nll {loss:.4}", step + 1);
        }
    }
    let mut model_params = ParamStore::new();
    for p in params.iter() {
        let target = if p.name.starts_with(PREFIX) {
            &mut encoder.params
        } else {
            &mut model_params
        };
        target.insert(p.name.clone(), p.tensor.clone(), true)?;
    }
    Ok(EncoderTraining {
        model_params,
        encoder,
        trace,
    })
}

const VERIFIER_PREFIX: &str = "verifier/";
const MODEL_PREFIX: &str = "model/";

/// Writes the encoder, its verifier backbone and the jointly trained
/// WaveNet core into one checkpoint.
pub fn save_encoder(path: &Path, model_config: &WaveNetConfig, t: &EncoderTraining) -> Result<()> {
    let mut all = t.encoder.params.clone();
    all.extend_prefixed(&t.encoder.verifier.params, VERIFIER_PREFIX)?;
    all.extend_prefixed(&t.model_params, MODEL_PREFIX)?;
    let meta = json!({
        "kind": "encoder",
        "config": t.encoder.config,
        "embedding_dim": t.encoder.embedding_dim,
        "verifier_config": t.encoder.verifier.config,
        "verifier_classes": t.encoder.verifier.classes,
        "model_config": model_config,
        "trace": t.trace,
    });
    checkpoint::save(path, &meta, &all)
}

pub fn load_encoder(path: &Path) -> Result<(WaveNetConfig, EncoderTraining)> {
    let ck = checkpoint::load(path)?;
    if ck.meta["kind"] != "encoder" {
        return Err(Error::format(path, "not an encoder checkpoint"));
    }
    let config: EncoderConfig = serde_json::from_value(ck.meta["config"].clone())?;
    let verifier_config: VerifierConfig = serde_json::from_value(ck.meta["verifier_config"].clone())?;
    let classes: Vec<u32> = serde_json::from_value(ck.meta["verifier_classes"].clone())?;
    let model_config: WaveNetConfig = serde_json::from_value(ck.meta["model_config"].clone())?;
    let embedding_dim: usize = serde_json::from_value(ck.meta["embedding_dim"].clone())?;
    let trace: Vec<f64> = serde_json::from_value(ck.meta["trace"].clone())?;
    let mut enc_params = ParamStore::new();
    for p in ck.params.iter().filter(|p| p.name.starts_with(PREFIX)) {
        enc_params.insert(p.name.clone(), p.tensor.clone(), true)?;
    }
    let mut verifier_params = ck.params.strip_prefix(VERIFIER_PREFIX)?;
    verifier_params.set_all_trainable(true);
    let encoder = Encoder {
        config,
        embedding_dim,
        verifier: Verifier {
            config: verifier_config,
            params: verifier_params,
            classes,
        },
        params: enc_params,
    };
    Ok((
        model_config,
        EncoderTraining {
            model_params: ck.params.strip_prefix(MODEL_PREFIX)?,
            encoder,
            trace,
        },
    ))
}
