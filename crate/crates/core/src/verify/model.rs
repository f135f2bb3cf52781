use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::frontend::{log_spectrogram, BINS};
use crate::checkpoint;
use crate::autodiff::{Adam, AdamConfig, ParamStore, Tape, Tensor, Var};
use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::seed;
use crate::wavenet::optimize_step;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierConfig {
    pub hidden: usize,
    /// d-vector dimension.
    pub dvector_dim: usize,
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplier on the unit d-vector before the classification layer.
    pub logit_scale: f64,
    /// Utterances per speaker kept out of training to measure accuracy.
    pub heldout_per_speaker: usize,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            dvector_dim: 32,
            steps: 600,
            batch_size: 8,
            lr: 3e-3,
            logit_scale: 10.0,
            heldout_per_speaker: 2,
        }
    }
}

/// Small convolutional speaker classifier whose penultimate layer, after L2
/// normalization, is the d-vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Verifier {
    pub config: VerifierConfig,
    pub params: ParamStore,
    /// Speaker id of each classification output.
    pub classes: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierReport {
    pub heldout_accuracy: f64,
    pub heldout_utterances: usize,
    pub trace: Vec<f64>,
}

fn init(cfg: &VerifierConfig, n_classes: usize, seed_value: u64) -> Result<ParamStore> {
    let mut rng = seed::rng(seed_value, "verifier-init", 0);
    let mut kaiming = |shape: &[usize], fan_in: usize| {
        let b = (6.0 / fan_in as f64).sqrt();
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-b..b)).collect())
    };
    let (h, d) = (cfg.hidden, cfg.dvector_dim);
    let mut p = ParamStore::new();
    p.insert("v.conv1", kaiming(&[h, BINS, 1], BINS)?, true)?;
    p.insert("v.bias1", Tensor::zeros(&[h]), true)?;
    p.insert("v.conv2", kaiming(&[h, h, 3], 3 * h)?, true)?;
    p.insert("v.bias2", Tensor::zeros(&[h]), true)?;
    p.insert("v.proj", kaiming(&[d, h], h)?, true)?;
    p.insert("v.proj_bias", Tensor::zeros(&[d]), true)?;
    p.insert("v.cls", kaiming(&[n_classes, d], d)?, true)?;
    p.insert("v.cls_bias", Tensor::zeros(&[n_classes]), true)?;
    Ok(p)
}

impl Verifier {
    /// Freshly initialized network, for wiring tests.
    pub fn untrained(config: VerifierConfig, classes: Vec<u32>, seed_value: u64) -> Result<Self> {
        let params = init(&config, classes.len(), seed_value)?;
        Ok(Self { config, params, classes })
    }

    /// Records the d-vector of a spectrogram on `tape`.
    pub fn dvector_var(&self, tape: &mut Tape, spec: &Tensor) -> Result<Var> {
        dvector_graph(tape, &self.params, spec)
    }

    pub fn dvector(&self, samples: &[f64]) -> Result<Vec<f64>> {
        let spec = log_spectrogram(samples)?;
        let mut tape = Tape::new();
        let v = self.dvector_var(&mut tape, &spec)?;
        Ok(tape.value(v).data().to_vec())
    }

    /// Most likely training speaker for `samples`.
    pub fn classify(&self, samples: &[f64]) -> Result<u32> {
        let spec = log_spectrogram(samples)?;
        let mut tape = Tape::new();
        let v = dvector_graph(&mut tape, &self.params, &spec)?;
        let logits = class_logits(&mut tape, &self.params, v, self.config.logit_scale)?;
        let z = tape.value(logits).data();
        let best = (0..z.len()).max_by(|&a, &b| z[a].total_cmp(&z[b])).expect("classes");
        Ok(self.classes[best])
    }

    /// The same network with every parameter frozen and prefixed, for use
    /// inside another model.
    pub fn frozen_params(&self, prefix: &str) -> Result<ParamStore> {
        let mut out = ParamStore::new();
        out.extend_prefixed(&self.params, prefix)?;
        out.set_all_trainable(false);
        Ok(out)
    }
}

/// Spectrogram to unit d-vector. Parameter names are looked up under the
/// `v.` prefix of `params`.
pub fn dvector_graph(tape: &mut Tape, params: &ParamStore, spec: &Tensor) -> Result<Var> {
    dvector_graph_prefixed(tape, params, spec, "")
}

pub(crate) fn dvector_graph_prefixed(tape: &mut Tape, params: &ParamStore, spec: &Tensor, prefix: &str) -> Result<Var> {
    let p = |n: &str| format!("{prefix}v.{n}");
    let x = tape.constant(spec.clone())?;
    let w1 = tape.param(params, &p("conv1"))?;
    let b1 = tape.param(params, &p("bias1"))?;
    let h = tape.causal_conv1d(x, w1, 1)?;
    let h = tape.add_bias(h, b1)?;
    let h = tape.relu(h)?;
    let w2 = tape.param(params, &p("conv2"))?;
    let b2 = tape.param(params, &p("bias2"))?;
    let h = tape.causal_conv1d(h, w2, 1)?;
    let h = tape.add_bias(h, b2)?;
    let h = tape.relu(h)?;
    let pooled = tape.mean_time(h)?;
    let wp = tape.param(params, &p("proj"))?;
    let bp = tape.param(params, &p("proj_bias"))?;
    let v = tape.matvec(wp, pooled)?;
    let v = tape.add(v, bp)?;
    tape.l2_normalize(v)
}

fn class_logits(tape: &mut Tape, params: &ParamStore, dvec: Var, scale: f64) -> Result<Var> {
    let scaled = tape.scale(dvec, scale)?;
    let wc = tape.param(params, "v.cls")?;
    let bc = tape.param(params, "v.cls_bias")?;
    let z = tape.matvec(wc, scaled)?;
    let z = tape.add(z, bc)?;
    let n = tape.value(z).len();
    tape.reshape(z, &[n, 1])
}

/// Trains a speaker classifier on `utterances` (at least four speakers).
/// The last `heldout_per_speaker` utterances of each speaker are excluded
/// from training and used to report accuracy.
pub fn train_verifier(utterances: &[&Utterance], cfg: &VerifierConfig, seed_value: u64) -> Result<(Verifier, VerifierReport)> {
    let mut by_speaker: BTreeMap<u32, Vec<&Utterance>> = BTreeMap::new();
    for u in utterances {
        by_speaker.entry(u.speaker_id).or_default().push(u);
    }
    if by_speaker.len() < 4 {
        return Err(Error::Insufficient(format!(
            "verifier training needs at least 4 speakers, got {}",
            by_speaker.len()
        )));
    }
    let classes: Vec<u32> = by_speaker.keys().copied().collect();
    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for (label, utts) in by_speaker.values().enumerate() {
        if utts.len() <= cfg.heldout_per_speaker {
            return Err(Error::Insufficient(format!(
                "speaker {} has {} utterances, more than {} are required",
                utts[0].speaker_id,
                utts.len(),
                cfg.heldout_per_speaker
            )));
        }
        let cut = utts.len() - cfg.heldout_per_speaker;
        for (i, u) in utts.iter().enumerate() {
            let item = (label, log_spectrogram(&u.waveform.samples)?, u.waveform.samples.as_slice());
            if i < cut {
                train.push(item);
            } else {
                heldout.push(item);
            }
        }
    }
    let mut params = init(cfg, classes.len(), seed_value)?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut trace = Vec::with_capacity(cfg.steps as usize);
    for step in 0..cfg.steps {
        let mut rng = seed::rng(seed_value, "verifier-step", step);
        let picks: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..train.len())).collect();
        let loss = optimize_step(&mut params, &mut adam, step, cfg.batch_size, 0.0, |tape, p, b| {
            let (label, spec, _) = &train[picks[b]];
            let v = dvector_graph(tape, p, spec)?;
            let z = class_logits(tape, p, v, cfg.logit_scale)?;
            tape.softmax_cross_entropy(z, &[*label])
        })?;
        trace.push(loss);
    }
    let verifier = Verifier {
        config: cfg.clone(),
        params,
        classes,
    };
    let correct = heldout
        .iter()
        .map(|(label, _, samples)| verifier.classify(samples).map(|s| s == verifier.classes[*label]))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|&ok| ok)
        .count();
    let report = VerifierReport {
        heldout_accuracy: correct as f64 / heldout.len().max(1) as f64,
        heldout_utterances: heldout.len(),
        trace,
    };
    Ok((verifier, report))
}

/// Saves the verifier as a checkpoint with its config and class list.
pub fn save_verifier(path: &Path, v: &Verifier, report: &VerifierReport) -> Result<()> {
    let meta = json!({
        "kind": "verifier",
        "config": v.config,
        "classes": v.classes,
        "report": report,
    });
    checkpoint::save(path, &meta, &v.params)
}

pub fn load_verifier(path: &Path) -> Result<(Verifier, VerifierReport)> {
    let ck = checkpoint::load(path)?;
    if ck.meta["kind"] != "verifier" {
        return Err(Error::format(path, "not a verifier checkpoint"));
    }
    let verifier = Verifier {
        config: serde_json::from_value(ck.meta["config"].clone())?,
        params: ck.params,
        classes: serde_json::from_value(ck.meta["classes"].clone())?,
    };
    Ok((verifier, serde_json::from_value(ck.meta["report"].clone())?))
}
