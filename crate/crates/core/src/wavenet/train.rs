use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::WaveNetConfig;
use super::model::{PreparedUtterance, WaveNet, Window};
use crate::autodiff::{Adam, AdamConfig, AdamState, Gradients, ParamStore, Tape, Tensor, Var};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    /// Crops per optimizer step.
    pub batch_size: usize,
    /// Scored samples per crop; shorter utterances are used whole.
    pub crop_samples: usize,
    pub lr: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            crop_samples: 512,
            lr: 1e-3,
            clip_norm: 10.0,
        }
    }
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ParamStore,
    pub adam: AdamState,
    pub step: u64,
    /// Mean batch NLL of every completed step.
    pub trace: Vec<f64>,
}

/// A crop of `u` with up to `history` unscored samples of context in front.
pub fn random_window(rng: &mut impl Rng, u: &PreparedUtterance, crop: usize, history: usize, q: u16) -> Result<Window> {
    if crop == 0 || crop >= u.len() {
        return Window::full(u, q);
    }
    let start = rng.random_range(0..=u.len() - crop);
    Window::crop(u, start, crop, history, q)
}

/// One optimizer step over `batch` losses from `loss_fn`, averaged.
/// Non-finite values abort with a divergence error carrying `step`.
pub fn optimize_step<F>(
    params: &mut ParamStore,
    adam: &mut Adam,
    step: u64,
    batch: usize,
    clip_norm: f64,
    mut loss_fn: F,
) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore, usize) -> Result<Var>,
{
    let diverged = |e: Error| match e {
        Error::NonFinite(detail) => Error::Divergence { step, detail },
        other => other,
    };
    let mut grads = Gradients::new();
    let mut total = 0.0;
    for b in 0..batch {
        let mut tape = Tape::new();
        let loss = loss_fn(&mut tape, params, b).map_err(diverged)?;
        total += tape.scalar(loss);
        grads.merge(tape.backward(loss).map_err(diverged)?);
    }
    let mean = total / batch as f64;
    if !mean.is_finite() {
        return Err(Error::Divergence {
            step,
            detail: format!("loss {mean}"),
        });
    }
    grads.scale(1.0 / batch as f64);
    if clip_norm > 0.0 {
        grads.clip_global_norm(clip_norm);
    }
    adam.step(params, &grads)?;
    Ok(mean)
}

/// Multi-speaker maximum likelihood training of the WaveNet and its speaker
/// table. Each utterance's `speaker_id` is its table row. Passing `resume`
/// continues from a saved state; step `n` always draws from the same random
/// stream, so a resumed run matches an uninterrupted one.
pub fn train_multispeaker(
    model: &WaveNet,
    data: &[PreparedUtterance],
    tcfg: &TrainConfig,
    seed_value: u64,
    resume: Option<TrainState>,
) -> Result<TrainState> {
    let speakers: BTreeSet<u32> = data.iter().map(|u| u.speaker_id).collect();
    if speakers.len() < 2 {
        return Err(Error::Insufficient(format!(
            "multi-speaker training needs at least 2 speakers, got {}",
            speakers.len()
        )));
    }
    if let Some(&s) = speakers.iter().find(|&&s| s as usize >= model.config.num_speakers) {
        return Err(Error::Config(format!(
            "speaker {s} has no row in a table of {}",
            model.config.num_speakers
        )));
    }
    if tcfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut state = match resume {
        Some(s) => s,
        None => TrainState {
            params: model.init_params(seed::derive(seed_value, "init", 0))?,
            adam: AdamState::default(),
            step: 0,
            trace: Vec::new(),
        },
    };
    let mut adam = Adam::with_state(AdamConfig::with_lr(tcfg.lr), std::mem::take(&mut state.adam));
    let history = model.config.receptive_field() - 1;
    let q = model.config.quantization;
    while state.step < tcfg.steps {
        let mut rng = seed::rng(seed_value, "train-step", state.step);
        let windows = (0..tcfg.batch_size)
            .map(|_| {
                let u = &data[rng.random_range(0..data.len())];
                random_window(&mut rng, u, tcfg.crop_samples, history, q).map(|w| (u.speaker_id as usize, w))
            })
            .collect::<Result<Vec<_>>>()?;
        let loss = optimize_step(&mut state.params, &mut adam, state.step, tcfg.batch_size, tcfg.clip_norm, |tape, p, b| {
            let (row, w) = &windows[b];
            let e = model.table_embedding(tape, p, *row)?;
            model.nll(tape, p, w, e)
        })?;
        state.trace.push(loss);
        state.step += 1;
        if state.step % 100 == 0 {
            log::info!("train step {} nll {loss:.4}", state.step);
        }
    }
    state.adam = adam.state;
    Ok(state)
}

const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

/// Writes the model parameters together with optimizer moments, step
/// counter and loss trace.
pub fn save_train_state(path: &Path, config: &WaveNetConfig, state: &TrainState) -> Result<()> {
    let mut all = state.params.clone();
    for (prefix, moments) in [(ADAM_M, &state.adam.m), (ADAM_V, &state.adam.v)] {
        for (name, values) in moments {
            let shape = state.params.tensor(name)?.shape().to_vec();
            all.insert(format!("{prefix}{name}"), Tensor::new(shape, values.clone())?, false)?;
        }
    }
    let meta = json!({
        "kind": "wavenet",
        "config": config,
        "step": state.step,
        "adam_step": state.adam.step,
        "trace": state.trace,
    });
    checkpoint::save(path, &meta, &all)
}

pub fn load_train_state(path: &Path) -> Result<(WaveNetConfig, TrainState)> {
    let ck = checkpoint::load(path)?;
    let bad = |d: &str| Error::format(path, d.to_string());
    if ck.meta["kind"] != "wavenet" {
        return Err(bad("not a wavenet checkpoint"));
    }
    let config: WaveNetConfig = serde_json::from_value(ck.meta["config"].clone())?;
    let step = ck.meta["step"].as_u64().ok_or_else(|| bad("missing step"))?;
    let adam_step = ck.meta["adam_step"].as_u64().ok_or_else(|| bad("missing adam_step"))?;
    let trace: Vec<f64> = serde_json::from_value(ck.meta["trace"].clone())?;
    let mut params = ParamStore::new();
    let mut adam = AdamState {
        step: adam_step,
        ..AdamState::default()
    };
    for p in ck.params.iter() {
        if let Some(name) = p.name.strip_prefix(ADAM_M) {
            adam.m.insert(name.to_string(), p.tensor.data().to_vec());
        } else if let Some(name) = p.name.strip_prefix(ADAM_V) {
            adam.v.insert(name.to_string(), p.tensor.data().to_vec());
        } else {
            params.insert(p.name.clone(), p.tensor.clone(), true)?;
        }
    }
    Ok((
        config,
        TrainState {
            params,
            adam,
            step,
            trace,
        },
    ))
}
