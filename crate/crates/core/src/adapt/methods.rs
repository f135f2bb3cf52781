use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::encoder::Encoder;
use super::voice::{AdaptedVoice, BaseModel, Method, Provenance};
use crate::autodiff::{Adam, AdamConfig, ParamStore, Tensor};
use crate::corpus::{SpeakerF0Stats, Utterance};
use crate::error::{Error, Result};
use crate::seed;
use crate::wavenet::{optimize_step, random_window, PreparedUtterance, WaveNet, SPEAKER_TABLE};

/// Name of the new embedding inside an adaptation's working store.
pub const ADAPT_EMBEDDING: &str = "adapt.embedding";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub emb_steps: u64,
    pub emb_lr: f64,
    pub all_steps: u64,
    pub all_lr: f64,
    /// Non-improving holdout evaluations tolerated before stopping.
    pub patience: u64,
    /// Optimizer steps between holdout evaluations.
    pub eval_interval: u64,
    pub batch_size: usize,
    pub crop_samples: usize,
    pub clip_norm: f64,
    /// Standard deviation of the noise added to the mean table row.
    pub init_noise: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            emb_steps: 2000,
            emb_lr: 1e-2,
            all_steps: 100,
            all_lr: 1e-4,
            patience: 5,
            eval_interval: 10,
            batch_size: 4,
            crop_samples: 512,
            clip_norm: 10.0,
            init_noise: 0.01,
        }
    }
}

/// Per-sample NLL over whole utterances.
pub fn mean_nll(model: &WaveNet, params: &ParamStore, utts: &[PreparedUtterance], e: &[f64]) -> Result<f64> {
    if utts.is_empty() {
        return Err(Error::Empty("utterances to score"));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for u in utts {
        total += model.utterance_nll(params, u, e)? * u.len() as f64;
        n += u.len();
    }
    Ok(total / n as f64)
}

fn ids(utts: &[PreparedUtterance]) -> Vec<String> {
    utts.iter().map(|u| u.id.clone()).collect()
}

fn single_speaker(utts: &[PreparedUtterance]) -> Result<u32> {
    let first = utts.first().ok_or(Error::Empty("demo utterances"))?.speaker_id;
    if let Some(u) = utts.iter().find(|u| u.speaker_id != first) {
        return Err(Error::Config(format!(
            "demos mix speakers {first} and {}",
            u.speaker_id
        )));
    }
    Ok(first)
}

/// Mean of the trained table rows plus `N(0, noise^2)` per coordinate.
pub fn initial_embedding(params: &ParamStore, noise: f64, seed_value: u64) -> Result<Vec<f64>> {
    let table = params.tensor(SPEAKER_TABLE)?;
    let (rows, d) = table
        .dims2()
        .ok_or_else(|| Error::shape("initial_embedding", format!("table {:?}", table.shape())))?;
    let mut rng = seed::rng(seed_value, "sea-emb-init", 0);
    Ok((0..d)
        .map(|j| {
            let mean = (0..rows).map(|r| table.row(r)[j]).sum::<f64>() / rows as f64;
            let z: f64 = StandardNormal.sample(&mut rng);
            mean + noise * z
        })
        .collect())
}

/// Adam on the store's trainable entries over random demo crops, with the
/// embedding read from [`ADAPT_EMBEDDING`].
fn fit_steps(
    model: &WaveNet,
    work: &mut ParamStore,
    adam: &mut Adam,
    demos: &[PreparedUtterance],
    cfg: &AdaptConfig,
    stream: &str,
    seed_value: u64,
    steps: std::ops::Range<u64>,
) -> Result<()> {
    let history = model.config.receptive_field() - 1;
    let q = model.config.quantization;
    for step in steps {
        let mut rng = seed::rng(seed_value, stream, step);
        let windows = (0..cfg.batch_size)
            .map(|_| {
                let u = &demos[rng.random_range(0..demos.len())];
                random_window(&mut rng, u, cfg.crop_samples, history, q)
            })
            .collect::<Result<Vec<_>>>()?;
        optimize_step(work, adam, step, cfg.batch_size, cfg.clip_norm, |tape, p, b| {
            let e = tape.param(p, ADAPT_EMBEDDING)?;
            model.nll(tape, p, &windows[b], e)
        })?;
    }
    Ok(())
}

/// Fits only a new speaker embedding to the demos; the network weights are
/// frozen and never copied into the result.
pub fn sea_emb(
    model: &WaveNet,
    params: &ParamStore,
    demos: &[PreparedUtterance],
    f0_stats: SpeakerF0Stats,
    cfg: &AdaptConfig,
    seed_value: u64,
) -> Result<AdaptedVoice> {
    let speaker_id = single_speaker(demos)?;
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let e0 = initial_embedding(params, cfg.init_noise, seed_value)?;
    let mut work = params.clone();
    work.set_all_trainable(false);
    work.insert(ADAPT_EMBEDDING, Tensor::vector(e0), true)?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.emb_lr));
    fit_steps(model, &mut work, &mut adam, demos, cfg, "sea-emb-step", seed_value, 0..cfg.emb_steps)?;
    let e = work.tensor(ADAPT_EMBEDDING)?.data().to_vec();
    let demo_nll = mean_nll(model, params, demos, &e)?;
    Ok(AdaptedVoice {
        embedding: e,
        params: None,
        base: BaseModel::Table,
        f0_stats,
        provenance: Provenance {
            method: Method::Emb,
            speaker_id,
            seed: seed_value,
            demo_ids: ids(demos),
            holdout_ids: Vec::new(),
            steps: cfg.emb_steps,
            demo_nll,
            holdout_nll: None,
            holdout_curve: Vec::new(),
            best_step: cfg.emb_steps,
        },
    })
}

/// Fine-tunes the embedding and every network weight, starting from a
/// SEA-Emb result, with early stopping on the holdout NLL. The returned
/// snapshot is the one with the lowest holdout NLL seen, the starting point
/// included.
pub fn sea_all(
    model: &WaveNet,
    params: &ParamStore,
    demos: &[PreparedUtterance],
    holdout: &[PreparedUtterance],
    init: &AdaptedVoice,
    cfg: &AdaptConfig,
    seed_value: u64,
) -> Result<AdaptedVoice> {
    if holdout.is_empty() {
        return Err(Error::Missing("holdout utterances for early stopping".into()));
    }
    if init.provenance.method != Method::Emb || init.params.is_some() {
        return Err(Error::Missing("a SEA-Emb result to initialize from".into()));
    }
    let speaker_id = single_speaker(demos)?;
    if single_speaker(holdout)? != speaker_id || init.provenance.speaker_id != speaker_id {
        return Err(Error::Config("demos, holdout and initialization must share one speaker".into()));
    }
    if cfg.eval_interval == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("evaluation interval and batch size must be positive".into()));
    }
    let mut work = params.clone();
    work.set_all_trainable(true);
    work.insert(ADAPT_EMBEDDING, Tensor::vector(init.embedding.clone()), true)?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.all_lr));

    let holdout_of = |w: &ParamStore| -> Result<f64> {
        let e = w.tensor(ADAPT_EMBEDDING)?.data().to_vec();
        mean_nll(model, w, holdout, &e)
    };
    let mut best = (0u64, work.clone(), holdout_of(&work)?);
    let mut curve = vec![(0, best.2)];
    let mut bad = 0;
    let mut step = 0;
    while step < cfg.all_steps {
        let next = (step + cfg.eval_interval).min(cfg.all_steps);
        fit_steps(model, &mut work, &mut adam, demos, cfg, "sea-all-step", seed_value, step..next)?;
        step = next;
        let h = holdout_of(&work)?;
        curve.push((step, h));
        if h < best.2 {
            best = (step, work.clone(), h);
            bad = 0;
        } else {
            bad += 1;
            if bad > cfg.patience {
                break;
            }
        }
    }
    let (best_step, snapshot, holdout_nll) = best;
    let e = snapshot.tensor(ADAPT_EMBEDDING)?.data().to_vec();
    let mut tuned = snapshot.without(&[ADAPT_EMBEDDING]);
    tuned.set_all_trainable(true);
    let demo_nll = mean_nll(model, &tuned, demos, &e)?;
    Ok(AdaptedVoice {
        embedding: e,
        params: Some(tuned),
        base: BaseModel::Table,
        f0_stats: init.f0_stats,
        provenance: Provenance {
            method: Method::All,
            speaker_id,
            seed: seed_value,
            demo_ids: ids(demos),
            holdout_ids: ids(holdout),
            steps: step,
            demo_nll,
            holdout_nll: Some(holdout_nll),
            holdout_curve: curve,
            best_step,
        },
    })
}

/// Mean encoder output over the demos. No optimization takes place; the
/// demos are averaged in id order so the result does not depend on the
/// order they are passed in.
pub fn sea_enc_predict(
    encoder: &Encoder,
    model: &WaveNet,
    model_params: &ParamStore,
    demos: &[&Utterance],
    prepared: &[PreparedUtterance],
    f0_stats: SpeakerF0Stats,
    seed_value: u64,
) -> Result<AdaptedVoice> {
    let speaker_id = demos.first().ok_or(Error::Empty("demo utterances"))?.speaker_id;
    if demos.iter().any(|u| u.speaker_id != speaker_id) {
        return Err(Error::Config("demos mix speakers".into()));
    }
    let mut ordered: Vec<&Utterance> = demos.to_vec();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    let mut e = vec![0.0; encoder.embedding_dim];
    for u in &ordered {
        for (acc, v) in e.iter_mut().zip(encoder.embed(u)?) {
            *acc += v;
        }
    }
    let n = ordered.len() as f64;
    e.iter_mut().for_each(|v| *v /= n);
    let demo_nll = mean_nll(model, model_params, prepared, &e)?;
    Ok(AdaptedVoice {
        embedding: e,
        params: None,
        base: BaseModel::Encoder,
        f0_stats,
        provenance: Provenance {
            method: Method::Enc,
            speaker_id,
            seed: seed_value,
            demo_ids: ordered.iter().map(|u| u.id.clone()).collect(),
            holdout_ids: Vec::new(),
            steps: 0,
            demo_nll,
            holdout_nll: None,
            holdout_curve: Vec::new(),
            best_step: 0,
        },
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::codec::MuLaw;
    use crate::corpus::{compute_f0_stats, generate_speaker, generate_utterance, random_phoneme_sequence};
    use crate::wavenet::{train_multispeaker, table_row, TrainConfig, WaveNetConfig};

    pub(crate) fn tiny() -> WaveNetConfig {
        WaveNetConfig {
            quantization: 16,
            residual_channels: 4,
            skip_channels: 6,
            dilation_cycle: vec![1, 2, 4],
            cycles: 1,
            embedding_dim: 3,
            frame_stride: 8,
            num_speakers: 3,
            ..WaveNetConfig::default()
        }
    }

    /// `n` utterances of one synthetic speaker, raw and prepared.
    pub(crate) fn speaker_data(
        cfg: &WaveNetConfig,
        speaker_id: u32,
        n: usize,
        frames: usize,
    ) -> (Vec<Utterance>, Vec<PreparedUtterance>, SpeakerF0Stats) {
        let sp = generate_speaker(speaker_id, 100 + speaker_id as u64);
        let raw: Vec<Utterance> = (0..n)
            .map(|i| {
                let s = 1000 * speaker_id as u64 + i as u64;
                let mut u = generate_utterance(&sp, &random_phoneme_sequence(frames, s), s, cfg.frame_stride, 4000).unwrap();
                u.id = format!("spk{speaker_id:02}_utt{i:03}");
                u
            })
            .collect();
        let stats = compute_f0_stats(speaker_id, raw.iter()).unwrap();
        let codec = MuLaw::new(cfg.mu, cfg.quantization).unwrap();
        let prepared = raw.iter().map(|u| PreparedUtterance::new(u, &stats, &codec, cfg).unwrap()).collect();
        (raw, prepared, stats)
    }

    fn quick() -> AdaptConfig {
        AdaptConfig {
            emb_steps: 60,
            emb_lr: 5e-2,
            all_steps: 40,
            all_lr: 3e-3,
            patience: 2,
            eval_interval: 5,
            batch_size: 2,
            crop_samples: 48,
            ..AdaptConfig::default()
        }
    }

    /// Tiny model trained on speakers 0..3, returned with its training data.
    fn pretrained() -> (WaveNet, ParamStore, Vec<PreparedUtterance>) {
        let model = WaveNet::new(tiny()).unwrap();
        let data: Vec<PreparedUtterance> = (0..3).flat_map(|s| speaker_data(&model.config, s, 4, 14).1).collect();
        let tcfg = TrainConfig {
            steps: 150,
            batch_size: 2,
            crop_samples: 64,
            lr: 1e-2,
            clip_norm: 10.0,
        };
        let state = train_multispeaker(&model, &data, &tcfg, 3, None).unwrap();
        (model, state.params, data)
    }

    #[test]
    fn sea_emb_leaves_weights_untouched_and_lowers_nll() {
        let (model, params, _) = pretrained();
        let before = params.clone();
        let (_, demos, stats) = speaker_data(&model.config, 9, 3, 14);
        let cfg = quick();
        let v = sea_emb(&model, &params, &demos, stats, &cfg, 5).unwrap();
        assert_eq!(params, before);
        assert!(v.params.is_none());
        assert_eq!(v.provenance.steps, cfg.emb_steps);
        let e0 = initial_embedding(&params, cfg.init_noise, 5).unwrap();
        assert!(v.provenance.demo_nll < mean_nll(&model, &params, &demos, &e0).unwrap());
        assert_eq!(v, sea_emb(&model, &params, &demos, stats, &cfg, 5).unwrap());
    }

    #[test]
    fn initial_embedding_is_mean_row_plus_small_noise() {
        let (_, params, _) = pretrained();
        let rows: Vec<Vec<f64>> = (0..3).map(|r| table_row(&params, r).unwrap()).collect();
        let exact = initial_embedding(&params, 0.0, 1).unwrap();
        for (j, v) in exact.iter().enumerate() {
            let mean = (rows[0][j] + rows[1][j] + rows[2][j]) / 3.0;
            assert!((v - mean).abs() < 1e-15);
        }
        let noisy = initial_embedding(&params, 0.01, 1).unwrap();
        assert!(noisy.iter().zip(&exact).all(|(a, b)| (a - b).abs() < 0.06));
        assert_ne!(noisy, exact);
    }

    #[test]
    fn self_adaptation_recovers_training_nll() {
        let (model, params, data) = pretrained();
        let own: Vec<PreparedUtterance> = data.iter().filter(|u| u.speaker_id == 1).cloned().collect();
        let table = mean_nll(&model, &params, &own, &table_row(&params, 1).unwrap()).unwrap();
        let stats = SpeakerF0Stats { speaker_id: 1, mean: 0.0, std: 1.0 };
        let cfg = AdaptConfig { emb_steps: 200, ..quick() };
        let v = sea_emb(&model, &params, &own, stats, &cfg, 8).unwrap();
        assert!(v.provenance.demo_nll <= 1.05 * table, "{} vs {table}", v.provenance.demo_nll);
    }

    #[test]
    fn sea_all_chain_and_best_snapshot() {
        let (model, params, _) = pretrained();
        let (_, utts, stats) = speaker_data(&model.config, 9, 4, 14);
        let (demos, holdout) = utts.split_at(3);
        let cfg = quick();
        let emb = sea_emb(&model, &params, &utts, stats, &cfg, 2).unwrap();

        // zero budget: the start point comes back unchanged
        let none = sea_all(&model, &params, demos, holdout, &emb, &AdaptConfig { all_steps: 0, ..cfg.clone() }, 2).unwrap();
        assert_eq!(none.embedding, emb.embedding);
        let mut base = params.clone();
        base.set_all_trainable(true);
        assert_eq!(none.params.as_ref().unwrap(), &base);

        let all = sea_all(&model, &params, demos, holdout, &emb, &cfg, 2).unwrap();
        let curve = &all.provenance.holdout_curve;
        assert_eq!(curve[0].1, mean_nll(&model, &params, holdout, &emb.embedding).unwrap());
        let min = curve.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        assert_eq!(all.provenance.holdout_nll, Some(min));
        assert!(min <= curve[0].1);
        let at_best = curve.iter().find(|c| c.0 == all.provenance.best_step).unwrap();
        assert_eq!(at_best.1, min);
        let tuned = all.params.as_ref().unwrap();
        assert_eq!(mean_nll(&model, tuned, holdout, &all.embedding).unwrap(), min);
        assert!(all.provenance.steps <= cfg.all_steps);

        let emb_demo = mean_nll(&model, &params, demos, &emb.embedding).unwrap();
        assert!(all.provenance.demo_nll <= emb_demo, "{} vs {emb_demo}", all.provenance.demo_nll);
    }

    #[test]
    fn zero_patience_stops_at_first_non_improvement() {
        let (model, params, _) = pretrained();
        let (_, utts, stats) = speaker_data(&model.config, 9, 4, 14);
        let (demos, holdout) = utts.split_at(3);
        let emb = sea_emb(&model, &params, &utts, stats, &quick(), 2).unwrap();
        for lr in [1e-3, 3e-3, 1.0] {
            let cfg = AdaptConfig { patience: 0, eval_interval: 1, all_lr: lr, all_steps: 30, ..quick() };
            let v = sea_all(&model, &params, demos, holdout, &emb, &cfg, 4).unwrap();
            let curve: Vec<f64> = v.provenance.holdout_curve.iter().map(|c| c.1).collect();
            let n = curve.len();
            // every evaluation but the last improved on all earlier ones
            for i in 1..n - 1 {
                assert!(curve[i] < curve[..i].iter().cloned().fold(f64::INFINITY, f64::min));
            }
            if (v.provenance.steps as usize) < 30 {
                assert!(curve[n - 1] >= curve[..n - 1].iter().cloned().fold(f64::INFINITY, f64::min));
                assert_eq!(v.provenance.steps as usize, n - 1);
            }
        }
        // a destructive step size cannot improve, so the start point is kept
        let cfg = AdaptConfig { patience: 0, eval_interval: 1, all_lr: 1.0, ..quick() };
        let v = sea_all(&model, &params, demos, holdout, &emb, &cfg, 4).unwrap();
        assert_eq!(v.provenance.holdout_curve.len(), 2);
        assert_eq!(v.provenance.best_step, 0);
        assert_eq!(v.embedding, emb.embedding);
    }

    #[test]
    fn sea_all_preconditions() {
        let (model, params, _) = pretrained();
        let (_, utts, stats) = speaker_data(&model.config, 9, 3, 14);
        let cfg = quick();
        let emb = sea_emb(&model, &params, &utts, stats, &AdaptConfig { emb_steps: 2, ..cfg.clone() }, 2).unwrap();
        assert!(matches!(sea_all(&model, &params, &utts, &[], &emb, &cfg, 2), Err(Error::Missing(_))));
        let all = sea_all(&model, &params, &utts[..2], &utts[2..], &emb, &AdaptConfig { all_steps: 1, ..cfg.clone() }, 2).unwrap();
        assert!(matches!(sea_all(&model, &params, &utts[..2], &utts[2..], &all, &cfg, 2), Err(Error::Missing(_))));
        assert!(sea_emb(&model, &params, &[], stats, &cfg, 2).is_err());
        let (_, other, _) = speaker_data(&model.config, 8, 1, 14);
        let mixed = [utts[0].clone(), other[0].clone()];
        assert!(sea_emb(&model, &params, &mixed, stats, &cfg, 2).is_err());
    }
}
