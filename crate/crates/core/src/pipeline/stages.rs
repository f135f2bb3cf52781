use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::ExperimentConfig;
use super::layout::{Layout, RunManifest};
use crate::adapt::{
    load_encoder, load_voice, save_encoder, save_voice, sea_all, sea_emb, sea_enc_predict, train_encoder,
    AdaptedVoice, BaseModel, EncoderTraining, Method,
};
use crate::autodiff::ParamStore;
use crate::codec::wav::write_wav;
use crate::codec::{MuLaw, Waveform};
use crate::corpus::{
    compute_f0_stats, demo_subset, holdout_count, load_corpus, write_corpus, Corpus, CorpusManifest, SpeakerF0Stats,
    SpeakerRole, Utterance,
};
use crate::error::{Error, Result};
use crate::verify::{load_verifier, save_verifier, train_verifier, Verifier, VerifierReport};
use crate::wavenet::{
    load_train_state, sample, save_train_state, train_multispeaker, PreparedUtterance, TrainConfig, TrainState,
    WaveNet,
};
use crate::{fsutil, seed};

/// Optimizer steps between checkpoints written during training, so a
/// diverging run keeps its trace up to the last good chunk.
const CHECKPOINT_EVERY: u64 = 250;

/// One experiment: a validated configuration and its output directory.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub layout: Layout,
}

/// Demonstration data of one adaptation cell.
pub struct CellData<'a> {
    pub demos: Vec<&'a Utterance>,
    /// The demos prepared with `stats`; the last `holdout` entries are the
    /// early-stopping holdout.
    pub prepared: Vec<PreparedUtterance>,
    pub holdout: usize,
    pub stats: SpeakerF0Stats,
}

impl CellData<'_> {
    pub fn fit(&self) -> &[PreparedUtterance] {
        &self.prepared[..self.prepared.len() - self.holdout]
    }

    pub fn holdout(&self) -> &[PreparedUtterance] {
        &self.prepared[self.prepared.len() - self.holdout..]
    }
}

fn trace_csv(trace: &[f64]) -> String {
    let mut s = String::from("step,nll\n");
    for (i, v) in trace.iter().enumerate() {
        writeln!(s, "{},{v}", i + 1).expect("string write");
    }
    s
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config.out_dir.clone());
        Ok(Self { config, layout })
    }

    pub fn codec(&self) -> Result<MuLaw> {
        MuLaw::new(self.config.model.mu, self.config.model.quantization)
    }

    fn commit(&self, stage: &str, started: Instant, paths: &[PathBuf]) -> Result<()> {
        RunManifest::commit(&self.layout, &self.config, stage, started.elapsed().as_secs_f64(), paths)
    }

    pub fn gen_corpus(&self) -> Result<CorpusManifest> {
        let t = Instant::now();
        RunManifest::open(&self.layout, &self.config)?.save(&self.layout)?;
        let corpus = Corpus::generate(&self.config.corpus)?;
        let dir = self.layout.corpus();
        let manifest = write_corpus(&corpus, &dir)?;
        let mut paths = vec![dir.join(crate::corpus::MANIFEST_FILE)];
        for u in &manifest.utterances {
            paths.push(dir.join(&u.wav));
            paths.push(dir.join(&u.features));
        }
        self.commit("gen-corpus", t, &paths)?;
        log::info!("corpus: {} utterances in {}", manifest.utterances.len(), dir.display());
        Ok(manifest)
    }

    pub fn corpus(&self) -> Result<Corpus> {
        load_corpus(&self.layout.corpus())
    }

    fn prepare_role<'a>(&self, corpus: &'a Corpus, role: SpeakerRole) -> Result<(Vec<&'a Utterance>, Vec<PreparedUtterance>)> {
        let codec = self.codec()?;
        let mut raw = Vec::new();
        let mut prepared = Vec::new();
        for s in corpus.speaker_ids(role) {
            let stats = corpus.f0_stats(s)?;
            for u in corpus.utterances_of(s) {
                prepared.push(PreparedUtterance::new(u, &stats, &codec, &self.config.model)?);
                raw.push(u);
            }
        }
        Ok((raw, prepared))
    }

    /// Multi-speaker training. With `resume`, continues from the saved
    /// checkpoint up to the configured step budget.
    pub fn train(&self, resume: bool) -> Result<TrainState> {
        let t = Instant::now();
        let corpus = self.corpus()?;
        let (_, data) = self.prepare_role(&corpus, SpeakerRole::Train)?;
        let model = WaveNet::new(self.config.model.clone())?;
        let path = self.layout.model();
        let mut state = if resume && path.exists() {
            let (cfg, state) = load_train_state(&path)?;
            if cfg != self.config.model {
                return Err(Error::Config("checkpoint was trained with a different model config".into()));
            }
            log::info!("resuming training at step {}", state.step);
            Some(state)
        } else {
            None
        };
        let budget = self.config.train.steps;
        loop {
            let done = state.as_ref().map_or(0, |s| s.step);
            let target = (done + CHECKPOINT_EVERY).min(budget);
            let tcfg = TrainConfig {
                steps: target,
                ..self.config.train.clone()
            };
            let next = train_multispeaker(&model, &data, &tcfg, self.config.seeds.train, state.take())?;
            save_train_state(&path, &self.config.model, &next)?;
            fsutil::write(&self.layout.train_trace(), trace_csv(&next.trace).as_bytes())?;
            if next.step >= budget {
                state = Some(next);
                break;
            }
            state = Some(next);
        }
        let state = state.expect("loop ran at least once");
        self.commit("train", t, &[path, self.layout.train_trace()])?;
        Ok(state)
    }

    pub fn load_model(&self) -> Result<(WaveNet, ParamStore)> {
        let (cfg, state) = load_train_state(&self.layout.model())?;
        Ok((WaveNet::new(cfg)?, state.params))
    }

    pub fn train_verifier(&self) -> Result<VerifierReport> {
        let t = Instant::now();
        let corpus = self.corpus()?;
        let utts: Vec<&Utterance> = corpus
            .speaker_ids(SpeakerRole::Verifier)
            .into_iter()
            .flat_map(|s| corpus.utterances_of(s))
            .collect();
        let (verifier, report) = train_verifier(&utts, &self.config.verifier, self.config.seeds.verifier)?;
        save_verifier(&self.layout.verifier(), &verifier, &report)?;
        self.commit("train-verifier", t, &[self.layout.verifier()])?;
        log::info!("verifier held-out accuracy {:.3}", report.heldout_accuracy);
        Ok(report)
    }

    pub fn load_verifier(&self) -> Result<Verifier> {
        Ok(load_verifier(&self.layout.verifier())?.0)
    }

    pub fn train_encoder(&self) -> Result<EncoderTraining> {
        let t = Instant::now();
        let corpus = self.corpus()?;
        let verifier = self.load_verifier()?;
        let (raw, data) = self.prepare_role(&corpus, SpeakerRole::Train)?;
        let model = WaveNet::new(self.config.encoder_model())?;
        let out = train_encoder(&model, &raw, &data, &verifier, &self.config.encoder, self.config.seeds.encoder)?;
        save_encoder(&self.layout.encoder(), &model.config, &out)?;
        fsutil::write(&self.layout.encoder_trace(), trace_csv(&out.trace).as_bytes())?;
        self.commit("train-encoder", t, &[self.layout.encoder(), self.layout.encoder_trace()])?;
        Ok(out)
    }

    /// Leading `secs` of a held-out speaker's adaptation pool, prepared with
    /// pitch statistics estimated from those demos alone.
    pub fn cell_data<'a>(&self, corpus: &'a Corpus, speaker: u32, secs: f64) -> Result<CellData<'a>> {
        if corpus.speaker(speaker)?.role != SpeakerRole::Heldout {
            return Err(Error::Config(format!("speaker {speaker} is not a held-out speaker")));
        }
        let ids = corpus.split(speaker)?.all_adaptation();
        let pool = corpus.utterances_by_id(&ids)?;
        let demos = demo_subset(&pool, secs)?;
        let stats = compute_f0_stats(speaker, demos.iter().copied())?;
        let codec = self.codec()?;
        let prepared = demos
            .iter()
            .map(|u| PreparedUtterance::new(u, &stats, &codec, &self.config.model))
            .collect::<Result<Vec<_>>>()?;
        let holdout = holdout_count(demos.len(), self.config.corpus.holdout_fraction).min(demos.len() - 1);
        Ok(CellData {
            demos,
            prepared,
            holdout,
            stats,
        })
    }

    fn adapt_seed(&self, method: Method, secs: f64, speaker: u32) -> u64 {
        seed::derive(
            self.config.seeds.adapt,
            &format!("{}-spk{speaker}", super::layout::cell_tag(method, secs)),
            0,
        )
    }

    /// Adapts to one held-out speaker and writes the voice file.
    pub fn adapt(&self, method: Method, speaker: u32, secs: f64) -> Result<AdaptedVoice> {
        let t = Instant::now();
        let corpus = self.corpus()?;
        let cell = self.cell_data(&corpus, speaker, secs)?;
        let voice = self.adapt_cell(&cell, method, speaker, secs, &mut None)?;
        let path = self.layout.voice(method, secs, speaker);
        save_voice(&path, &voice)?;
        self.commit(&format!("adapt/{}", super::layout::cell_tag(method, secs)), t, &[path])?;
        Ok(voice)
    }

    fn adapt_cell(
        &self,
        cell: &CellData,
        method: Method,
        speaker: u32,
        secs: f64,
        cache: &mut Option<(WaveNet, ParamStore, Option<(WaveNet, EncoderTraining)>)>,
    ) -> Result<AdaptedVoice> {
        if cache.is_none() {
            let (model, params) = self.load_model()?;
            *cache = Some((model, params, None));
        }
        let (model, params, enc) = cache.as_mut().expect("filled above");
        let a = &self.config.adapt;
        let seed_value = self.adapt_seed(method, secs, speaker);
        let voice = match method {
            Method::Emb => sea_emb(model, params, &cell.prepared, cell.stats, a, seed_value)?,
            Method::All => {
                let init_path = self.layout.voice(Method::Emb, secs, speaker);
                if !init_path.exists() {
                    return Err(Error::Missing(format!(
                        "SEA-Emb voice {} needed to initialize SEA-All",
                        init_path.display()
                    )));
                }
                let init = load_voice(&init_path)?;
                sea_all(model, params, cell.fit(), cell.holdout(), &init, a, seed_value)?
            }
            Method::Enc => {
                if enc.is_none() {
                    let (cfg, training) = load_encoder(&self.layout.encoder())?;
                    *enc = Some((WaveNet::new(cfg)?, training));
                }
                let (enc_model, training) = enc.as_ref().expect("filled above");
                sea_enc_predict(
                    &training.encoder,
                    enc_model,
                    &training.model_params,
                    &cell.demos,
                    &cell.prepared,
                    cell.stats,
                    seed_value,
                )?
            }
        };
        log::info!(
            "adapted {} spk{speaker} {secs}s: {} steps, demo nll {:.4}",
            method.label(),
            voice.provenance.steps,
            voice.provenance.demo_nll
        );
        Ok(voice)
    }

    /// Every configured method and demo size for every held-out speaker.
    /// SEA-Emb runs first since SEA-All starts from its result.
    pub fn adapt_all(&self) -> Result<Vec<PathBuf>> {
        let t = Instant::now();
        let corpus = self.corpus()?;
        let mut methods = self.config.eval.methods.clone();
        methods.sort();
        methods.dedup();
        let mut cache = None;
        let mut paths = Vec::new();
        for &secs in &self.config.eval.demo_seconds {
            for speaker in corpus.speaker_ids(SpeakerRole::Heldout) {
                let cell = self.cell_data(&corpus, speaker, secs)?;
                for &method in &methods {
                    let voice = self.adapt_cell(&cell, method, speaker, secs, &mut cache)?;
                    let path = self.layout.voice(method, secs, speaker);
                    save_voice(&path, &voice)?;
                    paths.push(path);
                }
            }
        }
        self.commit("adapt", t, &paths)?;
        Ok(paths)
    }

    /// Network and weights a voice runs on.
    pub fn voice_model(&self, voice: &AdaptedVoice) -> Result<(WaveNet, ParamStore)> {
        match (voice.base, &voice.params) {
            (BaseModel::Table, Some(p)) => Ok((WaveNet::new(self.config.model.clone())?, p.clone())),
            (BaseModel::Table, None) => self.load_model(),
            (BaseModel::Encoder, _) => {
                let (cfg, training) = load_encoder(&self.layout.encoder())?;
                Ok((WaveNet::new(cfg)?, training.model_params))
            }
        }
    }

    /// Generates speech in `voice` conditioned on the features of a corpus
    /// utterance.
    pub fn synthesize(
        &self,
        voice: &AdaptedVoice,
        model: &WaveNet,
        params: &ParamStore,
        conditioning: &Utterance,
        samples: Option<usize>,
        temperature: f64,
        seed_value: u64,
    ) -> Result<Waveform> {
        let prepared = PreparedUtterance::new(conditioning, &voice.f0_stats, &self.codec()?, &model.config)?;
        let len = samples.unwrap_or(prepared.len());
        sample(
            model,
            params,
            &prepared.local,
            &voice.embedding,
            len,
            temperature,
            seed_value,
            self.config.corpus.sample_rate,
        )
    }

    /// Single synthesis from a voice file to a WAV.
    #[allow(clippy::too_many_arguments)]
    pub fn synth_one(
        &self,
        voice_path: &Path,
        utterance: &str,
        samples: Option<usize>,
        temperature: f64,
        seed_value: u64,
        out: &Path,
    ) -> Result<Waveform> {
        let corpus = self.corpus()?;
        let voice = load_voice(voice_path)?;
        let (model, params) = self.voice_model(&voice)?;
        let w = self.synthesize(&voice, &model, &params, corpus.utterance(utterance)?, samples, temperature, seed_value)?;
        write_wav(out, &w)?;
        Ok(w)
    }

    /// Test utterances of `speaker` that get synthesized for evaluation.
    pub fn eval_targets<'a>(&self, corpus: &'a Corpus, speaker: u32) -> Result<Vec<&'a Utterance>> {
        let test = &corpus.split(speaker)?.test;
        let n = self.config.eval.synth_per_speaker.min(test.len());
        corpus.utterances_by_id(&test[..n])
    }

    /// Synthesizes the evaluation set of every adapted voice present.
    pub fn synth_eval(&self) -> Result<usize> {
        let t = Instant::now();
        let corpus = self.corpus()?;
        let mut bases: BTreeMap<bool, (WaveNet, ParamStore)> = BTreeMap::new();
        let mut paths = Vec::new();
        for &method in &self.config.eval.methods {
            for &secs in &self.config.eval.demo_seconds {
                for speaker in corpus.speaker_ids(SpeakerRole::Heldout) {
                    let vp = self.layout.voice(method, secs, speaker);
                    if !vp.exists() {
                        log::warn!("no voice at {}, skipping", vp.display());
                        continue;
                    }
                    let voice = load_voice(&vp)?;
                    let (model, params) = match (&voice.params, voice.base) {
                        (Some(p), _) => (WaveNet::new(self.config.model.clone())?, p.clone()),
                        (None, base) => {
                            let key = base == BaseModel::Encoder;
                            match bases.entry(key) {
                                Entry::Occupied(e) => e.get().clone(),
                                Entry::Vacant(e) => e.insert(self.voice_model(&voice)?).clone(),
                            }
                        }
                    };
                    for target in self.eval_targets(&corpus, speaker)? {
                        let seed_value = seed::derive(
                            self.config.seeds.synth,
                            &format!("{}-{}", super::layout::cell_tag(method, secs), target.id),
                            0,
                        );
                        let w = self.synthesize(&voice, &model, &params, target, None, self.config.eval.temperature, seed_value)?;
                        let out = self.layout.synth(method, secs, &target.id);
                        write_wav(&out, &w)?;
                        paths.push(out);
                    }
                }
            }
        }
        self.commit("synth", t, &paths)?;
        Ok(paths.len())
    }

    /// Every stage in order, ending with the evaluation.
    pub fn run_all(&self) -> Result<super::eval::EvalSummary> {
        self.gen_corpus()?;
        self.train(false)?;
        self.train_verifier()?;
        if self.config.eval.methods.contains(&Method::Enc) {
            self.train_encoder()?;
        }
        self.adapt_all()?;
        self.synth_eval()?;
        self.eval()
    }
}
