//! Synthetic multi-speaker corpus: parametric voices, aligned frame
//! features, per-speaker pitch statistics and demonstration splits.

mod f0;
mod manifest;
mod sidecar;
mod speaker;
mod split;
mod utterance;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use f0::{compute_f0_stats, normalize_f0, stats_from_log_f0, SpeakerF0Stats, STD_FLOOR};
pub use manifest::{load_corpus, read_manifest, write_corpus, CorpusManifest, UtteranceEntry, MANIFEST_FILE};
pub use sidecar::{decode_features, encode_features, read_features, write_features, FrameFeatures};
pub use speaker::{generate_speaker, SyntheticSpeaker, F0_MAX_HZ, F0_MIN_HZ, HARMONICS};
pub use split::{holdout_count, split_corpus, CorpusSplit};
pub use utterance::{
    generate_utterance, is_voiced_code, phoneme_template, random_phoneme_sequence, PhonemeTemplate, Utterance,
    FIRST_UNVOICED, PHONEME_CLASSES, SILENCE,
};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeakerRole {
    /// Seen during multi-speaker training; owns an embedding-table row.
    Train,
    /// Unseen target of few-shot adaptation.
    Heldout,
    /// Only used to fit the speaker verifier.
    Verifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub train_speakers: u32,
    pub heldout_speakers: u32,
    pub verifier_speakers: u32,
    pub train_utterances: u32,
    pub heldout_utterances: u32,
    pub verifier_utterances: u32,
    pub min_frames: u32,
    pub max_frames: u32,
    pub frame_stride: u32,
    pub sample_rate: u32,
    /// Test utterances per held-out speaker.
    pub test_count: u32,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            train_speakers: 8,
            heldout_speakers: 4,
            verifier_speakers: 32,
            train_utterances: 30,
            heldout_utterances: 80,
            verifier_utterances: 12,
            min_frames: 48,
            max_frames: 80,
            frame_stride: 64,
            sample_rate: 4000,
            test_count: 8,
            holdout_fraction: 0.10,
            seed: 1,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.train_speakers < 2 {
            return bad("at least two training speakers are required");
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return bad("frame range must satisfy 0 < min_frames <= max_frames");
        }
        if self.frame_stride == 0 || self.sample_rate == 0 {
            return bad("frame stride and sample rate must be positive");
        }
        if self.train_utterances == 0 {
            return bad("training speakers need at least one utterance");
        }
        if self.heldout_speakers > 0 && self.heldout_utterances <= self.test_count {
            return bad("held-out speakers need more utterances than the test count");
        }
        Ok(())
    }

    fn role_of(&self, id: u32) -> SpeakerRole {
        if id < self.train_speakers {
            SpeakerRole::Train
        } else if id < self.train_speakers + self.heldout_speakers {
            SpeakerRole::Heldout
        } else {
            SpeakerRole::Verifier
        }
    }

    fn utterances_for(&self, role: SpeakerRole) -> u32 {
        match role {
            SpeakerRole::Train => self.train_utterances,
            SpeakerRole::Heldout => self.heldout_utterances,
            SpeakerRole::Verifier => self.verifier_utterances,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpeaker {
    pub speaker: SyntheticSpeaker,
    pub role: SpeakerRole,
}

pub fn utterance_id(speaker_id: u32, index: u32) -> String {
    format!("spk{speaker_id:02}_utt{index:03}")
}

/// In-memory corpus. Training speakers are numbered `0..train_speakers`, so
/// their ids double as embedding-table rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub speakers: Vec<CorpusSpeaker>,
    pub utterances: Vec<Utterance>,
    /// Demonstration splits of the held-out speakers.
    pub splits: BTreeMap<u32, CorpusSplit>,
    index: BTreeMap<String, usize>,
}

impl Corpus {
    pub fn generate(spec: &CorpusSpec) -> Result<Corpus> {
        spec.validate()?;
        let total = spec.train_speakers + spec.heldout_speakers + spec.verifier_speakers;
        let mut speakers = Vec::with_capacity(total as usize);
        let mut utterances = Vec::new();
        for id in 0..total {
            let role = spec.role_of(id);
            let speaker = generate_speaker(id, seed::derive(spec.seed, "speaker", id as u64));
            for u in 0..spec.utterances_for(role) {
                let key = ((id as u64) << 32) | u as u64;
                let mut rng = seed::rng(spec.seed, "utterance-length", key);
                let frames = rng.random_range(spec.min_frames..=spec.max_frames) as usize;
                let seq = random_phoneme_sequence(frames, seed::derive(spec.seed, "utterance-text", key));
                let mut utt = generate_utterance(
                    &speaker,
                    &seq,
                    seed::derive(spec.seed, "utterance-audio", key),
                    spec.frame_stride as usize,
                    spec.sample_rate,
                )?;
                utt.id = utterance_id(id, u);
                utterances.push(utt);
            }
            speakers.push(CorpusSpeaker { speaker, role });
        }
        let mut corpus = Corpus::assemble(spec.clone(), speakers, utterances, BTreeMap::new())?;
        for sp in corpus.speaker_ids(SpeakerRole::Heldout) {
            let ids: Vec<String> = corpus.utterances_of(sp).map(|u| u.id.clone()).collect();
            let split = split_corpus(
                &ids,
                spec.test_count as usize,
                spec.holdout_fraction,
                seed::derive(spec.seed, "split", sp as u64),
            )?;
            corpus.splits.insert(sp, split);
        }
        Ok(corpus)
    }

    pub(crate) fn assemble(
        spec: CorpusSpec,
        speakers: Vec<CorpusSpeaker>,
        utterances: Vec<Utterance>,
        splits: BTreeMap<u32, CorpusSplit>,
    ) -> Result<Corpus> {
        let mut index = BTreeMap::new();
        for (i, u) in utterances.iter().enumerate() {
            if index.insert(u.id.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate utterance id {}", u.id)));
            }
        }
        Ok(Corpus {
            spec,
            speakers,
            utterances,
            splits,
            index,
        })
    }

    pub fn utterance(&self, id: &str) -> Result<&Utterance> {
        self.index
            .get(id)
            .map(|&i| &self.utterances[i])
            .ok_or_else(|| Error::Missing(format!("utterance {id}")))
    }

    pub fn utterances_by_id<'a>(&'a self, ids: &[String]) -> Result<Vec<&'a Utterance>> {
        ids.iter().map(|id| self.utterance(id)).collect()
    }

    pub fn speaker(&self, id: u32) -> Result<&CorpusSpeaker> {
        self.speakers
            .iter()
            .find(|s| s.speaker.speaker_id == id)
            .ok_or_else(|| Error::Missing(format!("speaker {id}")))
    }

    pub fn speaker_ids(&self, role: SpeakerRole) -> Vec<u32> {
        self.speakers
            .iter()
            .filter(|s| s.role == role)
            .map(|s| s.speaker.speaker_id)
            .collect()
    }

    pub fn utterances_of(&self, speaker_id: u32) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(move |u| u.speaker_id == speaker_id)
    }

    pub fn split(&self, speaker_id: u32) -> Result<&CorpusSplit> {
        self.splits
            .get(&speaker_id)
            .ok_or_else(|| Error::Missing(format!("demonstration split for speaker {speaker_id}")))
    }

    /// Pitch statistics used to normalize a speaker's conditioning. For
    /// held-out speakers only the adaptation set is visible.
    pub fn f0_stats(&self, speaker_id: u32) -> Result<SpeakerF0Stats> {
        match self.speaker(speaker_id)?.role {
            SpeakerRole::Heldout => {
                let ids = self.split(speaker_id)?.all_adaptation();
                compute_f0_stats(speaker_id, self.utterances_by_id(&ids)?)
            }
            _ => compute_f0_stats(speaker_id, self.utterances_of(speaker_id)),
        }
    }

    pub fn total_samples(&self) -> usize {
        self.utterances.iter().map(|u| u.waveform.len()).sum()
    }
}

/// Leading utterances of `pool` whose total duration first reaches `seconds`.
pub fn demo_subset<'a>(pool: &[&'a Utterance], seconds: f64) -> Result<Vec<&'a Utterance>> {
    let mut out = Vec::new();
    let mut acc = 0.0;
    for &u in pool {
        if acc >= seconds - 1e-9 && !out.is_empty() {
            break;
        }
        acc += u.waveform.duration_secs();
        out.push(u);
    }
    if acc < seconds - 1e-9 || out.is_empty() {
        return Err(Error::Insufficient(format!(
            "requested {seconds} s of demonstration audio, only {acc:.3} s available"
        )));
    }
    Ok(out)
}
