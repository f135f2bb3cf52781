use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::f0::SpeakerF0Stats;
use super::sidecar::{decode_features, encode_features, FrameFeatures};
use super::split::CorpusSplit;
use super::utterance::Utterance;
use super::{Corpus, CorpusSpeaker, CorpusSpec};
use crate::codec::wav::{read_wav, write_wav};
use crate::error::{Error, Result};
use crate::fsutil;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceEntry {
    pub id: String,
    pub speaker_id: u32,
    pub frames: usize,
    pub frame_stride: usize,
    /// Paths relative to the corpus directory.
    pub wav: PathBuf,
    pub features: PathBuf,
    pub wav_sha256: String,
    pub features_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub spec: CorpusSpec,
    pub speakers: Vec<CorpusSpeaker>,
    pub utterances: Vec<UtteranceEntry>,
    pub splits: BTreeMap<u32, CorpusSplit>,
    pub f0_stats: Vec<SpeakerF0Stats>,
}

/// Writes WAVs, feature sidecars and `manifest.json` under `dir`.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<CorpusManifest> {
    let mut entries = Vec::with_capacity(corpus.utterances.len());
    for u in &corpus.utterances {
        let wav = PathBuf::from("wav").join(format!("{}.wav", u.id));
        let features = PathBuf::from("features").join(format!("{}.seaf", u.id));
        fsutil::create_dir(&dir.join("wav"))?;
        write_wav(&dir.join(&wav), &u.waveform)?;
        let feat_bytes = encode_features(&FrameFeatures {
            phoneme_codes: u.phoneme_codes.clone(),
            f0_hz: u.f0_hz.clone(),
            voiced: u.voiced(),
        });
        fsutil::write(&dir.join(&features), &feat_bytes)?;
        entries.push(UtteranceEntry {
            id: u.id.clone(),
            speaker_id: u.speaker_id,
            frames: u.frames(),
            frame_stride: u.frame_stride,
            wav_sha256: fsutil::sha256_file(&dir.join(&wav))?,
            features_sha256: fsutil::sha256_hex(&feat_bytes),
            wav,
            features,
        });
    }
    let f0_stats = corpus
        .speakers
        .iter()
        .map(|s| corpus.f0_stats(s.speaker.speaker_id))
        .collect::<Result<Vec<_>>>()?;
    let manifest = CorpusManifest {
        spec: corpus.spec.clone(),
        speakers: corpus.speakers.clone(),
        utterances: entries,
        splits: corpus.splits.clone(),
        f0_stats,
    };
    fsutil::write(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CorpusManifest> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fsutil::read(&path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

/// Loads a corpus written by [`write_corpus`], verifying every checksum.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let m = read_manifest(dir)?;
    let mut utterances = Vec::with_capacity(m.utterances.len());
    for e in &m.utterances {
        let wav_path = dir.join(&e.wav);
        let feat_path = dir.join(&e.features);
        fsutil::verify_checksum(&wav_path, &e.wav_sha256)?;
        fsutil::verify_checksum(&feat_path, &e.features_sha256)?;
        let waveform = read_wav(&wav_path)?;
        let f = decode_features(&fsutil::read(&feat_path)?, &feat_path)?;
        if f.phoneme_codes.len() != e.frames || waveform.len() != e.frames * e.frame_stride {
            return Err(Error::format(wav_path, "waveform and features are misaligned"));
        }
        utterances.push(Utterance {
            id: e.id.clone(),
            speaker_id: e.speaker_id,
            waveform,
            phoneme_codes: f.phoneme_codes,
            f0_hz: f.f0_hz,
            frame_stride: e.frame_stride,
        });
    }
    Corpus::assemble(m.spec, m.speakers, utterances, m.splits)
}
