use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapt::{AdaptConfig, EncoderConfig, Method};
use crate::corpus::CorpusSpec;
use crate::error::{Error, Result};
use crate::verify::{PairingPolicy, VerifierConfig};
use crate::wavenet::{TrainConfig, WaveNetConfig};
use crate::{fsutil, seed};

/// Seed of every randomized stage after corpus generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub train: u64,
    pub verifier: u64,
    pub encoder: u64,
    pub adapt: u64,
    pub synth: u64,
    pub trials: u64,
}

impl StageSeeds {
    pub fn derived(base: u64) -> Self {
        Self {
            train: seed::derive(base, "stage-train", 0),
            verifier: seed::derive(base, "stage-verifier", 0),
            encoder: seed::derive(base, "stage-encoder", 0),
            adapt: seed::derive(base, "stage-adapt", 0),
            synth: seed::derive(base, "stage-synth", 0),
            trials: seed::derive(base, "stage-trials", 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Demo-size conditions in seconds of audio.
    pub demo_seconds: Vec<f64>,
    pub methods: Vec<Method>,
    pub temperature: f64,
    /// Test utterances per held-out speaker that get synthesized.
    pub synth_per_speaker: usize,
    pub pairing: PairingPolicy,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            demo_seconds: vec![2.0, 10.0, 60.0],
            methods: Method::ALL.to_vec(),
            temperature: 1.0,
            synth_per_speaker: 8,
            pairing: PairingPolicy::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub corpus: CorpusSpec,
    pub model: WaveNetConfig,
    pub train: TrainConfig,
    pub verifier: VerifierConfig,
    pub encoder: EncoderConfig,
    pub adapt: AdaptConfig,
    pub eval: EvalConfig,
    pub seeds: StageSeeds,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusSpec::default(),
            model: WaveNetConfig::default(),
            train: TrainConfig::default(),
            verifier: VerifierConfig::default(),
            encoder: EncoderConfig::default(),
            adapt: AdaptConfig::default(),
            eval: EvalConfig::default(),
            seeds: StageSeeds::derived(1),
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    /// Replaces the corpus seed and every stage seed with values derived
    /// from `base`.
    pub fn with_seed(mut self, base: u64) -> Self {
        self.corpus.seed = base;
        self.seeds = StageSeeds::derived(base);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.model.validate()?;
        if self.model.num_speakers != self.corpus.train_speakers as usize {
            return Err(Error::Config(format!(
                "model table has {} rows but the corpus has {} training speakers",
                self.model.num_speakers, self.corpus.train_speakers
            )));
        }
        if self.model.frame_stride != self.corpus.frame_stride as usize {
            return Err(Error::Config("model and corpus frame strides differ".into()));
        }
        if self.eval.demo_seconds.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config("demo sizes must be positive".into()));
        }
        if self.eval.temperature < 0.0 {
            return Err(Error::Config("temperature must be non-negative".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> Result<String> {
        Ok(fsutil::sha256_hex(&serde_json::to_vec(self)?))
    }

    /// The table-free variant of the model trained with the encoder.
    pub fn encoder_model(&self) -> WaveNetConfig {
        WaveNetConfig {
            num_speakers: 0,
            ..self.model.clone()
        }
    }
}
