use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::{ParamStore, Tensor};
use crate::checkpoint;
use crate::corpus::SpeakerF0Stats;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Emb,
    All,
    Enc,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Emb, Method::All, Method::Enc];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Emb => "emb",
            Method::All => "all",
            Method::Enc => "enc",
        }
    }

    /// Label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::Emb => "SEA-Emb",
            Method::All => "SEA-All",
            Method::Enc => "SEA-Enc",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "emb" => Ok(Method::Emb),
            "all" => Ok(Method::All),
            "enc" => Ok(Method::Enc),
            other => Err(Error::Config(format!("unknown adaptation method `{other}` (emb, all, enc)"))),
        }
    }
}

/// Which pretrained network a voice runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseModel {
    /// The multi-speaker model with an embedding table.
    Table,
    /// The table-free model trained jointly with the encoder.
    Encoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: Method,
    pub speaker_id: u32,
    pub seed: u64,
    pub demo_ids: Vec<String>,
    pub holdout_ids: Vec<String>,
    /// Optimizer steps actually taken.
    pub steps: u64,
    /// Mean per-sample NLL on the demos the method fitted.
    pub demo_nll: f64,
    /// Mean per-sample NLL on the holdout utterances, when there are any.
    pub holdout_nll: Option<f64>,
    /// `(step, holdout NLL)` at every early-stopping evaluation.
    pub holdout_curve: Vec<(u64, f64)>,
    /// Step of the returned snapshot.
    pub best_step: u64,
}

/// Result of adapting to one speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedVoice {
    pub embedding: Vec<f64>,
    /// Fine-tuned network weights; absent when the base weights are reused.
    pub params: Option<ParamStore>,
    pub base: BaseModel,
    /// Pitch statistics estimated from the demos, used to normalize
    /// conditioning f0 at synthesis time.
    pub f0_stats: SpeakerF0Stats,
    pub provenance: Provenance,
}

const EMBEDDING: &str = "voice.embedding";
const FINETUNED: &str = "finetuned/";

pub fn save_voice(path: &Path, v: &AdaptedVoice) -> Result<()> {
    let mut all = ParamStore::new();
    all.insert(EMBEDDING, Tensor::vector(v.embedding.clone()), true)?;
    if let Some(p) = &v.params {
        all.extend_prefixed(p, FINETUNED)?;
    }
    let meta = json!({
        "kind": "adapted-voice",
        "base": v.base,
        "f0_stats": v.f0_stats,
        "provenance": v.provenance,
    });
    checkpoint::save(path, &meta, &all)
}

pub fn load_voice(path: &Path) -> Result<AdaptedVoice> {
    let ck = checkpoint::load(path)?;
    if ck.meta["kind"] != "adapted-voice" {
        return Err(Error::format(path, "not an adapted-voice file"));
    }
    let finetuned = ck.params.strip_prefix(FINETUNED)?;
    Ok(AdaptedVoice {
        embedding: ck.params.tensor(EMBEDDING)?.data().to_vec(),
        params: (!finetuned.is_empty()).then_some(finetuned),
        base: serde_json::from_value(ck.meta["base"].clone())?,
        f0_stats: serde_json::from_value(ck.meta["f0_stats"].clone())?,
        provenance: serde_json::from_value(ck.meta["provenance"].clone())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn provenance(method: Method) -> Provenance {
        Provenance {
            method,
            speaker_id: 9,
            seed: 3,
            demo_ids: vec!["spk09_utt000".into()],
            holdout_ids: vec![],
            steps: 12,
            demo_nll: 2.0 / 3.0,
            holdout_nll: Some(0.1),
            holdout_curve: vec![(0, 0.2), (10, 0.1)],
            best_step: 10,
        }
    }

    #[test]
    fn voices_round_trip_with_and_without_weights() {
        let dir = tempfile::tempdir().unwrap();
        let stats = SpeakerF0Stats { speaker_id: 9, mean: 5.1, std: 0.07 };
        let mut w = ParamStore::new();
        w.insert("block0.filter", Tensor::vector(vec![0.25, -1.0 / 7.0]), true).unwrap();
        for (method, params) in [(Method::Emb, None), (Method::All, Some(w))] {
            let v = AdaptedVoice {
                embedding: vec![0.1, -0.2, 1e-9],
                params,
                base: BaseModel::Table,
                f0_stats: stats,
                provenance: provenance(method),
            };
            let path = dir.path().join(format!("{}.seaw", method.as_str()));
            save_voice(&path, &v).unwrap();
            assert_eq!(load_voice(&path).unwrap(), v);
        }
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("maml".parse::<Method>().is_err());
    }
}
