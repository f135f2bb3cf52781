use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::layout::{cell_tag, seconds_tag, RunManifest};
use super::stages::Experiment;
use crate::adapt::Method;
use crate::codec::wav::read_wav;
use crate::corpus::SpeakerRole;
use crate::error::Result;
use crate::fsutil;
use crate::verify::{
    build_trials, cosine_score, det_csv, det_table, eer, enroll, roc, roc_csv, scores_csv, write_dvectors,
    DVectorRecord, EnrollmentCentroid, Source, Trial,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: Method,
    pub demo_seconds: f64,
    /// `None` when some voices or generated files of the cell are missing.
    pub eer: Option<f64>,
    pub threshold: Option<f64>,
    /// Area under the real-versus-generated ROC.
    pub auc: Option<f64>,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub real_eer: f64,
    pub real_threshold: f64,
    pub cells: Vec<CellResult>,
    /// Tags of cells that could not be scored.
    pub missing: Vec<String>,
}

impl EvalSummary {
    pub fn cell(&self, method: Method, secs: f64) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.method == method && c.demo_seconds == secs)
    }

    pub fn eer(&self, method: Method, secs: f64) -> Option<f64> {
        self.cell(method, secs).and_then(|c| c.eer)
    }

    pub fn auc(&self, method: Method, secs: f64) -> Option<f64> {
        self.cell(method, secs).and_then(|c| c.auc)
    }

    /// Rows real, SEA-All, SEA-Emb, SEA-Enc; one column per demo size.
    pub fn table(&self, sizes: &[f64]) -> String {
        let mut s = String::from("| |");
        for &secs in sizes {
            write!(s, " {} |", seconds_tag(secs)).expect("string write");
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(sizes.len()));
        write!(s, "\n| real | {:.2}% |", 100.0 * self.real_eer).expect("string write");
        s.push_str(&" |".repeat(sizes.len().saturating_sub(1)));
        for method in [Method::All, Method::Emb, Method::Enc] {
            if !self.cells.iter().any(|c| c.method == method) {
                continue;
            }
            write!(s, "\n| {} |", method.label()).expect("string write");
            for &secs in sizes {
                match self.eer(method, secs) {
                    Some(v) => write!(s, " {:.2}% |", 100.0 * v),
                    None => write!(s, " n/a |"),
                }
                .expect("string write");
            }
        }
        s.push('\n');
        s
    }
}

fn eer_csv(summary: &EvalSummary) -> String {
    let mut s = String::from("condition,demo_seconds,eer\n");
    writeln!(s, "real,,{}", summary.real_eer).expect("string write");
    for c in &summary.cells {
        let v = c.eer.map_or("NA".to_string(), |v| v.to_string());
        writeln!(s, "{},{},{v}", c.method.as_str(), c.demo_seconds).expect("string write");
    }
    s
}

fn own_scores(probes: &[(u32, Vec<f64>)], centroids: &[EnrollmentCentroid]) -> Vec<f64> {
    probes
        .iter()
        .filter_map(|(s, v)| centroids.iter().find(|c| c.speaker_id == *s).map(|c| cosine_score(v, c)))
        .collect()
}

impl Experiment {
    /// Scores real and generated speech with the verifier and writes the
    /// EER table, per-cell score, DET and ROC files, and all d-vectors.
    pub fn eval(&self) -> Result<EvalSummary> {
        let t = Instant::now();
        let corpus = self.corpus()?;
        let verifier = self.load_verifier()?;
        let dir = self.layout.eval();
        let mut written: Vec<PathBuf> = Vec::new();
        let mut put = |name: String, body: String| -> Result<()> {
            let p = dir.join(name);
            fsutil::write(&p, body.as_bytes())?;
            written.push(p);
            Ok(())
        };
        let mut records = Vec::new();

        // centroids from real test speech; real probes from the adaptation pool
        let mut centroids = Vec::new();
        let mut real_probes = Vec::new();
        for speaker in corpus.speaker_ids(SpeakerRole::Heldout) {
            let split = corpus.split(speaker)?;
            let mut enrolled = Vec::new();
            for u in corpus.utterances_by_id(&split.test)? {
                let v = verifier.dvector(&u.waveform.samples)?;
                records.push(DVectorRecord {
                    id: u.id.clone(),
                    speaker_id: speaker,
                    source: Source::Real,
                    values: v.clone(),
                });
                enrolled.push(v);
            }
            centroids.push(enroll(speaker, &enrolled)?);
            for u in corpus.utterances_by_id(&split.all_adaptation())? {
                let v = verifier.dvector(&u.waveform.samples)?;
                records.push(DVectorRecord {
                    id: u.id.clone(),
                    speaker_id: speaker,
                    source: Source::Real,
                    values: v.clone(),
                });
                real_probes.push((speaker, v));
            }
        }
        let policy = self.config.eval.pairing;
        let real_trials = build_trials(&centroids, &real_probes, policy, self.config.seeds.trials)?;
        let (real_eer, real_threshold) = eer(&real_trials)?;
        put("scores_real.csv".into(), scores_csv(&real_trials))?;
        put("det_real.csv".into(), det_csv(&det_table(&real_trials)?))?;
        let real_own = own_scores(&real_probes, &centroids);

        let mut cells = Vec::new();
        let mut missing = Vec::new();
        for &method in &self.config.eval.methods {
            for &secs in &self.config.eval.demo_seconds {
                let tag = cell_tag(method, secs);
                let mut probes = Vec::new();
                let mut complete = true;
                for speaker in corpus.speaker_ids(SpeakerRole::Heldout) {
                    for target in self.eval_targets(&corpus, speaker)? {
                        let p = self.layout.synth(method, secs, &target.id);
                        if !p.exists() {
                            complete = false;
                            continue;
                        }
                        let v = verifier.dvector(&read_wav(&p)?.samples)?;
                        records.push(DVectorRecord {
                            id: format!("{tag}/{}", target.id),
                            speaker_id: speaker,
                            source: Source::Generated,
                            values: v.clone(),
                        });
                        probes.push((speaker, v));
                    }
                }
                if !complete || probes.is_empty() {
                    log::warn!("cell {tag} is incomplete");
                    missing.push(tag);
                    cells.push(CellResult {
                        method,
                        demo_seconds: secs,
                        eer: None,
                        threshold: None,
                        auc: None,
                        trials: 0,
                    });
                    continue;
                }
                let trial_seed = crate::seed::derive(self.config.seeds.trials, &tag, 0);
                let trials: Vec<Trial> = build_trials(&centroids, &probes, policy, trial_seed)?;
                let (rate, threshold) = eer(&trials)?;
                let curve = roc(&real_own, &own_scores(&probes, &centroids))?;
                put(format!("scores_{tag}.csv"), scores_csv(&trials))?;
                put(format!("det_{tag}.csv"), det_csv(&det_table(&trials)?))?;
                put(format!("roc_{tag}.csv"), roc_csv(&curve.points))?;
                cells.push(CellResult {
                    method,
                    demo_seconds: secs,
                    eer: Some(rate),
                    threshold: Some(threshold),
                    auc: Some(curve.auc),
                    trials: trials.len(),
                });
            }
        }
        let summary = EvalSummary {
            real_eer,
            real_threshold,
            cells,
            missing,
        };
        put("eer_table.csv".into(), eer_csv(&summary))?;
        let mut json = serde_json::to_string_pretty(&summary)?;
        json.push('\n');
        put("metrics.json".into(), json)?;
        let dv = dir.join("dvectors.sead");
        write_dvectors(&dv, &records)?;
        written.push(dv);
        RunManifest::commit(&self.layout, &self.config, "eval", t.elapsed().as_secs_f64(), &written)?;
        Ok(summary)
    }
}
