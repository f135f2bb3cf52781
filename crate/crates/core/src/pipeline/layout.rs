use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::adapt::Method;
use crate::error::{Error, Result};
use crate::fsutil;

/// File locations inside one experiment's output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

/// `2.0` becomes `2s`, `0.5` becomes `0.5s`.
pub fn seconds_tag(secs: f64) -> String {
    format!("{secs}s")
}

pub fn cell_tag(method: Method, secs: f64) -> String {
    format!("{}_{}", method.as_str(), seconds_tag(secs))
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("run_manifest.json")
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("model").join("wavenet.seaw")
    }

    pub fn train_trace(&self) -> PathBuf {
        self.root.join("model").join("train_trace.csv")
    }

    pub fn verifier(&self) -> PathBuf {
        self.root.join("verifier").join("verifier.seaw")
    }

    pub fn encoder(&self) -> PathBuf {
        self.root.join("encoder").join("encoder.seaw")
    }

    pub fn encoder_trace(&self) -> PathBuf {
        self.root.join("encoder").join("train_trace.csv")
    }

    pub fn voice(&self, method: Method, secs: f64, speaker: u32) -> PathBuf {
        self.root
            .join("voices")
            .join(cell_tag(method, secs))
            .join(format!("spk{speaker:02}.seaw"))
    }

    pub fn synth_dir(&self, method: Method, secs: f64) -> PathBuf {
        self.root.join("synth").join(cell_tag(method, secs))
    }

    pub fn synth(&self, method: Method, secs: f64, utterance: &str) -> PathBuf {
        self.synth_dir(method, secs).join(format!("{utterance}.wav"))
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    fn relative(&self, path: &Path) -> Result<String> {
        path.strip_prefix(&self.root)
            .map(|p| p.to_string_lossy().replace('\\', "/"))
            .map_err(|_| Error::Config(format!("{} lies outside {}", path.display(), self.root.display())))
    }
}

/// Index of everything an experiment produced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    /// Relative path to SHA-256.
    pub artifacts: BTreeMap<String, String>,
    /// Wall-clock seconds of the latest run of each stage.
    pub timings: BTreeMap<String, f64>,
    pub versions: BTreeMap<String, String>,
}

impl RunManifest {
    /// Loads the manifest under `layout`, or starts an empty one. An
    /// existing manifest written for another configuration is an error.
    pub fn open(layout: &Layout, config: &ExperimentConfig) -> Result<Self> {
        let hash = config.hash()?;
        let path = layout.manifest();
        if !path.exists() {
            let mut versions = BTreeMap::new();
            versions.insert(env!("CARGO_PKG_NAME").to_string(), env!("CARGO_PKG_VERSION").to_string());
            fsutil::write(&layout.config(), config.to_json()?.as_bytes())?;
            return Ok(Self {
                config_hash: hash,
                artifacts: BTreeMap::new(),
                timings: BTreeMap::new(),
                versions,
            });
        }
        let m: RunManifest =
            serde_json::from_slice(&fsutil::read(&path)?).map_err(|e| Error::format(&path, e.to_string()))?;
        if m.config_hash != hash {
            return Err(Error::Config(format!(
                "{} was produced by a different configuration; use a fresh output directory",
                layout.root.display()
            )));
        }
        Ok(m)
    }

    /// Records `paths` with their current checksums and the stage timing.
    pub fn record(&mut self, layout: &Layout, stage: &str, secs: f64, paths: &[PathBuf]) -> Result<()> {
        for p in paths {
            self.artifacts.insert(layout.relative(p)?, fsutil::sha256_file(p)?);
        }
        self.timings.insert(stage.to_string(), secs);
        Ok(())
    }

    /// Writes through a temporary file and a rename, so a reader never
    /// sees a half-written manifest.
    pub fn save(&self, layout: &Layout) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        let path = layout.manifest();
        let tmp = path.with_extension(format!("json.{}.tmp", std::process::id()));
        fsutil::write(&tmp, json.as_bytes())?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    /// Re-reads the manifest, adds one stage's artifacts and saves it.
    pub fn commit(layout: &Layout, config: &ExperimentConfig, stage: &str, secs: f64, paths: &[PathBuf]) -> Result<()> {
        let mut m = Self::open(layout, config)?;
        m.record(layout, stage, secs, paths)?;
        m.save(layout)
    }

    /// Checks that every listed artifact exists with its recorded checksum
    /// and that the stored configuration still hashes to `config_hash`.
    pub fn validate(&self, layout: &Layout) -> Result<()> {
        let config = ExperimentConfig::load(&layout.config())?;
        if config.hash()? != self.config_hash {
            return Err(Error::Checksum {
                path: layout.config(),
                expected: self.config_hash.clone(),
                found: config.hash()?,
            });
        }
        for (rel, sha) in &self.artifacts {
            let p = layout.root.join(rel);
            if !p.exists() {
                return Err(Error::Missing(format!("artifact {}", p.display())));
            }
            fsutil::verify_checksum(&p, sha)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_records_and_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout::new(dir.path());
        let cfg = ExperimentConfig::default();
        let mut m = RunManifest::open(&layout, &cfg).unwrap();
        let f = layout.train_trace();
        fsutil::write(&f, b"step,nll\n").unwrap();
        m.record(&layout, "train", 1.5, std::slice::from_ref(&f)).unwrap();
        m.save(&layout).unwrap();

        let again = RunManifest::open(&layout, &cfg).unwrap();
        assert_eq!(again, m);
        again.validate(&layout).unwrap();
        assert!(again.artifacts.contains_key("model/train_trace.csv"));

        fsutil::write(&f, b"tampered").unwrap();
        assert!(matches!(again.validate(&layout), Err(Error::Checksum { .. })));
        std::fs::remove_file(&f).unwrap();
        assert!(matches!(again.validate(&layout), Err(Error::Missing(_))));

        let other = ExperimentConfig::default().with_seed(99);
        assert!(RunManifest::open(&layout, &other).is_err());
    }

    #[test]
    fn tags() {
        assert_eq!(cell_tag(Method::All, 2.0), "all_2s");
        assert_eq!(seconds_tag(0.5), "0.5s");
    }
}
