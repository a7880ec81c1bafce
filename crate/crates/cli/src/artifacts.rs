//! On-disk layout of a work directory and provenance checks.
//!
//! Every artifact `X` has a sidecar `X.meta.json` naming the stage that
//! produced it, the config hash and the dataset fingerprint.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use uniloc::chansim::{read_dataset, Dataset};
use uniloc::estimation::ModelBased;
use uniloc::pipeline::{Context, PipelineConfig, Prepared, Split, SplitData};
use uniloc::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: String,
    pub config_hash: String,
    /// SHA-256 over both dataset splits.
    pub dataset: String,
}

/// Persisted model-based analysis of both splits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Estimates {
    pub train: Vec<ModelBased>,
    pub test: Vec<ModelBased>,
}

pub struct WorkDir {
    pub root: PathBuf,
}

impl WorkDir {
    pub fn new(root: &Path) -> Self {
        WorkDir { root: root.to_path_buf() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn config(&self) -> PathBuf {
        self.path("config.json")
    }

    pub fn split_files(&self, split: Split) -> (PathBuf, PathBuf) {
        let stem = split_name(split);
        (self.path(&format!("{stem}.jsonl")), self.path(&format!("{stem}.bin")))
    }

    pub fn fingerprint(&self) -> Result<String> {
        let mut h = Sha256::new();
        for split in [Split::Train, Split::Test] {
            let (m, b) = self.split_files(split);
            for p in [m, b] {
                let bytes = fs::read(&p).map_err(|e| missing(&p, e))?;
                h.update((bytes.len() as u64).to_le_bytes());
                h.update(&bytes);
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn write_meta(&self, artifact: &str, stage: &str, cfg: &PipelineConfig) -> Result<Provenance> {
        let prov = Provenance { stage: stage.into(), config_hash: cfg.hash(), dataset: self.fingerprint()? };
        write_json(&meta_path(&self.path(artifact)), &prov)?;
        Ok(prov)
    }

    /// Checks that `artifact` exists and was produced under the current
    /// config from the current dataset.
    pub fn check(&self, artifact: &str, cfg: &PipelineConfig) -> Result<()> {
        let p = self.path(artifact);
        if !p.exists() {
            return Err(Error::Config(format!("missing artifact {}", p.display())));
        }
        let mp = meta_path(&p);
        let text = fs::read_to_string(&mp).map_err(|e| missing(&mp, e))?;
        let prov: Provenance = serde_json::from_str(&text)?;
        if prov.config_hash != cfg.hash() {
            return Err(Error::StaleArtifact(format!(
                "{artifact} was produced under config {} but the current config hashes to {}",
                short(&prov.config_hash),
                short(&cfg.hash())
            )));
        }
        let fp = self.fingerprint()?;
        if prov.dataset != fp {
            return Err(Error::StaleArtifact(format!(
                "{artifact} was produced from dataset {} but the work directory holds {}",
                short(&prov.dataset),
                short(&fp)
            )));
        }
        Ok(())
    }

    pub fn read_split(&self, split: Split, cfg: &PipelineConfig) -> Result<Dataset> {
        let (m, b) = self.split_files(split);
        read_dataset(&m, &b, &cfg.system)
    }

    /// Rebuilds both splits from the dataset files and persisted estimates.
    pub fn prepared(&self, cfg: &PipelineConfig) -> Result<Prepared> {
        self.check("train.jsonl", cfg)?;
        self.check("estimates.json", cfg)?;
        let est: Estimates = serde_json::from_slice(&fs::read(self.path("estimates.json"))?)?;
        let ctx = Context::new(cfg)?;
        let train = SplitData::from_estimates(
            self.read_split(Split::Train, cfg)?,
            est.train,
            &ctx,
            &cfg.identifier_for(Split::Train),
        )?;
        let test =
            SplitData::from_estimates(self.read_split(Split::Test, cfg)?, est.test, &ctx, &cfg.identifier_for(Split::Test))?;
        Ok(Prepared::new(ctx, train, test))
    }
}

pub fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Test => "test",
    }
}

pub fn meta_path(p: &Path) -> PathBuf {
    let mut s = p.as_os_str().to_os_string();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn missing(p: &Path, e: std::io::Error) -> Error {
    Error::Config(format!("cannot read {}: {e}", p.display()))
}

fn short(h: &str) -> &str {
    &h[..h.len().min(12)]
}
