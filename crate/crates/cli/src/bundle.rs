use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";
pub const TRAIN_CSV: &str = "train.csv";
pub const TEST_CSV: &str = "test.csv";
pub const SPLITS: &str = "splits.json";
pub const TRANSFORMS: &str = "transforms.json";
pub const INGEST: &str = "ingest.json";
pub const TUNED: &str = "tuned.json";
pub const MODEL: &str = "model.json";
pub const BASELINE: &str = "baseline.json";
pub const REPORT: &str = "report.json";
pub const BASELINE_REPORT: &str = "baseline_report.json";
pub const PREDICTIONS: &str = "test_predictions.csv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub command: String,
    pub config: String,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    pub notes: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

/// Which commands opened the held-out test file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageAudit {
    pub test_readers: Vec<String>,
    pub clean: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunManifest {
    pub records: Vec<CommandRecord>,
    pub leakage_audit: Option<LeakageAudit>,
}

impl RunManifest {
    pub fn audit(&self) -> LeakageAudit {
        let test_readers: Vec<String> = self
            .records
            .iter()
            .filter(|r| r.inputs.iter().any(|f| f.path == TEST_CSV))
            .map(|r| r.command.clone())
            .collect();
        let clean = test_readers.iter().all(|c| c == "evaluate") && test_readers.len() <= 1;
        LeakageAudit {
            test_readers,
            clean,
        }
    }

    pub fn test_evaluated(&self) -> bool {
        self.records.iter().any(|r| r.command == "evaluate")
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// A bundle directory plus the record of the command currently running in
/// it. Files go through `read`/`write` so the manifest lists every one.
pub struct Bundle {
    pub dir: PathBuf,
    record: CommandRecord,
}

impl Bundle {
    pub fn open(dir: &Path, command: &str, config: &Path, seeds: Vec<u64>) -> Self {
        Self {
            dir: dir.to_path_buf(),
            record: CommandRecord {
                command: command.into(),
                config: config.display().to_string(),
                seeds,
                inputs: Vec::new(),
                outputs: Vec::new(),
                notes: Vec::new(),
                started_unix: now(),
                finished_unix: 0,
            },
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).exists()
    }

    pub fn manifest(&self) -> Result<RunManifest> {
        let p = self.path(MANIFEST);
        if !p.exists() {
            return Ok(RunManifest::default());
        }
        let text = std::fs::read_to_string(&p)?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
    }

    /// Records an input outside the bundle (config, raw data).
    pub fn note_external(&mut self, path: &Path) -> Result<()> {
        self.record.inputs.push(FileEntry {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn read(&mut self, name: &str) -> Result<String> {
        let p = self.path(name);
        if !p.exists() {
            bail!("{} is missing; run the earlier commands first", p.display());
        }
        let text =
            std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        self.record.inputs.push(FileEntry {
            path: name.into(),
            sha256: hex::encode(Sha256::digest(text.as_bytes())),
        });
        Ok(text)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        let p = self.path(name);
        std::fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        self.record.outputs.retain(|f| f.path != name);
        self.record.outputs.push(FileEntry {
            path: name.into(),
            sha256: hex::encode(Sha256::digest(contents.as_bytes())),
        });
        Ok(())
    }

    pub fn note(&mut self, msg: impl Into<String>) {
        self.record.notes.push(msg.into());
    }

    /// Appends the record to the manifest; `fresh` starts a new manifest.
    pub fn finish(mut self, fresh: bool) -> Result<()> {
        let mut manifest = if fresh {
            RunManifest::default()
        } else {
            self.manifest()?
        };
        self.record.finished_unix = now();
        manifest.records.push(self.record);
        manifest.leakage_audit = Some(manifest.audit());
        std::fs::create_dir_all(&self.dir)?;
        std::fs::write(
            self.dir.join(MANIFEST),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }
}
