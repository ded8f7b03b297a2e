//! Content-addressed stage ledger. Every stage records a digest of its
//! inputs and of the files it wrote; a stage re-executes iff its input
//! digest changed or any output file is missing or altered.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Digest of everything the stage's behaviour depends on.
    pub input: String,
    /// Digest over the files the stage wrote.
    pub output: String,
    /// Run-dir-relative paths of those files, sorted.
    pub files: Vec<String>,
    /// Non-fatal observations (skipped images, coverage warnings).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunLedger {
    pub version: u32,
    pub stages: BTreeMap<String, StageRecord>,
}

pub const LEDGER_VERSION: u32 = 1;
pub const LEDGER_FILE: &str = "ledger.json";

impl RunLedger {
    pub fn load_or_default(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(LEDGER_FILE);
        if !path.exists() {
            return Ok(RunLedger { version: LEDGER_VERSION, stages: BTreeMap::new() });
        }
        let text = std::fs::read_to_string(&path).map_err(Error::io(&path))?;
        let ledger: RunLedger = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            line: e.line(),
            detail: e.to_string(),
        })?;
        if ledger.version != LEDGER_VERSION {
            return Err(Error::Config(format!(
                "ledger version {} unsupported (expected {LEDGER_VERSION})",
                ledger.version
            )));
        }
        Ok(ledger)
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(LEDGER_FILE);
        let text = serde_json::to_string_pretty(self).expect("ledger serializes");
        std::fs::write(&path, text).map_err(Error::io(&path))
    }

    /// True when `stage` already ran with the same inputs and all its
    /// recorded outputs are intact on disk.
    pub fn is_current(&self, run_dir: &Path, stage: &str, input_digest: &str) -> bool {
        let Some(rec) = self.stages.get(stage) else { return false };
        if rec.input != input_digest {
            return false;
        }
        if rec.files.iter().any(|f| !run_dir.join(f).exists()) {
            return false;
        }
        match hash_files(run_dir, &rec.files) {
            Ok(digest) => digest == rec.output,
            Err(_) => false,
        }
    }

    pub fn record(
        &mut self,
        stage: &str,
        input: String,
        output: String,
        files: Vec<String>,
        notes: Vec<String>,
    ) {
        self.stages.insert(stage.to_string(), StageRecord { input, output, files, notes });
    }

    /// Drops records of stages downstream of a re-executed one. Callers
    /// pass the exact stage names to forget.
    pub fn invalidate(&mut self, stages: &[String]) {
        for s in stages {
            self.stages.remove(s);
        }
    }
}

/// Incremental digest builder for stage inputs.
#[derive(Default)]
pub struct DigestBuilder {
    hasher: Sha256,
}

impl DigestBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn text(mut self, label: &str, value: impl AsRef<str>) -> Self {
        self.hasher.update(label.as_bytes());
        self.hasher.update([0x1e]);
        self.hasher.update(value.as_ref().as_bytes());
        self.hasher.update([0x1f]);
        self
    }

    pub fn file(mut self, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(Error::io(path))?;
        self.hasher.update((bytes.len() as u64).to_le_bytes());
        self.hasher.update(&bytes);
        Ok(self)
    }

    pub fn digest(self, other: &str) -> Self {
        self.text("digest", other)
    }

    pub fn finish(self) -> String {
        hex(&self.hasher.finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Digest over run-dir-relative files: each contributes its path, length,
/// and bytes. `rel_paths` must already be sorted for a stable result.
pub fn hash_files(run_dir: &Path, rel_paths: &[String]) -> Result<String> {
    debug_assert!(rel_paths.windows(2).all(|w| w[0] <= w[1]), "paths must be sorted");
    let mut hasher = Sha256::new();
    for rel in rel_paths {
        let full = run_dir.join(rel);
        let bytes = std::fs::read(&full).map_err(Error::io(&full))?;
        hasher.update(rel.as_bytes());
        hasher.update([0x00]);
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex(&hasher.finalize()))
}
