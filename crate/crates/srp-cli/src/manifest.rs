//! Run manifest: a plain-text ledger of which pipeline stages have run,
//! what they produced, and the hash of the inputs they saw. A stage is
//! recomputed only when its input hash changes or one of its outputs went
//! missing; otherwise re-running the command is a no-op, so repeated
//! invocations leave byte-identical artifacts behind.
//!
//! Format, one fact per line:
//!
//! ```text
//! config <hex>
//! stage <name> inputs <hex> at <unix-seconds> outputs <a.csv,b.csv>
//! ```

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageEntry {
    /// Hash of everything the stage read: upstream data plus the
    /// configuration fields that steer it.
    pub inputs: String,
    /// Unix seconds at which the stage last actually ran.
    pub at: u64,
    /// Paths relative to the manifest's directory.
    pub outputs: Vec<String>,
}

/// The manifest for one output directory.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    /// Hash of the effective configuration of the most recent command.
    pub config: String,
    pub stages: BTreeMap<String, StageEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("manifest line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

impl Manifest {
    /// Loads the manifest in `dir`, or an empty one if none exists yet.
    pub fn load(dir: &Path) -> Result<Manifest, ManifestError> {
        let path = dir.join(MANIFEST_FILE);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Manifest::default()),
            Err(e) => return Err(e.into()),
        };
        let mut manifest = Manifest::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| ManifestError::Malformed {
                line: i + 1,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["config", hex] => manifest.config = (*hex).to_string(),
                ["stage", name, "inputs", hex, "at", secs, "outputs", paths] => {
                    let at = secs.parse().map_err(|_| bad("timestamp is not an integer"))?;
                    manifest.stages.insert(
                        (*name).to_string(),
                        StageEntry {
                            inputs: (*hex).to_string(),
                            at,
                            outputs: paths.split(',').map(str::to_string).collect(),
                        },
                    );
                }
                ["stage", name, "inputs", hex, "at", secs] => {
                    let at = secs.parse().map_err(|_| bad("timestamp is not an integer"))?;
                    manifest.stages.insert(
                        (*name).to_string(),
                        StageEntry { inputs: (*hex).to_string(), at, outputs: Vec::new() },
                    );
                }
                _ => return Err(bad("expected a `config` or `stage` line")),
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, dir: &Path) -> Result<(), ManifestError> {
        let mut out = Vec::new();
        writeln!(out, "# srp run manifest — a stage re-runs only when its input hash changes")?;
        if !self.config.is_empty() {
            writeln!(out, "config {}", self.config)?;
        }
        for (name, entry) in &self.stages {
            write!(out, "stage {name} inputs {} at {}", entry.inputs, entry.at)?;
            if entry.outputs.is_empty() {
                writeln!(out)?;
            } else {
                writeln!(out, " outputs {}", entry.outputs.join(","))?;
            }
        }
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(MANIFEST_FILE), out)?;
        Ok(())
    }

    /// Whether `stage` already ran with these exact inputs and all of its
    /// outputs are still present under `dir`.
    pub fn is_fresh(&self, dir: &Path, stage: &str, inputs: &str) -> bool {
        match self.stages.get(stage) {
            Some(e) => e.inputs == inputs && e.outputs.iter().all(|p| dir.join(p).exists()),
            None => false,
        }
    }

    /// Records a completed stage run, stamped with the current time.
    pub fn record(&mut self, stage: &str, inputs: &str, outputs: Vec<String>) {
        let at = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        self.stages.insert(stage.to_string(), StageEntry { inputs: inputs.to_string(), at, outputs });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest { config: "c0ffee".into(), ..Manifest::default() };
        m.record("retrieve", "abc123", vec!["dummy_Interaction.csv".into()]);
        m.record("train", "def456", vec!["checkpoint.bin".into(), "report.csv".into()]);
        m.save(dir.path()).unwrap();
        let loaded = Manifest::load(dir.path()).unwrap();
        assert_eq!(loaded, m);
    }

    #[test]
    fn missing_file_is_an_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::load(dir.path()).unwrap();
        assert!(m.stages.is_empty() && m.config.is_empty());
    }

    #[test]
    fn freshness_requires_matching_hash_and_existing_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::default();
        m.record("synthesize", "hash1", vec!["features.csv".into()]);
        assert!(!m.is_fresh(dir.path(), "synthesize", "hash1"), "output file is missing");
        std::fs::write(dir.path().join("features.csv"), "x").unwrap();
        assert!(m.is_fresh(dir.path(), "synthesize", "hash1"));
        assert!(!m.is_fresh(dir.path(), "synthesize", "hash2"), "inputs changed");
        assert!(!m.is_fresh(dir.path(), "retrieve", "hash1"), "stage never ran");
    }

    #[test]
    fn malformed_lines_are_rejected_with_position() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(MANIFEST_FILE), "config abc\nstage broken\n").unwrap();
        let err = Manifest::load(dir.path()).unwrap_err();
        assert!(matches!(err, ManifestError::Malformed { line: 2, .. }), "{err}");
    }
}
