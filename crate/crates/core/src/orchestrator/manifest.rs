//! Run manifest: the commit record for crash-safe resume.
//!
//! Before an iteration touches any file the manifest is rewritten with
//! `pending_iteration` set; after every append succeeds it is rewritten with
//! the new file lengths. On start-up each tracked file is cut back to its
//! committed length, so a run killed mid-iteration resumes as if that
//! iteration never started.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::advantage::RunningBaselines;
use crate::metrics::MetricsCollector;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seeded: bool,
    pub completed_iterations: u64,
    pub pending_iteration: Option<u64>,
    /// Committed byte length of each tracked file, by path relative to the
    /// run directory.
    pub files: BTreeMap<String, u64>,
    pub buffer_lens: [usize; 3],
    pub policy_state: serde_json::Value,
    pub running_baselines: RunningBaselines,
    pub metrics_state: Option<MetricsCollector>,
}

impl Manifest {
    pub fn load(dir: &Path) -> std::io::Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))
    }

    /// Write to a temporary file, sync, then rename over the old manifest.
    pub fn store(&self, dir: &Path) -> std::io::Result<()> {
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let mut f = File::create(&tmp)?;
        f.write_all(serde_json::to_string_pretty(self).expect("manifest serializes").as_bytes())?;
        f.write_all(b"\n")?;
        f.sync_all()?;
        std::fs::rename(&tmp, dir.join(MANIFEST_FILE))?;
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
        Ok(())
    }

    /// Records the current length of each file in `names`.
    pub fn capture(&mut self, dir: &Path, names: &[String]) -> std::io::Result<()> {
        for name in names {
            let len = match std::fs::metadata(dir.join(name)) {
                Ok(m) => m.len(),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => 0,
                Err(e) => return Err(e),
            };
            self.files.insert(name.clone(), len);
        }
        Ok(())
    }

    /// Cuts every tracked file back to its committed length. Returns the
    /// number of bytes discarded.
    pub fn truncate_uncommitted(&self, dir: &Path) -> std::io::Result<u64> {
        let mut dropped = 0;
        for (name, &len) in &self.files {
            let path = dir.join(name);
            let Ok(meta) = std::fs::metadata(&path) else { continue };
            if meta.len() > len {
                dropped += meta.len() - len;
                let f = OpenOptions::new().write(true).open(&path)?;
                f.set_len(len)?;
                f.sync_all()?;
            }
        }
        Ok(dropped)
    }
}
