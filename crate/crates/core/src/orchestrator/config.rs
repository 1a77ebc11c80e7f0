//! Run configuration (TOML). Relative paths resolve against the config
//! file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::advantage::AdvantageMode;
use crate::buffer::DEFAULT_CAPACITY;
use crate::engine::LoopSettings;
use crate::policy::RemoteConfig;
use crate::sandbox::SandboxConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PolicyConfig {
    /// Scripted responses from a JSON file.
    Mock { script: PathBuf },
    /// Chat-completions compatible HTTP endpoint.
    Remote(RemoteConfig),
    /// Transcript written by an earlier recorded run.
    Replay { transcript: PathBuf },
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig::Mock { script: PathBuf::from("mock.json") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Run directory holding buffers, experience, summary, metrics and the
    /// manifest.
    pub output: PathBuf,
    /// Prompt directory; the built-in prompts when unset.
    pub prompts: Option<PathBuf>,
    /// Harness directory; the built-in harness when unset.
    pub harness: Option<PathBuf>,
    /// Write every policy call to this JSONL transcript.
    pub record: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            output: PathBuf::from("run"),
            prompts: None,
            harness: None,
            record: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Self-play iterations `T`.
    pub iterations: u64,
    #[serde(flatten)]
    pub loop_settings: LoopSettings,
    pub buffer_capacity: usize,
    /// Weight between the two reward streams. Carried for the trainer; the
    /// emitted rewards are unweighted.
    pub lambda: f64,
    pub advantage_mode: AdvantageMode,
    /// Write the metrics sidecar.
    pub metrics: bool,
    /// Buffered tasks re-executed per buffer at the start of every run.
    pub reverify_sample: usize,
    pub sandbox: SandboxConfig,
    pub paths: PathsConfig,
    pub policy: PolicyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 500,
            loop_settings: LoopSettings::default(),
            buffer_capacity: DEFAULT_CAPACITY,
            lambda: 1.0,
            advantage_mode: AdvantageMode::Trr,
            metrics: true,
            reverify_sample: 8,
            sandbox: SandboxConfig::default(),
            paths: PathsConfig::default(),
            policy: PolicyConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text).map_err(|message| ConfigError::Parse {
            path: path.display().to_string(),
            message,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        cfg.check()?;
        Ok(cfg)
    }

    /// Makes every relative path absolute against `base`. An interpreter
    /// given as a bare command name is left for `PATH` lookup.
    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.paths.output);
        for p in [&mut self.paths.prompts, &mut self.paths.harness, &mut self.paths.record].into_iter().flatten() {
            resolve(base, p);
        }
        match &mut self.policy {
            PolicyConfig::Mock { script } => resolve(base, script),
            PolicyConfig::Replay { transcript } => resolve(base, transcript),
            PolicyConfig::Remote(_) => {}
        }
        if let Some(dir) = &mut self.sandbox.scratch_dir {
            resolve(base, dir);
        }
        if self.sandbox.interpreter.components().count() > 1 {
            resolve(base, &mut self.sandbox.interpreter);
        }
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        self.loop_settings.check().map_err(ConfigError::Invalid)?;
        if self.buffer_capacity == 0 {
            return Err(ConfigError::Invalid("buffer_capacity must be positive".into()));
        }
        if self.sandbox.determinism_runs < 2 {
            return Err(ConfigError::Invalid("sandbox.determinism_runs must be at least 2".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(ConfigError::Invalid("lambda must be nonnegative".into()));
        }
        Ok(())
    }
}
