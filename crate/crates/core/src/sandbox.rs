//! Isolated execution of task-language programs.
//!
//! Every call spawns a fresh interpreter subprocess running the harness
//! runner, feeds it a rendered driver on stdin and reads back one protocol
//! line (`OK <repr>` or `ERR <class>: <message>`). A counting semaphore bounds
//! the number of live interpreters.
//!
//! Isolation is best effort: scrubbed environment, a scratch working
//! directory whose path does not vary between runs, its own process group (killed as a whole on timeout) and
//! `setrlimit` caps on address space, file size and core dumps. Module
//! filtering happens in [`Sandbox::check_safety`].

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::os::unix::process::CommandExt;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::harness::{string_literal, DriverTemplate, Harness, HarnessError, HarnessTool};

/// Forbidden module and attribute names checked by default.
pub const DEFAULT_FORBIDDEN: &[&str] = &[
    "logging",
    "random",
    "multiprocessing",
    "pebble",
    "subprocess",
    "threading",
    "datetime",
    "time",
    "hashlib",
    "calendar",
    "bcrypt",
    "os.sys",
    "os.path",
    "sys.exit",
    "os.environ",
];

/// Environment variables passed through to the interpreter.
pub const DEFAULT_ENV_ALLOWLIST: &[&str] = &["PATH", "LANG", "LC_ALL", "LC_CTYPE", "TZ"];

const MAX_CAPTURE_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxConfig {
    /// Interpreter executable.
    pub interpreter: PathBuf,
    /// Per-execution wall-clock limit.
    #[serde(with = "secs")]
    pub timeout: Duration,
    /// Maximum number of concurrently running interpreters.
    pub workers: usize,
    /// Address-space cap applied to each interpreter, in bytes.
    pub memory_limit: Option<u64>,
    /// Cap on the size of any file the program writes, in bytes.
    pub file_size_limit: Option<u64>,
    pub env_allowlist: Vec<String>,
    pub forbidden: Vec<String>,
    /// Number of in-process evaluations compared by the determinism check.
    pub determinism_runs: usize,
    /// Working directory of every interpreter. Programs can observe this
    /// path, so it must be the same across runs for reproducible outputs.
    /// Defaults to `codeplay-sandbox` under the system temp directory.
    pub scratch_dir: Option<PathBuf>,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            interpreter: PathBuf::from("python3"),
            timeout: Duration::from_secs(10),
            workers: thread::available_parallelism().map(|n| n.get()).unwrap_or(4),
            memory_limit: Some(2 << 30),
            file_size_limit: Some(16 << 20),
            env_allowlist: DEFAULT_ENV_ALLOWLIST.iter().map(|s| s.to_string()).collect(),
            forbidden: DEFAULT_FORBIDDEN.iter().map(|s| s.to_string()).collect(),
            determinism_runs: 2,
            scratch_dir: None,
        }
    }
}

pub(crate) mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        if !(v.is_finite() && v > 0.0) {
            return Err(serde::de::Error::custom("duration must be a positive number of seconds"));
        }
        Ok(Duration::from_secs_f64(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecStatus {
    Ok,
    RaisedError,
    Timeout,
    HarnessFailure,
}

/// Why the harness could not produce a protocol line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HarnessFault {
    /// The interpreter could not be started or the driver could not be rendered.
    Unavailable(String),
    /// The interpreter ran but exited abnormally or broke the line protocol.
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Ok(String),
    Raised { class: String, message: String },
    Timeout,
    HarnessFailure(HarnessFault),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionOutcome {
    pub outcome: Outcome,
    pub wall_time: Duration,
}

impl ExecutionOutcome {
    pub fn status(&self) -> ExecStatus {
        match self.outcome {
            Outcome::Ok(_) => ExecStatus::Ok,
            Outcome::Raised { .. } => ExecStatus::RaisedError,
            Outcome::Timeout => ExecStatus::Timeout,
            Outcome::HarnessFailure(_) => ExecStatus::HarnessFailure,
        }
    }

    pub fn value(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::Ok(v) => Some(v),
            _ => None,
        }
    }

    pub fn error_class(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::Raised { class, .. } => Some(class),
            _ => None,
        }
    }

    fn unavailable(reason: impl Into<String>) -> Self {
        Self {
            outcome: Outcome::HarnessFailure(HarnessFault::Unavailable(reason.into())),
            wall_time: Duration::ZERO,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SandboxError {
    #[error("sandbox harness unavailable: {0}")]
    Unavailable(String),
    #[error("sandbox harness failure: {0}")]
    Protocol(String),
    #[error("harness tool returned malformed data: {0}")]
    BadToolOutput(String),
    #[error("program rejected: {0}")]
    Rejected(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckState {
    Passed,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub passed: bool,
    /// Forbidden names the program references, sorted.
    pub offending: Vec<String>,
    /// True when the syntax-tree pass failed and a text scan was used instead.
    pub textual_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeterminismVerdict {
    pub passed: bool,
    pub output: Option<String>,
    pub detail: Option<String>,
}

/// First check that rejected a candidate task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationFailure {
    Raised { class: String, message: String },
    Timeout,
    NullResult,
    Malformed { detail: String },
    Unsafe { offending: Vec<String> },
    Nondeterministic { detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationVerdict {
    pub integrity: CheckState,
    pub safety: CheckState,
    pub determinism: CheckState,
    pub offending: Vec<String>,
    /// Canonical output representation, present iff every check passed.
    pub output: Option<String>,
    pub failure: Option<ValidationFailure>,
}

impl ValidationVerdict {
    pub fn is_valid(&self) -> bool {
        self.output.is_some()
    }

    fn rejected(integrity: CheckState, safety: CheckState, determinism: CheckState, failure: ValidationFailure) -> Self {
        let offending = match &failure {
            ValidationFailure::Unsafe { offending } => offending.clone(),
            _ => Vec::new(),
        };
        Self {
            integrity,
            safety,
            determinism,
            offending,
            output: None,
            failure: Some(failure),
        }
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock();
        while *p == 0 {
            self.cv.wait(&mut p);
        }
        *p -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock() += 1;
        self.0.cv.notify_one();
    }
}

/// Stateless façade over a bounded set of interpreter subprocesses.
#[derive(Clone)]
pub struct Sandbox {
    inner: Arc<Inner>,
}

struct Inner {
    config: SandboxConfig,
    harness: Harness,
    slots: Semaphore,
    scratch: PathBuf,
}

impl std::fmt::Debug for Sandbox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Sandbox").field("config", &self.inner.config).finish_non_exhaustive()
    }
}

impl Sandbox {
    pub fn new(config: SandboxConfig, harness: Harness) -> Result<Self, SandboxError> {
        let scratch = config.scratch_dir.clone().unwrap_or_else(|| std::env::temp_dir().join("codeplay-sandbox"));
        std::fs::create_dir_all(&scratch).map_err(|e| SandboxError::Unavailable(format!("scratch dir {}: {e}", scratch.display())))?;
        Ok(Self {
            inner: Arc::new(Inner {
                slots: Semaphore::new(config.workers),
                config,
                harness,
                scratch,
            }),
        })
    }

    pub fn with_defaults() -> Result<Self, SandboxError> {
        Self::new(SandboxConfig::default(), Harness::embedded())
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.inner.config
    }

    pub fn harness(&self) -> &Harness {
        &self.inner.harness
    }

    pub fn timeout(&self) -> Duration {
        self.inner.config.timeout
    }

    /// Renders `template` and runs it through the protocol runner.
    pub fn run_driver(&self, template: DriverTemplate, bindings: &BTreeMap<&str, String>, timeout: Duration) -> ExecutionOutcome {
        match self.inner.harness.render(template, bindings) {
            Ok(script) => self.spawn(self.inner.harness.runner(), &script, timeout),
            Err(e) => ExecutionOutcome::unavailable(e.to_string()),
        }
    }

    /// Runs a helper tool with `program` as its standard input.
    pub fn run_tool(&self, tool: HarnessTool, program: &str) -> ExecutionOutcome {
        self.spawn(self.inner.harness.tool(tool), program, self.inner.config.timeout)
    }

    /// Tool output decoded from JSON; `Ok(Err(..))` carries a program-level
    /// error (e.g. the program does not parse).
    pub fn tool_json<T: serde::de::DeserializeOwned>(&self, tool: HarnessTool, program: &str) -> Result<Result<T, String>, SandboxError> {
        let out = self.run_tool(tool, program);
        match out.outcome {
            Outcome::Ok(json) => serde_json::from_str(&json)
                .map(Ok)
                .map_err(|e| SandboxError::BadToolOutput(format!("{tool:?}: {e}"))),
            Outcome::Raised { class, message } => Ok(Err(format!("{class}: {message}"))),
            Outcome::Timeout => Ok(Err("tool timed out".to_string())),
            Outcome::HarnessFailure(HarnessFault::Unavailable(r)) => Err(SandboxError::Unavailable(r)),
            Outcome::HarnessFailure(HarnessFault::Protocol(r)) => Err(SandboxError::Protocol(r)),
        }
    }

    /// Evaluates `f(input)` once and reports the canonical representation.
    pub fn execute(&self, program: &str, input: &str, timeout: Duration) -> ExecutionOutcome {
        if program.trim().is_empty() {
            return ExecutionOutcome {
                outcome: Outcome::Raised {
                    class: "EmptyProgram".into(),
                    message: "program text is empty".into(),
                },
                wall_time: Duration::ZERO,
            };
        }
        let mut b = BTreeMap::new();
        b.insert("code", program.to_string());
        b.insert("inputs", input.to_string());
        self.run_driver(DriverTemplate::Validate, &b, timeout)
    }

    /// Fails iff the program references any configured forbidden name.
    pub fn check_safety(&self, program: &str) -> Result<SafetyVerdict, SandboxError> {
        let forbidden = &self.inner.config.forbidden;
        match self.tool_json::<Vec<String>>(HarnessTool::References, program) {
            Ok(Ok(paths)) => {
                let offending = match_forbidden(forbidden, &paths);
                Ok(SafetyVerdict {
                    passed: offending.is_empty(),
                    offending,
                    textual_fallback: false,
                })
            }
            Ok(Err(_)) | Err(SandboxError::Protocol(_)) => {
                let offending = scan_forbidden(forbidden, program);
                Ok(SafetyVerdict {
                    passed: offending.is_empty(),
                    offending,
                    textual_fallback: true,
                })
            }
            Err(e) => Err(e),
        }
    }

    /// Evaluates `f(input)` `runs` times in one interpreter and compares the
    /// results by value equality.
    pub fn check_determinism(&self, program: &str, input: &str, runs: usize, timeout: Duration) -> Result<DeterminismVerdict, SandboxError> {
        assert!(runs >= 2, "determinism check needs at least two runs");
        let mut b = BTreeMap::new();
        b.insert("code", program.to_string());
        b.insert("inputs", input.to_string());
        b.insert("runs", runs.to_string());
        let out = self.run_driver(DriverTemplate::Determinism, &b, timeout);
        Ok(match out.outcome {
            Outcome::Ok(v) => DeterminismVerdict {
                passed: true,
                output: Some(v),
                detail: None,
            },
            Outcome::Raised { class, message } => DeterminismVerdict {
                passed: false,
                output: None,
                detail: Some(format!("{class}: {message}")),
            },
            Outcome::Timeout => DeterminismVerdict {
                passed: false,
                output: None,
                detail: Some("timeout".into()),
            },
            Outcome::HarnessFailure(HarnessFault::Unavailable(r)) => return Err(SandboxError::Unavailable(r)),
            Outcome::HarnessFailure(HarnessFault::Protocol(r)) => DeterminismVerdict {
                passed: false,
                output: None,
                detail: Some(r),
            },
        })
    }

    /// Integrity, safety and determinism, short-circuiting on the first
    /// failure. A `None` result fails integrity. Errors are reserved for an
    /// unusable interpreter.
    pub fn validate_and_construct(&self, program: &str, input: &str) -> Result<ValidationVerdict, SandboxError> {
        use CheckState::*;
        let timeout = self.inner.config.timeout;
        let integrity = self.execute(program, input, timeout);
        let output = match integrity.outcome {
            Outcome::Ok(v) if v == "None" => {
                return Ok(ValidationVerdict::rejected(Failed, Skipped, Skipped, ValidationFailure::NullResult));
            }
            Outcome::Ok(v) => v,
            Outcome::Raised { class, message } => {
                return Ok(ValidationVerdict::rejected(Failed, Skipped, Skipped, ValidationFailure::Raised { class, message }));
            }
            Outcome::Timeout => return Ok(ValidationVerdict::rejected(Failed, Skipped, Skipped, ValidationFailure::Timeout)),
            Outcome::HarnessFailure(HarnessFault::Unavailable(r)) => return Err(SandboxError::Unavailable(r)),
            Outcome::HarnessFailure(HarnessFault::Protocol(detail)) => {
                return Ok(ValidationVerdict::rejected(Failed, Skipped, Skipped, ValidationFailure::Malformed { detail }));
            }
        };

        let safety = self.check_safety(program)?;
        if !safety.passed {
            return Ok(ValidationVerdict::rejected(
                Passed,
                Failed,
                Skipped,
                ValidationFailure::Unsafe { offending: safety.offending },
            ));
        }

        let det = self.check_determinism(program, input, self.inner.config.determinism_runs, timeout)?;
        let detail = match (&det.passed, &det.output) {
            (true, Some(v)) if *v == output => None,
            (true, Some(v)) => Some(format!("representation differs between processes: {output} vs {v}")),
            _ => Some(det.detail.unwrap_or_default()),
        };
        if let Some(detail) = detail {
            return Ok(ValidationVerdict::rejected(Passed, Passed, Failed, ValidationFailure::Nondeterministic { detail }));
        }

        Ok(ValidationVerdict {
            integrity: Passed,
            safety: Passed,
            determinism: Passed,
            offending: Vec::new(),
            output: Some(output),
            failure: None,
        })
    }

    /// Comments and module-level variable assignments removed.
    pub fn strip_program(&self, program: &str) -> Result<String, SandboxError> {
        self.tool_json::<String>(HarnessTool::Strip, program)?.map_err(SandboxError::Rejected)
    }

    /// Plain string literal for embedding text in a driver.
    pub fn quote(text: &str) -> String {
        string_literal(text)
    }

    fn spawn(&self, script: &str, stdin_text: &str, timeout: Duration) -> ExecutionOutcome {
        let cfg = &self.inner.config;
        let _permit = self.inner.slots.acquire();
        let started = Instant::now();

        let mut cmd = Command::new(&cfg.interpreter);
        cmd.arg("-S")
            .arg("-B")
            .arg("-c")
            .arg(script)
            .env_clear()
            .env("PYTHONHASHSEED", "0")
            .env("PYTHONIOENCODING", "utf-8")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .current_dir(&self.inner.scratch)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);
        for key in &cfg.env_allowlist {
            if let Some(v) = std::env::var_os(key) {
                cmd.env(key, v);
            }
        }
        let limits = (cfg.memory_limit, cfg.file_size_limit);
        // SAFETY: only async-signal-safe libc calls between fork and exec.
        unsafe {
            cmd.pre_exec(move || {
                apply_limits(limits.0, limits.1);
                Ok(())
            });
        }

        let mut child = match cmd.spawn() {
            Ok(c) => c,
            Err(e) => return ExecutionOutcome::unavailable(format!("cannot start {}: {e}", cfg.interpreter.display())),
        };
        let pid = child.id() as libc::pid_t;

        let mut stdin = child.stdin.take().expect("piped stdin");
        let input = stdin_text.to_owned();
        let writer = thread::spawn(move || {
            let _ = stdin.write_all(input.as_bytes());
        });
        let stdout_reader = capture(child.stdout.take().expect("piped stdout"));
        let stderr_reader = capture(child.stderr.take().expect("piped stderr"));

        let status = match child.wait_timeout(timeout) {
            Ok(Some(status)) => Some(status),
            Ok(None) => None,
            Err(e) => {
                kill_group(pid);
                let _ = child.wait();
                return ExecutionOutcome {
                    outcome: Outcome::HarnessFailure(HarnessFault::Protocol(format!("wait failed: {e}"))),
                    wall_time: started.elapsed(),
                };
            }
        };
        if status.is_none() {
            kill_group(pid);
            let _ = child.wait();
        } else {
            // reap anything the program left behind in its group
            kill_group(pid);
        }
        let _ = writer.join();
        let stdout = stdout_reader.join().unwrap_or_default();
        let stderr = stderr_reader.join().unwrap_or_default();
        let wall_time = started.elapsed();

        let outcome = match status {
            None => Outcome::Timeout,
            Some(s) if !s.success() => Outcome::HarnessFailure(HarnessFault::Protocol(format!(
                "interpreter exited with {s}: {}",
                tail(&stderr)
            ))),
            Some(_) => parse_protocol(&stdout).unwrap_or_else(|| {
                Outcome::HarnessFailure(HarnessFault::Protocol(format!(
                    "malformed protocol output {:?} (stderr: {})",
                    tail(&stdout),
                    tail(&stderr)
                )))
            }),
        };
        ExecutionOutcome { outcome, wall_time }
    }
}

fn apply_limits(memory: Option<u64>, file_size: Option<u64>) {
    let set = |resource, value: u64| {
        let lim = libc::rlimit {
            rlim_cur: value as libc::rlim_t,
            rlim_max: value as libc::rlim_t,
        };
        // SAFETY: plain syscall on a stack value.
        unsafe {
            libc::setrlimit(resource, &lim);
        }
    };
    if let Some(m) = memory {
        set(libc::RLIMIT_AS, m);
    }
    if let Some(f) = file_size {
        set(libc::RLIMIT_FSIZE, f);
    }
    set(libc::RLIMIT_CORE, 0);
}

fn kill_group(pid: libc::pid_t) {
    // SAFETY: signalling our own child's process group.
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
    }
}

fn capture<R: Read + Send + 'static>(mut pipe: R) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let mut chunk = [0u8; 8192];
        loop {
            match pipe.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    if buf.len() < MAX_CAPTURE_BYTES {
                        buf.extend_from_slice(&chunk[..n]);
                    }
                }
            }
        }
        String::from_utf8_lossy(&buf).into_owned()
    })
}

fn tail(text: &str) -> String {
    let t = text.trim();
    let start = t.char_indices().rev().nth(300).map(|(i, _)| i).unwrap_or(0);
    t[start..].to_string()
}

/// Parses the runner's single protocol line.
pub fn parse_protocol(stdout: &str) -> Option<Outcome> {
    let text = stdout.strip_suffix('\n').unwrap_or(stdout);
    if text.contains('\n') {
        return None;
    }
    if let Some(repr) = text.strip_prefix("OK ") {
        return Some(Outcome::Ok(repr.to_string()));
    }
    let rest = text.strip_prefix("ERR ")?;
    let (class, message) = match rest.split_once(':') {
        Some((c, m)) => (c.trim(), m.trim()),
        None => (rest.trim(), ""),
    };
    Some(Outcome::Raised {
        class: class.to_string(),
        message: message.to_string(),
    })
}

/// Forbidden entries matched by any referenced dotted path, sorted and unique.
pub fn match_forbidden(forbidden: &[String], paths: &[String]) -> Vec<String> {
    let mut hits: Vec<String> = forbidden
        .iter()
        .filter(|f| {
            paths
                .iter()
                .any(|p| p == *f || (p.starts_with(f.as_str()) && p.as_bytes().get(f.len()) == Some(&b'.')))
        })
        .cloned()
        .collect();
    hits.sort();
    hits.dedup();
    hits
}

/// Text-level fallback: a forbidden entry counts when it appears delimited by
/// non-identifier characters.
pub fn scan_forbidden(forbidden: &[String], program: &str) -> Vec<String> {
    let is_ident = |c: u8| c.is_ascii_alphanumeric() || c == b'_';
    let bytes = program.as_bytes();
    let mut hits: Vec<String> = forbidden
        .iter()
        .filter(|f| {
            program.match_indices(f.as_str()).any(|(i, m)| {
                let before_ok = i == 0 || !(is_ident(bytes[i - 1]) || bytes[i - 1] == b'.');
                let end = i + m.len();
                let after_ok = end >= bytes.len() || !is_ident(bytes[end]);
                before_ok && after_ok
            })
        })
        .cloned()
        .collect();
    hits.sort();
    hits.dedup();
    hits
}
