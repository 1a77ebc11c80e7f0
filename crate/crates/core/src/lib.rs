//! Self-play engine for code-reasoning tasks.
//!
//! A policy proposes (program, input) tasks, an external interpreter
//! validates them and computes gold answers, the same policy solves them, and
//! every rollout leaves as a reward- and advantage-annotated record for an
//! external trainer.

pub mod advantage;
pub mod buffer;
pub mod engine;
pub mod harness;
pub mod metrics;
pub mod orchestrator;
pub mod parse;
pub mod policy;
pub mod prompts;
pub mod proposer;
pub mod rewards;
pub mod sandbox;
pub mod solver;
pub mod template;
pub mod types;

pub use advantage::{AdvantageMode, BaselineStats};
pub use buffer::{BufferError, BufferSet, Insertion, TaskBuffer};
pub use harness::{DriverTemplate, Harness, HarnessTool};
pub use policy::{MockPolicy, Policy, PolicyError, PolicyRequest, PolicyTranscript, RemotePolicy, SamplingParams};
pub use orchestrator::{run_self_play, seed_run, RunConfig, RunError, RunReport};
pub use prompts::PromptLibrary;
pub use rewards::{RewardBreakdown, RewardError};
pub use sandbox::{ExecStatus, ExecutionOutcome, Outcome, Sandbox, SandboxConfig, SandboxError, ValidationVerdict};
pub use solver::{SolverQuery, Verification};
pub use types::{InductionTask, ParseStatus, Role, RolloutRecord, TaskRecord, TaskType, Triplet};
