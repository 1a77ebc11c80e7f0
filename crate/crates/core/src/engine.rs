//! Shared handles and settings for the propose and solve phases.

use serde::{Deserialize, Serialize};

use crate::buffer::BufferError;
use crate::policy::{Policy, PolicyError, PolicyRequest, PolicyTranscript, SamplingParams};
use crate::prompts::{PromptError, PromptLibrary};
use crate::rewards::RewardError;
use crate::sandbox::{Sandbox, SandboxError};

/// Loop sizes and limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopSettings {
    /// Proposals and solver queries per task type per iteration.
    pub batch_size: usize,
    /// Reference triplets shown to the abduction/deduction proposer.
    pub k_references: usize,
    /// Seed buffer size is `batch_size * seed_factor`.
    pub seed_factor: usize,
    /// Inputs requested from the induction proposer.
    pub induction_inputs: usize,
    /// Solver rollouts per proposal for the learnability estimate.
    pub solve_rollouts: usize,
    pub max_prompt_tokens: usize,
    pub sampling: SamplingParams,
    /// Seeding gives up after this many proposal rounds per buffer.
    pub seed_max_rounds: usize,
}

impl Default for LoopSettings {
    fn default() -> Self {
        Self {
            batch_size: 64,
            k_references: 6,
            seed_factor: 4,
            induction_inputs: 10,
            solve_rollouts: 8,
            max_prompt_tokens: 6144,
            sampling: SamplingParams::default(),
            seed_max_rounds: 64,
        }
    }
}

impl LoopSettings {
    pub fn check(&self) -> Result<(), String> {
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("k_references", self.k_references),
            ("seed_factor", self.seed_factor),
            ("solve_rollouts", self.solve_rollouts),
            ("max_prompt_tokens", self.max_prompt_tokens),
            ("seed_max_rounds", self.seed_max_rounds),
        ] {
            if v == 0 {
                return Err(format!("{name} must be at least 1"));
            }
        }
        if self.induction_inputs < 2 {
            return Err("induction_inputs must be at least 2".into());
        }
        if self.sampling.temperature == 0.0 {
            return Err("sampling temperature must be nonzero for solve-rate estimates".into());
        }
        self.sampling.check()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("policy unreachable during {phase}: {source}")]
    PolicyUnreachable {
        phase: &'static str,
        #[source]
        source: PolicyError,
    },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("seeding the {what} buffer stalled at {have}/{want} after {rounds} rounds")]
    SeedingStalled {
        what: &'static str,
        have: usize,
        want: usize,
        rounds: usize,
    },
}

#[derive(Clone, Copy)]
pub struct Engine<'a> {
    pub policy: &'a dyn Policy,
    pub sandbox: &'a Sandbox,
    pub prompts: &'a PromptLibrary,
    pub settings: &'a LoopSettings,
}

impl<'a> Engine<'a> {
    /// Issues `requests` as one batch, retrying transient failures once.
    ///
    /// Requests that still fail come back as `Err`. A non-transient policy
    /// error anywhere, or a batch in which every request failed, is returned
    /// as the outer error.
    pub fn generate(&self, phase: &'static str, requests: &[PolicyRequest]) -> Result<Vec<Result<PolicyTranscript, PolicyError>>, EngineError> {
        let mut results = self.policy.generate_batch(requests);
        let retry: Vec<usize> = (0..results.len()).filter(|&i| results[i].as_ref().err().is_some_and(PolicyError::is_transient)).collect();
        if !retry.is_empty() {
            let again: Vec<PolicyRequest> = retry.iter().map(|&i| requests[i].clone()).collect();
            for (i, r) in retry.into_iter().zip(self.policy.generate_batch(&again)) {
                results[i] = r;
            }
        }
        if let Some(Err(e)) = results.iter().find(|r| r.as_ref().err().is_some_and(|e| !e.is_transient())) {
            return Err(EngineError::Policy(e.clone()));
        }
        if !results.is_empty() && results.iter().all(Result::is_err) {
            let source = results.swap_remove(0).expect_err("all failed");
            return Err(EngineError::PolicyUnreachable { phase, source });
        }
        Ok(results)
    }

    pub fn request(&self, tag: String, prompt: String) -> PolicyRequest {
        PolicyRequest::new(tag, prompt, self.settings.sampling)
    }
}
