//! Learnability, solve and composite rewards.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::policy::{Policy, PolicyError, PolicyRequest, SamplingParams};
use crate::prompts::{PromptError, PromptLibrary};
use crate::sandbox::{Sandbox, SandboxError};
use crate::solver::{parse_answer, verify, SolverQuery};
use crate::types::{ParseStatus, Role, TaskType};

pub const FORMAT_PENALTY: f64 = -1.0;
pub const WRONG_ANSWER_PENALTY: f64 = -0.5;

#[derive(Debug, thiserror::Error)]
pub enum RewardError {
    #[error("solve rate {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("all {rollouts} learnability rollouts failed: {source}")]
    RolloutsFailed {
        rollouts: usize,
        #[source]
        source: PolicyError,
    },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// `0` when the task is never solved, otherwise `1 - r̄`.
pub fn proposer_reward(solve_rate: f64) -> Result<f64, RewardError> {
    if !(0.0..=1.0).contains(&solve_rate) {
        return Err(RewardError::OutOfRange(solve_rate));
    }
    Ok(if solve_rate == 0.0 { 0.0 } else { 1.0 - solve_rate })
}

pub fn solver_reward(correct: bool) -> f64 {
    if correct {
        1.0
    } else {
        0.0
    }
}

/// The reward actually emitted for a rollout.
///
/// | role    | response                              | reward     |
/// |---------|---------------------------------------|------------|
/// | either  | format error                          | -1         |
/// | propose | well formatted, fails a filter        | -1         |
/// | propose | well formatted, valid                 | `raw`      |
/// | solve   | well formatted, wrong (`raw == 0`)    | -0.5       |
/// | solve   | well formatted, correct               | `raw`      |
pub fn composite_reward(role: Role, status: ParseStatus, passed_filters: bool, raw: f64) -> f64 {
    if !status.is_ok() {
        return FORMAT_PENALTY;
    }
    match role {
        Role::Propose if !passed_filters => FORMAT_PENALTY,
        Role::Propose => raw,
        Role::Solve if raw == 0.0 => WRONG_ANSWER_PENALTY,
        Role::Solve => raw,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub role: Role,
    pub task_type: TaskType,
    /// `r_propose` or `r_solve`.
    pub raw_role: f64,
    pub composite: f64,
    /// Proposer only.
    pub solve_rate_estimate: Option<f64>,
    pub rollout_count: usize,
}

impl RewardBreakdown {
    pub fn proposer(task_type: TaskType, status: ParseStatus, passed_filters: bool, estimate: Option<&SolveRateEstimate>) -> Result<Self, RewardError> {
        let (raw_role, rate, count) = match estimate {
            Some(e) => (proposer_reward(e.rate)?, Some(e.rate), e.rollouts),
            None => (0.0, None, 0),
        };
        Ok(Self {
            role: Role::Propose,
            task_type,
            raw_role,
            composite: composite_reward(Role::Propose, status, passed_filters && estimate.is_some(), raw_role),
            solve_rate_estimate: rate,
            rollout_count: count,
        })
    }

    pub fn solver(task_type: TaskType, status: ParseStatus, correct: bool) -> Self {
        let raw_role = solver_reward(correct);
        Self {
            role: Role::Solve,
            task_type,
            raw_role,
            composite: composite_reward(Role::Solve, status, true, raw_role),
            solve_rate_estimate: None,
            rollout_count: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveRateEstimate {
    pub rate: f64,
    pub successes: usize,
    pub rollouts: usize,
    /// Rollouts lost to transport failures even after the retry; they count
    /// as unsolved.
    pub transport_failures: usize,
}

fn retryable(e: &PolicyError) -> bool {
    e.is_transient() || matches!(e, PolicyError::Decode(_))
}

/// Monte Carlo estimate of the solver's success rate on each query from `g`
/// rollouts, all issued as one policy batch.
///
/// Rollouts that fail in transport are retried once; any left failing count
/// as unsolved. A query whose every rollout failed, or any non-transient
/// policy error, aborts the estimate.
pub fn estimate_solve_rates(
    policy: &dyn Policy,
    sandbox: &Sandbox,
    prompts: &PromptLibrary,
    queries: &[SolverQuery],
    g: usize,
    params: SamplingParams,
) -> Result<Vec<SolveRateEstimate>, RewardError> {
    assert!(g >= 1, "need at least one rollout");
    let mut requests = Vec::with_capacity(queries.len() * g);
    for q in queries {
        let prompt = q.prompt(prompts)?;
        for _ in 0..g {
            requests.push(PolicyRequest::new(format!("estimate.{}", q.task_type), prompt.clone(), params));
        }
    }
    let mut results = policy.generate_batch(&requests);

    let retry_idx: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.as_ref().err().is_some_and(retryable))
        .map(|(i, _)| i)
        .collect();
    if !retry_idx.is_empty() {
        let again: Vec<PolicyRequest> = retry_idx.iter().map(|&i| requests[i].clone()).collect();
        for (i, r) in retry_idx.into_iter().zip(policy.generate_batch(&again)) {
            results[i] = r;
        }
    }
    if let Some(Err(e)) = results.iter().find(|r| r.as_ref().err().is_some_and(|e| !retryable(e))) {
        return Err(RewardError::Policy(e.clone()));
    }

    let verdicts: Vec<Result<Option<bool>, SandboxError>> = results
        .par_iter()
        .enumerate()
        .map(|(i, r)| match r {
            Ok(t) => {
                let q = &queries[i / g];
                match parse_answer(&t.response, q.task_type) {
                    Some(answer) => verify(sandbox, q, &answer).map(|v| Some(v.is_correct())),
                    None => Ok(Some(false)),
                }
            }
            Err(_) => Ok(None),
        })
        .collect();

    let mut out = Vec::with_capacity(queries.len());
    let mut verdicts = verdicts.into_iter();
    for qi in 0..queries.len() {
        let mut successes = 0;
        let mut failures = 0;
        for v in verdicts.by_ref().take(g) {
            match v? {
                Some(true) => successes += 1,
                Some(false) => {}
                None => failures += 1,
            }
        }
        if failures == g {
            let source = results[qi * g].as_ref().err().cloned().expect("every rollout failed");
            return Err(RewardError::RolloutsFailed { rollouts: g, source });
        }
        out.push(SolveRateEstimate {
            rate: successes as f64 / g as f64,
            successes,
            rollouts: g,
            transport_failures: failures,
        });
    }
    Ok(out)
}
