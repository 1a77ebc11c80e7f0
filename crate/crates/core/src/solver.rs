//! Solve phase: solver queries, answer parsing and verification against gold.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

use crate::buffer::{BufferError, BufferSet, TaskBuffer};
use crate::engine::{Engine, EngineError};
use crate::harness::{string_list_literal, string_literal, DriverTemplate};
use crate::metrics::token_length;
use crate::parse::{answer_block, fenced_or_bare};
use crate::prompts::{PromptError, PromptLibrary};
use crate::sandbox::{HarnessFault, Outcome, Sandbox, SandboxError};
use crate::types::{ParseStatus, TaskRecord, TaskType};

/// Where a query's task came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuerySource {
    /// Index into the tasks accepted during the current propose phase.
    New(usize),
    /// Index into the task type's buffer.
    Buffer(usize),
}

/// A task prepared for the solver. What is shown and what is withheld depends
/// on the task type: deduction shows (p, i), abduction shows (p, o), and
/// induction shows the first `N // 2` pairs plus the message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolverQuery {
    pub task_type: TaskType,
    pub task: TaskRecord,
    pub source: QuerySource,
}

impl SolverQuery {
    pub fn new(task_type: TaskType, task: TaskRecord, source: QuerySource) -> Result<Self, BufferError> {
        if !task.fits(task_type) {
            return Err(BufferError::TypeMismatch {
                expected: task_type,
                got: crate::buffer::record_kind(&task),
            });
        }
        Ok(Self { task_type, task, source })
    }

    pub fn tag(&self) -> String {
        format!("solve.{}", self.task_type)
    }

    pub fn prompt(&self, library: &PromptLibrary) -> Result<String, PromptError> {
        match (&self.task, self.task_type) {
            (TaskRecord::Triplet(t), TaskType::Abduction) => library.solver_prompt_abduction(&t.program, &t.output),
            (TaskRecord::Triplet(t), _) => library.solver_prompt_deduction(&t.program, &t.input),
            (TaskRecord::Induction(t), _) => library.solver_prompt_induction(t),
        }
    }

    /// The withheld gold answer as text: the input, the output, or the program.
    pub fn hidden(&self) -> &str {
        match (&self.task, self.task_type) {
            (TaskRecord::Triplet(t), TaskType::Abduction) => &t.input,
            (TaskRecord::Triplet(t), _) => &t.output,
            (TaskRecord::Induction(t), _) => &t.program,
        }
    }
}

/// Exactly `b` queries for one task type: every new task first, then uniform
/// draws from the buffer for the remainder.
pub fn build_solver_batch<R: Rng + ?Sized>(
    buffer: &TaskBuffer,
    new_tasks: &[TaskRecord],
    b: usize,
    rng: &mut R,
) -> Result<Vec<SolverQuery>, BufferError> {
    let task_type = buffer.task_type();
    let mut out = Vec::with_capacity(b);
    for (n, task) in new_tasks.iter().take(b).enumerate() {
        out.push(SolverQuery::new(task_type, task.clone(), QuerySource::New(n))?);
    }
    let missing = b - out.len();
    if missing > 0 {
        for idx in buffer.sample_indices(missing, rng)? {
            let task = buffer.items()[idx].clone();
            out.push(SolverQuery::new(task_type, task, QuerySource::Buffer(idx))?);
        }
    }
    Ok(out)
}

/// Extracts the answer for `task_type`, or `None` for a format error.
///
/// The answer block may hold the bare answer or a fenced block; abduction
/// expects an `input` block, deduction an `output` block and induction a
/// `python` block that defines `f`.
pub fn parse_answer(response: &str, task_type: TaskType) -> Option<String> {
    let block = answer_block(response)?;
    let langs: &[&str] = match task_type {
        TaskType::Abduction => &["input"],
        TaskType::Deduction => &["output"],
        TaskType::Induction => &["python", "py"],
    };
    let text = fenced_or_bare(block, langs)?;
    let text = if task_type == TaskType::Induction { text } else { text.trim().to_string() };
    if task_type == TaskType::Induction && !defines_f(&text) {
        return None;
    }
    Some(text)
}

fn defines_f(program: &str) -> bool {
    program.lines().any(|l| {
        let l = l.trim_start();
        l.strip_prefix("def f(").is_some() || l.strip_prefix("def f (").is_some()
    })
}

/// Result of checking one solver answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verification {
    Correct,
    Incorrect,
    /// The answer references a forbidden name and was not executed.
    Unsafe,
}

impl Verification {
    pub fn is_correct(self) -> bool {
        matches!(self, Verification::Correct)
    }
}

/// Checks a parsed answer against the query's gold data.
pub fn verify(sandbox: &Sandbox, query: &SolverQuery, answer: &str) -> Result<Verification, SandboxError> {
    match (&query.task, query.task_type) {
        (TaskRecord::Triplet(t), TaskType::Abduction) => verify_abduction(sandbox, &t.program, &t.output, answer),
        (TaskRecord::Triplet(t), _) => verify_deduction(sandbox, &t.program, &t.output, answer),
        (TaskRecord::Induction(t), _) => verify_induction(sandbox, answer, &t.pairs),
    }
}

/// True iff `f(agent_input)` equals the gold output by value.
pub fn verify_abduction(sandbox: &Sandbox, program: &str, gold_output: &str, agent_input: &str) -> Result<Verification, SandboxError> {
    if !sandbox.check_safety(agent_input)?.passed {
        return Ok(Verification::Unsafe);
    }
    let mut b = BTreeMap::new();
    b.insert("code", program.to_string());
    b.insert("gold_output", string_literal(gold_output));
    b.insert("agent_input", agent_input.to_string());
    run_verdict(sandbox, DriverTemplate::AbductionEval, &b)
}

/// True iff both representations evaluate to equal values.
pub fn verify_deduction(sandbox: &Sandbox, program: &str, gold_output: &str, agent_output: &str) -> Result<Verification, SandboxError> {
    if !sandbox.check_safety(agent_output)?.passed {
        return Ok(Verification::Unsafe);
    }
    let mut b = BTreeMap::new();
    b.insert("code", program.to_string());
    b.insert("gold_output", string_literal(gold_output));
    b.insert("agent_output", string_literal(agent_output));
    run_verdict(sandbox, DriverTemplate::DeductionEval, &b)
}

/// True iff the agent program reproduces every pair.
pub fn verify_induction(sandbox: &Sandbox, agent_program: &str, pairs: &[(String, String)]) -> Result<Verification, SandboxError> {
    if !sandbox.check_safety(agent_program)?.passed {
        return Ok(Verification::Unsafe);
    }
    let mut b = BTreeMap::new();
    b.insert("code", agent_program.to_string());
    b.insert("gold_inputs", string_list_literal(pairs.iter().map(|p| p.0.as_str())));
    b.insert("gold_outputs", string_list_literal(pairs.iter().map(|p| p.1.as_str())));
    run_verdict(sandbox, DriverTemplate::InductionEval, &b)
}

/// Runs an equality driver. A broken protocol line is retried once and then
/// counted as incorrect; an unusable interpreter is an error.
fn run_verdict(sandbox: &Sandbox, template: DriverTemplate, bindings: &BTreeMap<&str, String>) -> Result<Verification, SandboxError> {
    for attempt in 0..2 {
        let out = sandbox.run_driver(template, bindings, sandbox.timeout());
        return Ok(match out.outcome {
            Outcome::Ok(v) if v == "True" => Verification::Correct,
            Outcome::Ok(_) | Outcome::Raised { .. } | Outcome::Timeout => Verification::Incorrect,
            Outcome::HarnessFailure(HarnessFault::Unavailable(r)) => return Err(SandboxError::Unavailable(r)),
            Outcome::HarnessFailure(HarnessFault::Protocol(r)) => {
                if attempt == 0 {
                    tracing::debug!("{template}: protocol failure ({r}), retrying");
                    continue;
                }
                Verification::Incorrect
            }
        });
    }
    unreachable!("loop returns on the second attempt")
}

/// Outcome of one solver rollout.
#[derive(Debug, Clone)]
pub struct SolveSlot {
    pub query: SolverQuery,
    pub prompt: String,
    pub response: String,
    /// Parsed answer; `None` is a format error.
    pub answer: Option<String>,
    pub verification: Option<Verification>,
    pub transport_error: Option<String>,
    pub tokens: u64,
}

impl SolveSlot {
    pub fn parse_status(&self) -> ParseStatus {
        if self.answer.is_some() {
            ParseStatus::WellFormatted
        } else {
            ParseStatus::FormatError
        }
    }

    pub fn correct(&self) -> bool {
        self.verification.is_some_and(Verification::is_correct)
    }
}

/// One solve phase: `batch_size` queries per task type (new tasks first,
/// buffer samples for the rest), one rollout each, verified.
pub fn solve_phase<R: Rng + ?Sized>(
    engine: &Engine<'_>,
    buffers: &BufferSet,
    new_tasks: &BTreeMap<TaskType, Vec<TaskRecord>>,
    rng: &mut R,
) -> Result<Vec<SolveSlot>, EngineError> {
    let b = engine.settings.batch_size;
    let mut queries = Vec::with_capacity(3 * b);
    for t in TaskType::ALL {
        let fresh = new_tasks.get(&t).map(Vec::as_slice).unwrap_or(&[]);
        queries.extend(build_solver_batch(buffers.get(t), fresh, b, rng)?);
    }
    let prompts: Vec<String> = queries.iter().map(|q| q.prompt(engine.prompts)).collect::<Result<_, _>>()?;
    let requests: Vec<_> = queries.iter().zip(&prompts).map(|(q, p)| engine.request(q.tag(), p.clone())).collect();
    let results = engine.generate("solve", &requests)?;

    let slots: Vec<Result<SolveSlot, SandboxError>> = queries
        .into_par_iter()
        .zip(prompts.into_par_iter())
        .zip(results.into_par_iter())
        .map(|((query, prompt), result)| match result {
            Ok(t) => {
                let answer = parse_answer(&t.response, query.task_type);
                let verification = match &answer {
                    Some(a) => Some(verify(engine.sandbox, &query, a)?),
                    None => None,
                };
                let tokens = token_length(&t.response, t.usage.map(|u| u.completion_tokens));
                Ok(SolveSlot {
                    query,
                    prompt,
                    response: t.response,
                    answer,
                    verification,
                    transport_error: None,
                    tokens,
                })
            }
            Err(e) => Ok(SolveSlot {
                query,
                prompt,
                response: String::new(),
                answer: None,
                verification: None,
                transport_error: Some(e.to_string()),
                tokens: 0,
            }),
        })
        .collect();
    Ok(slots.into_iter().collect::<Result<_, _>>()?)
}
