//! Buffer seeding and the propose phase.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

use crate::buffer::{BufferError, BufferSet, Insertion, TaskBuffer};
use crate::engine::{Engine, EngineError};
use crate::metrics::token_length;
use crate::parse::{answer_block, blocks_with_lang, fenced_blocks};
use crate::policy::PolicyTranscript;
use crate::prompts::Prompt;
use crate::sandbox::{Sandbox, SandboxError};
use crate::types::{InductionTask, ParseStatus, TaskRecord, TaskType, Triplet};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProposalPayload {
    Triplet { program: String, input: String },
    Induction { inputs: Vec<String>, message: String },
}

/// Structural parse of a proposer response. `payload` is present iff
/// `parse_status` is `WellFormatted`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProposalParse {
    pub task_type: TaskType,
    pub payload: Option<ProposalPayload>,
    pub parse_status: ParseStatus,
}

impl ProposalParse {
    fn failed(task_type: TaskType) -> Self {
        Self {
            task_type,
            payload: None,
            parse_status: ParseStatus::FormatError,
        }
    }
}

/// Extracts the program and input (abduction, deduction) or up to `n_inputs`
/// inputs and the message (induction) from the answer block.
pub fn parse_proposal(response: &str, task_type: TaskType, n_inputs: usize) -> ProposalParse {
    let Some(block) = answer_block(response) else {
        return ProposalParse::failed(task_type);
    };
    let blocks = fenced_blocks(block);
    let payload = if task_type.is_triplet() {
        let program = blocks_with_lang(&blocks, &["python", "py"]).next();
        let input = blocks_with_lang(&blocks, &["input"]).next();
        match (program, input) {
            (Some(p), Some(i)) if !p.body.trim().is_empty() && !i.body.trim().is_empty() => ProposalPayload::Triplet {
                program: p.body.clone(),
                input: i.body.trim().to_string(),
            },
            _ => return ProposalParse::failed(task_type),
        }
    } else {
        let inputs: Vec<String> = blocks_with_lang(&blocks, &["input"])
            .map(|b| b.body.trim().to_string())
            .filter(|s| !s.is_empty())
            .take(n_inputs)
            .collect();
        let message = blocks_with_lang(&blocks, &["message"]).next();
        match message {
            Some(m) if inputs.len() >= InductionTask::MIN_PAIRS => ProposalPayload::Induction {
                inputs,
                message: m.body.trim().to_string(),
            },
            _ => return ProposalParse::failed(task_type),
        }
    };
    ProposalParse {
        task_type,
        payload: Some(payload),
        parse_status: ParseStatus::WellFormatted,
    }
}

/// Validates every input against `program`; all must pass.
pub fn validate_induction(sandbox: &Sandbox, program: &str, inputs: &[String], message: &str) -> Result<Result<InductionTask, String>, SandboxError> {
    let mut pairs = Vec::with_capacity(inputs.len());
    for (n, input) in inputs.iter().enumerate() {
        let v = sandbox.validate_and_construct(program, input)?;
        match v.output {
            Some(out) => pairs.push((input.clone(), out)),
            None => return Ok(Err(format!("input {}: {:?}", n + 1, v.failure))),
        }
    }
    Ok(Ok(InductionTask::new(program, pairs, message)))
}

fn sorted_sample<R: Rng + ?Sized>(buffer: &TaskBuffer, k: usize, rng: &mut R) -> Result<Vec<TaskRecord>, BufferError> {
    let mut idx = buffer.sample_indices(k, rng)?;
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| buffer.items()[i].clone()).collect())
}

/// One program drawn uniformly from the abduction and deduction buffers
/// together.
fn sample_union_program<R: Rng + ?Sized>(buffers: &BufferSet, rng: &mut R) -> Result<TaskRecord, BufferError> {
    let (a, d) = (buffers.abduction.len(), buffers.deduction.len());
    if a + d == 0 {
        return Err(BufferError::Empty(TaskType::Deduction));
    }
    let k = rng.random_range(0..a + d);
    Ok(if k < a {
        buffers.abduction.items()[k].clone()
    } else {
        buffers.deduction.items()[k - a].clone()
    })
}

/// Proposer prompt with references drawn from `buffers`: `K` sorted samples
/// from the matching buffer, or one program from abduction ∪ deduction for
/// induction.
pub fn build_proposer_prompt<R: Rng + ?Sized>(engine: &Engine<'_>, task_type: TaskType, buffers: &BufferSet, rng: &mut R) -> Result<(Prompt, Vec<TaskRecord>), EngineError> {
    let refs = if task_type.is_triplet() {
        sorted_sample(buffers.get(task_type), engine.settings.k_references, rng)?
    } else {
        vec![sample_union_program(buffers, rng)?]
    };
    let prompt = proposer_prompt_for(engine, task_type, &refs)?;
    Ok((prompt, refs))
}

fn proposer_prompt_for(engine: &Engine<'_>, task_type: TaskType, refs: &[TaskRecord]) -> Result<Prompt, EngineError> {
    let s = engine.settings;
    Ok(engine
        .prompts
        .proposer_prompt(task_type, refs, &engine.sandbox.config().forbidden, s.induction_inputs, s.max_prompt_tokens)?)
}

/// Outcome of one proposal slot.
#[derive(Debug, Clone)]
pub struct ProposalSlot {
    pub task_type: TaskType,
    pub prompt: String,
    pub response: String,
    pub parse: ProposalParse,
    /// Programs of the references the prompt showed.
    pub reference_programs: Vec<String>,
    /// The validated task, if every filter passed.
    pub accepted: Option<TaskRecord>,
    pub rejection: Option<String>,
    pub transport_error: Option<String>,
    pub tokens: u64,
}

impl ProposalSlot {
    pub fn passed_filters(&self) -> bool {
        self.accepted.is_some()
    }

    /// Format status as rewarded: a task failing a validity filter counts as
    /// malformed.
    pub fn reward_status(&self) -> ParseStatus {
        if self.passed_filters() {
            ParseStatus::WellFormatted
        } else {
            ParseStatus::FormatError
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ProposePhase {
    /// Abduction slots, then deduction, then induction; `batch_size` each.
    pub slots: Vec<ProposalSlot>,
    /// Accepted tasks that were stored (the buffer may be full).
    pub inserted: BTreeMap<TaskType, usize>,
}

impl ProposePhase {
    /// Valid tasks proposed this iteration for `task_type`, in slot order.
    pub fn valid_new(&self, task_type: TaskType) -> Vec<TaskRecord> {
        self.slots
            .iter()
            .filter(|s| s.task_type == task_type)
            .filter_map(|s| s.accepted.clone())
            .collect()
    }
}

/// Parses and validates one response. Induction validates the proposed
/// inputs against the reference program.
fn evaluate_slot(sandbox: &Sandbox, task_type: TaskType, refs: &[TaskRecord], response: &str, n_inputs: usize) -> Result<(ProposalParse, Option<TaskRecord>, Option<String>), SandboxError> {
    let parse = parse_proposal(response, task_type, n_inputs);
    let (accepted, rejection) = match &parse.payload {
        None => (None, Some("malformed response".to_string())),
        Some(ProposalPayload::Triplet { program, input }) => {
            let v = sandbox.validate_and_construct(program, input)?;
            match v.output {
                Some(out) => (Some(Triplet::new(program.clone(), input.clone(), out).into()), None),
                None => (None, Some(format!("{:?}", v.failure))),
            }
        }
        Some(ProposalPayload::Induction { inputs, message }) => match validate_induction(sandbox, refs[0].program(), inputs, message)? {
            Ok(task) => (Some(task.into()), None),
            Err(why) => (None, Some(why)),
        },
    };
    Ok((parse, accepted, rejection))
}

/// One propose phase: `batch_size` proposals per task type, validated, with
/// the valid ones appended to their buffers.
pub fn propose_phase<R: Rng + ?Sized>(engine: &Engine<'_>, buffers: &mut BufferSet, rng: &mut R) -> Result<ProposePhase, EngineError> {
    let b = engine.settings.batch_size;
    let mut plans = Vec::with_capacity(3 * b);
    for t in TaskType::ALL {
        for _ in 0..b {
            let (prompt, refs) = build_proposer_prompt(engine, t, buffers, rng)?;
            plans.push((t, prompt.text, refs));
        }
    }
    let requests: Vec<_> = plans.iter().map(|(t, p, _)| engine.request(format!("propose.{t}"), p.clone())).collect();
    let results = engine.generate("propose", &requests)?;

    let n_inputs = engine.settings.induction_inputs;
    let evaluated: Vec<Result<ProposalSlot, SandboxError>> = plans
        .into_par_iter()
        .zip(results.into_par_iter())
        .map(|((t, prompt, refs), result)| {
            let reference_programs = refs.iter().map(|r| r.program().to_string()).collect();
            match result {
                Ok(PolicyTranscript { response, usage, .. }) => {
                    let (parse, accepted, rejection) = evaluate_slot(engine.sandbox, t, &refs, &response, n_inputs)?;
                    let tokens = token_length(&response, usage.map(|u| u.completion_tokens));
                    Ok(ProposalSlot {
                        task_type: t,
                        prompt,
                        response,
                        parse,
                        reference_programs,
                        accepted,
                        rejection,
                        transport_error: None,
                        tokens,
                    })
                }
                Err(e) => Ok(ProposalSlot {
                    task_type: t,
                    prompt,
                    response: String::new(),
                    parse: ProposalParse::failed(t),
                    reference_programs,
                    accepted: None,
                    rejection: None,
                    transport_error: Some(e.to_string()),
                    tokens: 0,
                }),
            }
        })
        .collect();

    let mut phase = ProposePhase::default();
    for slot in evaluated {
        let slot = slot?;
        if let Some(task) = &slot.accepted {
            if buffers.get_mut(slot.task_type).insert(task.clone())? == Insertion::Inserted {
                *phase.inserted.entry(slot.task_type).or_default() += 1;
            }
        }
        phase.slots.push(slot);
    }
    Ok(phase)
}

/// Fills the seed buffer with `batch_size * seed_factor` validated, stripped
/// triplets, copies it into the abduction and deduction buffers, then fills
/// the induction buffer to the same size from seed programs.
pub fn seed_buffers<R: Rng + ?Sized>(engine: &Engine<'_>, capacity: usize, rng: &mut R) -> Result<BufferSet, EngineError> {
    let s = engine.settings;
    let want = s.batch_size * s.seed_factor;
    let mut seed = TaskBuffer::with_capacity(TaskType::Deduction, capacity);

    let mut rounds = 0;
    while seed.len() < want {
        if rounds == s.seed_max_rounds {
            return Err(EngineError::SeedingStalled {
                what: "seed",
                have: seed.len(),
                want,
                rounds,
            });
        }
        rounds += 1;
        let mut requests = Vec::with_capacity(s.batch_size);
        for _ in 0..s.batch_size {
            let refs = if seed.is_empty() {
                vec![TaskRecord::from(Triplet::zero())]
            } else {
                sorted_sample(&seed, s.k_references, rng)?
            };
            let prompt = proposer_prompt_for(engine, TaskType::Deduction, &refs)?;
            requests.push(engine.request(format!("propose.{}", TaskType::Deduction), prompt.text));
        }
        let results = engine.generate("seeding", &requests)?;
        let candidates: Vec<Result<Option<Triplet>, SandboxError>> = results
            .par_iter()
            .map(|r| {
                let Ok(t) = r else { return Ok(None) };
                let parse = parse_proposal(&t.response, TaskType::Deduction, s.induction_inputs);
                let Some(ProposalPayload::Triplet { program, input }) = parse.payload else {
                    return Ok(None);
                };
                let stripped = match engine.sandbox.strip_program(&program) {
                    Ok(p) => p,
                    Err(SandboxError::Rejected(_)) => return Ok(None),
                    Err(e) => return Err(e),
                };
                let v = engine.sandbox.validate_and_construct(&stripped, &input)?;
                Ok(v.output.map(|out| Triplet::new(stripped, input, out)))
            })
            .collect();
        for c in candidates {
            if let Some(t) = c? {
                if seed.len() < want {
                    seed.insert(t)?;
                }
            }
        }
        tracing::info!("seeding round {rounds}: {}/{want} triplets", seed.len());
    }

    let mut buffers = BufferSet::new(capacity);
    for item in seed.items() {
        buffers.abduction.insert(item.clone())?;
        buffers.deduction.insert(item.clone())?;
    }

    let mut rounds = 0;
    while buffers.induction.len() < want {
        if rounds == s.seed_max_rounds {
            return Err(EngineError::SeedingStalled {
                what: "induction",
                have: buffers.induction.len(),
                want,
                rounds,
            });
        }
        rounds += 1;
        let mut plans = Vec::with_capacity(s.batch_size);
        for _ in 0..s.batch_size {
            let refs = vec![seed.sample(1, rng)?.remove(0)];
            let prompt = proposer_prompt_for(engine, TaskType::Induction, &refs)?;
            plans.push((refs, prompt.text));
        }
        let requests: Vec<_> = plans.iter().map(|(_, p)| engine.request(format!("propose.{}", TaskType::Induction), p.clone())).collect();
        let results = engine.generate("seeding", &requests)?;
        let candidates: Vec<Result<Option<TaskRecord>, SandboxError>> = plans
            .par_iter()
            .zip(results.par_iter())
            .map(|((refs, _), r)| {
                let Ok(t) = r else { return Ok(None) };
                let (_, accepted, _) = evaluate_slot(engine.sandbox, TaskType::Induction, refs, &t.response, s.induction_inputs)?;
                Ok(accepted)
            })
            .collect();
        for c in candidates {
            if let Some(task) = c? {
                if buffers.induction.len() < want {
                    buffers.induction.insert(task)?;
                }
            }
        }
        tracing::info!("induction seeding round {rounds}: {}/{want} tasks", buffers.induction.len());
    }
    Ok(buffers)
}
