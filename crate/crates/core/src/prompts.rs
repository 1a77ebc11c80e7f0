//! Prompt library: one text file per (role, task type) plus the conversation
//! wrapper, rendered with `{name}` slots.

use std::collections::BTreeMap;
use std::path::Path;

use crate::template;
use crate::types::{InductionTask, Role, TaskRecord, TaskType, Triplet};

pub const WRAPPER_FILE: &str = "r1_wrapper.txt";

/// Characters per token assumed when no tokenizer is available.
pub const CHARS_PER_TOKEN: usize = 4;

const SLOTS: &[&str] = &[
    "instruction",
    "forbidden_modules",
    "references",
    "n_inputs",
    "program",
    "input",
    "output",
    "message",
    "pairs",
];

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("prompt file {path}: {source}")]
    Missing {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {source}")]
    Render {
        file: String,
        #[source]
        source: template::RenderError,
    },
    #[error("{task_type} proposer prompt needs at least one reference")]
    NoReferences { task_type: TaskType },
    #[error("reference record does not fit a {task_type} prompt")]
    WrongReference { task_type: TaskType },
}

pub fn file_name(role: Role, task_type: TaskType) -> String {
    let prefix = match role {
        Role::Propose => "propose",
        Role::Solve => "solve",
    };
    format!("{prefix}_{}.txt", task_type.as_str())
}

/// A rendered, wrapped prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub text: String,
    /// References that made it into the prompt after truncation.
    pub references_used: usize,
    /// True when the prompt is still longer than the limit after dropping
    /// every droppable reference.
    pub over_limit: bool,
}

#[derive(Debug, Clone)]
pub struct PromptLibrary {
    wrapper: String,
    bodies: BTreeMap<(Role, TaskType), String>,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self::embedded()
    }
}

macro_rules! embedded_prompt {
    ($name:literal) => {
        include_str!(concat!("../../../prompts/", $name))
    };
}

impl PromptLibrary {
    pub fn embedded() -> Self {
        let mut bodies = BTreeMap::new();
        bodies.insert((Role::Propose, TaskType::Abduction), embedded_prompt!("propose_abduction.txt"));
        bodies.insert((Role::Propose, TaskType::Deduction), embedded_prompt!("propose_deduction.txt"));
        bodies.insert((Role::Propose, TaskType::Induction), embedded_prompt!("propose_induction.txt"));
        bodies.insert((Role::Solve, TaskType::Abduction), embedded_prompt!("solve_abduction.txt"));
        bodies.insert((Role::Solve, TaskType::Deduction), embedded_prompt!("solve_deduction.txt"));
        bodies.insert((Role::Solve, TaskType::Induction), embedded_prompt!("solve_induction.txt"));
        Self {
            wrapper: embedded_prompt!("r1_wrapper.txt").to_string(),
            bodies: bodies.into_iter().map(|(k, v)| (k, v.to_string())).collect(),
        }
    }

    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|source| PromptError::Missing {
                path: path.display().to_string(),
                source,
            })
        };
        let mut bodies = BTreeMap::new();
        for role in Role::ALL {
            for t in TaskType::ALL {
                bodies.insert((role, t), read(&file_name(role, t))?);
            }
        }
        Ok(Self {
            wrapper: read(WRAPPER_FILE)?,
            bodies,
        })
    }

    pub fn body(&self, role: Role, task_type: TaskType) -> &str {
        &self.bodies[&(role, task_type)]
    }

    pub fn wrapper(&self) -> &str {
        &self.wrapper
    }

    /// Renders a role body with `bindings` and wraps it in the conversation
    /// template.
    pub fn render(&self, role: Role, task_type: TaskType, bindings: &BTreeMap<&str, String>) -> Result<String, PromptError> {
        let body = template::render(self.body(role, task_type), SLOTS, bindings).map_err(|source| PromptError::Render {
            file: file_name(role, task_type),
            source,
        })?;
        self.wrap(&body)
    }

    pub fn wrap(&self, instruction: &str) -> Result<String, PromptError> {
        let mut b = BTreeMap::new();
        b.insert("instruction", instruction.to_string());
        template::render(&self.wrapper, SLOTS, &b).map_err(|source| PromptError::Render {
            file: WRAPPER_FILE.to_string(),
            source,
        })
    }

    /// Proposer prompt for `task_type`.
    ///
    /// Abduction and deduction prompts inline every reference triplet, oldest
    /// first; when the prompt exceeds `max_prompt_tokens` the oldest are
    /// dropped until it fits or one remains. Induction prompts use the
    /// program of the single reference.
    pub fn proposer_prompt(
        &self,
        task_type: TaskType,
        references: &[TaskRecord],
        forbidden: &[String],
        n_inputs: usize,
        max_prompt_tokens: usize,
    ) -> Result<Prompt, PromptError> {
        if references.is_empty() {
            return Err(PromptError::NoReferences { task_type });
        }
        let forbidden_modules = forbidden.join(", ");
        let max_chars = max_prompt_tokens.saturating_mul(CHARS_PER_TOKEN);

        if task_type == TaskType::Induction {
            let mut b = BTreeMap::new();
            b.insert("program", references[0].program().to_string());
            b.insert("forbidden_modules", forbidden_modules);
            b.insert("n_inputs", n_inputs.to_string());
            let text = self.render(Role::Propose, task_type, &b)?;
            let over_limit = text.chars().count() > max_chars;
            return Ok(Prompt {
                text,
                references_used: 1,
                over_limit,
            });
        }

        let triplets: Vec<&Triplet> = references
            .iter()
            .map(|r| r.as_triplet().ok_or(PromptError::WrongReference { task_type }))
            .collect::<Result<_, _>>()?;
        let mut first = 0;
        loop {
            let mut b = BTreeMap::new();
            b.insert("forbidden_modules", forbidden_modules.clone());
            b.insert("references", reference_blocks(&triplets[first..]));
            let text = self.render(Role::Propose, task_type, &b)?;
            let over = text.chars().count() > max_chars;
            if !over || first + 1 >= triplets.len() {
                return Ok(Prompt {
                    text,
                    references_used: triplets.len() - first,
                    over_limit: over,
                });
            }
            first += 1;
        }
    }

    pub fn solver_prompt_abduction(&self, program: &str, output: &str) -> Result<String, PromptError> {
        let mut b = BTreeMap::new();
        b.insert("program", program.to_string());
        b.insert("output", output.to_string());
        self.render(Role::Solve, TaskType::Abduction, &b)
    }

    pub fn solver_prompt_deduction(&self, program: &str, input: &str) -> Result<String, PromptError> {
        let mut b = BTreeMap::new();
        b.insert("program", program.to_string());
        b.insert("input", input.to_string());
        self.render(Role::Solve, TaskType::Deduction, &b)
    }

    pub fn solver_prompt_induction(&self, task: &InductionTask) -> Result<String, PromptError> {
        let mut b = BTreeMap::new();
        b.insert("message", task.message.clone());
        b.insert("pairs", pair_blocks(task.visible_pairs()));
        self.render(Role::Solve, TaskType::Induction, &b)
    }
}

/// Reference triplets rendered as numbered snippet sections.
pub fn reference_blocks(triplets: &[&Triplet]) -> String {
    let mut out = String::new();
    for (n, t) in triplets.iter().enumerate() {
        if n > 0 {
            out.push('\n');
        }
        out.push_str(&format!(
            "<snippet_{k}>\n```python\n{p}\n```\n```input\n{i}\n```\n```output\n{o}\n```\n</snippet_{k}>\n",
            k = n + 1,
            p = t.program.trim_end(),
            i = t.input,
            o = t.output
        ));
    }
    out
}

pub fn pair_blocks(pairs: &[(String, String)]) -> String {
    let mut out = String::new();
    for (n, (i, o)) in pairs.iter().enumerate() {
        if n > 0 {
            out.push('\n');
        }
        out.push_str(&format!("Example {}:\n```input\n{i}\n```\n```output\n{o}\n```\n", n + 1));
    }
    out
}
