//! Observation-only metrics over proposed tasks: complexity, syntax-tree
//! distance to the prompt references, answer diversity and response lengths.
//!
//! Nothing here feeds back into buffers, rewards or advantages.

mod diversity;
mod halstead;
mod tree;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::harness::HarnessTool;
use crate::prompts::CHARS_PER_TOKEN;
use crate::sandbox::{Sandbox, SandboxError};
use crate::types::{Role, TaskType};

pub use diversity::AnswerTracker;
pub use halstead::{halstead, Halstead, Token};
pub use tree::{tree_edit_distance, Tree};

/// Trees larger than this fall back to token edit distance.
pub const DEFAULT_NODE_BUDGET: usize = 500;

/// Tokens and syntax tree of one program, fetched from the harness once.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgramProfile {
    pub tokens: Option<Vec<Token>>,
    pub tree: Option<Tree>,
}

impl ProgramProfile {
    /// Parse failures leave the corresponding field empty.
    pub fn fetch(sandbox: &Sandbox, program: &str) -> Result<Self, SandboxError> {
        let tokens = match sandbox.tool_json::<Vec<Token>>(HarnessTool::Tokens, program)? {
            Ok(t) if !t.is_empty() => Some(t),
            Ok(_) => None,
            Err(e) => {
                tracing::debug!("tokenization failed: {e}");
                None
            }
        };
        let tree = match sandbox.tool_json::<serde_json::Value>(HarnessTool::SyntaxTree, program)? {
            Ok(v) => Some(Tree::from_json(&v).map_err(SandboxError::BadToolOutput)?),
            Err(e) => {
                tracing::debug!("syntax tree dump failed: {e}");
                None
            }
        };
        Ok(Self { tokens, tree })
    }

    pub fn halstead(&self) -> Option<Halstead> {
        self.tokens.as_deref().and_then(halstead)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distance {
    pub value: f64,
    /// Computed over token sequences because a tree exceeded the node budget.
    pub token_fallback: bool,
}

/// Tree edit distance, or token edit distance when either tree is larger than
/// `node_budget`. `None` when either program did not parse.
pub fn ast_edit_distance(a: &ProgramProfile, b: &ProgramProfile, node_budget: usize) -> Option<Distance> {
    let (ta, tb) = (a.tree.as_ref()?, b.tree.as_ref()?);
    if ta.size() <= node_budget && tb.size() <= node_budget {
        return Some(Distance {
            value: tree_edit_distance(ta, tb) as f64,
            token_fallback: false,
        });
    }
    let (ka, kb) = (a.tokens.as_ref()?, b.tokens.as_ref()?);
    let sa: Vec<&str> = ka.iter().map(Token::text).collect();
    let sb: Vec<&str> = kb.iter().map(Token::text).collect();
    Some(Distance {
        value: strsim::generic_levenshtein(&sa, &sb) as f64,
        token_fallback: true,
    })
}

/// Metrics of one accepted proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task_type: TaskType,
    pub halstead: Option<Halstead>,
    pub ast_distance_mean: Option<f64>,
    pub ast_fallbacks: usize,
    pub answer_diversity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeSummary {
    pub proposals: usize,
    pub halstead_volume_mean: Option<f64>,
    pub branches_mean: Option<f64>,
    pub ast_distance_mean: Option<f64>,
    pub ast_fallbacks: usize,
    pub answer_diversity_mean: Option<f64>,
}

/// One line of the metrics sidecar.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub tasks: BTreeMap<TaskType, TypeSummary>,
    /// Mean response length in tokens per `role.task_type`.
    pub token_lengths: BTreeMap<String, f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl IterationMetrics {
    pub fn summarize(iteration: u64, tasks: &[TaskMetrics], lengths: &[(Role, TaskType, u64)]) -> Self {
        let mut out = Self {
            iteration,
            ..Self::default()
        };
        for t in TaskType::ALL {
            let of: Vec<&TaskMetrics> = tasks.iter().filter(|m| m.task_type == t).collect();
            out.tasks.insert(
                t,
                TypeSummary {
                    proposals: of.len(),
                    halstead_volume_mean: mean(of.iter().filter_map(|m| m.halstead.map(|h| h.volume))),
                    branches_mean: mean(of.iter().filter_map(|m| m.halstead.map(|h| h.branches as f64))),
                    ast_distance_mean: mean(of.iter().filter_map(|m| m.ast_distance_mean)),
                    ast_fallbacks: of.iter().map(|m| m.ast_fallbacks).sum(),
                    answer_diversity_mean: mean(of.iter().map(|m| m.answer_diversity)),
                },
            );
        }
        for role in Role::ALL {
            for t in TaskType::ALL {
                let v = mean(lengths.iter().filter(|(r, tt, _)| *r == role && *tt == t).map(|(_, _, n)| *n as f64));
                if let Some(v) = v {
                    out.token_lengths.insert(format!("{role}.{t}"), v);
                }
            }
        }
        out
    }
}

/// Response length in tokens: the server's count when reported, otherwise
/// a character-based estimate.
pub fn token_length(response: &str, completion_tokens: Option<u64>) -> u64 {
    completion_tokens.unwrap_or_else(|| response.chars().count().div_ceil(CHARS_PER_TOKEN) as u64)
}

/// Per-run metric state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsCollector {
    pub node_budget: usize,
    pub answers: AnswerTracker,
}

impl Default for MetricsCollector {
    fn default() -> Self {
        Self {
            node_budget: DEFAULT_NODE_BUDGET,
            answers: AnswerTracker::new(),
        }
    }
}

impl MetricsCollector {
    /// Profiles `program` against the programs of its prompt references and
    /// records `answer` in the diversity tracker.
    pub fn task_metrics(
        &mut self,
        sandbox: &Sandbox,
        task_type: TaskType,
        program: &str,
        answer: &str,
        references: &[String],
    ) -> Result<TaskMetrics, SandboxError> {
        let profile = ProgramProfile::fetch(sandbox, program)?;
        let mut dists = Vec::new();
        let mut fallbacks = 0;
        for r in references {
            let rp = ProgramProfile::fetch(sandbox, r)?;
            if let Some(d) = ast_edit_distance(&profile, &rp, self.node_budget) {
                fallbacks += usize::from(d.token_fallback);
                dists.push(d.value);
            }
        }
        Ok(TaskMetrics {
            task_type,
            halstead: profile.halstead(),
            ast_distance_mean: mean(dists.into_iter()),
            ast_fallbacks: fallbacks,
            answer_diversity: self.answers.observe(task_type, answer),
        })
    }
}
