//! Domain types shared by every stage of the self-play loop.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The three reasoning modes a task can exercise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskType {
    /// Given program and output, recover an input.
    Abduction,
    /// Given program and input, predict the output.
    Deduction,
    /// Given input/output pairs and a message, write the program.
    Induction,
}

impl TaskType {
    pub const ALL: [TaskType; 3] = [TaskType::Abduction, TaskType::Deduction, TaskType::Induction];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::Abduction => "abduction",
            TaskType::Deduction => "deduction",
            TaskType::Induction => "induction",
        }
    }

    /// True for the task types whose buffer stores plain triplets.
    pub fn is_triplet(self) -> bool {
        !matches!(self, TaskType::Induction)
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "abduction" | "abd" => Ok(TaskType::Abduction),
            "deduction" | "ded" => Ok(TaskType::Deduction),
            "induction" | "ind" => Ok(TaskType::Induction),
            other => Err(format!("unknown task type `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Propose,
    Solve,
}

impl Role {
    pub const ALL: [Role; 2] = [Role::Propose, Role::Solve];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Propose => "propose",
            Role::Solve => "solve",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A (program, input, output) record where `output` is the interpreter's
/// canonical representation of `f(input)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub program: String,
    pub input: String,
    pub output: String,
}

impl Triplet {
    pub fn new(program: impl Into<String>, input: impl Into<String>, output: impl Into<String>) -> Self {
        Self {
            program: program.into(),
            input: input.into(),
            output: output.into(),
        }
    }

    /// The identity-function triplet used when no references exist yet.
    pub fn zero() -> Self {
        Self::new(
            "def f(x):\n    return x",
            "\"Hello World\"",
            "'Hello World'",
        )
    }
}

/// A program with `N` validated input/output pairs and a free-text message.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InductionTask {
    pub program: String,
    pub pairs: Vec<(String, String)>,
    pub message: String,
}

impl InductionTask {
    /// Smallest pair count that leaves both a visible and a hidden half.
    pub const MIN_PAIRS: usize = 2;

    pub fn new(program: impl Into<String>, pairs: Vec<(String, String)>, message: impl Into<String>) -> Self {
        Self {
            program: program.into(),
            pairs,
            message: message.into(),
        }
    }

    /// Number of pairs shown to the solver (`N // 2`).
    pub fn visible_len(&self) -> usize {
        self.pairs.len() / 2
    }

    pub fn visible_pairs(&self) -> &[(String, String)] {
        &self.pairs[..self.visible_len()]
    }

    pub fn hidden_pairs(&self) -> &[(String, String)] {
        &self.pairs[self.visible_len()..]
    }
}

/// Any item a task buffer can hold.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TaskRecord {
    Triplet(Triplet),
    Induction(InductionTask),
}

impl TaskRecord {
    pub fn program(&self) -> &str {
        match self {
            TaskRecord::Triplet(t) => &t.program,
            TaskRecord::Induction(t) => &t.program,
        }
    }

    pub fn fits(&self, task_type: TaskType) -> bool {
        matches!(
            (self, task_type.is_triplet()),
            (TaskRecord::Triplet(_), true) | (TaskRecord::Induction(_), false)
        )
    }

    pub fn as_triplet(&self) -> Option<&Triplet> {
        match self {
            TaskRecord::Triplet(t) => Some(t),
            TaskRecord::Induction(_) => None,
        }
    }

    pub fn as_induction(&self) -> Option<&InductionTask> {
        match self {
            TaskRecord::Induction(t) => Some(t),
            TaskRecord::Triplet(_) => None,
        }
    }
}

impl From<Triplet> for TaskRecord {
    fn from(t: Triplet) -> Self {
        TaskRecord::Triplet(t)
    }
}

impl From<InductionTask> for TaskRecord {
    fn from(t: InductionTask) -> Self {
        TaskRecord::Induction(t)
    }
}

/// Whether a response followed the required answer structure (and, for the
/// proposer, produced a task that passed every validity filter).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParseStatus {
    WellFormatted,
    FormatError,
}

impl ParseStatus {
    pub fn is_ok(self) -> bool {
        matches!(self, ParseStatus::WellFormatted)
    }
}

/// The trainer-facing experience unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub iteration: u64,
    pub role: Role,
    pub task_type: TaskType,
    pub prompt: String,
    pub response: String,
    pub parse_status: ParseStatus,
    pub reward: f64,
    pub advantage: f64,
}

impl RolloutRecord {
    pub fn group(&self) -> (TaskType, Role) {
        (self.task_type, self.role)
    }
}
