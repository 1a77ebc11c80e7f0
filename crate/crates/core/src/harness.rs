//! Driver templates and helper scripts executed inside the interpreter.
//!
//! The files themselves live in the repository's `harness/` directory and are
//! embedded at build time; [`Harness::from_dir`] loads an alternative set.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::template::{self, RenderError};

/// Every placeholder a driver template may use.
pub const SLOTS: &[&str] = &[
    "code",
    "inputs",
    "runs",
    "gold_output",
    "agent_input",
    "agent_output",
    "gold_inputs",
    "gold_outputs",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DriverTemplate {
    Validate,
    Determinism,
    AbductionEval,
    DeductionEval,
    InductionEval,
}

impl DriverTemplate {
    pub const ALL: [DriverTemplate; 5] = [
        DriverTemplate::Validate,
        DriverTemplate::Determinism,
        DriverTemplate::AbductionEval,
        DriverTemplate::DeductionEval,
        DriverTemplate::InductionEval,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            DriverTemplate::Validate => "validate.py.tmpl",
            DriverTemplate::Determinism => "determinism.py.tmpl",
            DriverTemplate::AbductionEval => "abduction_eval.py.tmpl",
            DriverTemplate::DeductionEval => "deduction_eval.py.tmpl",
            DriverTemplate::InductionEval => "induction_eval.py.tmpl",
        }
    }

    fn embedded(self) -> &'static str {
        match self {
            DriverTemplate::Validate => include_str!("../../../harness/validate.py.tmpl"),
            DriverTemplate::Determinism => include_str!("../../../harness/determinism.py.tmpl"),
            DriverTemplate::AbductionEval => include_str!("../../../harness/abduction_eval.py.tmpl"),
            DriverTemplate::DeductionEval => include_str!("../../../harness/deduction_eval.py.tmpl"),
            DriverTemplate::InductionEval => include_str!("../../../harness/induction_eval.py.tmpl"),
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for DriverTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_name())
    }
}

/// Stand-alone helper scripts that read a program on stdin and answer with
/// one protocol line carrying JSON.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HarnessTool {
    /// Dotted module/attribute paths referenced by the program.
    References,
    /// Program with comments and module-level assignments removed.
    Strip,
    /// Syntax tree as nested `[label, children...]` arrays.
    SyntaxTree,
    /// Lexical token stream as `[kind, text]` pairs.
    Tokens,
}

impl HarnessTool {
    pub const ALL: [HarnessTool; 4] = [HarnessTool::References, HarnessTool::Strip, HarnessTool::SyntaxTree, HarnessTool::Tokens];

    pub fn file_name(self) -> &'static str {
        match self {
            HarnessTool::References => "safety.py",
            HarnessTool::Strip => "strip.py",
            HarnessTool::SyntaxTree => "ast_tree.py",
            HarnessTool::Tokens => "tokens.py",
        }
    }

    fn embedded(self) -> &'static str {
        match self {
            HarnessTool::References => include_str!("../../../harness/safety.py"),
            HarnessTool::Strip => include_str!("../../../harness/strip.py"),
            HarnessTool::SyntaxTree => include_str!("../../../harness/ast_tree.py"),
            HarnessTool::Tokens => include_str!("../../../harness/tokens.py"),
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

pub const RUNNER_FILE: &str = "runner.py";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("harness file {path}: {source}")]
    Missing {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{template}: {source}")]
    Render {
        template: DriverTemplate,
        #[source]
        source: RenderError,
    },
}

/// The full set of harness files.
#[derive(Debug, Clone)]
pub struct Harness {
    runner: String,
    templates: [String; 5],
    tools: [String; 4],
}

impl Default for Harness {
    fn default() -> Self {
        Self::embedded()
    }
}

impl Harness {
    pub fn embedded() -> Self {
        Self {
            runner: include_str!("../../../harness/runner.py").to_string(),
            templates: DriverTemplate::ALL.map(|t| t.embedded().to_string()),
            tools: HarnessTool::ALL.map(|t| t.embedded().to_string()),
        }
    }

    pub fn from_dir(dir: &Path) -> Result<Self, HarnessError> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|source| HarnessError::Missing {
                path: path.display().to_string(),
                source,
            })
        };
        let mut templates: [String; 5] = Default::default();
        for t in DriverTemplate::ALL {
            templates[t.index()] = read(t.file_name())?;
        }
        let mut tools: [String; 4] = Default::default();
        for t in HarnessTool::ALL {
            tools[t.index()] = read(t.file_name())?;
        }
        Ok(Self {
            runner: read(RUNNER_FILE)?,
            templates,
            tools,
        })
    }

    pub fn runner(&self) -> &str {
        &self.runner
    }

    pub fn template(&self, t: DriverTemplate) -> &str {
        &self.templates[t.index()]
    }

    pub fn tool(&self, t: HarnessTool) -> &str {
        &self.tools[t.index()]
    }

    /// Literal slot substitution; every slot the template mentions must be bound.
    pub fn render(&self, t: DriverTemplate, bindings: &BTreeMap<&str, String>) -> Result<String, HarnessError> {
        template::render(self.template(t), SLOTS, bindings).map_err(|source| HarnessError::Render { template: t, source })
    }

    pub fn required_slots(&self, t: DriverTemplate) -> Vec<&str> {
        template::slots_in(self.template(t), SLOTS)
    }
}

/// Quotes `text` as a task-language string literal.
///
/// JSON string syntax is a subset of Python's, so the encoder's output can be
/// pasted into a driver verbatim.
pub fn string_literal(text: &str) -> String {
    serde_json::to_string(text).expect("strings always serialize")
}

pub fn string_list_literal<'a>(items: impl IntoIterator<Item = &'a str>) -> String {
    let quoted: Vec<String> = items.into_iter().map(string_literal).collect();
    format!("[{}]", quoted.join(", "))
}
