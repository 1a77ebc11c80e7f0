//! Deterministic scripted policy.
//!
//! A script is a JSON document:
//!
//! ```json
//! {
//!   "rules": [
//!     { "match": { "tag": "solve.deduction", "contains": "Hello" },
//!       "responses": ["<answer>'Hello World'</answer>"] }
//!   ],
//!   "on_unmatched": { "respond": "<answer></answer>" }
//! }
//! ```
//!
//! The first rule whose every given field matches wins. Each rule walks its
//! response list one entry per call and keeps repeating the last entry.

use std::path::Path;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{Policy, PolicyError, PolicyRequest, PolicyTranscript};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matcher {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
}

impl Matcher {
    pub fn matches(&self, request: &PolicyRequest) -> bool {
        self.exact.as_ref().is_none_or(|e| *e == request.prompt)
            && self.tag.as_ref().is_none_or(|t| *t == request.tag)
            && self.contains.as_ref().is_none_or(|c| request.prompt.contains(c.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(rename = "match", default)]
    pub matcher: Matcher,
    pub responses: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unmatched {
    #[default]
    Error,
    Respond(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub on_unmatched: Unmatched,
}

impl MockScript {
    pub fn validate(&self) -> Result<(), PolicyError> {
        for (n, rule) in self.rules.iter().enumerate() {
            if rule.responses.is_empty() {
                return Err(PolicyError::Script(format!("rule {n} has no responses")));
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct MockPolicy {
    script: MockScript,
    counters: Mutex<Vec<u64>>,
}

impl MockPolicy {
    pub fn new(script: MockScript) -> Result<Self, PolicyError> {
        script.validate()?;
        let n = script.rules.len();
        Ok(Self {
            script,
            counters: Mutex::new(vec![0; n]),
        })
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let script: MockScript = serde_json::from_str(text).map_err(|e| PolicyError::Script(e.to_string()))?;
        Self::new(script)
    }

    pub fn from_file(path: &Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path).map_err(|e| PolicyError::Script(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Replies `response` to every prompt.
    pub fn constant(response: impl Into<String>) -> Self {
        Self::new(MockScript {
            rules: Vec::new(),
            on_unmatched: Unmatched::Respond(response.into()),
        })
        .expect("empty rule set is valid")
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }
}

impl Policy for MockPolicy {
    fn generate(&self, request: &PolicyRequest) -> Result<PolicyTranscript, PolicyError> {
        let response = match self.script.rules.iter().position(|r| r.matcher.matches(request)) {
            Some(idx) => {
                let mut counters = self.counters.lock();
                let responses = &self.script.rules[idx].responses;
                let pos = (counters[idx] as usize).min(responses.len() - 1);
                counters[idx] += 1;
                responses[pos].clone()
            }
            None => match &self.script.on_unmatched {
                Unmatched::Respond(text) => text.clone(),
                Unmatched::Error => {
                    return Err(PolicyError::Script(format!("no rule matches request tagged `{}`", request.tag)));
                }
            },
        };
        Ok(PolicyTranscript {
            prompt: request.prompt.clone(),
            response,
            usage: None,
            latency: Duration::ZERO,
            truncated: false,
        })
    }

    fn snapshot(&self) -> serde_json::Value {
        serde_json::json!({ "counters": *self.counters.lock() })
    }

    fn restore(&self, state: &serde_json::Value) -> Result<(), PolicyError> {
        if state.is_null() {
            return Ok(());
        }
        let counters: Vec<u64> = serde_json::from_value(state["counters"].clone()).map_err(|e| PolicyError::Script(format!("bad snapshot: {e}")))?;
        let mut cur = self.counters.lock();
        if counters.len() != cur.len() {
            return Err(PolicyError::Script(format!(
                "snapshot has {} rule counters, script has {} rules",
                counters.len(),
                cur.len()
            )));
        }
        *cur = counters;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::SamplingParams;

    fn req(tag: &str, prompt: &str) -> PolicyRequest {
        PolicyRequest::new(tag, prompt, SamplingParams::default())
    }

    #[test]
    fn sequence_repeats_last_entry() {
        let m = MockPolicy::from_json(r#"{"rules":[{"match":{"tag":"t"},"responses":["a","b","c"]}]}"#).unwrap();
        let got: Vec<String> = (0..5).map(|_| m.generate(&req("t", "x")).unwrap().response).collect();
        assert_eq!(got, ["a", "b", "c", "c", "c"]);
    }

    #[test]
    fn first_matching_rule_wins() {
        let m = MockPolicy::from_json(
            r#"{"rules":[
                {"match":{"exact":"p1"},"responses":["exact"]},
                {"match":{"tag":"t","contains":"needle"},"responses":["both"]},
                {"match":{"tag":"t"},"responses":["tag"]}
            ]}"#,
        )
        .unwrap();
        assert_eq!(m.generate(&req("t", "p1")).unwrap().response, "exact");
        assert_eq!(m.generate(&req("t", "hay needle")).unwrap().response, "both");
        assert_eq!(m.generate(&req("t", "hay")).unwrap().response, "tag");
    }

    #[test]
    fn unmatched_behaviour() {
        let err = MockPolicy::from_json(r#"{"rules":[]}"#).unwrap();
        assert!(matches!(err.generate(&req("t", "x")), Err(PolicyError::Script(_))));
        let fixed = MockPolicy::from_json(r#"{"rules":[],"on_unmatched":{"respond":"fallback"}}"#).unwrap();
        assert_eq!(fixed.generate(&req("t", "x")).unwrap().response, "fallback");
    }

    #[test]
    fn empty_response_list_rejected() {
        assert!(MockPolicy::from_json(r#"{"rules":[{"match":{},"responses":[]}]}"#).is_err());
    }

    #[test]
    fn snapshot_restore_continues_sequence() {
        let text = r#"{"rules":[{"match":{},"responses":["1","2","3"]}]}"#;
        let a = MockPolicy::from_json(text).unwrap();
        a.generate(&req("t", "")).unwrap();
        let snap = a.snapshot();
        let b = MockPolicy::from_json(text).unwrap();
        b.restore(&snap).unwrap();
        assert_eq!(a.generate(&req("t", "")).unwrap().response, "2");
        assert_eq!(b.generate(&req("t", "")).unwrap().response, "2");
    }
}
