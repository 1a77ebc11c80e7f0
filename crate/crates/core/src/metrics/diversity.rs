//! Empirical answer distribution per task type.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::types::TaskType;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerTracker {
    counts: BTreeMap<TaskType, BTreeMap<String, u64>>,
}

impl AnswerTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// `1 - p(answer)` under the answers seen so far for `task_type`, then
    /// records `answer`.
    pub fn observe(&mut self, task_type: TaskType, answer: &str) -> f64 {
        let seen = self.counts.entry(task_type).or_default();
        let total: u64 = seen.values().sum();
        let hits = seen.get(answer).copied().unwrap_or(0);
        let diversity = if total == 0 { 1.0 } else { 1.0 - hits as f64 / total as f64 };
        *seen.entry(answer.to_string()).or_default() += 1;
        diversity
    }

    pub fn total(&self, task_type: TaskType) -> u64 {
        self.counts.get(&task_type).map(|m| m.values().sum()).unwrap_or(0)
    }
}
