//! Transcript capture and replay.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{Policy, PolicyError, PolicyRequest, PolicyTranscript, Usage};

/// One line of a recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedCall {
    pub tag: String,
    pub prompt: String,
    pub response: String,
    #[serde(default)]
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

/// Forwards to an inner policy and appends every successful call to a JSONL
/// file.
pub struct RecordingPolicy<P> {
    inner: P,
    sink: Mutex<BufWriter<File>>,
}

impl<P: Policy> RecordingPolicy<P> {
    /// Opens `path` for appending, creating it if needed.
    pub fn create(inner: P, path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            inner,
            sink: Mutex::new(BufWriter::new(file)),
        })
    }

    fn record(&self, request: &PolicyRequest, t: &PolicyTranscript) {
        let line = RecordedCall {
            tag: request.tag.clone(),
            prompt: t.prompt.clone(),
            response: t.response.clone(),
            truncated: t.truncated,
            usage: t.usage,
        };
        let mut sink = self.sink.lock();
        let json = serde_json::to_string(&line).expect("recorded call serializes");
        if let Err(e) = writeln!(sink, "{json}").and_then(|_| sink.flush()) {
            tracing::warn!("recording write failed: {e}");
        }
    }
}

impl<P: Policy> Policy for RecordingPolicy<P> {
    fn generate(&self, request: &PolicyRequest) -> Result<PolicyTranscript, PolicyError> {
        let t = self.inner.generate(request)?;
        self.record(request, &t);
        Ok(t)
    }

    fn generate_batch(&self, requests: &[PolicyRequest]) -> Vec<Result<PolicyTranscript, PolicyError>> {
        let out = self.inner.generate_batch(requests);
        for (req, res) in requests.iter().zip(&out) {
            if let Ok(t) = res {
                self.record(req, t);
            }
        }
        out
    }

    fn snapshot(&self) -> serde_json::Value {
        self.inner.snapshot()
    }

    fn restore(&self, state: &serde_json::Value) -> Result<(), PolicyError> {
        self.inner.restore(state)
    }
}

/// Serves a recording back in order. Each request must carry the recorded
/// prompt and tag.
pub struct ReplayPolicy {
    calls: Vec<RecordedCall>,
    cursor: Mutex<usize>,
}

impl ReplayPolicy {
    pub fn new(calls: Vec<RecordedCall>) -> Self {
        Self {
            calls,
            cursor: Mutex::new(0),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, PolicyError> {
        let file = File::open(path).map_err(|e| PolicyError::Replay(format!("{}: {e}", path.display())))?;
        let mut calls = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| PolicyError::Replay(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            calls.push(serde_json::from_str(&line).map_err(|e| PolicyError::Replay(format!("line {}: {e}", n + 1)))?);
        }
        Ok(Self::new(calls))
    }

    pub fn remaining(&self) -> usize {
        self.calls.len() - *self.cursor.lock()
    }
}

impl Policy for ReplayPolicy {
    fn generate(&self, request: &PolicyRequest) -> Result<PolicyTranscript, PolicyError> {
        let mut cursor = self.cursor.lock();
        let call = self
            .calls
            .get(*cursor)
            .ok_or_else(|| PolicyError::Replay(format!("recording exhausted after {} calls", self.calls.len())))?;
        if call.tag != request.tag || call.prompt != request.prompt {
            return Err(PolicyError::Replay(format!(
                "call {} diverges: recorded `{}`, requested `{}`",
                *cursor, call.tag, request.tag
            )));
        }
        *cursor += 1;
        Ok(PolicyTranscript {
            prompt: call.prompt.clone(),
            response: call.response.clone(),
            usage: call.usage,
            latency: Duration::ZERO,
            truncated: call.truncated,
        })
    }

    fn snapshot(&self) -> serde_json::Value {
        serde_json::json!({ "cursor": *self.cursor.lock() })
    }

    fn restore(&self, state: &serde_json::Value) -> Result<(), PolicyError> {
        if let Some(c) = state.get("cursor").and_then(|v| v.as_u64()) {
            *self.cursor.lock() = c as usize;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{MockPolicy, SamplingParams};

    #[test]
    fn record_then_replay_reproduces_transcripts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.jsonl");
        let mock = MockPolicy::from_json(r#"{"rules":[{"match":{},"responses":["a","b"]}]}"#).unwrap();
        let rec = RecordingPolicy::create(mock, &path).unwrap();
        let reqs: Vec<PolicyRequest> = (0..3).map(|k| PolicyRequest::new("t", format!("p{k}"), SamplingParams::default())).collect();
        let first: Vec<String> = rec.generate_batch(&reqs).into_iter().map(|r| r.unwrap().response).collect();
        drop(rec);

        let replay = ReplayPolicy::from_file(&path).unwrap();
        assert_eq!(replay.remaining(), 3);
        let second: Vec<String> = replay.generate_batch(&reqs).into_iter().map(|r| r.unwrap().response).collect();
        assert_eq!(first, second);
        assert!(replay.generate(&reqs[0]).is_err());
    }

    #[test]
    fn replay_rejects_divergent_prompt() {
        let replay = ReplayPolicy::new(vec![RecordedCall {
            tag: "t".into(),
            prompt: "p".into(),
            response: "r".into(),
            truncated: false,
            usage: None,
        }]);
        let err = replay.generate(&PolicyRequest::new("t", "other", SamplingParams::default()));
        assert!(matches!(err, Err(PolicyError::Replay(_))));
    }
}
