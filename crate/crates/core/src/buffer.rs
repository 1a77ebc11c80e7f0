//! Append-only task buffers and their JSONL persistence.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::types::{InductionTask, TaskRecord, TaskType, Triplet};

/// Default maximum number of programs per buffer.
pub const DEFAULT_CAPACITY: usize = 16384;

#[derive(Debug, thiserror::Error)]
pub enum BufferError {
    #[error("{got} record cannot be stored in a {expected} buffer")]
    TypeMismatch { expected: TaskType, got: &'static str },
    #[error("cannot sample from an empty {0} buffer")]
    Empty(TaskType),
    #[error("sample count must be at least 1")]
    ZeroCount,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Insertion {
    Inserted,
    AtCapacity,
}

/// A growing, capacity-capped store of validated tasks of one type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskBuffer {
    task_type: TaskType,
    items: Vec<TaskRecord>,
    capacity: usize,
}

impl TaskBuffer {
    pub fn new(task_type: TaskType) -> Self {
        Self::with_capacity(task_type, DEFAULT_CAPACITY)
    }

    pub fn with_capacity(task_type: TaskType, capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self {
            task_type,
            items: Vec::new(),
            capacity,
        }
    }

    pub fn task_type(&self) -> TaskType {
        self.task_type
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[TaskRecord] {
        &self.items
    }

    pub fn get(&self, idx: usize) -> Option<&TaskRecord> {
        self.items.get(idx)
    }

    /// Appends `item` unless the buffer is full. Full buffers reject further
    /// inserts rather than evicting.
    pub fn insert(&mut self, item: impl Into<TaskRecord>) -> Result<Insertion, BufferError> {
        let item = item.into();
        if !item.fits(self.task_type) {
            return Err(BufferError::TypeMismatch {
                expected: self.task_type,
                got: record_kind(&item),
            });
        }
        if self.items.len() >= self.capacity {
            return Ok(Insertion::AtCapacity);
        }
        self.items.push(item);
        Ok(Insertion::Inserted)
    }

    /// Draws `count` buffer indices: distinct when `count <= len`, otherwise
    /// with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<usize>, BufferError> {
        if self.items.is_empty() {
            return Err(BufferError::Empty(self.task_type));
        }
        if count == 0 {
            return Err(BufferError::ZeroCount);
        }
        let len = self.items.len();
        if count <= len {
            Ok(index::sample(rng, len, count).into_vec())
        } else {
            Ok((0..count).map(|_| rng.random_range(0..len)).collect())
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<TaskRecord>, BufferError> {
        Ok(self
            .sample_indices(count, rng)?
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect())
    }

    /// Loads a buffer from JSONL. Lines whose `task_type` differs from the
    /// buffer's type are rejected.
    pub fn load_jsonl(path: &Path, task_type: TaskType, capacity: usize) -> Result<Self, BufferError> {
        let mut buffer = Self::with_capacity(task_type, capacity);
        if !path.exists() {
            return Ok(buffer);
        }
        let reader = BufReader::new(File::open(path)?);
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (line_type, record) = decode_line(&line).map_err(|message| BufferError::Malformed { line: n + 1, message })?;
            if line_type != task_type {
                return Err(BufferError::Malformed {
                    line: n + 1,
                    message: format!("expected task_type {task_type}, found {line_type}"),
                });
            }
            buffer.insert(record)?;
        }
        Ok(buffer)
    }

    /// Rewrites the whole buffer to `path`.
    pub fn save_jsonl(&self, path: &Path) -> Result<(), BufferError> {
        let mut out = BufWriter::new(File::create(path)?);
        for item in &self.items {
            writeln!(out, "{}", encode_line(self.task_type, item))?;
        }
        out.flush()?;
        out.get_ref().sync_all()?;
        Ok(())
    }

    /// Appends items `from..` to `path`, leaving earlier lines untouched.
    pub fn append_jsonl(&self, path: &Path, from: usize) -> Result<(), BufferError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut out = BufWriter::new(file);
        for item in self.items.iter().skip(from) {
            writeln!(out, "{}", encode_line(self.task_type, item))?;
        }
        out.flush()?;
        out.get_ref().sync_all()?;
        Ok(())
    }
}

/// One buffer per task type.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferSet {
    pub abduction: TaskBuffer,
    pub deduction: TaskBuffer,
    pub induction: TaskBuffer,
}

impl BufferSet {
    pub fn new(capacity: usize) -> Self {
        Self {
            abduction: TaskBuffer::with_capacity(TaskType::Abduction, capacity),
            deduction: TaskBuffer::with_capacity(TaskType::Deduction, capacity),
            induction: TaskBuffer::with_capacity(TaskType::Induction, capacity),
        }
    }

    pub fn get(&self, t: TaskType) -> &TaskBuffer {
        match t {
            TaskType::Abduction => &self.abduction,
            TaskType::Deduction => &self.deduction,
            TaskType::Induction => &self.induction,
        }
    }

    pub fn get_mut(&mut self, t: TaskType) -> &mut TaskBuffer {
        match t {
            TaskType::Abduction => &mut self.abduction,
            TaskType::Deduction => &mut self.deduction,
            TaskType::Induction => &mut self.induction,
        }
    }

    pub fn lens(&self) -> [usize; 3] {
        TaskType::ALL.map(|t| self.get(t).len())
    }

    pub fn file_name(t: TaskType) -> String {
        format!("{}.jsonl", t.as_str())
    }

    pub fn load_dir(dir: &Path, capacity: usize) -> Result<Self, BufferError> {
        let load = |t| TaskBuffer::load_jsonl(&dir.join(Self::file_name(t)), t, capacity);
        Ok(Self {
            abduction: load(TaskType::Abduction)?,
            deduction: load(TaskType::Deduction)?,
            induction: load(TaskType::Induction)?,
        })
    }

    pub fn save_dir(&self, dir: &Path) -> Result<(), BufferError> {
        std::fs::create_dir_all(dir)?;
        for t in TaskType::ALL {
            self.get(t).save_jsonl(&dir.join(Self::file_name(t)))?;
        }
        Ok(())
    }

    /// Appends everything past `from` (per-type lengths) to the files in `dir`.
    pub fn append_dir(&self, dir: &Path, from: [usize; 3]) -> Result<(), BufferError> {
        std::fs::create_dir_all(dir)?;
        for (k, t) in TaskType::ALL.into_iter().enumerate() {
            self.get(t).append_jsonl(&dir.join(Self::file_name(t)), from[k])?;
        }
        Ok(())
    }
}

pub(crate) fn record_kind(record: &TaskRecord) -> &'static str {
    match record {
        TaskRecord::Triplet(_) => "triplet",
        TaskRecord::Induction(_) => "induction",
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BufferLine {
    Triplet {
        task_type: TaskType,
        program: String,
        input: String,
        output: String,
    },
    Induction {
        task_type: TaskType,
        program: String,
        pairs: Vec<(String, String)>,
        message: String,
    },
}

/// One JSONL line for `record` as stored in a `task_type` buffer.
pub fn encode_line(task_type: TaskType, record: &TaskRecord) -> String {
    let line = match record {
        TaskRecord::Triplet(t) => BufferLine::Triplet {
            task_type,
            program: t.program.clone(),
            input: t.input.clone(),
            output: t.output.clone(),
        },
        TaskRecord::Induction(t) => BufferLine::Induction {
            task_type,
            program: t.program.clone(),
            pairs: t.pairs.clone(),
            message: t.message.clone(),
        },
    };
    serde_json::to_string(&line).expect("buffer lines always serialize")
}

pub fn decode_line(line: &str) -> Result<(TaskType, TaskRecord), String> {
    let parsed: BufferLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
    Ok(match parsed {
        BufferLine::Triplet {
            task_type,
            program,
            input,
            output,
        } => (task_type, Triplet { program, input, output }.into()),
        BufferLine::Induction {
            task_type,
            program,
            pairs,
            message,
        } => (task_type, InductionTask { program, pairs, message }.into()),
    })
}
