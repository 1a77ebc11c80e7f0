//! Halstead counts over the harness token stream, plus a branch count.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

/// A lexical token as produced by the `tokens.py` tool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token(pub String, pub String);

impl Token {
    pub fn new(kind: &str, text: &str) -> Self {
        Self(kind.to_string(), text.to_string())
    }

    pub fn kind(&self) -> &str {
        &self.0
    }

    pub fn text(&self) -> &str {
        &self.1
    }

    /// Operators are punctuation and keywords; names and literals are
    /// operands.
    pub fn is_operator(&self) -> bool {
        matches!(self.kind(), "op" | "keyword")
    }
}

const BRANCH_KEYWORDS: &[&str] = &["if", "elif", "for", "while", "except", "and", "or"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Halstead {
    pub distinct_operators: usize,
    pub distinct_operands: usize,
    pub total_operators: usize,
    pub total_operands: usize,
    /// `(N1 + N2) * log2(n1 + n2)`.
    pub volume: f64,
    /// `1 +` the number of branching keywords.
    pub branches: usize,
}

/// `None` for an empty token stream.
pub fn halstead(tokens: &[Token]) -> Option<Halstead> {
    if tokens.is_empty() {
        return None;
    }
    let mut ops = HashSet::new();
    let mut opnds = HashSet::new();
    let (mut big_n1, mut big_n2, mut branches) = (0, 0, 1);
    for t in tokens {
        if t.is_operator() {
            ops.insert(t.text());
            big_n1 += 1;
            if t.kind() == "keyword" && BRANCH_KEYWORDS.contains(&t.text()) {
                branches += 1;
            }
        } else {
            opnds.insert(t.text());
            big_n2 += 1;
        }
    }
    let vocab = ops.len() + opnds.len();
    let length = big_n1 + big_n2;
    let volume = if vocab > 0 { length as f64 * (vocab as f64).log2() } else { 0.0 };
    Some(Halstead {
        distinct_operators: ops.len(),
        distinct_operands: opnds.len(),
        total_operators: big_n1,
        total_operands: big_n2,
        volume,
        branches,
    })
}
