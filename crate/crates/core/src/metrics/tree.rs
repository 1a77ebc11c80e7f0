//! Ordered tree edit distance (Zhang-Shasha) with unit costs.

use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Tree {
    pub label: String,
    pub children: Vec<Tree>,
}

impl Tree {
    pub fn leaf(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            children: Vec::new(),
        }
    }

    pub fn node(label: impl Into<String>, children: Vec<Tree>) -> Self {
        Self {
            label: label.into(),
            children,
        }
    }

    /// Decodes the harness dump format `[label, child, ...]`.
    pub fn from_json(value: &Value) -> Result<Self, String> {
        let items = value.as_array().ok_or("tree node is not an array")?;
        let label = items
            .first()
            .and_then(Value::as_str)
            .ok_or("tree node has no string label")?
            .to_string();
        let children = items[1..].iter().map(Tree::from_json).collect::<Result<_, _>>()?;
        Ok(Self { label, children })
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(Tree::size).sum::<usize>()
    }
}

/// Postorder flattening with leftmost-leaf indices.
struct Flat<'a> {
    labels: Vec<&'a str>,
    leftmost: Vec<usize>,
    keyroots: Vec<usize>,
}

impl<'a> Flat<'a> {
    fn new(tree: &'a Tree) -> Self {
        let mut f = Flat {
            labels: Vec::new(),
            leftmost: Vec::new(),
            keyroots: Vec::new(),
        };
        f.visit(tree);
        let n = f.labels.len();
        // a keyroot is the highest node with a given leftmost leaf
        let mut seen = vec![false; n];
        for i in (0..n).rev() {
            let l = f.leftmost[i];
            if !seen[l] {
                seen[l] = true;
                f.keyroots.push(i);
            }
        }
        f.keyroots.sort_unstable();
        f
    }

    fn visit(&mut self, t: &'a Tree) -> usize {
        let mut first_leaf = None;
        for c in &t.children {
            let idx = self.visit(c);
            if first_leaf.is_none() {
                first_leaf = Some(self.leftmost[idx]);
            }
        }
        let idx = self.labels.len();
        self.labels.push(&t.label);
        self.leftmost.push(first_leaf.unwrap_or(idx));
        idx
    }
}

/// Minimum number of node insertions, deletions and relabels turning `a`
/// into `b`.
pub fn tree_edit_distance(a: &Tree, b: &Tree) -> usize {
    let fa = Flat::new(a);
    let fb = Flat::new(b);
    let (n, m) = (fa.labels.len(), fb.labels.len());
    let mut td = vec![vec![0usize; m]; n];
    let mut fd = vec![vec![0usize; m + 1]; n + 1];

    for &i in &fa.keyroots {
        for &j in &fb.keyroots {
            let (li, lj) = (fa.leftmost[i], fb.leftmost[j]);
            // fd[x][y]: forest a[li..li+x) vs b[lj..lj+y)
            let rows = i - li + 1;
            let cols = j - lj + 1;
            fd[0][0] = 0;
            for x in 1..=rows {
                fd[x][0] = fd[x - 1][0] + 1;
            }
            for y in 1..=cols {
                fd[0][y] = fd[0][y - 1] + 1;
            }
            for x in 1..=rows {
                let ai = li + x - 1;
                for y in 1..=cols {
                    let bj = lj + y - 1;
                    let del = fd[x - 1][y] + 1;
                    let ins = fd[x][y - 1] + 1;
                    if fa.leftmost[ai] == li && fb.leftmost[bj] == lj {
                        let relabel = fd[x - 1][y - 1] + usize::from(fa.labels[ai] != fb.labels[bj]);
                        fd[x][y] = del.min(ins).min(relabel);
                        td[ai][bj] = fd[x][y];
                    } else {
                        let px = fa.leftmost[ai] - li;
                        let py = fb.leftmost[bj] - lj;
                        fd[x][y] = del.min(ins).min(fd[px][py] + td[ai][bj]);
                    }
                }
            }
        }
    }
    td[n - 1][m - 1]
}
