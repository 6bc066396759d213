//! CART regression tree grown by greedy variance reduction.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::check_log;
use crate::error::{Error, Result};
use crate::objective::EvaluationRecord;

pub const DEFAULT_MAX_DEPTH: usize = 4;
pub const DEFAULT_MIN_LEAF: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeNode {
    /// Records with `x[variable] <= threshold` go left.
    Split {
        variable: usize,
        name: String,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf { value: f64, count: usize },
}

impl TreeNode {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split { variable, threshold, left, right, .. } => {
                    node = if x[*variable] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn count(&self) -> usize {
        match self {
            TreeNode::Leaf { count, .. } => *count,
            TreeNode::Split { left, right, .. } => left.count() + right.count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaves() + right.leaves(),
        }
    }

    /// Names of all split variables, in preorder, with repeats.
    pub fn split_variables(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit(&mut |n| {
            if let TreeNode::Split { name, .. } = n {
                out.push(name.as_str());
            }
        });
        out
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a TreeNode)) {
        f(self);
        if let TreeNode::Split { left, right, .. } = self {
            left.visit(f);
            right.visit(f);
        }
    }

    /// Indented text, one node per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        self.write_text(&mut s, 0, "root");
        s
    }

    fn write_text(&self, s: &mut String, indent: usize, label: &str) {
        let pad = "  ".repeat(indent);
        match self {
            TreeNode::Leaf { value, count } => {
                let _ = writeln!(s, "{pad}{label}: epsilon = {value:.6} (n = {count})");
            }
            TreeNode::Split { name, threshold, left, right, .. } => {
                let _ = writeln!(s, "{pad}{label}: split on {name} at {threshold:.6} (n = {})", self.count());
                left.write_text(s, indent + 1, &format!("{name} <= {threshold:.6}"));
                right.write_text(s, indent + 1, &format!("{name} > {threshold:.6}"));
            }
        }
    }

    /// Graphviz DOT rendering.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph tree {\n  node [shape=box];\n");
        let mut next = 0;
        self.write_dot(&mut s, &mut next);
        s.push_str("}\n");
        s
    }

    fn write_dot(&self, s: &mut String, next: &mut usize) -> usize {
        let id = *next;
        *next += 1;
        match self {
            TreeNode::Leaf { value, count } => {
                let _ = writeln!(s, "  n{id} [label=\"epsilon = {value:.4}\\nn = {count}\"];");
            }
            TreeNode::Split { name, threshold, left, right, .. } => {
                let _ = writeln!(s, "  n{id} [label=\"{name} <= {threshold:.4}\\nn = {}\"];", self.count());
                let l = left.write_dot(s, next);
                let r = right.write_dot(s, next);
                let _ = writeln!(s, "  n{id} -> n{l} [label=\"yes\"];");
                let _ = writeln!(s, "  n{id} -> n{r} [label=\"no\"];");
            }
        }
        id
    }
}

struct Candidate {
    variable: usize,
    threshold: f64,
    gain: f64,
}

fn mean(ys: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| ys[i]).sum::<f64>() / idx.len() as f64
}

fn sse(ys: &[f64], idx: &[usize]) -> f64 {
    let m = mean(ys, idx);
    idx.iter().map(|&i| (ys[i] - m).powi(2)).sum()
}

/// Best split of `idx` over all variables and midpoints between adjacent
/// distinct values that leave at least `min_leaf` records on each side.
fn best_split(xs: &[&[f64]], ys: &[f64], idx: &[usize], min_leaf: usize) -> Option<Candidate> {
    let n = idx.len();
    let d = xs[idx[0]].len();
    // centre the responses so the running sums stay well conditioned
    let m = mean(ys, idx);
    let total: f64 = idx.iter().map(|&i| ys[i] - m).sum();
    let parent = sse(ys, idx);
    let mut best: Option<Candidate> = None;
    let mut order = idx.to_vec();
    for j in 0..d {
        order.sort_by(|&a, &b| xs[a][j].total_cmp(&xs[b][j]));
        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        let total_sq: f64 = idx.iter().map(|&i| (ys[i] - m).powi(2)).sum();
        for k in 0..n - 1 {
            let v = ys[order[k]] - m;
            left_sum += v;
            left_sq += v * v;
            let nl = k + 1;
            let nr = n - nl;
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let a = xs[order[k]][j];
            let b = xs[order[k + 1]][j];
            if a == b {
                continue;
            }
            let right_sum = total - left_sum;
            let right_sq = total_sq - left_sq;
            let child = (left_sq - left_sum * left_sum / nl as f64) + (right_sq - right_sum * right_sum / nr as f64);
            let gain = parent - child;
            if best.as_ref().is_none_or(|c| gain > c.gain) {
                best = Some(Candidate { variable: j, threshold: 0.5 * (a + b), gain });
            }
        }
    }
    // splits that only shuffle rounding error are not splits
    best.filter(|c| c.gain > 1e-12 * parent.max(f64::MIN_POSITIVE) && parent > 0.0)
}

fn grow(
    xs: &[&[f64]],
    ys: &[f64],
    names: &[String],
    idx: Vec<usize>,
    depth: usize,
    max_depth: usize,
    min_leaf: usize,
) -> TreeNode {
    let leaf = |idx: &[usize]| TreeNode::Leaf { value: mean(ys, idx), count: idx.len() };
    if depth >= max_depth || idx.len() < 2 * min_leaf {
        return leaf(&idx);
    }
    let Some(c) = best_split(xs, ys, &idx, min_leaf) else {
        return leaf(&idx);
    };
    let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| xs[i][c.variable] <= c.threshold);
    TreeNode::Split {
        variable: c.variable,
        name: names[c.variable].clone(),
        threshold: c.threshold,
        left: Box::new(grow(xs, ys, names, l, depth + 1, max_depth, min_leaf)),
        right: Box::new(grow(xs, ys, names, r, depth + 1, max_depth, min_leaf)),
    }
}

/// Grows a regression tree on the evaluation log. No pruning beyond the depth
/// and leaf-size limits.
pub fn fit_tree(records: &[EvaluationRecord], names: &[String], max_depth: usize, min_leaf: usize) -> Result<TreeNode> {
    check_log(records, names)?;
    let min_leaf = min_leaf.max(1);
    if records.len() < 2 * min_leaf {
        return Err(Error::Analysis(format!(
            "regression tree needs at least {} records for min_leaf {min_leaf}, got {}",
            2 * min_leaf,
            records.len()
        )));
    }
    let xs: Vec<&[f64]> = records.iter().map(|r| r.vector.as_slice()).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.epsilon).collect();
    Ok(grow(&xs, &ys, names, (0..records.len()).collect(), 0, max_depth, min_leaf))
}
