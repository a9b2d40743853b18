//! Conversions from triple constraints on H to the side information used by
//! graph-regularised NMF (a pairwise weight matrix) and label-constrained NMF
//! (a binary class matrix).

use std::collections::HashMap;

use super::{ConstraintSet, Target};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Symmetric pairwise weights with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub weights: DenseMatrix,
    /// Longest chain depth seen in the constraint graph (0 for an empty set).
    pub max_depth: usize,
}

/// One row per label class, one column per data point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    /// Row-major `classes × points` indicator.
    pub rows: Vec<Vec<bool>>,
    /// 0-based class of each point, if labelled.
    pub labels: Vec<Option<usize>>,
}

impl LabelMatrix {
    pub fn class_count(&self) -> usize {
        self.rows.len()
    }

    /// 1-based member indices of each class.
    pub fn classes(&self) -> Vec<Vec<usize>> {
        self.rows
            .iter()
            .map(|row| row.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j + 1).collect())
            .collect()
    }

    pub fn to_dense(&self, points: usize) -> Option<DenseMatrix> {
        if self.rows.is_empty() {
            return None;
        }
        Some(DenseMatrix::from_fn(self.rows.len(), points, |i, j| {
            if self.rows[i][j] {
                1.0
            } else {
                0.0
            }
        }))
    }
}

type Pair = (usize, usize);

fn pair(a: usize, b: usize) -> Pair {
    (a.min(b), a.max(b))
}

fn require_h(set: &ConstraintSet, m: usize) -> Result<()> {
    if set.target() != Target::ColsOfH {
        return Err(Error::InvalidConfig(
            "weight and label conversion apply to constraints on H".into(),
        ));
    }
    set.validate_bound(m)
}

/// Builds the pair graph `(q,r) → (q,s)` over unordered index pairs, assigns
/// each node its depth (sinks have depth 1, parents one more than their
/// deepest child) and interpolates weights linearly from `mins` at depth 1 to
/// `maxs` at the maximum depth.
pub fn constraints_to_weight_matrix(m: usize, set: &ConstraintSet, mins: f64, maxs: f64) -> Result<WeightMatrix> {
    if mins.is_nan() || maxs.is_nan() || mins > maxs {
        return Err(Error::InvalidConfig(format!("mins {mins} exceeds maxs {maxs}")));
    }
    require_h(set, m)?;

    let mut nodes: Vec<Pair> = Vec::new();
    let mut ids: HashMap<Pair, usize> = HashMap::new();
    let mut children: Vec<Vec<usize>> = Vec::new();
    let mut intern = |p: Pair, nodes: &mut Vec<Pair>, children: &mut Vec<Vec<usize>>| {
        *ids.entry(p).or_insert_with(|| {
            nodes.push(p);
            children.push(Vec::new());
            nodes.len() - 1
        })
    };
    for t in set.triples() {
        let from = intern(pair(t.q, t.r), &mut nodes, &mut children);
        let to = intern(pair(t.q, t.s), &mut nodes, &mut children);
        if !children[from].contains(&to) {
            children[from].push(to);
        }
    }

    let depth = node_depths(&nodes, &children)?;
    let max_depth = depth.iter().copied().max().unwrap_or(0);
    let step = if max_depth > 1 {
        (maxs - mins) / (max_depth - 1) as f64
    } else {
        0.0
    };

    let mut weights = DenseMatrix::identity(m);
    for (node, &(i, j)) in nodes.iter().enumerate() {
        let value = mins + (depth[node] - 1) as f64 * step;
        weights.set(i - 1, j - 1, value);
        weights.set(j - 1, i - 1, value);
    }
    Ok(WeightMatrix { weights, max_depth })
}

fn node_depths(nodes: &[Pair], children: &[Vec<usize>]) -> Result<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let n = nodes.len();
    let mut mark = vec![Mark::New; n];
    let mut depth = vec![0usize; n];
    // parent pointers on the active DFS path, for cycle reporting
    let mut parent = vec![usize::MAX; n];

    for root in 0..n {
        if mark[root] != Mark::New {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        mark[root] = Mark::Active;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if let Some(&child) = children[node].get(*next) {
                *next += 1;
                match mark[child] {
                    Mark::New => {
                        mark[child] = Mark::Active;
                        parent[child] = node;
                        stack.push((child, 0));
                    }
                    Mark::Active => {
                        let mut cycle = vec![(nodes[node], nodes[child])];
                        let mut cur = node;
                        while cur != child {
                            let p = parent[cur];
                            cycle.push((nodes[p], nodes[cur]));
                            cur = p;
                        }
                        cycle.reverse();
                        return Err(Error::CycleDetected { edges: cycle });
                    }
                    Mark::Done => {}
                }
            } else {
                depth[node] = 1 + children[node].iter().map(|&c| depth[c]).max().unwrap_or(0);
                mark[node] = Mark::Done;
                stack.pop();
            }
        }
    }
    Ok(depth)
}

/// Assigns `q` and `r` of every triple to a common class, merging classes
/// when both are already labelled. Empty classes are removed at the end.
pub fn constraints_to_label_matrix(m: usize, set: &ConstraintSet) -> Result<LabelMatrix> {
    require_h(set, m)?;
    let mut label: Vec<Option<usize>> = vec![None; m];
    let mut members: Vec<Vec<usize>> = Vec::new();

    for t in set.triples() {
        let (q, r) = (t.q - 1, t.r - 1);
        match (label[q], label[r]) {
            (Some(lq), Some(lr)) => {
                if lq != lr {
                    let moved = std::mem::take(&mut members[lr]);
                    for &p in &moved {
                        label[p] = Some(lq);
                    }
                    members[lq].extend(moved);
                }
            }
            (Some(lq), None) => {
                label[r] = Some(lq);
                members[lq].push(r);
            }
            (None, Some(lr)) => {
                label[q] = Some(lr);
                members[lr].push(q);
            }
            (None, None) => {
                let fresh = members.len();
                members.push(vec![q, r]);
                label[q] = Some(fresh);
                label[r] = Some(fresh);
            }
        }
    }

    // drop emptied classes, renumbering in creation order
    let mut remap = vec![None; members.len()];
    let mut rows = Vec::new();
    for (old, group) in members.iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        remap[old] = Some(rows.len());
        let mut row = vec![false; m];
        for &p in group {
            row[p] = true;
        }
        rows.push(row);
    }
    let labels = label.into_iter().map(|l| l.and_then(|c| remap[c])).collect();
    Ok(LabelMatrix { rows, labels })
}
