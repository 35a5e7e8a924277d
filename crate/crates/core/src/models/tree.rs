//! CART trees: Gini classification trees for the forest and squared-error
//! regression trees for boosting.
//!
//! Rows go left when `x[feature] <= threshold`. Candidate thresholds are
//! midpoints between consecutive distinct values.

use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Row order of every feature, ascending by value then row index.
pub fn presort(rows: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let d = rows.first().map_or(0, Vec::len);
    (0..d)
        .map(|f| {
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.sort_by(|&a, &b| rows[a][f].total_cmp(&rows[b][f]).then(a.cmp(&b)));
            order
        })
        .collect()
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    // Adjacent floats: keep `a` so that `a <= t < b` still holds.
    if m >= b {
        a
    } else {
        m
    }
}

fn gini(c0: f64, c1: f64) -> f64 {
    let n = c0 + c1;
    if n == 0.0 {
        return 0.0;
    }
    let (p0, p1) = (c0 / n, c1 / n);
    1.0 - p0 * p0 - p1 * p1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClassNode {
    Leaf {
        counts: [u32; 2],
    },
    Split {
        feature: usize,
        threshold: f64,
        /// Weighted Gini decrease achieved by this split (never negative).
        impurity_decrease: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTree {
    pub nodes: Vec<ClassNode>,
}

/// Growth controls for [`ClassTree::fit`].
#[derive(Debug, Clone, Copy)]
pub struct ClassTreeParams {
    /// Features evaluated per node, drawn without replacement.
    pub max_features: usize,
    pub max_depth: Option<usize>,
}

struct Pending {
    node: usize,
    members: Vec<usize>,
    depth: usize,
}

impl ClassTree {
    /// Fit on rows weighted by `weights` (bootstrap multiplicities; zero
    /// means absent). Grows until nodes are pure or hold fewer than two
    /// samples.
    pub fn fit(
        rows: &[Vec<f64>],
        labels: &[u8],
        weights: &[u32],
        sorted: &[Vec<usize>],
        params: ClassTreeParams,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d = sorted.len();
        let mut nodes = vec![ClassNode::Leaf { counts: [0, 0] }];
        let mut node_of: Vec<usize> = vec![usize::MAX; rows.len()];
        let root: Vec<usize> = (0..rows.len()).filter(|&i| weights[i] > 0).collect();
        for &i in &root {
            node_of[i] = 0;
        }
        let mut stack = vec![Pending {
            node: 0,
            members: root,
            depth: 0,
        }];

        while let Some(Pending { node, members, depth }) = stack.pop() {
            let mut counts = [0u32; 2];
            for &i in &members {
                counts[usize::from(labels[i] != 0)] += weights[i];
            }
            let total = counts[0] + counts[1];
            let stop = total < 2
                || counts[0] == 0
                || counts[1] == 0
                || params.max_depth.is_some_and(|m| depth >= m)
                || d == 0;
            let split = if stop {
                None
            } else {
                // Features are drawn in random order until `max_features`
                // of them admit a split; constant ones do not count.
                let k = params.max_features.clamp(1, d);
                let mut best: Option<(usize, f64, f64)> = None;
                let mut inspected = 0;
                for f in index::sample(rng, d, d) {
                    if inspected == k {
                        break;
                    }
                    let Some((threshold, decrease)) =
                        best_gini_split(rows, labels, weights, &sorted[f], f, &node_of, node, counts)
                    else {
                        continue;
                    };
                    inspected += 1;
                    if best.is_none_or(|b| decrease > b.2) {
                        best = Some((f, threshold, decrease));
                    }
                }
                best
            };
            let Some((feature, threshold, impurity_decrease)) = split else {
                nodes[node] = ClassNode::Leaf { counts };
                continue;
            };

            let left = nodes.len();
            let right = left + 1;
            nodes.push(ClassNode::Leaf { counts: [0, 0] });
            nodes.push(ClassNode::Leaf { counts: [0, 0] });
            nodes[node] = ClassNode::Split {
                feature,
                threshold,
                impurity_decrease,
                left,
                right,
            };
            let (l, r): (Vec<usize>, Vec<usize>) =
                members.into_iter().partition(|&i| rows[i][feature] <= threshold);
            for &i in &l {
                node_of[i] = left;
            }
            for &i in &r {
                node_of[i] = right;
            }
            // Right first so the left subtree is expanded first.
            stack.push(Pending {
                node: right,
                members: r,
                depth: depth + 1,
            });
            stack.push(Pending {
                node: left,
                members: l,
                depth: depth + 1,
            });
        }
        ClassTree { nodes }
    }

    pub fn leaf_counts(&self, row: &[f64]) -> [u32; 2] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                ClassNode::Leaf { counts } => return *counts,
                ClassNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Majority class at the reached leaf; ties go to class 0.
    pub fn predict(&self, row: &[f64]) -> u8 {
        let c = self.leaf_counts(row);
        u8::from(c[1] > c[0])
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[ClassNode], i: usize) -> usize {
            match &nodes[i] {
                ClassNode::Leaf { .. } => 0,
                ClassNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[allow(clippy::too_many_arguments)]
fn best_gini_split(
    rows: &[Vec<f64>],
    labels: &[u8],
    weights: &[u32],
    order: &[usize],
    f: usize,
    node_of: &[usize],
    node: usize,
    counts: [u32; 2],
) -> Option<(f64, f64)> {
    let n = f64::from(counts[0] + counts[1]);
    let parent = gini(f64::from(counts[0]), f64::from(counts[1]));
    let mut best: Option<(f64, f64)> = None;
    let mut left = [0.0f64; 2];
    let mut prev: Option<f64> = None;
    for &i in order {
        if node_of[i] != node {
            continue;
        }
        let x = rows[i][f];
        if let Some(p) = prev {
            if x > p {
                let nl = left[0] + left[1];
                let right = [f64::from(counts[0]) - left[0], f64::from(counts[1]) - left[1]];
                let nr = n - nl;
                let child = (nl * gini(left[0], left[1]) + nr * gini(right[0], right[1])) / n;
                let decrease = (parent - child).max(0.0);
                if best.is_none_or(|b| decrease > b.1) {
                    best = Some((midpoint(p, x), decrease));
                }
            }
        }
        left[usize::from(labels[i] != 0)] += f64::from(weights[i]);
        prev = Some(x);
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RegNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegTree {
    pub nodes: Vec<RegNode>,
}

impl RegTree {
    /// Least-squares tree on `targets`; leaf values come from `leaf_value`
    /// applied to the member rows of each leaf.
    pub fn fit(
        rows: &[Vec<f64>],
        targets: &[f64],
        sorted: &[Vec<usize>],
        max_depth: usize,
        leaf_value: impl Fn(&[usize]) -> f64,
    ) -> Self {
        let mut nodes = vec![RegNode::Leaf { value: 0.0 }];
        let mut node_of: Vec<usize> = vec![0; rows.len()];
        let mut stack = vec![Pending {
            node: 0,
            members: (0..rows.len()).collect(),
            depth: 0,
        }];
        while let Some(Pending { node, members, depth }) = stack.pop() {
            let split = if depth >= max_depth || members.len() < 2 {
                None
            } else {
                best_sse_split(rows, targets, sorted, &node_of, node, &members)
            };
            let Some((feature, threshold)) = split else {
                nodes[node] = RegNode::Leaf {
                    value: leaf_value(&members),
                };
                continue;
            };
            let left = nodes.len();
            let right = left + 1;
            nodes.push(RegNode::Leaf { value: 0.0 });
            nodes.push(RegNode::Leaf { value: 0.0 });
            nodes[node] = RegNode::Split {
                feature,
                threshold,
                left,
                right,
            };
            let (l, r): (Vec<usize>, Vec<usize>) =
                members.into_iter().partition(|&i| rows[i][feature] <= threshold);
            for &i in &l {
                node_of[i] = left;
            }
            for &i in &r {
                node_of[i] = right;
            }
            stack.push(Pending {
                node: right,
                members: r,
                depth: depth + 1,
            });
            stack.push(Pending {
                node: left,
                members: l,
                depth: depth + 1,
            });
        }
        RegTree { nodes }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                RegNode::Leaf { value } => return *value,
                RegNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

/// Maximises `S_l²/n_l + S_r²/n_r`, equivalent to the largest decrease in
/// squared error. Splits that do not reduce the error are rejected.
fn best_sse_split(
    rows: &[Vec<f64>],
    targets: &[f64],
    sorted: &[Vec<usize>],
    node_of: &[usize],
    node: usize,
    members: &[usize],
) -> Option<(usize, f64)> {
    let n = members.len() as f64;
    let total: f64 = members.iter().map(|&i| targets[i]).sum();
    let base = total * total / n;
    let mut best: Option<(usize, f64, f64)> = None;
    for (f, order) in sorted.iter().enumerate() {
        let mut sum_l = 0.0;
        let mut n_l = 0.0;
        let mut prev: Option<f64> = None;
        for &i in order {
            if node_of[i] != node {
                continue;
            }
            let x = rows[i][f];
            if let Some(p) = prev {
                if x > p {
                    let sum_r = total - sum_l;
                    let n_r = n - n_l;
                    let gain = sum_l * sum_l / n_l + sum_r * sum_r / n_r - base;
                    if gain > 1e-12 * (1.0 + base.abs()) && best.is_none_or(|b| gain > b.2) {
                        best = Some((f, midpoint(p, x), gain));
                    }
                }
            }
            sum_l += targets[i];
            n_l += 1.0;
            prev = Some(x);
        }
    }
    best.map(|(f, t, _)| (f, t))
}
