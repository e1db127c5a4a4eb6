//! Long-horizon plan scoring against a ground-truth action DAG.
//!
//! Predicted steps are matched greedily (left to right, each ground-truth node
//! consumed once) on canonical action strings. From the matching:
//!
//! * key-step recall `R_k` = matched ground-truth nodes / ground-truth nodes,
//! * sequential consistency `R_s` = longest matched subsequence whose order
//!   never puts a node after one of its descendants, over ground-truth nodes,
//! * key-step precision `P_k` = matched predicted steps / predicted steps,
//! * `S_plan = (0.5 R_k + 0.5 R_s) P_k`.
//!
//! Order consistency is checked against the full ancestor relation, so any
//! linear extension of the DAG is accepted.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PlanError {
    #[error("empty action text")]
    EmptyAction,
    #[error("ground-truth DAG has no nodes")]
    EmptyDag,
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("edge references unknown node `{0}`")]
    UnknownNode(String),
    #[error("dependency cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
}

/// Normalises an action to `verb(arg, arg)`: lower case, single spaces,
/// arguments trimmed. Text without parentheses becomes
/// `first_token(remaining tokens)`.
pub fn canonicalize_action(raw: &str) -> Result<String, PlanError> {
    let squash = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
    let text = squash(&raw.to_lowercase());
    if text.is_empty() {
        return Err(PlanError::EmptyAction);
    }
    match text.find('(') {
        Some(open) => {
            let verb = text[..open].trim();
            let rest = &text[open + 1..];
            let inner = match rest.rfind(')') {
                Some(close) => &rest[..close],
                None => rest,
            };
            let args: Vec<String> = inner
                .split(',')
                .map(squash)
                .filter(|a| !a.is_empty())
                .collect();
            Ok(format!("{verb}({})", args.join(", ")))
        }
        None => {
            let mut tokens = text.split(' ');
            let verb = tokens.next().unwrap_or_default();
            let arg = tokens.collect::<Vec<_>>().join(" ");
            Ok(format!("{verb}({arg})"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    pub id: String,
    pub action: String,
}

/// Raw DAG as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagDocument {
    pub nodes: Vec<PlanNode>,
    #[serde(default)]
    pub edges: Vec<(String, String)>,
}

/// Validated ground-truth plan with canonical actions and its ancestor
/// relation precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanDag {
    ids: Vec<String>,
    actions: Vec<String>,
    /// `ancestors[v]` holds every node that must precede `v`.
    ancestors: Vec<BTreeSet<usize>>,
}

impl PlanDag {
    pub fn new(doc: &DagDocument) -> Result<Self, PlanError> {
        let mut index = BTreeMap::new();
        for (i, n) in doc.nodes.iter().enumerate() {
            if index.insert(n.id.as_str(), i).is_some() {
                return Err(PlanError::DuplicateNode(n.id.clone()));
            }
        }
        let n = doc.nodes.len();
        let mut children = vec![Vec::new(); n];
        for (from, to) in &doc.edges {
            let f = *index
                .get(from.as_str())
                .ok_or_else(|| PlanError::UnknownNode(from.clone()))?;
            let t = *index
                .get(to.as_str())
                .ok_or_else(|| PlanError::UnknownNode(to.clone()))?;
            children[f].push(t);
        }
        let ids: Vec<String> = doc.nodes.iter().map(|n| n.id.clone()).collect();
        if let Some(cycle) = find_cycle(&children) {
            return Err(PlanError::Cycle(
                cycle.into_iter().map(|i| ids[i].clone()).collect(),
            ));
        }
        let actions = doc
            .nodes
            .iter()
            .map(|n| canonicalize_action(&n.action))
            .collect::<Result<Vec<_>, _>>()?;

        let mut ancestors = vec![BTreeSet::new(); n];
        for start in 0..n {
            let mut stack = children[start].clone();
            let mut seen = BTreeSet::new();
            while let Some(v) = stack.pop() {
                if seen.insert(v) {
                    ancestors[v].insert(start);
                    stack.extend(&children[v]);
                }
            }
        }
        Ok(PlanDag {
            ids,
            actions,
            ancestors,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn node_id(&self, node: usize) -> &str {
        &self.ids[node]
    }

    pub fn action(&self, node: usize) -> &str {
        &self.actions[node]
    }

    /// True when `a` must come before `b`.
    pub fn precedes(&self, a: usize, b: usize) -> bool {
        self.ancestors[b].contains(&a)
    }
}

/// Returns one cycle (first node repeated at the end) if the graph has any.
fn find_cycle(children: &[Vec<usize>]) -> Option<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let n = children.len();
    let mut mark = vec![Mark::New; n];
    for root in 0..n {
        if mark[root] != Mark::New {
            continue;
        }
        // (node, next child index)
        let mut path: Vec<(usize, usize)> = vec![(root, 0)];
        mark[root] = Mark::Active;
        while let Some(top) = path.last_mut() {
            let v = top.0;
            if let Some(&w) = children[v].get(top.1) {
                top.1 += 1;
                match mark[w] {
                    Mark::New => {
                        mark[w] = Mark::Active;
                        path.push((w, 0));
                    }
                    Mark::Active => {
                        let start = path
                            .iter()
                            .position(|&(u, _)| u == w)
                            .expect("active node on path");
                        let mut cycle: Vec<usize> = path[start..].iter().map(|&(u, _)| u).collect();
                        cycle.push(w);
                        return Some(cycle);
                    }
                    Mark::Done => {}
                }
            } else {
                mark[v] = Mark::Done;
                path.pop();
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedPlan {
    pub steps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepMatching {
    /// For each predicted position, the ground-truth node it consumed.
    pub assignment: Vec<Option<usize>>,
}

impl StepMatching {
    pub fn matched(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(p, n)| n.map(|n| (p, n)))
    }

    pub fn matched_count(&self) -> usize {
        self.assignment.iter().filter(|n| n.is_some()).count()
    }

    pub fn unmatched(&self) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, n)| n.is_none())
            .map(|(p, _)| p)
            .collect()
    }
}

pub fn match_steps(pred: &PredictedPlan, gt: &PlanDag) -> Result<StepMatching, PlanError> {
    let mut used = vec![false; gt.len()];
    let mut assignment = Vec::with_capacity(pred.steps.len());
    for step in &pred.steps {
        let canon = canonicalize_action(step)?;
        let hit = (0..gt.len()).find(|&n| !used[n] && gt.action(n) == canon);
        if let Some(n) = hit {
            used[n] = true;
        }
        assignment.push(hit);
    }
    Ok(StepMatching { assignment })
}

/// Length of the longest subsequence of `nodes` (in the given order) in which
/// no element is preceded by one of its DAG descendants.
///
/// Pairs `(i, j)` with `i < j` and `nodes[j]` an ancestor of `nodes[i]` form a
/// strict partial order on positions; the answer is its largest antichain,
/// computed as `len - maximum matching` (Dilworth via König).
pub fn longest_consistent_subsequence(nodes: &[usize], dag: &PlanDag) -> usize {
    let k = nodes.len();
    let inverted: Vec<Vec<usize>> = (0..k)
        .map(|i| {
            (i + 1..k)
                .filter(|&j| dag.precedes(nodes[j], nodes[i]))
                .collect()
        })
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; k];
    let mut matching = 0;
    for i in 0..k {
        let mut seen = vec![false; k];
        if augment(i, &inverted, &mut seen, &mut owner) {
            matching += 1;
        }
    }
    k - matching
}

fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
    for &v in &adj[u] {
        if seen[v] {
            continue;
        }
        seen[v] = true;
        if owner[v].is_none_or(|w| augment(w, adj, seen, owner)) {
            owner[v] = Some(u);
            return true;
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlanScore {
    pub recall: f64,
    pub sequential: f64,
    pub precision: f64,
    pub s_plan: f64,
}

pub fn combine(recall: f64, sequential: f64, precision: f64) -> f64 {
    (0.5 * recall + 0.5 * sequential) * precision
}

pub fn score_plan(pred: &PredictedPlan, gt: &PlanDag) -> Result<PlanScore, PlanError> {
    if gt.is_empty() {
        return Err(PlanError::EmptyDag);
    }
    let matching = match_steps(pred, gt)?;
    let matched_nodes: Vec<usize> = matching.matched().map(|(_, n)| n).collect();
    let total = gt.len() as f64;
    let recall = matched_nodes.len() as f64 / total;
    let sequential = longest_consistent_subsequence(&matched_nodes, gt) as f64 / total;
    let precision = if pred.steps.is_empty() {
        0.0
    } else {
        matching.matched_count() as f64 / pred.steps.len() as f64
    };
    Ok(PlanScore {
        recall,
        sequential,
        precision,
        s_plan: combine(recall, sequential, precision),
    })
}
