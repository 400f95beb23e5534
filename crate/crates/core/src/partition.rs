//! Security-augmented community detection over the task graph.
//!
//! Quality is weighted Newman modularity on the symmetrized graph plus
//! `lambda_sec` times a security cohesion term:
//!
//! ```text
//! quality = Σ_c (e_cc − a_c²) + λ_sec · (W_same − W_mix) / W_intra
//! ```
//!
//! where `W_intra` is the intra-community edge weight, `W_same` the part of
//! it whose endpoints share a security class, and `W_mix` the part pairing a
//! `CryptoSecret` task with a `Plain` one.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{SecurityClass, TaskGraph, TaskId};
use crate::par::Exec;

/// Dense community label per task-graph node index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<usize>,
}

impl Partition {
    pub fn singletons(n: usize) -> Self {
        Partition {
            assignment: (0..n).collect(),
        }
    }

    pub fn single(n: usize) -> Self {
        Partition {
            assignment: vec![0; n],
        }
    }

    /// Arbitrary labels, renumbered densely by first appearance.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut map: BTreeMap<usize, usize> = BTreeMap::new();
        let mut assignment = Vec::with_capacity(labels.len());
        for &l in labels {
            let next = map.len();
            assignment.push(*map.entry(l).or_insert(next));
        }
        Partition { assignment }
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn community_of(&self, node: usize) -> usize {
        self.assignment[node]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn community_count(&self) -> usize {
        self.assignment.iter().max().map_or(0, |m| m + 1)
    }

    /// Node indices per community.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.community_count()];
        for (node, &c) in self.assignment.iter().enumerate() {
            out[c].push(node);
        }
        out
    }

    /// `task_id community_id` per line.
    pub fn to_text(&self, g: &TaskGraph) -> String {
        let mut out = String::new();
        for (node, &c) in self.assignment.iter().enumerate() {
            let _ = writeln!(out, "{} {}", g.nodes[node].id, c);
        }
        out
    }

    pub fn from_text(text: &str, g: &TaskGraph) -> Result<Self, PartitionError> {
        let mut labels = vec![None; g.len()];
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |message: String| PartitionError::Malformed { line: i + 1, message };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(bad("expected `task_id community_id`".into()));
            }
            let task: TaskId = fields[0].parse().map_err(|_| bad("bad task id".into()))?;
            let comm: usize = fields[1].parse().map_err(|_| bad("bad community id".into()))?;
            let node = g
                .index_of(task)
                .ok_or_else(|| bad(format!("unknown task {task}")))?;
            if labels[node].replace(comm).is_some() {
                return Err(bad(format!("task {task} assigned twice")));
            }
        }
        if let Some(node) = labels.iter().position(Option::is_none) {
            return Err(PartitionError::Unassigned(g.nodes[node].id));
        }
        let labels: Vec<usize> = labels.into_iter().flatten().collect();
        Ok(Partition::from_labels(&labels))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PartitionError {
    #[error("partition line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("task {0} has no community")]
    Unassigned(TaskId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityParams {
    pub lambda_sec: f64,
}

impl Default for QualityParams {
    fn default() -> Self {
        QualityParams { lambda_sec: 0.5 }
    }
}

/// Minimum gain for an accepted move.
pub const DEFAULT_GAIN_EPSILON: f64 = 1e-9;

fn mixes_secret_with_plain(a: SecurityClass, b: SecurityClass) -> bool {
    matches!(
        (a, b),
        (SecurityClass::CryptoSecret, SecurityClass::Plain)
            | (SecurityClass::Plain, SecurityClass::CryptoSecret)
    )
}

/// Aggregate counters from which both quality terms follow.
#[derive(Debug, Clone, Copy, Default)]
struct Totals {
    intra: f64,
    same: f64,
    mixed: f64,
    sum_degree_sq: f64,
}

impl Totals {
    fn modularity(&self, m: f64) -> f64 {
        if m == 0.0 {
            0.0
        } else {
            self.intra / m - self.sum_degree_sq / (4.0 * m * m)
        }
    }

    fn security(&self) -> f64 {
        if self.intra == 0.0 {
            0.0
        } else {
            (self.same - self.mixed) / self.intra
        }
    }

    fn quality(&self, m: f64, params: &QualityParams) -> f64 {
        self.modularity(m) + params.lambda_sec * self.security()
    }
}

struct Prepared {
    adj: Vec<Vec<(usize, f64)>>,
    degree: Vec<f64>,
    class: Vec<SecurityClass>,
    m: f64,
}

impl Prepared {
    fn new(g: &TaskGraph) -> Self {
        let adj = g.symmetric_adjacency();
        let degree: Vec<f64> = adj.iter().map(|l| l.iter().map(|&(_, w)| w).sum()).collect();
        let m = degree.iter().sum::<f64>() / 2.0;
        Prepared {
            adj,
            degree,
            class: g.nodes.iter().map(|n| n.security).collect(),
            m,
        }
    }

    fn totals(&self, labels: &[usize]) -> Totals {
        let mut t = Totals::default();
        let mut comm_degree: BTreeMap<usize, f64> = BTreeMap::new();
        for (u, list) in self.adj.iter().enumerate() {
            *comm_degree.entry(labels[u]).or_default() += self.degree[u];
            for &(v, w) in list {
                if u < v && labels[u] == labels[v] {
                    t.intra += w;
                    if self.class[u] == self.class[v] {
                        t.same += w;
                    }
                    if mixes_secret_with_plain(self.class[u], self.class[v]) {
                        t.mixed += w;
                    }
                }
            }
        }
        t.sum_degree_sq = comm_degree.values().map(|d| d * d).sum();
        t
    }
}

pub fn modularity(g: &TaskGraph, p: &Partition) -> f64 {
    let prep = Prepared::new(g);
    prep.totals(p.assignment()).modularity(prep.m)
}

pub fn security_cohesion(g: &TaskGraph, p: &Partition) -> f64 {
    Prepared::new(g).totals(p.assignment()).security()
}

pub fn quality(g: &TaskGraph, p: &Partition, params: &QualityParams) -> f64 {
    let prep = Prepared::new(g);
    prep.totals(p.assignment()).quality(prep.m, params)
}

/// Result of a greedy run.
#[derive(Debug, Clone)]
pub struct Detection {
    pub partition: Partition,
    /// Quality after the start state and after every accepted move.
    pub history: Vec<f64>,
}

impl Detection {
    pub fn quality(&self) -> f64 {
        *self.history.last().unwrap_or(&0.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CommunityDetector {
    pub params: QualityParams,
    pub gain_epsilon: f64,
    pub exec: Exec,
}

impl Default for CommunityDetector {
    fn default() -> Self {
        CommunityDetector {
            params: QualityParams::default(),
            gain_epsilon: DEFAULT_GAIN_EPSILON,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Move {
    gain: f64,
    node: usize,
    target: usize,
    new_totals: [f64; 4],
}

/// Larger gain wins; ties go to the lower node, then the lower target.
fn better(a: Move, b: Move) -> Move {
    match a.gain.total_cmp(&b.gain) {
        std::cmp::Ordering::Greater => a,
        std::cmp::Ordering::Less => b,
        std::cmp::Ordering::Equal => {
            if (a.node, a.target) <= (b.node, b.target) {
                a
            } else {
                b
            }
        }
    }
}

impl CommunityDetector {
    pub fn new(params: QualityParams) -> Self {
        CommunityDetector {
            params,
            ..Default::default()
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    /// Start from singletons and keep applying the single best node move
    /// into a neighbouring community until no move gains more than
    /// `gain_epsilon`.
    pub fn detect(&self, g: &TaskGraph) -> Detection {
        let n = g.len();
        let prep = Prepared::new(g);
        let mut labels: Vec<usize> = (0..n).collect();
        let mut comm_degree = prep.degree.clone();
        let mut totals = prep.totals(&labels);
        let mut current = totals.quality(prep.m, &self.params);
        let mut history = vec![current];
        let nodes: Vec<usize> = (0..n).collect();

        loop {
            let best = self.exec.map_reduce(
                &nodes,
                |&v| self.best_move_for(&prep, &labels, &comm_degree, &totals, current, v),
                better,
            );
            let Some(mv) = best.filter(|mv| mv.gain > self.gain_epsilon) else {
                break;
            };
            let from = labels[mv.node];
            comm_degree[from] -= prep.degree[mv.node];
            comm_degree[mv.target] += prep.degree[mv.node];
            labels[mv.node] = mv.target;
            let [intra, same, mixed, sum_degree_sq] = mv.new_totals;
            totals = Totals {
                intra,
                same,
                mixed,
                sum_degree_sq,
            };
            current = totals.quality(prep.m, &self.params);
            history.push(current);
        }
        Detection {
            partition: Partition::from_labels(&labels),
            history,
        }
    }

    fn best_move_for(
        &self,
        prep: &Prepared,
        labels: &[usize],
        comm_degree: &[f64],
        totals: &Totals,
        current: f64,
        v: usize,
    ) -> Option<Move> {
        let own = labels[v];
        // (weight, same-class weight, secret/plain weight) from v into each community.
        let mut links: BTreeMap<usize, [f64; 3]> = BTreeMap::new();
        for &(u, w) in &prep.adj[v] {
            let e = links.entry(labels[u]).or_default();
            e[0] += w;
            if prep.class[u] == prep.class[v] {
                e[1] += w;
            }
            if mixes_secret_with_plain(prep.class[u], prep.class[v]) {
                e[2] += w;
            }
        }
        let out = links.get(&own).copied().unwrap_or_default();
        let d = prep.degree[v];
        let d_own = comm_degree[own];
        links
            .iter()
            .filter(|(&c, _)| c != own)
            .map(|(&target, into)| {
                let d_target = comm_degree[target];
                let next = Totals {
                    intra: totals.intra - out[0] + into[0],
                    same: totals.same - out[1] + into[1],
                    mixed: totals.mixed - out[2] + into[2],
                    sum_degree_sq: totals.sum_degree_sq - d_own * d_own - d_target * d_target
                        + (d_own - d) * (d_own - d)
                        + (d_target + d) * (d_target + d),
                };
                Move {
                    gain: next.quality(prep.m, &self.params) - current,
                    node: v,
                    target,
                    new_totals: [next.intra, next.same, next.mixed, next.sum_degree_sq],
                }
            })
            .reduce(better)
    }
}

pub fn detect_communities(g: &TaskGraph, params: &QualityParams) -> Partition {
    CommunityDetector::new(*params).detect(g).partition
}
