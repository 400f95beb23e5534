//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use s4oc::arch::{ArchGraph, ElementId};
use s4oc::ingest::{Instruction, SecurityClass, TaskEdge, TaskGraph, TaskNode};
use s4oc::partition::Partition;
use s4oc::sim::{ClusterGraph, SimConfig};

/// Quadratic backward scan: for each read, walk back to the nearest writer.
pub fn dependency_oracle(instrs: &[Instruction]) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for (j, ins) in instrs.iter().enumerate() {
        for src in &ins.srcs {
            if let Some(i) = (0..j).rev().find(|&i| instrs[i].dst.as_deref() == Some(src.as_str())) {
                out.insert((i, j));
            }
        }
    }
    out
}

/// Plain BFS over the link list, no shared code with the library.
pub fn bfs_oracle(arch: &ArchGraph, from: ElementId) -> BTreeMap<ElementId, u32> {
    let mut adj: BTreeMap<ElementId, Vec<ElementId>> = BTreeMap::new();
    for l in arch.links() {
        adj.entry(l.a).or_default().push(l.b);
        adj.entry(l.b).or_default().push(l.a);
    }
    let mut dist = BTreeMap::from([(from, 0)]);
    let mut q = VecDeque::from([from]);
    while let Some(u) = q.pop_front() {
        let d = dist[&u];
        for &v in adj.get(&u).into_iter().flatten() {
            if !dist.contains_key(&v) {
                dist.insert(v, d + 1);
                q.push_back(v);
            }
        }
    }
    dist
}

/// Newman modularity straight from `Q = 1/2m Σ_ij (A_ij − k_i k_j / 2m) δ(c_i, c_j)`
/// with `A` the symmetrized weight matrix.
pub fn modularity_oracle(g: &TaskGraph, p: &Partition) -> f64 {
    let n = g.len();
    let mut a = vec![vec![0.0f64; n]; n];
    for e in &g.edges {
        a[e.src][e.dst] += e.bytes as f64;
        a[e.dst][e.src] += e.bytes as f64;
    }
    let k: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    let two_m: f64 = k.iter().sum();
    if two_m == 0.0 {
        return 0.0;
    }
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if p.community_of(i) == p.community_of(j) {
                q += a[i][j] - k[i] * k[j] / two_m;
            }
        }
    }
    q / two_m
}

/// `(W_same − W_mix) / W_intra` over intra-community edges; 0 with no intra weight.
pub fn security_oracle(g: &TaskGraph, p: &Partition) -> f64 {
    let (mut intra, mut same, mut mix) = (0.0, 0.0, 0.0);
    for e in &g.edges {
        if p.community_of(e.src) != p.community_of(e.dst) {
            continue;
        }
        let w = e.bytes as f64;
        let (a, b) = (g.nodes[e.src].security, g.nodes[e.dst].security);
        intra += w;
        if a == b {
            same += w;
        }
        let secret_plain = |x: SecurityClass, y: SecurityClass| {
            x == SecurityClass::CryptoSecret && y == SecurityClass::Plain
        };
        if secret_plain(a, b) || secret_plain(b, a) {
            mix += w;
        }
    }
    if intra == 0.0 {
        0.0
    } else {
        (same - mix) / intra
    }
}

/// Every set partition of `n` items as restricted-growth label strings.
pub fn all_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(i: usize, n: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        for l in 0..=max + usize::from(i > 0) {
            cur.push(l);
            rec(i + 1, n, max.max(l), cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        out.push(Vec::new());
    } else {
        rec(0, n, 0, &mut Vec::new(), &mut out);
    }
    out
}

/// Task graph with the given node security classes and directed weighted edges.
pub fn task_graph(security: &[SecurityClass], edges: &[(usize, usize, u64)]) -> TaskGraph {
    let nodes = security
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let mut n = TaskNode::new(i as u32);
            n.security = s;
            n.instr_count = 1;
            n
        })
        .collect();
    let mut merged: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for &(a, b, w) in edges {
        if a != b {
            *merged.entry((a, b)).or_default() += w;
        }
    }
    TaskGraph {
        nodes,
        edges: merged
            .into_iter()
            .map(|((src, dst), bytes)| TaskEdge { src, dst, bytes })
            .collect(),
    }
}

/// Two triangles joined through a middle node: {0,1,2}, 3, {4,5,6}.
pub fn two_triangles_with_bridge() -> TaskGraph {
    task_graph(
        &[SecurityClass::Plain; 7],
        &[
            (0, 1, 1),
            (1, 2, 1),
            (0, 2, 1),
            (2, 3, 1),
            (3, 4, 1),
            (4, 5, 1),
            (5, 6, 1),
            (4, 6, 1),
        ],
    )
}

pub fn random_small_graph(rng: &mut ChaCha8Rng) -> TaskGraph {
    let n = rng.random_range(1..=8usize);
    let sec: Vec<SecurityClass> = (0..n)
        .map(|_| SecurityClass::ALL[rng.random_range(0..3)])
        .collect();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a != b && rng.random_bool(0.3) {
                edges.push((a, b, rng.random_range(1..=20)));
            }
        }
    }
    task_graph(&sec, &edges)
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Longest path through the cluster DAG where every cluster runs at its
/// best possible speed on the architecture and messages are free.
pub fn critical_path_lower_bound(g: &ClusterGraph, arch: &ArchGraph, cfg: &SimConfig) -> u64 {
    let n = g.len();
    let best: Vec<u64> = g
        .clusters
        .iter()
        .map(|c| {
            arch.pes()
                .map(|e| {
                    let speed = s4oc::sim::speedup(c.features.affinity, e.kind.pe_type().unwrap(), cfg);
                    (c.instr_count * cfg.base_cost).div_ceil(speed.max(1))
                })
                .min()
                .unwrap_or(0)
        })
        .collect();
    let mut indeg: Vec<usize> = g.preds.iter().map(Vec::len).collect();
    let mut ready: VecDeque<usize> = (0..n).filter(|&c| indeg[c] == 0).collect();
    let mut finish = vec![0u64; n];
    while let Some(c) = ready.pop_front() {
        let start = g.preds[c].iter().map(|&(p, _)| finish[p]).max().unwrap_or(0);
        finish[c] = start + best[c];
        for &(s, _) in &g.succs[c] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.push_back(s);
            }
        }
    }
    finish.into_iter().max().unwrap_or(0)
}

/// Deterministic 3-state, 2-action MDP: `(next state, reward)` per action.
pub const MDP: [[(usize, f64); 2]; 3] = [
    [(1, 0.0), (0, 1.0)],
    [(2, 0.0), (0, 2.0)],
    [(0, 10.0), (2, 1.0)],
];

/// Value iteration to machine precision.
pub fn value_iteration(gamma: f64) -> [[f64; 2]; 3] {
    let mut q = [[0.0f64; 2]; 3];
    for _ in 0..10_000 {
        let v: Vec<f64> = q.iter().map(|r| r[0].max(r[1])).collect();
        let mut next = q;
        for s in 0..3 {
            for a in 0..2 {
                let (s2, r) = MDP[s][a];
                next[s][a] = r + gamma * v[s2];
            }
        }
        if next == q {
            break;
        }
        q = next;
    }
    q
}
