//! Discrete-event execution of mapped clusters.
//!
//! Unit occupancy: a PE holds one cluster from commit to finish, and its
//! `available` flips 1 → 0 → 1. A committed cluster starts once every
//! predecessor message, its memory footprint, and any reconfiguration have
//! arrived. Agents decide against a read-only view of the environment; the
//! event loop applies their commits in agent-id order.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{
    ArchError, ArchGraph, DistanceTable, Element, ElementId, ElementKind, LogicType, PeType, Route,
};
use crate::ingest::{AffinityClass, SecurityClass, TaskGraph, TaskId};
use crate::par::Exec;
use crate::partition::Partition;
use crate::rl::{
    self, q_update, select_action, Action, AgentPool, Choice, Placement, QTable, RlError, RlParams,
    StateId, StateKey, TaskFeatures,
};

pub type Cycles = u64;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("deadlock at cycle {time}: {unfinished} cluster(s) unfinished with no pending events")]
    Deadlock { time: Cycles, unfinished: usize },
    #[error("no processing elements to map onto")]
    NoProcessingElements,
    #[error("attack at cycle {time} is before the current cycle {now}")]
    AttackInPast { time: Cycles, now: Cycles },
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Rl(#[from] RlError),
}

/// Cost-model constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Cycles per instruction before speedups.
    pub base_cost: u64,
    /// Speedup of an accelerator on its own affinity class.
    pub hwa_speedup: u64,
    /// Speedup of a GPU on loop and matrix work.
    pub gpu_speedup: u64,
    /// Slowdown when the element's logic differs from the cluster's preference.
    pub logic_mismatch_factor: u64,
    pub reconfig_delay: Cycles,
    /// Load each cluster's memory footprint from the nearest ME (or SE).
    pub model_memory: bool,
    pub energy: EnergyModel,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            base_cost: 1,
            hwa_speedup: 8,
            gpu_speedup: 4,
            logic_mismatch_factor: 2,
            reconfig_delay: 50,
            model_memory: true,
            energy: EnergyModel::default(),
        }
    }
}

/// Abstract energy units per cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyModel {
    pub cpu: f64,
    pub gpu: f64,
    pub hwa: f64,
    pub asic: f64,
    pub puf: f64,
    pub idle: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel {
            cpu: 1.0,
            gpu: 3.0,
            hwa: 0.5,
            asic: 1.0,
            puf: 1.0,
            idle: 0.1,
        }
    }
}

impl EnergyModel {
    pub fn active(&self, pe: PeType) -> f64 {
        match pe {
            PeType::Cpu => self.cpu,
            PeType::Gpu => self.gpu,
            PeType::HwaFft | PeType::HwaMm | PeType::HwaCrypto => self.hwa,
            PeType::Asic => self.asic,
            PeType::Puf => self.puf,
        }
    }
}

/// A group of tasks mapped and executed as one unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: usize,
    /// Task-graph node indices.
    pub tasks: Vec<usize>,
    pub task_ids: Vec<TaskId>,
    pub instr_count: u64,
    pub mem_bytes: u64,
    pub features: TaskFeatures,
    /// Tasks with a security class other than `Plain`.
    pub sensitive_tasks: u32,
}

/// Acyclic cluster-level dependency graph.
#[derive(Debug, Clone)]
pub struct ClusterGraph {
    pub clusters: Vec<Cluster>,
    /// (predecessor, bytes) per cluster.
    pub preds: Vec<Vec<(usize, u64)>>,
    pub succs: Vec<Vec<(usize, u64)>>,
    /// Communities folded together because they were mutually dependent.
    pub merged_communities: usize,
}

fn majority<K: Ord + Copy>(votes: &BTreeMap<K, u64>, fallback: K) -> K {
    votes
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map_or(fallback, |(&k, _)| k)
}

impl ClusterGraph {
    /// Group tasks by community, then fold strongly connected groups of
    /// communities into single clusters so the result is a DAG. Clusters
    /// are numbered by their lowest task index.
    pub fn build(g: &TaskGraph, p: &Partition) -> ClusterGraph {
        let k = p.community_count();
        let mut quotient = DiGraph::<(), ()>::with_capacity(k, g.edges.len());
        let ids: Vec<_> = (0..k).map(|_| quotient.add_node(())).collect();
        let mut seen = std::collections::BTreeSet::new();
        for e in &g.edges {
            let (a, b) = (p.community_of(e.src), p.community_of(e.dst));
            if a != b && seen.insert((a, b)) {
                quotient.add_edge(ids[a], ids[b], ());
            }
        }
        let components = tarjan_scc(&quotient);
        let mut group_of_comm = vec![0usize; k];
        for (gi, comp) in components.iter().enumerate() {
            for n in comp {
                group_of_comm[n.index()] = gi;
            }
        }
        let merged = components.iter().filter(|c| c.len() > 1).map(|c| c.len()).sum();
        let labels: Vec<usize> = (0..g.len()).map(|n| group_of_comm[p.community_of(n)]).collect();
        let dense = Partition::from_labels(&labels);
        Self::from_dense(g, &dense, merged)
    }

    fn from_dense(g: &TaskGraph, p: &Partition, merged: usize) -> ClusterGraph {
        let clusters = p
            .members()
            .into_iter()
            .enumerate()
            .map(|(id, tasks)| {
                let mut aff: BTreeMap<AffinityClass, u64> = BTreeMap::new();
                let mut logic: BTreeMap<LogicType, u64> = BTreeMap::new();
                let mut security = SecurityClass::Plain;
                let (mut instr_count, mut mem_bytes, mut sensitive) = (0, 0, 0);
                for &t in &tasks {
                    let n = &g.nodes[t];
                    *aff.entry(n.affinity).or_default() += n.instr_count.max(1);
                    *logic.entry(n.logic).or_default() += n.instr_count.max(1);
                    security = security.max(n.security);
                    instr_count += n.instr_count;
                    mem_bytes += n.mem_bytes;
                    sensitive += n.security.is_sensitive() as u32;
                }
                Cluster {
                    id,
                    task_ids: tasks.iter().map(|&t| g.nodes[t].id).collect(),
                    tasks,
                    instr_count,
                    mem_bytes,
                    features: TaskFeatures {
                        affinity: majority(&aff, AffinityClass::General),
                        security,
                        logic: majority(&logic, LogicType::Binary),
                    },
                    sensitive_tasks: sensitive,
                }
            })
            .collect::<Vec<_>>();
        let mut bytes: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for e in &g.edges {
            let (a, b) = (p.community_of(e.src), p.community_of(e.dst));
            if a != b {
                *bytes.entry((a, b)).or_default() += e.bytes;
            }
        }
        let n = clusters.len();
        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        for ((a, b), w) in bytes {
            succs[a].push((b, w));
            preds[b].push((a, w));
        }
        ClusterGraph {
            clusters,
            preds,
            succs,
            merged_communities: merged,
        }
    }

    /// Assemble a cluster graph directly. No acyclicity check; a cyclic
    /// graph deadlocks the simulator.
    pub fn from_parts(clusters: Vec<Cluster>, edges: &[(usize, usize, u64)]) -> ClusterGraph {
        let n = clusters.len();
        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        for &(a, b, w) in edges {
            succs[a].push((b, w));
            preds[b].push((a, w));
        }
        ClusterGraph {
            clusters,
            preds,
            succs,
            merged_communities: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn sensitive_tasks(&self) -> u32 {
        self.clusters.iter().map(|c| c.sensitive_tasks).sum()
    }
}

pub fn speedup(affinity: AffinityClass, pe: PeType, cfg: &SimConfig) -> u64 {
    match (affinity, pe) {
        (AffinityClass::Fft, PeType::HwaFft)
        | (AffinityClass::MatrixMul, PeType::HwaMm)
        | (AffinityClass::Crypto, PeType::HwaCrypto) => cfg.hwa_speedup,
        (AffinityClass::Loop | AffinityClass::MatrixMul, PeType::Gpu) => cfg.gpu_speedup,
        _ => 1,
    }
}

/// `ceil(instructions × base_cost × mismatch / speedup)`.
pub fn exec_time(cluster: &Cluster, element: &Element, cfg: &SimConfig) -> Cycles {
    let Some(pe) = element.kind.pe_type() else {
        return 0;
    };
    let mismatch = if element.logic == cluster.features.logic {
        1
    } else {
        cfg.logic_mismatch_factor
    };
    let work = cluster.instr_count * cfg.base_cost * mismatch;
    work.div_ceil(speedup(cluster.features.affinity, pe, cfg).max(1))
}

/// `ceil(bytes / min_bandwidth) + hops × latency`.
pub fn comm_time(bytes: u64, hops: u32, min_bandwidth: u32, latency: u32) -> Cycles {
    let transfer = if bytes == 0 {
        0
    } else {
        bytes.div_ceil(min_bandwidth.max(1) as u64)
    };
    transfer + hops as u64 * latency as u64
}

/// Transfer time along a precomputed route. Zero on the same element.
pub fn route_time(bytes: u64, route: &Route) -> Cycles {
    if route.hops == 0 {
        return 0;
    }
    let transfer = if bytes == 0 {
        0
    } else {
        bytes.div_ceil(route.min_bandwidth.max(1) as u64)
    };
    transfer + route.latency as u64
}

/// Origin of a delivered message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageSource {
    Cluster(usize),
    Memory(ElementId),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimEventKind {
    TaskStart {
        cluster: usize,
        element: ElementId,
    },
    TaskFinish {
        cluster: usize,
        element: ElementId,
        /// Sensitive tasks of this cluster that ran on a compromised element.
        violations: u32,
    },
    MessageDelivered {
        from: MessageSource,
        to: usize,
        bytes: u64,
        hops: u32,
    },
    ReconfigDone {
        element: ElementId,
        logic: LogicType,
    },
    AttackInjected {
        element: ElementId,
    },
    MigrationPerformed {
        cluster: usize,
        from: ElementId,
        to: ElementId,
        hops: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub time: Cycles,
    pub kind: SimEventKind,
}

impl SimEvent {
    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            SimEventKind::TaskStart { .. } => "TaskStart",
            SimEventKind::TaskFinish { .. } => "TaskFinish",
            SimEventKind::MessageDelivered { .. } => "MessageDelivered",
            SimEventKind::ReconfigDone { .. } => "ReconfigDone",
            SimEventKind::AttackInjected { .. } => "AttackInjected",
            SimEventKind::MigrationPerformed { .. } => "MigrationPerformed",
        }
    }

    /// Space-separated `key=value` detail column for `events.csv`.
    pub fn detail(&self) -> String {
        match &self.kind {
            SimEventKind::TaskStart { cluster, element } => {
                format!("cluster={cluster} element={element}")
            }
            SimEventKind::TaskFinish {
                cluster,
                element,
                violations,
            } => format!("cluster={cluster} element={element} violations={violations}"),
            SimEventKind::MessageDelivered {
                from,
                to,
                bytes,
                hops,
            } => {
                let src = match from {
                    MessageSource::Cluster(c) => format!("cluster:{c}"),
                    MessageSource::Memory(e) => format!("memory:{e}"),
                };
                format!("from={src} to={to} bytes={bytes} hops={hops}")
            }
            SimEventKind::ReconfigDone { element, logic } => {
                format!("element={element} logic={logic}")
            }
            SimEventKind::AttackInjected { element } => format!("element={element}"),
            SimEventKind::MigrationPerformed {
                cluster,
                from,
                to,
                hops,
            } => format!("cluster={cluster} from={from} to={to} hops={hops}"),
        }
    }
}

impl fmt::Display for SimEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.time, self.kind_name(), self.detail())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub makespan: Cycles,
    /// Σ bytes × hops over inter-cluster messages.
    pub total_comm_bytes_hops: u64,
    /// Σ bytes × hops over memory-footprint loads.
    pub mem_bytes_hops: u64,
    pub energy: f64,
    pub security_score: f64,
    pub violations: u32,
    pub sensitive_tasks: u32,
    pub migrations: u32,
    pub decisions: u64,
    pub explorations: u64,
    pub steps: u64,
    pub events: Vec<SimEvent>,
}

/// Counters recomputable from an event log; see [`replay`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayCounters {
    pub makespan: Cycles,
    pub total_comm_bytes_hops: u64,
    pub mem_bytes_hops: u64,
    pub energy: f64,
    pub violations: u32,
    pub migrations: u32,
}

impl SimReport {
    pub fn counters(&self) -> ReplayCounters {
        ReplayCounters {
            makespan: self.makespan,
            total_comm_bytes_hops: self.total_comm_bytes_hops,
            mem_bytes_hops: self.mem_bytes_hops,
            energy: self.energy,
            violations: self.violations,
            migrations: self.migrations,
        }
    }
}

fn energy_of(arch: &ArchGraph, busy: &BTreeMap<ElementId, Cycles>, horizon: Cycles, model: &EnergyModel) -> f64 {
    arch.pes()
        .map(|e| {
            let run = busy.get(&e.id).copied().unwrap_or(0).min(horizon);
            let pe = e.kind.pe_type().unwrap();
            model.active(pe) * run as f64 + model.idle * (horizon - run) as f64
        })
        .sum()
}

fn makespan_of(first_start: Option<Cycles>, last_finish: Cycles) -> Cycles {
    first_start.map_or(0, |s| last_finish.saturating_sub(s))
}

/// Recompute report counters from the event log alone.
pub fn replay(events: &[SimEvent], arch: &ArchGraph, model: &EnergyModel) -> ReplayCounters {
    let mut first_start = None;
    let mut last_finish = 0;
    let mut started: BTreeMap<usize, Cycles> = BTreeMap::new();
    let mut busy: BTreeMap<ElementId, Cycles> = BTreeMap::new();
    let mut c = ReplayCounters {
        makespan: 0,
        total_comm_bytes_hops: 0,
        mem_bytes_hops: 0,
        energy: 0.0,
        violations: 0,
        migrations: 0,
    };
    for ev in events {
        match ev.kind {
            SimEventKind::TaskStart { cluster, .. } => {
                first_start.get_or_insert(ev.time);
                started.insert(cluster, ev.time);
            }
            SimEventKind::TaskFinish {
                cluster,
                element,
                violations,
            } => {
                last_finish = last_finish.max(ev.time);
                *busy.entry(element).or_default() += ev.time - started[&cluster];
                c.violations += violations;
            }
            SimEventKind::MessageDelivered {
                from, bytes, hops, ..
            } => {
                let bh = bytes * hops as u64;
                match from {
                    MessageSource::Cluster(_) => c.total_comm_bytes_hops += bh,
                    MessageSource::Memory(_) => c.mem_bytes_hops += bh,
                }
            }
            SimEventKind::MigrationPerformed { .. } => c.migrations += 1,
            _ => {}
        }
    }
    c.makespan = makespan_of(first_start, last_finish);
    c.energy = energy_of(arch, &busy, c.makespan, model);
    c
}

/// Which policy maps clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mapper {
    /// ε-greedy Q-learning agents.
    Rl,
    /// Uniform over idle PEs (any PE when none is idle).
    Random,
    /// Idle PE with matching affinity and least traffic to mapped predecessors.
    GreedyNearest,
}

impl Mapper {
    pub fn name(self) -> &'static str {
        match self {
            Mapper::Rl => "rl",
            Mapper::Random => "random",
            Mapper::GreedyNearest => "greedy-nearest",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rl" => Some(Mapper::Rl),
            "random" => Some(Mapper::Random),
            "greedy-nearest" | "greedy" => Some(Mapper::GreedyNearest),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Waiting,
    Queued,
    Committed,
    Running,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Pending {
    // Variant order is the processing order within one cycle.
    Attack(ElementId),
    Release,
    Finish(usize),
    Message {
        from: usize,
        to: usize,
    },
    Memory {
        to: usize,
        element: ElementId,
    },
    Reconfig {
        cluster: usize,
        element: ElementId,
        logic: LogicType,
    },
}

#[derive(Debug, Clone)]
struct Agent {
    rng: ChaCha8Rng,
    /// Transition awaiting its successor state, with the features of the
    /// cluster it was made for.
    pending: Option<(StateId, Action, f64, TaskFeatures)>,
}

struct Decision {
    agent: usize,
    cluster: usize,
    state: StateId,
    candidates: Vec<Action>,
    choice: Choice,
    rng: ChaCha8Rng,
}

/// Result of one call to [`Env::step`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Advanced { time: Cycles },
    Finished,
}

/// Knobs for one simulated episode.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeOptions {
    pub mapper: Mapper,
    pub epsilon: f64,
    /// Apply Q-learning updates.
    pub learn: bool,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        EpisodeOptions {
            mapper: Mapper::Rl,
            epsilon: RlParams::default().epsilon,
            learn: true,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

/// Mixes a seed with a stream index (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub struct Env<'a> {
    arch: ArchGraph,
    dist: DistanceTable,
    graph: &'a ClusterGraph,
    cfg: SimConfig,
    params: RlParams,
    opts: EpisodeOptions,
    q: &'a QTable,
    pool: AgentPool,
    agents: Vec<Agent>,
    now: Cycles,
    queue: BinaryHeap<Reverse<(Cycles, Pending, u64)>>,
    seq: u64,
    phase: Vec<Phase>,
    remaining_preds: Vec<usize>,
    waits: Vec<usize>,
    location: Vec<Option<ElementId>>,
    owner: Vec<Option<usize>>,
    started_at: Vec<Cycles>,
    memory_slot: Vec<Option<ElementId>>,
    memory_used: BTreeMap<ElementId, u64>,
    busy_cycles: BTreeMap<ElementId, Cycles>,
    first_start: Option<Cycles>,
    last_finish: Cycles,
    done: usize,
    in_flight: usize,
    comm: u64,
    mem: u64,
    violations: u32,
    migrations: u32,
    decisions: u64,
    explorations: u64,
    steps: u64,
    log: Vec<SimEvent>,
}

impl<'a> Env<'a> {
    pub fn new(
        arch: &ArchGraph,
        graph: &'a ClusterGraph,
        cfg: SimConfig,
        params: RlParams,
        q: &'a QTable,
        opts: EpisodeOptions,
    ) -> Result<Self, SimError> {
        params.validate()?;
        let mut arch = arch.clone();
        arch.reset_runtime();
        let n = graph.len();
        if n > 0 && arch.pes().next().is_none() {
            return Err(SimError::NoProcessingElements);
        }
        let dist = arch.distance_table(opts.exec);
        let agents = (0..params.agents)
            .map(|a| Agent {
                rng: ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, a as u64)),
                pending: None,
            })
            .collect();
        let mut env = Env {
            arch,
            dist,
            graph,
            cfg,
            params,
            opts,
            q,
            pool: AgentPool::from_params(&params),
            agents,
            now: 0,
            queue: BinaryHeap::new(),
            seq: 0,
            phase: vec![Phase::Waiting; n],
            remaining_preds: graph.preds.iter().map(Vec::len).collect(),
            waits: vec![0; n],
            location: vec![None; n],
            owner: vec![None; n],
            started_at: vec![0; n],
            memory_slot: vec![None; n],
            memory_used: BTreeMap::new(),
            busy_cycles: BTreeMap::new(),
            first_start: None,
            last_finish: 0,
            done: 0,
            in_flight: 0,
            comm: 0,
            mem: 0,
            violations: 0,
            migrations: 0,
            decisions: 0,
            explorations: 0,
            steps: 0,
            log: Vec::new(),
        };
        env.schedule(0, Pending::Release);
        Ok(env)
    }

    /// Schedule an attack on `element` at cycle `time`.
    pub fn inject_attack(&mut self, time: Cycles, element: ElementId) -> Result<(), SimError> {
        self.arch.get(element)?;
        if time < self.now {
            return Err(SimError::AttackInPast { time, now: self.now });
        }
        self.schedule(time, Pending::Attack(element));
        Ok(())
    }

    fn schedule(&mut self, time: Cycles, what: Pending) {
        self.seq += 1;
        self.queue.push(Reverse((time, what, self.seq)));
    }

    fn emit(&mut self, kind: SimEventKind) {
        self.log.push(SimEvent {
            time: self.now,
            kind,
        });
    }

    pub fn arch(&self) -> &ArchGraph {
        &self.arch
    }

    pub fn pool(&self) -> &AgentPool {
        &self.pool
    }

    pub fn now(&self) -> Cycles {
        self.now
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.log
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight
    }

    pub fn is_finished(&self) -> bool {
        self.done == self.graph.len()
    }

    /// Σ over PEs of (1 − available) must equal the in-flight cluster count.
    pub fn occupancy_balanced(&self) -> bool {
        let occupied: f64 = self.arch.pes().map(|e| 1.0 - e.available).sum();
        (occupied - self.in_flight as f64).abs() < 1e-9
    }

    /// Process every event at the next pending timestamp, then let agents act.
    pub fn step(&mut self) -> Result<StepOutcome, SimError> {
        if self.is_finished() && self.queue.is_empty() {
            return Ok(StepOutcome::Finished);
        }
        let Some(&Reverse((t, _, _))) = self.queue.peek() else {
            return Err(SimError::Deadlock {
                time: self.now,
                unfinished: self.graph.len() - self.done,
            });
        };
        self.now = t;
        let mut newly_ready = Vec::new();
        while let Some(&Reverse((time, what, _))) = self.queue.peek() {
            if time != t {
                break;
            }
            self.queue.pop();
            self.handle(what, &mut newly_ready)?;
        }
        newly_ready.sort_unstable();
        self.pool.observe_ready(newly_ready.len());
        for &c in &newly_ready {
            self.phase[c] = Phase::Queued;
        }
        self.pool.dispatch(newly_ready);
        self.agent_rounds()?;
        self.steps += 1;
        Ok(StepOutcome::Advanced { time: t })
    }

    fn handle(&mut self, what: Pending, ready: &mut Vec<usize>) -> Result<(), SimError> {
        match what {
            Pending::Attack(element) => {
                self.arch.set_compromised(element, true)?;
                self.emit(SimEventKind::AttackInjected { element });
            }
            Pending::Release => {
                ready.extend((0..self.graph.len()).filter(|&c| self.remaining_preds[c] == 0));
            }
            Pending::Finish(c) => {
                let element = self.location[c].expect("running cluster has a location");
                let e = self.arch.get(element)?;
                let violations = if e.compromised {
                    self.graph.clusters[c].sensitive_tasks
                } else {
                    0
                };
                self.violations += violations;
                self.arch.set_available(element, 1.0)?;
                *self.busy_cycles.entry(element).or_default() += self.now - self.started_at[c];
                self.last_finish = self.last_finish.max(self.now);
                self.phase[c] = Phase::Done;
                self.done += 1;
                self.in_flight -= 1;
                if let Some(me) = self.memory_slot[c].take() {
                    if let Some(used) = self.memory_used.get_mut(&me) {
                        *used -= self.graph.clusters[c].mem_bytes;
                    }
                }
                self.pool.complete(self.owner[c].expect("owned"));
                self.emit(SimEventKind::TaskFinish {
                    cluster: c,
                    element,
                    violations,
                });
                for &(s, _) in &self.graph.succs[c] {
                    self.remaining_preds[s] -= 1;
                    if self.remaining_preds[s] == 0 {
                        ready.push(s);
                    }
                }
            }
            Pending::Message { from, to } => {
                let (bytes, hops) = self.message_shape(from, to);
                self.emit(SimEventKind::MessageDelivered {
                    from: MessageSource::Cluster(from),
                    to,
                    bytes,
                    hops,
                });
                self.arrive(to)?;
            }
            Pending::Memory { to, element } => {
                let hops = self.hops(element, self.location[to].unwrap());
                self.emit(SimEventKind::MessageDelivered {
                    from: MessageSource::Memory(element),
                    to,
                    bytes: self.graph.clusters[to].mem_bytes,
                    hops,
                });
                self.arrive(to)?;
            }
            Pending::Reconfig {
                cluster,
                element,
                logic,
            } => {
                self.arch.set_logic(element, logic)?;
                self.emit(SimEventKind::ReconfigDone { element, logic });
                self.arrive(cluster)?;
            }
        }
        Ok(())
    }

    fn idx(&self, id: ElementId) -> usize {
        self.arch.index_of(id).expect("known element")
    }

    fn hops(&self, a: ElementId, b: ElementId) -> u32 {
        self.dist.hops_by_index(self.idx(a), self.idx(b)).unwrap_or(u32::MAX)
    }

    fn message_shape(&self, from: usize, to: usize) -> (u64, u32) {
        let bytes = self.graph.preds[to]
            .iter()
            .find(|&&(p, _)| p == from)
            .map_or(0, |&(_, w)| w);
        let hops = self.hops(self.location[from].unwrap(), self.location[to].unwrap());
        (bytes, hops)
    }

    fn arrive(&mut self, c: usize) -> Result<(), SimError> {
        self.waits[c] -= 1;
        if self.waits[c] == 0 {
            self.start(c)?;
        }
        Ok(())
    }

    fn start(&mut self, c: usize) -> Result<(), SimError> {
        let element = self.location[c].unwrap();
        let cycles = exec_time(&self.graph.clusters[c], self.arch.get(element)?, &self.cfg);
        self.phase[c] = Phase::Running;
        self.started_at[c] = self.now;
        self.first_start.get_or_insert(self.now);
        self.emit(SimEventKind::TaskStart { cluster: c, element });
        self.schedule(self.now + cycles, Pending::Finish(c));
        Ok(())
    }

    /// Σ bytes × hops from `c` to its already-mapped neighbours if placed on `target`.
    fn neighbour_traffic(&self, c: usize, target: ElementId) -> u64 {
        self.graph.preds[c]
            .iter()
            .chain(&self.graph.succs[c])
            .filter_map(|&(n, bytes)| {
                self.location[n].map(|loc| bytes * self.hops(target, loc) as u64)
            })
            .sum()
    }

    fn candidates(&self, features: &TaskFeatures) -> Vec<Action> {
        let mut out = Vec::new();
        for e in self.arch.pes() {
            out.push(Action::Map(e.id));
            if e.reconfigurable && e.logic != features.logic {
                out.push(Action::Reconfigure(e.id, features.logic));
            }
        }
        out
    }

    fn decide(&self, agent: usize, cluster: usize, mut rng: ChaCha8Rng) -> Result<Decision, SimError> {
        let features = self.graph.clusters[cluster].features;
        let key = StateKey::new(features, &self.arch);
        let state = key.id();
        let candidates = self.candidates(&features);
        if candidates.is_empty() {
            return Err(SimError::NoProcessingElements);
        }
        let choice = match self.opts.mapper {
            Mapper::Rl => select_action(self.q, state, &candidates, self.opts.epsilon, &mut rng)?,
            Mapper::Random => {
                let idle: Vec<Action> = self
                    .arch
                    .pes()
                    .filter(|e| e.available > 0.0)
                    .map(|e| Action::Map(e.id))
                    .collect();
                let pool = if idle.is_empty() { &candidates } else { &idle };
                Choice {
                    action: pool[rng.random_range(0..pool.len())],
                    explored: false,
                }
            }
            Mapper::GreedyNearest => {
                let best = self
                    .arch
                    .pes()
                    .min_by_key(|e| {
                        let pe = e.kind.pe_type().unwrap();
                        (
                            e.available <= 0.0,
                            !rl::affinity_matches(features.affinity, pe),
                            self.neighbour_traffic(cluster, e.id),
                            e.id,
                        )
                    })
                    .unwrap();
                Choice {
                    action: Action::Map(best.id),
                    explored: false,
                }
            }
        };
        Ok(Decision {
            agent,
            cluster,
            state,
            candidates,
            choice,
            rng,
        })
    }

    fn agent_rounds(&mut self) -> Result<(), SimError> {
        let mut blocked = vec![false; self.agents.len()];
        loop {
            let mut pulled = Vec::new();
            for a in 0..self.agents.len() {
                if !blocked[a] {
                    if let Some(c) = self.pool.pull(a) {
                        pulled.push((a, c, self.agents[a].rng.clone()));
                    }
                }
            }
            if pulled.is_empty() {
                return Ok(());
            }
            let decisions = {
                let this = &*self;
                this.opts
                    .exec
                    .map(&pulled, |(a, c, rng)| this.decide(*a, *c, rng.clone()))
            };
            for d in decisions {
                let d = d?;
                let agent = d.agent;
                self.agents[agent].rng = d.rng.clone();
                if !self.commit(d)? {
                    blocked[agent] = true;
                }
            }
        }
    }

    /// Apply a decision. Returns false when the cluster went back to its queue.
    fn commit(&mut self, d: Decision) -> Result<bool, SimError> {
        let Decision {
            agent,
            cluster,
            state,
            candidates,
            choice,
            ..
        } = d;
        self.decisions += 1;
        self.explorations += choice.explored as u64;
        let learning = self.opts.mapper == Mapper::Rl && self.opts.learn;
        if learning {
            if let Some((s, a, r, _)) = self.agents[agent].pending.take() {
                q_update(self.q, s, a, r, state, &candidates, &self.params)?;
            }
        }
        let features = self.graph.clusters[cluster].features;
        let target = choice.action.target();
        let target_el = self.arch.get(target)?.clone();
        let logic_after = match choice.action {
            Action::Reconfigure(_, l) => l,
            Action::Map(_) => target_el.logic,
        };
        let (placed, r) = if target_el.available > 0.0 {
            let r = rl::reward(
                &features,
                &Placement {
                    element: &target_el,
                    logic: logic_after,
                    busy: false,
                    bytes_hops: self.neighbour_traffic(cluster, target),
                    migration_hops: 0,
                },
                &self.params,
            );
            let reconfig = matches!(choice.action, Action::Reconfigure(..)).then_some(logic_after);
            (Some((target, reconfig)), r)
        } else if let Some((alt, hops)) = rl::migrate(&self.arch, target, features.security) {
            let alt_el = self.arch.get(alt)?.clone();
            let r = self.params.busy_penalty
                + rl::reward(
                    &features,
                    &Placement {
                        element: &alt_el,
                        logic: alt_el.logic,
                        busy: false,
                        bytes_hops: self.neighbour_traffic(cluster, alt),
                        migration_hops: hops,
                    },
                    &self.params,
                );
            self.migrations += 1;
            self.emit(SimEventKind::MigrationPerformed {
                cluster,
                from: target,
                to: alt,
                hops,
            });
            (Some((alt, None)), r)
        } else {
            let r = rl::reward(
                &features,
                &Placement {
                    element: &target_el,
                    logic: logic_after,
                    busy: true,
                    bytes_hops: self.neighbour_traffic(cluster, target),
                    migration_hops: 0,
                },
                &self.params,
            );
            (None, r)
        };
        if learning {
            self.agents[agent].pending = Some((state, choice.action, r, features));
        }
        match placed {
            Some((element, reconfig)) => {
                self.place(agent, cluster, element, reconfig)?;
                Ok(true)
            }
            None => {
                self.pool.requeue(agent, cluster);
                Ok(false)
            }
        }
    }

    fn place(
        &mut self,
        agent: usize,
        c: usize,
        element: ElementId,
        reconfig: Option<LogicType>,
    ) -> Result<(), SimError> {
        self.arch.set_available(element, 0.0)?;
        self.location[c] = Some(element);
        self.owner[c] = Some(agent);
        self.phase[c] = Phase::Committed;
        self.in_flight += 1;
        let mut waits = 0;
        if let Some(logic) = reconfig {
            waits += 1;
            self.schedule(
                self.now + self.cfg.reconfig_delay,
                Pending::Reconfig {
                    cluster: c,
                    element,
                    logic,
                },
            );
        }
        let dst = self.idx(element);
        for &(p, bytes) in &self.graph.preds[c] {
            let src = self.idx(self.location[p].expect("predecessor placed"));
            let route = self.dist.route_by_index(src, dst).expect("connected architecture");
            self.comm += bytes * route.hops as u64;
            let cycles = route_time(bytes, &route);
            if cycles == 0 {
                self.emit(SimEventKind::MessageDelivered {
                    from: MessageSource::Cluster(p),
                    to: c,
                    bytes,
                    hops: route.hops,
                });
            } else {
                waits += 1;
                self.schedule(self.now + cycles, Pending::Message { from: p, to: c });
            }
        }
        let footprint = self.graph.clusters[c].mem_bytes;
        if self.cfg.model_memory && footprint > 0 {
            if let Some((store, hops)) = self.memory_for(element, footprint)? {
                self.memory_slot[c] = Some(store);
                *self.memory_used.entry(store).or_default() += footprint;
                self.mem += footprint * hops as u64;
                let route = self
                    .dist
                    .route_by_index(self.idx(store), dst)
                    .expect("connected architecture");
                let cycles = route_time(footprint, &route);
                waits += 1;
                self.schedule(self.now + cycles, Pending::Memory { to: c, element: store });
            }
        }
        self.waits[c] = waits;
        if waits == 0 {
            self.start(c)?;
        }
        Ok(())
    }

    /// Nearest ME with room for `bytes`, else the nearest SE.
    fn memory_for(&self, from: ElementId, bytes: u64) -> Result<Option<(ElementId, u32)>, SimError> {
        let me = self.arch.nearest_matching(from, |e| {
            e.kind == ElementKind::Me
                && e.capacity.is_none_or(|cap| {
                    self.memory_used.get(&e.id).copied().unwrap_or(0) + bytes <= cap
                })
        })?;
        if me.is_some() {
            return Ok(me);
        }
        Ok(self.arch.nearest_matching(from, |e| e.kind == ElementKind::Se)?)
    }

    /// Close out pending transitions. There is no terminal state: each one
    /// bootstraps from the state its cluster would see on the final machine.
    fn flush_learning(&mut self) -> Result<(), SimError> {
        if !(self.opts.mapper == Mapper::Rl && self.opts.learn) {
            return Ok(());
        }
        for a in 0..self.agents.len() {
            if let Some((s, act, r, features)) = self.agents[a].pending.take() {
                let next = StateKey::new(features, &self.arch).id();
                let cands = self.candidates(&features);
                q_update(self.q, s, act, r, next, &cands, &self.params)?;
            }
        }
        Ok(())
    }

    pub fn into_report(mut self) -> Result<SimReport, SimError> {
        self.flush_learning()?;
        let makespan = makespan_of(self.first_start, self.last_finish);
        let sensitive = self.graph.sensitive_tasks();
        let security_score = if sensitive == 0 {
            1.0
        } else {
            (1.0 - self.violations as f64 / sensitive as f64).clamp(0.0, 1.0)
        };
        Ok(SimReport {
            makespan,
            total_comm_bytes_hops: self.comm,
            mem_bytes_hops: self.mem,
            energy: energy_of(&self.arch, &self.busy_cycles, makespan, &self.cfg.energy),
            security_score,
            violations: self.violations,
            sensitive_tasks: sensitive,
            migrations: self.migrations,
            decisions: self.decisions,
            explorations: self.explorations,
            steps: self.steps,
            events: self.log,
        })
    }

    /// Structural invariants of the current state; returns the first breach.
    pub fn check_invariants(&self) -> Result<(), String> {
        if !self.occupancy_balanced() {
            return Err(format!("cycle {}: occupancy does not match {} in flight", self.now, self.in_flight));
        }
        for e in self.arch.pes() {
            if e.available != 0.0 && e.available != 1.0 {
                return Err(format!("element {} has availability {}", e.id, e.available));
            }
        }
        let mut holders: BTreeMap<ElementId, usize> = BTreeMap::new();
        for (c, ph) in self.phase.iter().enumerate() {
            match ph {
                Phase::Committed | Phase::Running => {
                    let loc = self.location[c].ok_or(format!("cluster {c} has no location"))?;
                    if let Some(other) = holders.insert(loc, c) {
                        return Err(format!("clusters {other} and {c} share element {loc}"));
                    }
                    if self.arch.get(loc).map_or(true, |e| e.available != 0.0) {
                        return Err(format!("cluster {c} holds element {loc} that reads as idle"));
                    }
                }
                Phase::Waiting | Phase::Queued if self.location[c].is_some() => {
                    return Err(format!("unplaced cluster {c} has a location"));
                }
                Phase::Done => {
                    for &(p, _) in &self.graph.preds[c] {
                        if self.phase[p] != Phase::Done {
                            return Err(format!("cluster {c} finished before predecessor {p}"));
                        }
                    }
                }
                _ => {}
            }
        }
        let max = self.pool.max_in_flight();
        if max > self.pool.cap() {
            return Err(format!("agent in flight {max} exceeds cap {}", self.pool.cap()));
        }
        Ok(())
    }

    /// Step until every cluster finishes.
    pub fn run(mut self) -> Result<SimReport, SimError> {
        while self.step()? != StepOutcome::Finished {}
        self.into_report()
    }
}

/// One simulated episode with a scheduled attack list.
pub fn run_episode(
    arch: &ArchGraph,
    graph: &ClusterGraph,
    cfg: SimConfig,
    params: RlParams,
    q: &QTable,
    opts: EpisodeOptions,
    attacks: &[(Cycles, ElementId)],
) -> Result<SimReport, SimError> {
    let mut env = Env::new(arch, graph, cfg, params, q, opts)?;
    for &(t, e) in attacks {
        env.inject_attack(t, e)?;
    }
    env.run()
}

/// Training schedule over repeated episodes sharing one Q-table.
#[derive(Debug, Clone)]
pub struct Training {
    pub episodes: usize,
    pub seed: u64,
    pub attacks: Vec<(Cycles, ElementId)>,
    pub exec: Exec,
}

/// Exploration rate for episode `ep` of `episodes`: constant, or linear
/// decay to zero over the run when `epsilon_decay` is set.
pub fn episode_epsilon(params: &RlParams, ep: usize, episodes: usize) -> f64 {
    if !params.epsilon_decay || episodes <= 1 {
        return params.epsilon;
    }
    params.epsilon * (1.0 - ep as f64 / (episodes - 1) as f64)
}

/// Labelled report, one `metrics.csv` row.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub label: String,
    pub episode: usize,
    pub epsilon: f64,
    pub report: SimReport,
}

/// `episodes` learning episodes followed by one greedy evaluation episode
/// with learning off. The evaluation record is last.
pub fn train(
    arch: &ArchGraph,
    graph: &ClusterGraph,
    cfg: SimConfig,
    params: RlParams,
    q: &QTable,
    t: &Training,
) -> Result<Vec<RunRecord>, SimError> {
    let mut out = Vec::with_capacity(t.episodes + 1);
    for ep in 0..t.episodes {
        let epsilon = episode_epsilon(&params, ep, t.episodes);
        let opts = EpisodeOptions {
            mapper: Mapper::Rl,
            epsilon,
            learn: true,
            seed: derive_seed(t.seed, 1 + ep as u64),
            exec: t.exec,
        };
        let report = run_episode(arch, graph, cfg, params, q, opts, &t.attacks)?;
        out.push(RunRecord {
            label: "train".into(),
            episode: ep,
            epsilon,
            report,
        });
    }
    let opts = EpisodeOptions {
        mapper: Mapper::Rl,
        epsilon: 0.0,
        learn: false,
        seed: derive_seed(t.seed, 0),
        exec: t.exec,
    };
    let report = run_episode(arch, graph, cfg, params, q, opts, &t.attacks)?;
    out.push(RunRecord {
        label: "greedy".into(),
        episode: t.episodes,
        epsilon: 0.0,
        report,
    });
    Ok(out)
}

/// A non-learning mapper run.
pub fn baseline(
    arch: &ArchGraph,
    graph: &ClusterGraph,
    cfg: SimConfig,
    params: RlParams,
    mapper: Mapper,
    t: &Training,
) -> Result<RunRecord, SimError> {
    let q = QTable::new();
    let opts = EpisodeOptions {
        mapper,
        epsilon: 0.0,
        learn: false,
        seed: derive_seed(t.seed, 0),
        exec: t.exec,
    };
    let report = run_episode(arch, graph, cfg, params, &q, opts, &t.attacks)?;
    Ok(RunRecord {
        label: mapper.name().into(),
        episode: 0,
        epsilon: 0.0,
        report,
    })
}

pub const METRICS_HEADER: &str = "label,episode,epsilon,makespan,total_comm_bytes_hops,mem_bytes_hops,energy,security_score,violations,sensitive_tasks,migrations,decisions,explorations";

pub fn metrics_csv(rows: &[RunRecord]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let p = &r.report;
        s.push_str(&format!(
            "{},{},{:.6},{},{},{},{:.6},{:.6},{},{},{},{},{}\n",
            r.label,
            r.episode,
            r.epsilon,
            p.makespan,
            p.total_comm_bytes_hops,
            p.mem_bytes_hops,
            p.energy,
            p.security_score,
            p.violations,
            p.sensitive_tasks,
            p.migrations,
            p.decisions,
            p.explorations
        ));
    }
    s
}

pub fn events_csv(events: &[SimEvent]) -> String {
    let mut s = String::from("time,kind,detail\n");
    for e in events {
        s.push_str(&e.to_string());
        s.push('\n');
    }
    s
}

impl SimReport {
    /// Human-readable summary block.
    pub fn summary(&self) -> String {
        format!(
            "makespan            {}\n\
             comm bytes*hops     {}\n\
             memory bytes*hops   {}\n\
             energy              {:.3}\n\
             security score      {:.4}\n\
             violations          {} of {} sensitive\n\
             migrations          {}\n\
             decisions           {} ({} exploratory)\n",
            self.makespan,
            self.total_comm_bytes_hops,
            self.mem_bytes_hops,
            self.energy,
            self.security_score,
            self.violations,
            self.sensitive_tasks,
            self.migrations,
            self.decisions,
            self.explorations
        )
    }
}
