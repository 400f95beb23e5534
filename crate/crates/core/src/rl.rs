//! Distributed tabular Q-learning for cluster mapping.
//!
//! All agents share one [`QTable`]. Each read-modify-write runs under the
//! table's write lock, so concurrent updates linearize.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::sync::RwLock;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ArchGraph, Element, ElementId, KindFilter, LogicType, PeType};
use crate::ingest::{AffinityClass, SecurityClass};

#[derive(Debug, Error, PartialEq)]
pub enum RlError {
    #[error("no candidate actions")]
    EmptyCandidates,
    #[error("non-finite reward {0}")]
    NonFiniteReward(f64),
    #[error("invalid RL parameters: {0}")]
    Params(String),
    #[error("q-table line {line}: {message}")]
    Restore { line: usize, message: String },
}

/// Quartile bucket of an availability level.
pub fn availability_bucket(available: f64) -> u8 {
    if available < 0.25 {
        0
    } else if available < 0.5 {
        1
    } else if available < 0.75 {
        2
    } else {
        3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TaskFeatures {
    pub affinity: AffinityClass,
    pub security: SecurityClass,
    pub logic: LogicType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CandidateDigest {
    pub pe: PeType,
    pub logic: LogicType,
    pub bucket: u8,
    pub compromised: bool,
}

impl CandidateDigest {
    pub fn of(e: &Element) -> Option<Self> {
        Some(CandidateDigest {
            pe: e.kind.pe_type()?,
            logic: e.logic,
            bucket: availability_bucket(e.available),
            compromised: e.compromised,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StateKey {
    pub features: TaskFeatures,
    pub candidates: Vec<CandidateDigest>,
}

/// Stable 64-bit fingerprint of a [`StateKey`]; the Q-table key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateId(pub u64);

fn pe_code(t: PeType) -> u8 {
    PeType::ALL.iter().position(|&p| p == t).unwrap() as u8
}

fn logic_code(l: LogicType) -> u8 {
    LogicType::ALL.iter().position(|&p| p == l).unwrap() as u8
}

impl StateKey {
    pub fn new(features: TaskFeatures, arch: &ArchGraph) -> Self {
        StateKey {
            features,
            candidates: arch.pes().filter_map(CandidateDigest::of).collect(),
        }
    }

    pub fn id(&self) -> StateId {
        // FNV-1a over a canonical byte encoding.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        let f = &self.features;
        feed(AffinityClass::ALL.iter().position(|&a| a == f.affinity).unwrap() as u8);
        feed(f.security as u8);
        feed(logic_code(f.logic));
        for c in &self.candidates {
            feed(pe_code(c.pe));
            feed(logic_code(c.logic));
            feed(c.bucket);
            feed(c.compromised as u8);
        }
        StateId(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Map(ElementId),
    /// Switch the element's logic type, then map onto it.
    Reconfigure(ElementId, LogicType),
}

impl Action {
    pub fn target(self) -> ElementId {
        match self {
            Action::Map(id) | Action::Reconfigure(id, _) => id,
        }
    }

    pub fn code(self) -> u64 {
        match self {
            Action::Map(id) => (id as u64) << 3,
            Action::Reconfigure(id, l) => ((id as u64) << 3) | (1 + logic_code(l) as u64),
        }
    }

    pub fn from_code(code: u64) -> Option<Self> {
        let id = ElementId::try_from(code >> 3).ok()?;
        match code & 7 {
            0 => Some(Action::Map(id)),
            k @ 1..=4 => Some(Action::Reconfigure(id, LogicType::ALL[(k - 1) as usize])),
            _ => None,
        }
    }

    /// Tie-break order: lower element id first, plain mapping before reconfiguration.
    fn tie_key(self) -> u64 {
        self.code()
    }
}

/// Shared state-action values; missing entries read as 0.
#[derive(Debug, Default)]
pub struct QTable {
    values: RwLock<HashMap<(StateId, Action), f64>>,
}

impl Clone for QTable {
    fn clone(&self) -> Self {
        QTable {
            values: RwLock::new(self.values.read().unwrap().clone()),
        }
    }
}

impl QTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, s: StateId, a: Action) -> f64 {
        self.values.read().unwrap().get(&(s, a)).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.values.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Max over `actions` of Q(s, ·); 0 for an empty list.
    pub fn max_value(&self, s: StateId, actions: &[Action]) -> f64 {
        let map = self.values.read().unwrap();
        max_in(&map, s, actions)
    }

    /// Atomic read-modify-write of one entry; returns the new value.
    pub fn modify<F: FnOnce(f64) -> f64>(&self, s: StateId, a: Action, f: F) -> f64 {
        let mut map = self.values.write().unwrap();
        let slot = map.entry((s, a)).or_insert(0.0);
        *slot = f(*slot);
        *slot
    }

    pub fn set(&self, s: StateId, a: Action, q: f64) {
        self.values.write().unwrap().insert((s, a), q);
    }

    pub fn all_finite(&self) -> bool {
        self.values.read().unwrap().values().all(|q| q.is_finite())
    }

    /// `statekey_hash action_id qvalue` lines, sorted.
    pub fn dump(&self) -> String {
        let map = self.values.read().unwrap();
        let mut rows: Vec<_> = map.iter().map(|(&(s, a), &q)| (s, a.code(), q)).collect();
        rows.sort_by_key(|r| (r.0, r.1));
        let mut out = String::new();
        for (s, a, q) in rows {
            let _ = writeln!(out, "{:016x} {} {:?}", s.0, a, q);
        }
        out
    }

    pub fn restore(text: &str) -> Result<Self, RlError> {
        let mut map = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |message: &str| RlError::Restore {
                line: i + 1,
                message: message.to_string(),
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad("expected `statekey_hash action_id qvalue`"));
            }
            let s = u64::from_str_radix(f[0], 16).map_err(|_| bad("bad state hash"))?;
            let a = f[1]
                .parse()
                .ok()
                .and_then(Action::from_code)
                .ok_or_else(|| bad("bad action id"))?;
            let q: f64 = f[2].parse().map_err(|_| bad("bad q-value"))?;
            if !q.is_finite() {
                return Err(bad("non-finite q-value"));
            }
            map.insert((StateId(s), a), q);
        }
        Ok(QTable {
            values: RwLock::new(map),
        })
    }
}

fn max_in(map: &HashMap<(StateId, Action), f64>, s: StateId, actions: &[Action]) -> f64 {
    actions
        .iter()
        .map(|&a| map.get(&(s, a)).copied().unwrap_or(0.0))
        .reduce(f64::max)
        .unwrap_or(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Choice {
    pub action: Action,
    pub explored: bool,
}

/// ε-greedy selection: with probability `eps` a uniform candidate, else the
/// argmax (lowest element id on ties).
pub fn select_action<R: Rng + ?Sized>(
    q: &QTable,
    s: StateId,
    candidates: &[Action],
    eps: f64,
    rng: &mut R,
) -> Result<Choice, RlError> {
    if candidates.is_empty() {
        return Err(RlError::EmptyCandidates);
    }
    if eps > 0.0 && rng.random::<f64>() < eps {
        let action = candidates[rng.random_range(0..candidates.len())];
        return Ok(Choice {
            action,
            explored: true,
        });
    }
    let map = q.values.read().unwrap();
    let action = candidates
        .iter()
        .map(|&a| (map.get(&(s, a)).copied().unwrap_or(0.0), a))
        .reduce(|best, next| match next.0.total_cmp(&best.0) {
            std::cmp::Ordering::Greater => next,
            std::cmp::Ordering::Equal if next.1.tie_key() < best.1.tie_key() => next,
            _ => best,
        })
        .map(|(_, a)| a)
        .unwrap();
    Ok(Choice {
        action,
        explored: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlParams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Decay ε linearly to 0 across episodes.
    pub epsilon_decay: bool,
    pub busy_penalty: f64,
    pub w_affinity: f64,
    pub w_logic: f64,
    /// Per byte·hop to already-mapped neighbours.
    pub w_comm: f64,
    /// Per migration hop.
    pub w_migrate: f64,
    pub w_compromised: f64,
    pub agents: usize,
    /// Fixed per-agent cap; `None` derives it from the ready rate.
    pub workload_cap: Option<usize>,
    /// Steps in the ready-rate sliding window.
    pub cap_window: usize,
}

impl Default for RlParams {
    fn default() -> Self {
        RlParams {
            alpha: 0.1,
            gamma: 0.9,
            epsilon: 0.1,
            epsilon_decay: false,
            busy_penalty: -100.0,
            w_affinity: 10.0,
            w_logic: 5.0,
            w_comm: -0.01,
            w_migrate: -2.0,
            w_compromised: -100.0,
            agents: 4,
            workload_cap: None,
            cap_window: 16,
        }
    }
}

impl RlParams {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::Params(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must be in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must be in [0, 1]");
        }
        if self.agents == 0 {
            return bad("agents must be positive");
        }
        if self.workload_cap == Some(0) || self.cap_window == 0 {
            return bad("workload_cap and cap_window must be positive");
        }
        let weights = [
            self.busy_penalty,
            self.w_affinity,
            self.w_logic,
            self.w_comm,
            self.w_migrate,
            self.w_compromised,
        ];
        if weights.iter().any(|w| !w.is_finite()) {
            return bad("reward weights must be finite");
        }
        Ok(())
    }
}

/// One-step Q-learning update, atomic with respect to other agents:
/// `Q(s,a) ← Q(s,a) + α (r + γ max_a' Q(s',a') − Q(s,a))`.
pub fn q_update(
    q: &QTable,
    s: StateId,
    a: Action,
    r: f64,
    s_next: StateId,
    next_candidates: &[Action],
    params: &RlParams,
) -> Result<f64, RlError> {
    if !r.is_finite() {
        return Err(RlError::NonFiniteReward(r));
    }
    let mut map = q.values.write().unwrap();
    let future = max_in(&map, s_next, next_candidates);
    let slot = map.entry((s, a)).or_insert(0.0);
    *slot += params.alpha * (r + params.gamma * future - *slot);
    Ok(*slot)
}

/// Subtypes a task of the given affinity prefers.
pub fn affinity_matches(affinity: AffinityClass, pe: PeType) -> bool {
    matches!(
        (affinity, pe),
        (AffinityClass::Loop, PeType::Gpu)
            | (AffinityClass::Fft, PeType::HwaFft)
            | (AffinityClass::MatrixMul, PeType::HwaMm | PeType::Gpu)
            | (AffinityClass::Crypto, PeType::HwaCrypto)
            | (AffinityClass::General, PeType::Cpu)
    )
}

/// Everything the reward needs about one placement.
#[derive(Debug, Clone, Copy)]
pub struct Placement<'a> {
    pub element: &'a Element,
    /// Element logic once the action (and any reconfiguration) is applied.
    pub logic: LogicType,
    /// The chosen target was busy at commit time.
    pub busy: bool,
    /// Σ bytes × hops to already-mapped neighbours.
    pub bytes_hops: u64,
    pub migration_hops: u32,
}

pub fn reward(features: &TaskFeatures, placement: &Placement<'_>, params: &RlParams) -> f64 {
    let pe = placement.element.kind.pe_type();
    let mut r = 0.0;
    if pe.is_some_and(|t| affinity_matches(features.affinity, t)) {
        r += params.w_affinity;
    }
    if placement.logic == features.logic {
        r += params.w_logic;
    }
    r += params.w_comm * placement.bytes_hops as f64;
    if placement.busy {
        r += params.busy_penalty;
    }
    if placement.element.compromised {
        r += params.w_compromised;
    }
    r + params.w_migrate * placement.migration_hops as f64
}

/// Local search for a replacement when `busy_target` is taken: nearest idle
/// PE of the same subtype and logic. Sensitive clusters skip compromised
/// elements. Returns the element and hop count.
pub fn migrate(
    arch: &ArchGraph,
    busy_target: ElementId,
    security: SecurityClass,
) -> Option<(ElementId, u32)> {
    let target = arch.get(busy_target).ok()?;
    let want = KindFilter::Pe(target.kind.pe_type()?);
    let logic = target.logic;
    arch.nearest_matching(busy_target, |e| {
        e.id != busy_target
            && e.available > 0.0
            && want.matches(e.kind)
            && e.logic == logic
            && !(security.is_sensitive() && e.compromised)
    })
    .ok()
    .flatten()
}

/// Balls-into-bins agent queues with a per-agent in-flight cap.
#[derive(Debug, Clone)]
pub struct AgentPool {
    queues: Vec<VecDeque<usize>>,
    in_flight: Vec<usize>,
    fixed_cap: Option<usize>,
    window: VecDeque<usize>,
    window_len: usize,
    cap: usize,
}

impl AgentPool {
    pub fn new(agents: usize, fixed_cap: Option<usize>, window_len: usize) -> Self {
        assert!(agents > 0, "agent pool needs at least one agent");
        AgentPool {
            queues: vec![VecDeque::new(); agents],
            in_flight: vec![0; agents],
            fixed_cap,
            window: VecDeque::with_capacity(window_len),
            window_len: window_len.max(1),
            cap: fixed_cap.unwrap_or(1),
        }
    }

    pub fn from_params(p: &RlParams) -> Self {
        Self::new(p.agents, p.workload_cap, p.cap_window)
    }

    pub fn agents(&self) -> usize {
        self.queues.len()
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn in_flight(&self, agent: usize) -> usize {
        self.in_flight[agent]
    }

    pub fn queued(&self, agent: usize) -> usize {
        self.queues[agent].len()
    }

    pub fn total_queued(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }

    pub fn max_in_flight(&self) -> usize {
        self.in_flight.iter().copied().max().unwrap_or(0)
    }

    /// Record how many clusters became ready this step and refresh the cap:
    /// `ceil(2 × rate / agents)`, never below 1. The cap is not lowered
    /// beneath work already in flight; it ratchets down as that drains.
    pub fn observe_ready(&mut self, ready: usize) {
        if self.window.len() == self.window_len {
            self.window.pop_front();
        }
        self.window.push_back(ready);
        if let Some(c) = self.fixed_cap {
            self.cap = c;
            return;
        }
        let rate = self.window.iter().sum::<usize>() as f64 / self.window.len() as f64;
        let computed = ((2.0 * rate / self.agents() as f64).ceil() as usize).max(1);
        self.cap = computed.max(self.max_in_flight());
    }

    /// Append each cluster to the least-loaded queue (queued + in flight),
    /// lowest agent id on ties.
    pub fn dispatch<I: IntoIterator<Item = usize>>(&mut self, clusters: I) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for c in clusters {
            let agent = (0..self.agents())
                .min_by_key(|&a| (self.queues[a].len() + self.in_flight[a], a))
                .unwrap();
            self.queues[agent].push_back(c);
            out.push((c, agent));
        }
        out
    }

    pub fn can_pull(&self, agent: usize) -> bool {
        !self.queues[agent].is_empty() && self.in_flight[agent] < self.cap
    }

    pub fn pull(&mut self, agent: usize) -> Option<usize> {
        if !self.can_pull(agent) {
            return None;
        }
        self.in_flight[agent] += 1;
        self.queues[agent].pop_front()
    }

    /// Undo a pull: the cluster returns to the head of the queue.
    pub fn requeue(&mut self, agent: usize, cluster: usize) {
        self.in_flight[agent] -= 1;
        self.queues[agent].push_front(cluster);
    }

    pub fn complete(&mut self, agent: usize) {
        self.in_flight[agent] -= 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_arch, ArchConfig, ElementSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn buckets() {
        let got: Vec<u8> = [0.0, 0.24, 0.25, 0.49, 0.5, 0.74, 0.75, 1.0]
            .iter()
            .map(|&a| availability_bucket(a))
            .collect();
        assert_eq!(got, [0, 0, 1, 1, 2, 2, 3, 3]);
    }

    #[test]
    fn action_codes_roundtrip() {
        for a in [
            Action::Map(0),
            Action::Map(77),
            Action::Reconfigure(5, LogicType::Ternary),
            Action::Reconfigure(9, LogicType::BinaryCodedTernary),
        ] {
            assert_eq!(Action::from_code(a.code()), Some(a));
        }
        assert_eq!(Action::from_code(7), None);
    }

    #[test]
    fn greedy_and_ties() {
        let q = QTable::new();
        let s = StateId(1);
        let (a1, a2) = (Action::Map(1), Action::Map(2));
        q.set(s, a1, 3.0);
        q.set(s, a2, 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action(&q, s, &[a1, a2], 0.0, &mut rng).unwrap().action, a2);
        let fresh = QTable::new();
        let pick = select_action(&fresh, s, &[Action::Map(7), Action::Map(3)], 0.0, &mut rng).unwrap();
        assert_eq!(pick.action, Action::Map(3));
        assert!(!pick.explored);
        assert_eq!(
            select_action(&fresh, s, &[], 0.5, &mut rng),
            Err(RlError::EmptyCandidates)
        );
    }

    #[test]
    fn uniform_exploration() {
        let q = QTable::new();
        let cands = [Action::Map(0), Action::Map(1), Action::Map(2), Action::Map(3)];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            let c = select_action(&q, StateId(0), &cands, 1.0, &mut rng).unwrap();
            assert!(c.explored);
            counts[c.action.target() as usize] += 1;
        }
        for c in counts {
            let share = c as f64 / n as f64;
            assert!((share - 0.25).abs() <= 0.01, "{share}");
        }
    }

    #[test]
    fn update_rule() {
        let q = QTable::new();
        let (s, a) = (StateId(1), Action::Map(0));
        let p = RlParams {
            alpha: 1.0,
            gamma: 0.0,
            ..Default::default()
        };
        assert_eq!(q_update(&q, s, a, 7.0, StateId(2), &[a], &p).unwrap(), 7.0);
        // alpha = 0 is outside the validated range but must still be an identity.
        let frozen = RlParams {
            alpha: 0.0,
            ..Default::default()
        };
        for r in [-1e6, 0.0, 3.5, 1e9] {
            q_update(&q, s, a, r, StateId(2), &[a], &frozen).unwrap();
            assert_eq!(q.get(s, a), 7.0);
        }
        assert!(matches!(
            q_update(&q, s, a, f64::NAN, s, &[a], &p),
            Err(RlError::NonFiniteReward(_))
        ));
        assert!(matches!(
            q_update(&q, s, a, f64::INFINITY, s, &[a], &p),
            Err(RlError::NonFiniteReward(_))
        ));
        // Bootstraps from the next state's best value.
        let p = RlParams { alpha: 0.5, gamma: 0.5, ..Default::default() };
        q.set(StateId(9), Action::Map(4), 10.0);
        let v = q_update(&q, StateId(8), a, 2.0, StateId(9), &[Action::Map(3), Action::Map(4)], &p).unwrap();
        assert_eq!(v, 0.5 * (2.0 + 5.0));
    }

    #[test]
    fn params_validation() {
        assert!(RlParams::default().validate().is_ok());
        for bad in [
            RlParams { alpha: 0.0, ..Default::default() },
            RlParams { gamma: 1.0, ..Default::default() },
            RlParams { epsilon: 1.5, ..Default::default() },
            RlParams { agents: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        let parsed: RlParams = toml::from_str("alpha = 0.5\nagents = 2\n").unwrap();
        assert_eq!(parsed.alpha, 0.5);
        assert_eq!(parsed.gamma, 0.9);
    }

    fn features(affinity: AffinityClass) -> TaskFeatures {
        TaskFeatures {
            affinity,
            security: SecurityClass::Plain,
            logic: LogicType::Binary,
        }
    }

    fn elem(pe: PeType) -> Element {
        let g = build_arch(&ArchConfig::mesh(1, 1, vec![ElementSpec::pe(0, pe)])).unwrap();
        g.get(0).unwrap().clone()
    }

    #[test]
    fn reward_terms() {
        let p = RlParams::default();
        let gpu = elem(PeType::Gpu);
        fn place(e: &Element) -> Placement<'_> {
            Placement {
                element: e,
                logic: e.logic,
                busy: false,
                bytes_hops: 0,
                migration_hops: 0,
            }
        }
        assert_eq!(reward(&features(AffinityClass::Loop), &place(&gpu), &p), 15.0);
        // Busy, nothing else matched.
        let cpu = elem(PeType::Cpu);
        let mut busy = place(&cpu);
        busy.busy = true;
        busy.logic = LogicType::Ternary;
        assert_eq!(reward(&features(AffinityClass::Loop), &busy, &p), -100.0);
        let mut far = place(&gpu);
        far.bytes_hops = 1000 * 3;
        assert!((reward(&features(AffinityClass::Loop), &far, &p) - (-15.0)).abs() < 1e-12);
        let mut moved = place(&gpu);
        moved.migration_hops = 1;
        assert_eq!(reward(&features(AffinityClass::Loop), &moved, &p), 13.0);
        let mut bad = gpu.clone();
        bad.compromised = true;
        assert_eq!(reward(&features(AffinityClass::Loop), &place(&bad), &p), -85.0);
    }

    #[test]
    fn migration_search() {
        let specs = vec![
            ElementSpec::pe(0, PeType::Gpu),
            ElementSpec::pe(1, PeType::Gpu),
            ElementSpec::pe(2, PeType::Gpu),
        ];
        // 1x3 mesh: GPU 0 at col 0, 1 at col 1, 2 at col 2.
        let mut g = build_arch(&ArchConfig::mesh(1, 3, specs)).unwrap();
        g.set_available(0, 0.0).unwrap();
        assert_eq!(migrate(&g, 0, SecurityClass::Plain), Some((1, 3)));
        g.set_compromised(1, true).unwrap();
        assert_eq!(migrate(&g, 0, SecurityClass::CryptoSecret), Some((2, 4)));
        g.set_available(1, 0.0).unwrap();
        g.set_available(2, 0.0).unwrap();
        assert_eq!(migrate(&g, 0, SecurityClass::Plain), None);
    }

    #[test]
    fn pool_cap_arithmetic() {
        let mut one = AgentPool::new(1, Some(2), 16);
        one.dispatch([0, 1, 2]);
        while one.pull(0).is_some() {}
        assert_eq!((one.in_flight(0), one.queued(0)), (2, 1));

        let mut four = AgentPool::new(4, Some(8), 16);
        let assigned = four.dispatch(0..8);
        let mut per = [0; 4];
        for (_, a) in assigned {
            per[a] += 1;
        }
        assert_eq!(per, [2, 2, 2, 2]);
    }

    #[test]
    fn dynamic_cap() {
        let mut pool = AgentPool::new(2, None, 4);
        pool.observe_ready(0);
        assert_eq!(pool.cap(), 1);
        pool.observe_ready(8);
        // rate 4/step over two samples → ceil(2*4/2) = 4.
        assert_eq!(pool.cap(), 4);
        pool.dispatch(0..8);
        for _ in 0..4 {
            pool.pull(0);
        }
        for _ in 0..4 {
            pool.observe_ready(0);
        }
        // Window now all zeros but four clusters are still running on agent 0.
        assert_eq!(pool.cap(), 4);
        for _ in 0..4 {
            pool.complete(0);
        }
        pool.observe_ready(0);
        assert_eq!(pool.cap(), 1);
    }

    #[test]
    fn dump_restore() {
        let q = QTable::new();
        q.set(StateId(0xdead), Action::Map(3), -1.25);
        q.set(StateId(0x1), Action::Reconfigure(2, LogicType::Quaternary), 0.1 + 0.2);
        let text = q.dump();
        let back = QTable::restore(&text).unwrap();
        assert_eq!(back.dump(), text);
        assert_eq!(back.get(StateId(0x1), Action::Reconfigure(2, LogicType::Quaternary)), 0.1 + 0.2);
        assert!(QTable::restore("zz 0 1.0").is_err());
        assert!(QTable::restore("00 0 NaN").is_err());
    }

    #[test]
    fn state_ids_differ_by_digest() {
        let g = build_arch(&ArchConfig::mesh(1, 2, vec![ElementSpec::pe(0, PeType::Cpu), ElementSpec::pe(1, PeType::Gpu)])).unwrap();
        let f = features(AffinityClass::General);
        let a = StateKey::new(f, &g);
        let mut g2 = g.clone();
        g2.set_available(1, 0.0).unwrap();
        let b = StateKey::new(f, &g2);
        assert_ne!(a.id(), b.id());
        assert_eq!(a.id(), StateKey::new(f, &g).id());
    }
}
