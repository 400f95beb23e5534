//! Trace ingestion: parse IR-like dynamic traces, recover register data
//! dependencies, and aggregate them into the task-level dependency graph.
//!
//! Trace grammar, one instruction per line:
//!
//! ```text
//! %dst = <opcode> %src1[, %src2 ...] [; size=<bytes>] [; task=<id>] [; affinity=<class>]
//!        [; logic=<type>] [; sec=<class>] [; backedge]
//! ```
//!
//! `#` starts a comment. `task=` is sticky. A header directive
//! `#!edge <src task> <dst task> <bytes>` declares an explicit
//! (application-level) message that is added to the task graph as-is.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::arch::LogicType;
use crate::par::Exec;

pub type TaskId = u32;

/// Bytes moved per register transfer when no `size=` is given.
pub const DEFAULT_SIZE: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AffinityClass {
    Loop,
    Fft,
    MatrixMul,
    Crypto,
    General,
}

impl AffinityClass {
    pub const ALL: [AffinityClass; 5] = [
        AffinityClass::Loop,
        AffinityClass::Fft,
        AffinityClass::MatrixMul,
        AffinityClass::Crypto,
        AffinityClass::General,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AffinityClass::Loop => "loop",
            AffinityClass::Fft => "fft",
            AffinityClass::MatrixMul => "mm",
            AffinityClass::Crypto => "crypto",
            AffinityClass::General => "general",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "loop" => Some(AffinityClass::Loop),
            "fft" => Some(AffinityClass::Fft),
            "mm" | "matmul" | "matrixmul" => Some(AffinityClass::MatrixMul),
            "crypto" => Some(AffinityClass::Crypto),
            "general" => Some(AffinityClass::General),
            _ => None,
        }
    }
}

impl fmt::Display for AffinityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered by sensitivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum SecurityClass {
    #[default]
    Plain,
    SideChannelSensitive,
    CryptoSecret,
}

impl SecurityClass {
    pub const ALL: [SecurityClass; 3] = [
        SecurityClass::Plain,
        SecurityClass::SideChannelSensitive,
        SecurityClass::CryptoSecret,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SecurityClass::Plain => "plain",
            SecurityClass::SideChannelSensitive => "sidechannel",
            SecurityClass::CryptoSecret => "crypto",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "plain" => Some(SecurityClass::Plain),
            "sidechannel" | "side-channel" | "sc" => Some(SecurityClass::SideChannelSensitive),
            "crypto" | "cryptosecret" | "secret" => Some(SecurityClass::CryptoSecret),
            _ => None,
        }
    }

    pub fn is_sensitive(self) -> bool {
        self != SecurityClass::Plain
    }
}

impl fmt::Display for SecurityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-line annotations besides `size=` and `task=`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Annotations {
    pub affinity: Option<AffinityClass>,
    pub logic: Option<LogicType>,
    pub sec: Option<SecurityClass>,
    pub backedge: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub index: usize,
    pub dst: Option<String>,
    pub opcode: String,
    pub srcs: Vec<String>,
    pub size: u64,
    pub task: TaskId,
    pub annotations: Annotations,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub instructions: Vec<Instruction>,
    /// `#!edge` header directives: (src task, dst task, bytes).
    pub explicit_edges: Vec<(TaskId, TaskId, u64)>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unknown annotation key `{key}`")]
    UnknownAnnotation { line: usize, key: String },
    #[error("line {line}: invalid value `{value}` for `{key}`")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
}

fn is_register(tok: &str) -> bool {
    tok.strip_prefix('%').is_some_and(|id| {
        !id.is_empty()
            && id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '$' | '-'))
    })
}

fn is_opcode(tok: &str) -> bool {
    let mut chars = tok.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.'))
}

fn parse_explicit_edge(line: usize, rest: &str) -> Result<(TaskId, TaskId, u64), TraceError> {
    let fields: Vec<&str> = rest.split_whitespace().collect();
    let bad = || TraceError::Malformed {
        line,
        message: "expected `#!edge <src task> <dst task> <bytes>`".into(),
    };
    if fields.len() != 3 {
        return Err(bad());
    }
    Ok((
        fields[0].parse().map_err(|_| bad())?,
        fields[1].parse().map_err(|_| bad())?,
        fields[2].parse().map_err(|_| bad())?,
    ))
}

/// Parse trace text into instructions (file order) and header edges.
pub fn parse_trace(text: &str) -> Result<Trace, TraceError> {
    let mut trace = Trace::default();
    let mut task: TaskId = 0;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if let Some(rest) = trimmed.strip_prefix("#!edge") {
            trace.explicit_edges.push(parse_explicit_edge(line, rest)?);
            continue;
        }
        let body = match trimmed.find('#') {
            Some(i) => trimmed[..i].trim(),
            None => trimmed,
        };
        if body.is_empty() {
            continue;
        }
        let malformed = |message: String| TraceError::Malformed { line, message };
        let mut parts = body.split(';');
        let inst = parts.next().unwrap_or("").trim();

        let (dst, rhs) = match inst.split_once('=') {
            Some((lhs, rhs)) => {
                let lhs = lhs.trim();
                if !is_register(lhs) {
                    return Err(malformed(format!("invalid destination register `{lhs}`")));
                }
                (Some(lhs.to_string()), rhs.trim())
            }
            None => (None, inst),
        };
        let (opcode, operands) = match rhs.split_once(char::is_whitespace) {
            Some((op, rest)) => (op, rest.trim()),
            None => (rhs, ""),
        };
        if !is_opcode(opcode) {
            return Err(malformed(format!("invalid opcode `{opcode}`")));
        }
        let srcs = if operands.is_empty() {
            Vec::new()
        } else {
            operands
                .split(',')
                .map(|tok| {
                    let tok = tok.trim();
                    if is_register(tok) {
                        Ok(tok.to_string())
                    } else {
                        Err(malformed(format!(
                            "invalid source operand `{tok}` (operands are comma-separated registers)"
                        )))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?
        };
        if dst.is_none() && srcs.is_empty() {
            return Err(malformed("instruction has neither destination nor sources".into()));
        }

        let mut size = DEFAULT_SIZE;
        let mut annotations = Annotations::default();
        for ann in parts.map(str::trim).filter(|a| !a.is_empty()) {
            let (key, value) = match ann.split_once('=') {
                Some((k, v)) => (k.trim(), v.trim()),
                None => (ann, ""),
            };
            let bad = || TraceError::BadValue {
                line,
                key: key.to_string(),
                value: value.to_string(),
            };
            match key {
                "size" => {
                    size = value.parse().ok().filter(|&s| s >= 1).ok_or_else(bad)?;
                }
                "task" => task = value.parse().map_err(|_| bad())?,
                "affinity" => annotations.affinity = Some(AffinityClass::parse(value).ok_or_else(bad)?),
                "logic" => annotations.logic = Some(LogicType::parse(value).ok_or_else(bad)?),
                "sec" => annotations.sec = Some(SecurityClass::parse(value).ok_or_else(bad)?),
                "backedge" if value.is_empty() => annotations.backedge = true,
                "backedge" => return Err(bad()),
                _ => {
                    return Err(TraceError::UnknownAnnotation {
                        line,
                        key: key.to_string(),
                    })
                }
            }
        }
        trace.instructions.push(Instruction {
            index: trace.instructions.len(),
            dst,
            opcode: opcode.to_string(),
            srcs,
            size,
            task,
            annotations,
        });
    }
    Ok(trace)
}

/// Render instructions back into trace text; every line carries explicit
/// `size=` and `task=` so the output re-parses to the same list.
pub fn serialize_trace(trace: &Trace) -> String {
    let mut out = String::new();
    for &(a, b, bytes) in &trace.explicit_edges {
        let _ = writeln!(out, "#!edge {a} {b} {bytes}");
    }
    for ins in &trace.instructions {
        if let Some(dst) = &ins.dst {
            let _ = write!(out, "{dst} = ");
        }
        out.push_str(&ins.opcode);
        if !ins.srcs.is_empty() {
            out.push(' ');
            out.push_str(&ins.srcs.join(", "));
        }
        let _ = write!(out, " ; size={} ; task={}", ins.size, ins.task);
        let ann = &ins.annotations;
        if let Some(a) = ann.affinity {
            let _ = write!(out, " ; affinity={a}");
        }
        if let Some(l) = ann.logic {
            let _ = write!(out, " ; logic={l}");
        }
        if let Some(s) = ann.sec {
            let _ = write!(out, " ; sec={s}");
        }
        if ann.backedge {
            out.push_str(" ; backedge");
        }
        out.push('\n');
    }
    out
}

/// A data dependency between two instructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Dependency {
    pub producer: usize,
    pub consumer: usize,
    pub bytes: u64,
}

/// Walk the trace once with a last-writer map. Calls `edge` for every
/// (producer, consumer) pair in consumer order; returns the count of reads
/// with no prior writer.
fn scan_dependencies<F: FnMut(Dependency)>(instrs: &[Instruction], mut edge: F) -> u64 {
    let mut last_writer: HashMap<&str, usize> = HashMap::new();
    let mut free_inputs = 0;
    let mut producers: Vec<usize> = Vec::with_capacity(4);
    for (j, ins) in instrs.iter().enumerate() {
        producers.clear();
        for src in &ins.srcs {
            match last_writer.get(src.as_str()) {
                Some(&i) if !producers.contains(&i) => producers.push(i),
                Some(_) => {}
                None => free_inputs += 1,
            }
        }
        for &i in &producers {
            edge(Dependency {
                producer: i,
                consumer: j,
                bytes: instrs[i].size,
            });
        }
        if let Some(dst) = &ins.dst {
            last_writer.insert(dst.as_str(), j);
        }
    }
    free_inputs
}

/// Dependency DAG over a slice of instructions. Edge endpoints are
/// positions within the slice.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InstructionDag {
    /// Trace index of each node.
    pub nodes: Vec<usize>,
    pub edges: Vec<Dependency>,
    /// Reads of registers never written earlier in the slice.
    pub free_inputs: u64,
}

impl InstructionDag {
    pub fn edge_pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|d| (d.producer, d.consumer)).collect()
    }

    /// Distinct destination registers.
    pub fn distinct_destinations(instrs: &[Instruction]) -> usize {
        let mut seen: HashMap<&str, ()> = HashMap::new();
        for ins in instrs {
            if let Some(d) = &ins.dst {
                seen.insert(d, ());
            }
        }
        seen.len()
    }
}

pub fn build_dag(instrs: &[Instruction]) -> InstructionDag {
    let mut edges = Vec::new();
    let free_inputs = scan_dependencies(instrs, |d| edges.push(d));
    InstructionDag {
        nodes: instrs.iter().map(|i| i.index).collect(),
        edges,
        free_inputs,
    }
}

/// Opcode-share thresholds for the rule-based affinity classifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinityRules {
    pub crypto_share: f64,
    pub mul_share: f64,
    pub shuffle_share: f64,
    pub min_backedges: u32,
}

impl Default for AffinityRules {
    fn default() -> Self {
        AffinityRules {
            crypto_share: 0.30,
            mul_share: 0.40,
            shuffle_share: 0.25,
            min_backedges: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskNode {
    pub id: TaskId,
    pub instr_count: u64,
    pub histogram: BTreeMap<String, u64>,
    pub backedges: u32,
    /// Bytes touched by `load`/`store`.
    pub mem_bytes: u64,
    pub annotated_affinity: Option<AffinityClass>,
    pub affinity: AffinityClass,
    pub logic: LogicType,
    pub security: SecurityClass,
}

impl TaskNode {
    pub fn new(id: TaskId) -> Self {
        TaskNode {
            id,
            instr_count: 0,
            histogram: BTreeMap::new(),
            backedges: 0,
            mem_bytes: 0,
            annotated_affinity: None,
            affinity: AffinityClass::General,
            logic: LogicType::Binary,
            security: SecurityClass::Plain,
        }
    }
}

fn is_rotate(op: &str) -> bool {
    matches!(op, "rotl" | "rotr" | "rol" | "ror" | "fshl" | "fshr")
}

/// Classify a task by annotation, else by opcode shares.
pub fn classify_affinity(node: &TaskNode, rules: &AffinityRules) -> AffinityClass {
    if let Some(a) = node.annotated_affinity {
        return a;
    }
    let total = node.instr_count.max(1) as f64;
    let count = |pred: &dyn Fn(&str) -> bool| -> u64 {
        node.histogram
            .iter()
            .filter(|(op, _)| pred(&op.to_ascii_lowercase()))
            .map(|(_, &n)| n)
            .sum()
    };
    // xor and rotates only count as crypto when they appear together.
    let has_xor = count(&|op| op == "xor") > 0;
    let has_rot = count(&|op| is_rotate(op)) > 0;
    let idiom = has_xor && has_rot;
    let crypto = count(&|op| {
        op.starts_with("aes") || op.starts_with("sha") || (idiom && (op == "xor" || is_rotate(op)))
    });
    let mul = count(&|op| matches!(op, "mul" | "fmul" | "fma" | "fmuladd" | "mac"));
    let shuffle = count(&|op| {
        matches!(op, "shufflevector" | "shuffle" | "butterfly" | "bfly")
    });
    if crypto as f64 / total >= rules.crypto_share {
        AffinityClass::Crypto
    } else if mul as f64 / total >= rules.mul_share {
        AffinityClass::MatrixMul
    } else if shuffle as f64 / total >= rules.shuffle_share {
        AffinityClass::Fft
    } else if node.backedges >= rules.min_backedges {
        AffinityClass::Loop
    } else {
        AffinityClass::General
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskEdge {
    /// Node index of the producing task.
    pub src: usize,
    pub dst: usize,
    pub bytes: u64,
}

/// Task-level dependency graph. Nodes sorted by task id; edges sorted by
/// (src, dst) index with no duplicates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskGraph {
    pub nodes: Vec<TaskNode>,
    pub edges: Vec<TaskEdge>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphFileError {
    #[error("{file} line {line}: {message}")]
    Malformed {
        file: &'static str,
        line: usize,
        message: String,
    },
}

impl TaskGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, task: TaskId) -> Option<usize> {
        self.nodes.binary_search_by_key(&task, |n| n.id).ok()
    }

    pub fn total_weight(&self) -> u64 {
        self.edges.iter().map(|e| e.bytes).sum()
    }

    /// Undirected adjacency with `w_ij + w_ji` folded together, neighbours
    /// sorted by index.
    pub fn symmetric_adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut folded: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for e in &self.edges {
            let key = (e.src.min(e.dst), e.src.max(e.dst));
            *folded.entry(key).or_default() += e.bytes;
        }
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for ((a, b), w) in folded {
            adj[a].push((b, w as f64));
            adj[b].push((a, w as f64));
        }
        for list in &mut adj {
            list.sort_by_key(|&(n, _)| n);
        }
        adj
    }

    /// `src dst weight` per line, task ids, sorted.
    pub fn edge_list(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            let _ = writeln!(out, "{} {} {}", self.nodes[e.src].id, self.nodes[e.dst].id, e.bytes);
        }
        out
    }

    /// Whitespace-separated node attribute table with a `#` header.
    pub fn node_table(&self) -> String {
        let mut out =
            String::from("# task instrs affinity logic security mem_bytes backedges opcodes\n");
        for n in &self.nodes {
            let ops = if n.histogram.is_empty() {
                "-".to_string()
            } else {
                n.histogram
                    .iter()
                    .map(|(op, c)| format!("{op}:{c}"))
                    .collect::<Vec<_>>()
                    .join(",")
            };
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {} {}",
                n.id, n.instr_count, n.affinity, n.logic, n.security, n.mem_bytes, n.backedges, ops
            );
        }
        out
    }

    /// Inverse of [`edge_list`](Self::edge_list) plus an optional
    /// [`node_table`](Self::node_table). Without a table, nodes are
    /// inferred from edge endpoints with default attributes.
    pub fn from_files(edges: &str, nodes: Option<&str>) -> Result<TaskGraph, GraphFileError> {
        let mut table: BTreeMap<TaskId, TaskNode> = BTreeMap::new();
        if let Some(text) = nodes {
            for (i, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let node = parse_node_row(line).map_err(|message| GraphFileError::Malformed {
                    file: "node table",
                    line: i + 1,
                    message,
                })?;
                if table.insert(node.id, node).is_some() {
                    return Err(GraphFileError::Malformed {
                        file: "node table",
                        line: i + 1,
                        message: "duplicate task id".into(),
                    });
                }
            }
        }
        let mut raw_edges = Vec::new();
        for (i, raw) in edges.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |message: String| GraphFileError::Malformed {
                file: "edge list",
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(bad("expected `src dst weight`".into()));
            }
            let parse = |s: &str| s.parse::<u64>().map_err(|_| bad(format!("`{s}` is not a non-negative integer")));
            let (a, b, w) = (parse(fields[0])?, parse(fields[1])?, parse(fields[2])?);
            let (a, b) = (
                TaskId::try_from(a).map_err(|_| bad("task id out of range".into()))?,
                TaskId::try_from(b).map_err(|_| bad("task id out of range".into()))?,
            );
            if a == b {
                return Err(bad("self-edge".into()));
            }
            for t in [a, b] {
                if !table.contains_key(&t) {
                    if nodes.is_some() {
                        return Err(bad(format!("task {t} missing from node table")));
                    }
                    table.insert(t, TaskNode::new(t));
                }
            }
            raw_edges.push((a, b, w));
        }
        let mut graph = TaskGraph {
            nodes: table.into_values().collect(),
            edges: Vec::new(),
        };
        let mut merged: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for (a, b, w) in raw_edges {
            let key = (graph.index_of(a).unwrap(), graph.index_of(b).unwrap());
            *merged.entry(key).or_default() += w;
        }
        graph.edges = merged
            .into_iter()
            .map(|((src, dst), bytes)| TaskEdge { src, dst, bytes })
            .collect();
        Ok(graph)
    }
}

fn parse_node_row(line: &str) -> Result<TaskNode, String> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 8 {
        return Err(format!("expected 8 columns, found {}", f.len()));
    }
    let num = |s: &str| s.parse::<u64>().map_err(|_| format!("`{s}` is not an integer"));
    let mut node = TaskNode::new(num(f[0])?.try_into().map_err(|_| "task id out of range")?);
    node.instr_count = num(f[1])?;
    node.affinity = AffinityClass::parse(f[2]).ok_or(format!("unknown affinity `{}`", f[2]))?;
    node.annotated_affinity = Some(node.affinity);
    node.logic = LogicType::parse(f[3]).ok_or(format!("unknown logic `{}`", f[3]))?;
    node.security = SecurityClass::parse(f[4]).ok_or(format!("unknown security `{}`", f[4]))?;
    node.mem_bytes = num(f[5])?;
    node.backedges = num(f[6])?.try_into().map_err(|_| "backedges out of range")?;
    if f[7] != "-" {
        for item in f[7].split(',') {
            let (op, c) = item.rsplit_once(':').ok_or(format!("bad opcode entry `{item}`"))?;
            node.histogram.insert(op.to_string(), num(c)?);
        }
    }
    Ok(node)
}

/// Build the task graph with default classifier thresholds.
pub fn build_idg(trace: &Trace) -> TaskGraph {
    build_idg_with(trace, &AffinityRules::default())
}

pub fn build_idg_with(trace: &Trace, rules: &AffinityRules) -> TaskGraph {
    let instrs = &trace.instructions;
    let mut nodes: BTreeMap<TaskId, TaskNode> = BTreeMap::new();
    for ins in instrs {
        let node = nodes.entry(ins.task).or_insert_with(|| TaskNode::new(ins.task));
        node.instr_count += 1;
        *node.histogram.entry(ins.opcode.clone()).or_default() += 1;
        let op = ins.opcode.to_ascii_lowercase();
        if op == "load" || op == "store" {
            node.mem_bytes += ins.size;
        }
        let ann = &ins.annotations;
        if ann.backedge {
            node.backedges += 1;
        }
        if let Some(a) = ann.affinity {
            node.annotated_affinity = Some(a);
        }
        if let Some(l) = ann.logic {
            node.logic = l;
        }
        if let Some(s) = ann.sec {
            node.security = s;
        }
    }
    for &(a, b, _) in &trace.explicit_edges {
        for t in [a, b] {
            nodes.entry(t).or_insert_with(|| TaskNode::new(t));
        }
    }
    let mut graph = TaskGraph {
        nodes: nodes.into_values().collect(),
        edges: Vec::new(),
    };
    for node in &mut graph.nodes {
        node.affinity = classify_affinity(node, rules);
    }
    let node_of: Vec<usize> = instrs
        .iter()
        .map(|i| graph.index_of(i.task).expect("task node exists"))
        .collect();
    let mut weights: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    scan_dependencies(instrs, |d| {
        let (a, b) = (node_of[d.producer], node_of[d.consumer]);
        if a != b {
            *weights.entry((a, b)).or_default() += d.bytes;
        }
    });
    for &(a, b, bytes) in &trace.explicit_edges {
        if a != b {
            let key = (graph.index_of(a).unwrap(), graph.index_of(b).unwrap());
            *weights.entry(key).or_default() += bytes;
        }
    }
    graph.edges = weights
        .into_iter()
        .map(|((src, dst), bytes)| TaskEdge { src, dst, bytes })
        .collect();
    graph
}

/// Per-task instruction DAGs (intra-task edges only), keyed by task id.
/// Dependencies are resolved over the whole trace first, since a task's
/// register may be overwritten by another task in between.
pub fn task_dags(trace: &Trace, exec: Exec) -> Vec<(TaskId, InstructionDag)> {
    let instrs = &trace.instructions;
    let mut grouped: BTreeMap<TaskId, (Vec<usize>, Vec<Dependency>)> = BTreeMap::new();
    for (pos, ins) in instrs.iter().enumerate() {
        grouped.entry(ins.task).or_default().0.push(pos);
    }
    let mut free: BTreeMap<TaskId, u64> = BTreeMap::new();
    // Free inputs per task are reads without any earlier writer in the trace.
    let mut last_writer: HashMap<&str, usize> = HashMap::new();
    for ins in instrs {
        for s in &ins.srcs {
            if !last_writer.contains_key(s.as_str()) {
                *free.entry(ins.task).or_default() += 1;
            }
        }
        if let Some(d) = &ins.dst {
            last_writer.insert(d, 0);
        }
    }
    scan_dependencies(instrs, |d| {
        let t = instrs[d.producer].task;
        if t == instrs[d.consumer].task {
            grouped.get_mut(&t).unwrap().1.push(d);
        }
    });
    let groups: Vec<(TaskId, (Vec<usize>, Vec<Dependency>))> = grouped.into_iter().collect();
    exec.map(&groups, |(task, (positions, deps))| {
        let local = |pos: usize| positions.binary_search(&pos).expect("position in task");
        let edges = deps
            .iter()
            .map(|d| Dependency {
                producer: local(d.producer),
                consumer: local(d.consumer),
                bytes: d.bytes,
            })
            .collect();
        (
            *task,
            InstructionDag {
                nodes: positions.iter().map(|&p| instrs[p].index).collect(),
                edges,
                free_inputs: free.get(task).copied().unwrap_or(0),
            },
        )
    })
}
