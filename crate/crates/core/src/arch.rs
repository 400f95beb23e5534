//! Four-layer architecture graph: computation (PE), connection (CE),
//! memory (ME) and storage (SE) elements joined by bandwidth-limited links.
//!
//! Graphs are built from an [`ArchConfig`], usually parsed from JSON:
//!
//! ```json
//! {
//!   "mesh": { "rows": 2, "cols": 2, "bandwidth": 32, "latency": 1 },
//!   "elements": [
//!     { "id": 0, "kind": "PE", "subtype": "CPU" },
//!     { "id": 1, "kind": "PE", "subtype": "HWA(CRYPTO)", "at": [1, 1] },
//!     { "id": 2, "kind": "ME", "capacity": 65536 }
//!   ]
//! }
//! ```
//!
//! With `mesh`, CEs are generated (ids from `first_ce_id`, default one past
//! the largest declared id, row-major) and every declared PE/ME/SE is attached
//! to the CE at its `at` position. PEs without `at` fill free positions in
//! row-major order; MEs/SEs without `at` go round the perimeter. Without
//! `mesh`, all CEs and `links` are explicit.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::Exec;

pub type ElementId = u32;

/// Default ME capacity in bytes.
pub const DEFAULT_ME_CAPACITY: u64 = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PeType {
    #[serde(rename = "CPU", alias = "cpu")]
    Cpu,
    #[serde(rename = "GPU", alias = "gpu")]
    Gpu,
    #[serde(rename = "PUF", alias = "puf")]
    Puf,
    #[serde(rename = "ASIC", alias = "asic")]
    Asic,
    #[serde(rename = "HWA(FFT)", alias = "HWA_FFT", alias = "hwa_fft")]
    HwaFft,
    #[serde(rename = "HWA(MM)", alias = "HWA_MM", alias = "hwa_mm")]
    HwaMm,
    #[serde(rename = "HWA(CRYPTO)", alias = "HWA_CRYPTO", alias = "hwa_crypto")]
    HwaCrypto,
}

impl PeType {
    pub const ALL: [PeType; 7] = [
        PeType::Cpu,
        PeType::Gpu,
        PeType::Puf,
        PeType::Asic,
        PeType::HwaFft,
        PeType::HwaMm,
        PeType::HwaCrypto,
    ];

    pub fn is_accelerator(self) -> bool {
        matches!(self, PeType::HwaFft | PeType::HwaMm | PeType::HwaCrypto)
    }

    pub fn name(self) -> &'static str {
        match self {
            PeType::Cpu => "CPU",
            PeType::Gpu => "GPU",
            PeType::Puf => "PUF",
            PeType::Asic => "ASIC",
            PeType::HwaFft => "HWA(FFT)",
            PeType::HwaMm => "HWA(MM)",
            PeType::HwaCrypto => "HWA(CRYPTO)",
        }
    }
}

/// Numeral system an element computes in.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum LogicType {
    #[default]
    Binary,
    Ternary,
    Quaternary,
    #[serde(rename = "bct", alias = "binary-coded-ternary")]
    BinaryCodedTernary,
}

impl LogicType {
    pub const ALL: [LogicType; 4] = [
        LogicType::Binary,
        LogicType::Ternary,
        LogicType::Quaternary,
        LogicType::BinaryCodedTernary,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LogicType::Binary => "binary",
            LogicType::Ternary => "ternary",
            LogicType::Quaternary => "quaternary",
            LogicType::BinaryCodedTernary => "bct",
        }
    }

    pub fn parse(s: &str) -> Option<LogicType> {
        match s.to_ascii_lowercase().as_str() {
            "binary" | "bin" => Some(LogicType::Binary),
            "ternary" => Some(LogicType::Ternary),
            "quaternary" => Some(LogicType::Quaternary),
            "bct" | "binary-coded-ternary" | "binarycodedternary" => {
                Some(LogicType::BinaryCodedTernary)
            }
            _ => None,
        }
    }
}

impl fmt::Display for LogicType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layer {
    /// Model of computation.
    MoCp,
    /// Model of connection.
    MoCn,
    /// Model of memory.
    MoM,
    /// Model of storage.
    MoS,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementKind {
    Pe(PeType),
    Ce,
    Me,
    Se,
}

impl ElementKind {
    pub fn layer(self) -> Layer {
        match self {
            ElementKind::Pe(_) => Layer::MoCp,
            ElementKind::Ce => Layer::MoCn,
            ElementKind::Me => Layer::MoM,
            ElementKind::Se => Layer::MoS,
        }
    }

    pub fn pe_type(self) -> Option<PeType> {
        match self {
            ElementKind::Pe(t) => Some(t),
            _ => None,
        }
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElementKind::Pe(t) => write!(f, "PE/{}", t.name()),
            ElementKind::Ce => f.write_str("CE"),
            ElementKind::Me => f.write_str("ME"),
            ElementKind::Se => f.write_str("SE"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub id: ElementId,
    pub kind: ElementKind,
    pub logic: LogicType,
    /// Logic type the element was built with; restored by [`ArchGraph::reset_runtime`].
    pub base_logic: LogicType,
    pub reconfigurable: bool,
    /// 0 = completely busy, 1 = fully idle.
    pub available: f64,
    pub compromised: bool,
    /// Byte capacity for MEs; `None` means unbounded.
    pub capacity: Option<u64>,
}

impl Element {
    pub fn layer(&self) -> Layer {
        self.kind.layer()
    }

    pub fn is_pe(&self) -> bool {
        matches!(self.kind, ElementKind::Pe(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub a: ElementId,
    pub b: ElementId,
    /// Bytes per cycle.
    pub bandwidth: u32,
    /// Cycles per hop.
    pub latency: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeshDims {
    pub rows: u32,
    pub cols: u32,
    pub first_ce_id: ElementId,
}

impl MeshDims {
    pub fn ce_at(&self, row: u32, col: u32) -> ElementId {
        self.first_ce_id + row * self.cols + col
    }
}

#[derive(Debug, Error)]
pub enum ArchError {
    #[error("no elements")]
    NoElements,
    #[error("duplicate element id {0}")]
    DuplicateId(ElementId),
    #[error("{context} references unknown element id {id}")]
    UnknownElement { id: ElementId, context: String },
    #[error("link {a}-{b} has zero bandwidth")]
    ZeroBandwidth { a: ElementId, b: ElementId },
    #[error("link {0}-{0} is a self-loop")]
    SelfLoop(ElementId),
    #[error("connection layer is disconnected: CE {unreachable} cannot reach CE {from}")]
    DisconnectedMoCn { from: ElementId, unreachable: ElementId },
    #[error("element {0} has no link to a CE")]
    Unattached(ElementId),
    #[error("element {id}: {message}")]
    InvalidElement { id: ElementId, message: String },
    #[error("`mesh` and `links` are mutually exclusive")]
    MeshAndLinks,
    #[error("mesh: {0}")]
    Mesh(String),
    #[error("element {0} is not reconfigurable")]
    NotReconfigurable(ElementId),
    #[error("availability {value} for element {id} is outside [0, 1]")]
    Availability { id: ElementId, value: f64 },
    #[error("invalid architecture description: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = ArchError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KindTag {
    #[serde(rename = "PE", alias = "pe")]
    Pe,
    #[serde(rename = "CE", alias = "ce")]
    Ce,
    #[serde(rename = "ME", alias = "me")]
    Me,
    #[serde(rename = "SE", alias = "se")]
    Se,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementSpec {
    pub id: ElementId,
    pub kind: KindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtype: Option<PeType>,
    #[serde(default)]
    pub logic: LogicType,
    #[serde(default)]
    pub reconfigurable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<u64>,
    /// Mesh position `[row, col]`; mesh mode only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<[u32; 2]>,
}

impl ElementSpec {
    pub fn pe(id: ElementId, subtype: PeType) -> Self {
        ElementSpec {
            id,
            kind: KindTag::Pe,
            subtype: Some(subtype),
            logic: LogicType::Binary,
            reconfigurable: false,
            capacity: None,
            at: None,
        }
    }

    pub fn of_kind(id: ElementId, kind: KindTag) -> Self {
        ElementSpec {
            id,
            kind,
            subtype: None,
            logic: LogicType::Binary,
            reconfigurable: false,
            capacity: None,
            at: None,
        }
    }

    pub fn with_logic(mut self, logic: LogicType) -> Self {
        self.logic = logic;
        self
    }

    pub fn reconfigurable(mut self, yes: bool) -> Self {
        self.reconfigurable = yes;
        self
    }

    pub fn at(mut self, row: u32, col: u32) -> Self {
        self.at = Some([row, col]);
        self
    }
}

fn default_bandwidth() -> u32 {
    32
}

fn default_latency() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: ElementId,
    pub b: ElementId,
    pub bandwidth: u32,
    #[serde(default = "default_latency")]
    pub latency: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub rows: u32,
    pub cols: u32,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: u32,
    #[serde(default = "default_latency")]
    pub latency: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_ce_id: Option<ElementId>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub elements: Vec<ElementSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub links: Option<Vec<LinkSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<MeshSpec>,
}

impl ArchConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ArchError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// A `rows`×`cols` mesh of CEs with the given elements attached.
    pub fn mesh(rows: u32, cols: u32, elements: Vec<ElementSpec>) -> Self {
        ArchConfig {
            elements,
            links: None,
            mesh: Some(MeshSpec {
                rows,
                cols,
                bandwidth: default_bandwidth(),
                latency: default_latency(),
                first_ce_id: None,
            }),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Clockwise perimeter positions starting at (0, 0).
fn perimeter(rows: u32, cols: u32) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    if rows == 1 || cols == 1 {
        for r in 0..rows {
            for c in 0..cols {
                out.push((r, c));
            }
        }
        return out;
    }
    for c in 0..cols {
        out.push((0, c));
    }
    for r in 1..rows {
        out.push((r, cols - 1));
    }
    for c in (0..cols - 1).rev() {
        out.push((rows - 1, c));
    }
    for r in (1..rows - 1).rev() {
        out.push((r, 0));
    }
    out
}

fn element_from_spec(spec: &ElementSpec) -> Result<Element> {
    let invalid = |message: &str| ArchError::InvalidElement {
        id: spec.id,
        message: message.to_string(),
    };
    let kind = match spec.kind {
        KindTag::Pe => ElementKind::Pe(spec.subtype.ok_or_else(|| invalid("PE requires a subtype"))?),
        _ if spec.subtype.is_some() => return Err(invalid("only PEs carry a subtype")),
        KindTag::Ce => ElementKind::Ce,
        KindTag::Me => ElementKind::Me,
        KindTag::Se => ElementKind::Se,
    };
    let capacity = match kind {
        ElementKind::Me => Some(spec.capacity.unwrap_or(DEFAULT_ME_CAPACITY)),
        _ if spec.capacity.is_some() => return Err(invalid("only MEs carry a capacity")),
        _ => None,
    };
    Ok(Element {
        id: spec.id,
        kind,
        logic: spec.logic,
        base_logic: spec.logic,
        reconfigurable: spec.reconfigurable,
        available: 1.0,
        compromised: false,
        capacity,
    })
}

fn mesh_links(
    mesh: &MeshSpec,
    specs: &[ElementSpec],
    first_ce: ElementId,
) -> Result<(Vec<Element>, Vec<Link>)> {
    if mesh.rows == 0 || mesh.cols == 0 {
        return Err(ArchError::Mesh("rows and cols must be positive".into()));
    }
    let dims = MeshDims {
        rows: mesh.rows,
        cols: mesh.cols,
        first_ce_id: first_ce,
    };
    let link = |a, b| Link {
        a,
        b,
        bandwidth: mesh.bandwidth,
        latency: mesh.latency,
    };
    let mut ces = Vec::new();
    let mut links = Vec::new();
    for r in 0..mesh.rows {
        for c in 0..mesh.cols {
            let id = dims.ce_at(r, c);
            ces.push(Element {
                id,
                kind: ElementKind::Ce,
                logic: LogicType::Binary,
                base_logic: LogicType::Binary,
                reconfigurable: false,
                available: 1.0,
                compromised: false,
                capacity: None,
            });
            if c + 1 < mesh.cols {
                links.push(link(id, dims.ce_at(r, c + 1)));
            }
            if r + 1 < mesh.rows {
                links.push(link(id, dims.ce_at(r + 1, c)));
            }
        }
    }

    let check_pos = |spec: &ElementSpec, [r, c]: [u32; 2]| {
        if r >= mesh.rows || c >= mesh.cols {
            Err(ArchError::Mesh(format!(
                "element {} placed at [{r}, {c}] outside the {}x{} mesh",
                spec.id, mesh.rows, mesh.cols
            )))
        } else {
            Ok((r, c))
        }
    };

    // Explicit PE positions first so auto-placement can skip them.
    let mut pe_taken = vec![false; (mesh.rows * mesh.cols) as usize];
    for spec in specs.iter().filter(|s| s.kind == KindTag::Pe) {
        if let Some(at) = spec.at {
            let (r, c) = check_pos(spec, at)?;
            let slot = &mut pe_taken[(r * mesh.cols + c) as usize];
            if *slot {
                return Err(ArchError::Mesh(format!(
                    "two PEs placed at [{r}, {c}] (second is {})",
                    spec.id
                )));
            }
            *slot = true;
        }
    }
    let ring = perimeter(mesh.rows, mesh.cols);
    let mut next_free = 0usize;
    let mut next_ring = 0usize;
    for spec in specs {
        let (r, c) = match (spec.kind, spec.at) {
            (KindTag::Ce, _) => {
                return Err(ArchError::InvalidElement {
                    id: spec.id,
                    message: "CEs are generated by the mesh directive".into(),
                })
            }
            (_, Some(at)) => check_pos(spec, at)?,
            (KindTag::Pe, None) => {
                while next_free < pe_taken.len() && pe_taken[next_free] {
                    next_free += 1;
                }
                if next_free == pe_taken.len() {
                    return Err(ArchError::Mesh(format!(
                        "no free mesh position for PE {} (one PE per CE)",
                        spec.id
                    )));
                }
                pe_taken[next_free] = true;
                let slot = next_free as u32;
                (slot / mesh.cols, slot % mesh.cols)
            }
            (_, None) => {
                let pos = ring[next_ring % ring.len()];
                next_ring += 1;
                pos
            }
        };
        links.push(link(spec.id, dims.ce_at(r, c)));
    }
    Ok((ces, links))
}

/// All-pairs hop counts plus the bottleneck bandwidth and accumulated latency
/// along the fixed shortest-path route (BFS tree, lowest-id neighbour first).
#[derive(Debug, Clone)]
pub struct DistanceTable {
    n: usize,
    hops: Vec<u32>,
    min_bandwidth: Vec<u32>,
    latency: Vec<u32>,
}

/// Route summary between two elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Route {
    pub hops: u32,
    /// `u32::MAX` for a zero-hop route.
    pub min_bandwidth: u32,
    pub latency: u32,
}

impl DistanceTable {
    const UNREACHABLE: u32 = u32::MAX;

    pub fn route_by_index(&self, a: usize, b: usize) -> Option<Route> {
        let k = a * self.n + b;
        (self.hops[k] != Self::UNREACHABLE).then(|| Route {
            hops: self.hops[k],
            min_bandwidth: self.min_bandwidth[k],
            latency: self.latency[k],
        })
    }

    pub fn hops_by_index(&self, a: usize, b: usize) -> Option<u32> {
        let h = self.hops[a * self.n + b];
        (h != Self::UNREACHABLE).then_some(h)
    }
}

#[derive(Debug, Clone)]
pub struct ArchGraph {
    elements: Vec<Element>,
    index: HashMap<ElementId, usize>,
    links: Vec<Link>,
    /// Per element: (neighbour index, link index), sorted by neighbour id.
    adj: Vec<Vec<(usize, usize)>>,
    mesh: Option<MeshDims>,
}

/// Build and validate an architecture graph from its description.
pub fn build_arch(config: &ArchConfig) -> Result<ArchGraph> {
    if config.elements.is_empty() {
        return Err(ArchError::NoElements);
    }
    let mut elements = config
        .elements
        .iter()
        .map(element_from_spec)
        .collect::<Result<Vec<_>>>()?;
    let (links, mesh) = match (&config.mesh, &config.links) {
        (Some(_), Some(_)) => return Err(ArchError::MeshAndLinks),
        (Some(spec), None) => {
            let max_id = config.elements.iter().map(|e| e.id).max().unwrap_or(0);
            let first = spec.first_ce_id.unwrap_or(max_id + 1);
            let (ces, links) = mesh_links(spec, &config.elements, first)?;
            elements.extend(ces);
            let dims = MeshDims {
                rows: spec.rows,
                cols: spec.cols,
                first_ce_id: first,
            };
            (links, Some(dims))
        }
        (None, links) => {
            if let Some(spec) = config.elements.iter().find(|e| e.at.is_some()) {
                return Err(ArchError::InvalidElement {
                    id: spec.id,
                    message: "`at` requires a mesh directive".into(),
                });
            }
            let links = links
                .iter()
                .flatten()
                .map(|l| Link {
                    a: l.a,
                    b: l.b,
                    bandwidth: l.bandwidth,
                    latency: l.latency,
                })
                .collect();
            (links, None)
        }
    };
    ArchGraph::from_parts(elements, links, mesh)
}

impl ArchGraph {
    pub fn from_parts(
        mut elements: Vec<Element>,
        links: Vec<Link>,
        mesh: Option<MeshDims>,
    ) -> Result<Self> {
        if elements.is_empty() {
            return Err(ArchError::NoElements);
        }
        elements.sort_by_key(|e| e.id);
        let mut index = HashMap::with_capacity(elements.len());
        for (i, e) in elements.iter().enumerate() {
            if index.insert(e.id, i).is_some() {
                return Err(ArchError::DuplicateId(e.id));
            }
        }
        let mut adj = vec![Vec::new(); elements.len()];
        for (li, l) in links.iter().enumerate() {
            let lookup = |id: ElementId| {
                index.get(&id).copied().ok_or_else(|| ArchError::UnknownElement {
                    id,
                    context: format!("link {}-{}", l.a, l.b),
                })
            };
            let (ia, ib) = (lookup(l.a)?, lookup(l.b)?);
            if l.a == l.b {
                return Err(ArchError::SelfLoop(l.a));
            }
            if l.bandwidth == 0 {
                return Err(ArchError::ZeroBandwidth { a: l.a, b: l.b });
            }
            adj[ia].push((ib, li));
            adj[ib].push((ia, li));
        }
        for list in &mut adj {
            list.sort_by_key(|&(n, _)| n);
        }
        let graph = ArchGraph {
            elements,
            index,
            links,
            adj,
            mesh,
        };
        graph.validate()?;
        Ok(graph)
    }

    /// Check every structural and state invariant.
    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.elements.iter().enumerate() {
            if !(0.0..=1.0).contains(&e.available) {
                return Err(ArchError::Availability {
                    id: e.id,
                    value: e.available,
                });
            }
            if e.kind != ElementKind::Ce
                && !self.adj[i]
                    .iter()
                    .any(|&(n, _)| self.elements[n].kind == ElementKind::Ce)
            {
                return Err(ArchError::Unattached(e.id));
            }
        }
        let pes = self.elements.iter().filter(|e| e.is_pe()).count();
        let ces: Vec<usize> = (0..self.elements.len())
            .filter(|&i| self.elements[i].kind == ElementKind::Ce)
            .collect();
        if pes >= 2 && ces.len() > 1 {
            let mut seen = vec![false; self.elements.len()];
            let mut queue = VecDeque::from([ces[0]]);
            seen[ces[0]] = true;
            while let Some(u) = queue.pop_front() {
                for &(v, _) in &self.adj[u] {
                    if !seen[v] && self.elements[v].kind == ElementKind::Ce {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            if let Some(&lost) = ces.iter().find(|&&c| !seen[c]) {
                return Err(ArchError::DisconnectedMoCn {
                    from: self.elements[ces[0]].id,
                    unreachable: self.elements[lost].id,
                });
            }
        }
        Ok(())
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn mesh(&self) -> Option<MeshDims> {
        self.mesh
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn index_of(&self, id: ElementId) -> Result<usize> {
        self.index
            .get(&id)
            .copied()
            .ok_or_else(|| ArchError::UnknownElement {
                id,
                context: "query".into(),
            })
    }

    pub fn get(&self, id: ElementId) -> Result<&Element> {
        Ok(&self.elements[self.index_of(id)?])
    }

    pub fn element_at(&self, index: usize) -> &Element {
        &self.elements[index]
    }

    fn get_mut(&mut self, id: ElementId) -> Result<&mut Element> {
        let i = self.index_of(id)?;
        Ok(&mut self.elements[i])
    }

    /// Processing elements in ascending id order.
    pub fn pes(&self) -> impl Iterator<Item = &Element> {
        self.elements.iter().filter(|e| e.is_pe())
    }

    pub fn neighbors(&self, id: ElementId) -> Result<Vec<ElementId>> {
        let i = self.index_of(id)?;
        Ok(self.adj[i].iter().map(|&(n, _)| self.elements[n].id).collect())
    }

    pub fn set_available(&mut self, id: ElementId, value: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&value) {
            return Err(ArchError::Availability { id, value });
        }
        self.get_mut(id)?.available = value;
        Ok(())
    }

    pub fn set_compromised(&mut self, id: ElementId, compromised: bool) -> Result<()> {
        self.get_mut(id)?.compromised = compromised;
        Ok(())
    }

    pub fn set_logic(&mut self, id: ElementId, logic: LogicType) -> Result<()> {
        let e = self.get_mut(id)?;
        if !e.reconfigurable && e.logic != logic {
            return Err(ArchError::NotReconfigurable(id));
        }
        e.logic = logic;
        Ok(())
    }

    /// Restore construction-time runtime state: idle, uncompromised, base logic.
    pub fn reset_runtime(&mut self) {
        for e in &mut self.elements {
            e.available = 1.0;
            e.compromised = false;
            e.logic = e.base_logic;
        }
    }

    fn bfs(&self, src: usize) -> (Vec<u32>, Vec<u32>, Vec<u32>) {
        let n = self.elements.len();
        let mut hops = vec![DistanceTable::UNREACHABLE; n];
        let mut bw = vec![u32::MAX; n];
        let mut lat = vec![0u32; n];
        hops[src] = 0;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for &(v, li) in &self.adj[u] {
                if hops[v] == DistanceTable::UNREACHABLE {
                    let link = &self.links[li];
                    hops[v] = hops[u] + 1;
                    bw[v] = bw[u].min(link.bandwidth);
                    lat[v] = lat[u] + link.latency;
                    queue.push_back(v);
                }
            }
        }
        (hops, bw, lat)
    }

    /// Shortest path length in hops; `Ok(None)` when `b` is unreachable from `a`.
    pub fn hop_distance(&self, a: ElementId, b: ElementId) -> Result<Option<u32>> {
        let (ia, ib) = (self.index_of(a)?, self.index_of(b)?);
        if ia == ib {
            return Ok(Some(0));
        }
        let h = self.bfs(ia).0[ib];
        Ok((h != DistanceTable::UNREACHABLE).then_some(h))
    }

    /// BFS from every element, fanned out with `exec`.
    pub fn distance_table(&self, exec: Exec) -> DistanceTable {
        let n = self.elements.len();
        let rows = exec.map_range(n, |src| self.bfs(src));
        let mut table = DistanceTable {
            n,
            hops: Vec::with_capacity(n * n),
            min_bandwidth: Vec::with_capacity(n * n),
            latency: Vec::with_capacity(n * n),
        };
        for (h, b, l) in rows {
            table.hops.extend(h);
            table.min_bandwidth.extend(b);
            table.latency.extend(l);
        }
        table
    }

    /// Nearest element (by hops, then id) reachable from `from` satisfying `pred`.
    pub fn nearest_matching<P>(&self, from: ElementId, pred: P) -> Result<Option<(ElementId, u32)>>
    where
        P: Fn(&Element) -> bool,
    {
        let src = self.index_of(from)?;
        let hops = self.bfs(src).0;
        Ok(self
            .elements
            .iter()
            .zip(&hops)
            .filter(|(e, &h)| h != DistanceTable::UNREACHABLE && pred(e))
            .min_by_key(|(e, &h)| (h, e.id))
            .map(|(e, &h)| (e.id, h)))
    }

    /// Closest element of the wanted kind (and logic, if given) with
    /// `available > 0`. Ties go to the smallest id.
    pub fn nearest_available(
        &self,
        from: ElementId,
        want: KindFilter,
        logic: Option<LogicType>,
    ) -> Result<Option<ElementId>> {
        Ok(self
            .nearest_matching(from, |e| {
                e.available > 0.0 && want.matches(e.kind) && logic.is_none_or(|l| l == e.logic)
            })?
            .map(|(id, _)| id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KindFilter {
    Any,
    AnyPe,
    Pe(PeType),
    Ce,
    Me,
    Se,
}

impl KindFilter {
    pub fn matches(self, kind: ElementKind) -> bool {
        match (self, kind) {
            (KindFilter::Any, _) => true,
            (KindFilter::AnyPe, ElementKind::Pe(_)) => true,
            (KindFilter::Pe(want), ElementKind::Pe(have)) => want == have,
            (KindFilter::Ce, ElementKind::Ce) => true,
            (KindFilter::Me, ElementKind::Me) => true,
            (KindFilter::Se, ElementKind::Se) => true,
            _ => false,
        }
    }
}
