//! Seeded generators for traces, architectures and scenarios used by tests,
//! benches and the sample scenarios.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{build_arch, ArchConfig, ArchGraph, ElementId, ElementSpec, KindTag, PeType};
use crate::ingest::{AffinityClass, Annotations, Instruction, SecurityClass, TaskId, Trace};

fn instr(index: usize, dst: Option<String>, opcode: &str, srcs: Vec<String>, size: u64, task: TaskId) -> Instruction {
    Instruction {
        index,
        dst,
        opcode: opcode.to_string(),
        srcs,
        size,
        task,
        annotations: Annotations::default(),
    }
}

/// `n` instructions over `d` registers named `%r0..`. Each instruction reads
/// up to three registers; every tenth has no destination. Reads of
/// never-written registers are free inputs.
pub fn random_trace(n: usize, d: usize, seed: u64) -> Trace {
    let d = d.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ops = ["add", "mul", "xor", "load", "sub", "fmul", "icmp"];
    let instructions = (0..n)
        .map(|i| {
            let reads = rng.random_range(0..=3usize);
            let srcs = (0..reads).map(|_| format!("%r{}", rng.random_range(0..d))).collect();
            let dst = (rng.random_range(0..10) != 0).then(|| format!("%r{}", rng.random_range(0..d)));
            let op = ops[rng.random_range(0..ops.len())];
            instr(i, dst, op, srcs, rng.random_range(1..=16), 0)
        })
        .collect();
    Trace {
        instructions,
        explicit_edges: Vec::new(),
    }
}

/// Shape of a community-structured pipeline trace.
#[derive(Debug, Clone, Copy)]
pub struct PipelineShape {
    pub tasks: u32,
    pub groups: u32,
    /// Instructions per task.
    pub body: usize,
    /// Bytes of each value shared inside a group.
    pub intra_bytes: u64,
    /// Bytes of each value passed to the next group.
    pub inter_bytes: u64,
}

impl Default for PipelineShape {
    fn default() -> Self {
        PipelineShape {
            tasks: 64,
            groups: 8,
            body: 12,
            intra_bytes: 64,
            inter_bytes: 4,
        }
    }
}

/// Tasks split into contiguous groups. Inside a group each task reads the
/// heavy outputs of up to three earlier members; across groups only light
/// forward flows exist (a group's tasks may read one light value from the
/// previous group). Group `g` gets affinity `g mod 5`-th of
/// loop/fft/mm/crypto/general; crypto groups are secret.
pub fn pipeline_trace(shape: PipelineShape, seed: u64) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per = (shape.tasks / shape.groups.max(1)).max(1);
    let mut out: Vec<Instruction> = Vec::new();
    for t in 0..shape.tasks {
        let g = t / per;
        let first = g * per;
        let class = [
            AffinityClass::Loop,
            AffinityClass::Fft,
            AffinityClass::MatrixMul,
            AffinityClass::Crypto,
            AffinityClass::General,
        ][(g % 5) as usize];
        let op = match class {
            AffinityClass::Loop => "add",
            AffinityClass::Fft => "shufflevector",
            AffinityClass::MatrixMul => "fmul",
            AffinityClass::Crypto => "aesenc",
            AffinityClass::General => "icmp",
        };
        let mut inputs = Vec::new();
        if t > first {
            for _ in 0..rng.random_range(1..=3u32).min(t - first) {
                inputs.push(format!("%t{}h", rng.random_range(first..t)));
            }
        }
        if g > 0 && rng.random_bool(0.5) {
            inputs.push(format!("%t{}l", rng.random_range(first - per..first)));
        }
        inputs.sort();
        inputs.dedup();
        let ann = Annotations {
            affinity: Some(class),
            sec: (class == AffinityClass::Crypto).then_some(SecurityClass::CryptoSecret),
            ..Annotations::default()
        };
        let mut prev: Option<String> = None;
        for k in 0..shape.body {
            let mut srcs = Vec::new();
            if k == 0 {
                srcs.extend(inputs.iter().cloned());
            }
            if let Some(p) = &prev {
                srcs.push(p.clone());
            }
            let dst = format!("%t{t}b{k}");
            let mut ins = instr(out.len(), Some(dst.clone()), op, srcs, 1, t);
            ins.annotations = ann.clone();
            out.push(ins);
            prev = Some(dst);
        }
        let body = prev.unwrap_or_default();
        let body_src = vec![body];
        let mut heavy = instr(out.len(), Some(format!("%t{t}h")), "mov", body_src.clone(), shape.intra_bytes, t);
        heavy.annotations = ann.clone();
        out.push(heavy);
        let mut light = instr(out.len(), Some(format!("%t{t}l")), "mov", body_src, shape.inter_bytes, t);
        light.annotations = ann;
        out.push(light);
    }
    Trace {
        instructions: out,
        explicit_edges: Vec::new(),
    }
}

/// Wide layered trace: `layers × width` single-instruction tasks, each
/// reading two outputs of the previous layer. Used to drive long runs.
pub fn layered_trace(layers: u32, width: u32, seed: u64) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for l in 0..layers {
        for w in 0..width {
            let t = l * width + w;
            let srcs = if l == 0 {
                Vec::new()
            } else {
                let mut s: Vec<String> = (0..2)
                    .map(|_| format!("%v{}", (l - 1) * width + rng.random_range(0..width)))
                    .collect();
                s.dedup();
                s
            };
            let n = rng.random_range(1..=4usize);
            for k in 0..n {
                let dst = if k + 1 == n { format!("%v{t}") } else { format!("%v{t}_{k}") };
                let srcs = if k == 0 { srcs.clone() } else { vec![format!("%v{t}_{}", k - 1)] };
                out.push(instr(out.len(), Some(dst), "add", srcs, 8, t));
            }
        }
    }
    Trace {
        instructions: out,
        explicit_edges: Vec::new(),
    }
}

/// 4×4 mesh of 16 PEs: 6 CPU, 4 GPU and two each of HWA(FFT), HWA(MM),
/// HWA(crypto), plus one ME and one SE on the perimeter. Ids 1..=18.
pub fn mesh16_config() -> ArchConfig {
    let subtypes = [
        PeType::Cpu,
        PeType::Gpu,
        PeType::HwaFft,
        PeType::Cpu,
        PeType::HwaMm,
        PeType::Cpu,
        PeType::Gpu,
        PeType::HwaCrypto,
        PeType::Gpu,
        PeType::HwaCrypto,
        PeType::Cpu,
        PeType::HwaMm,
        PeType::Cpu,
        PeType::HwaFft,
        PeType::Gpu,
        PeType::Cpu,
    ];
    let mut elements: Vec<ElementSpec> = subtypes
        .iter()
        .enumerate()
        .map(|(i, &t)| ElementSpec::pe(i as ElementId + 1, t))
        .collect();
    elements.push(ElementSpec::of_kind(17, KindTag::Me));
    elements.push(ElementSpec::of_kind(18, KindTag::Se));
    ArchConfig::mesh(4, 4, elements)
}

pub fn mesh16() -> ArchGraph {
    build_arch(&mesh16_config()).expect("generated mesh is valid")
}

/// 2×3 mesh: CPU 1, GPU 2, crypto accelerators 3, 4 and 5, CPU 6.
pub fn attack_arch_config() -> ArchConfig {
    ArchConfig::mesh(
        2,
        3,
        vec![
            ElementSpec::pe(1, PeType::Cpu),
            ElementSpec::pe(2, PeType::Gpu),
            ElementSpec::pe(3, PeType::HwaCrypto),
            ElementSpec::pe(4, PeType::HwaCrypto),
            ElementSpec::pe(5, PeType::HwaCrypto),
            ElementSpec::pe(6, PeType::Cpu),
        ],
    )
}

/// Crypto accelerator compromised in the attack scenario. It has the lowest
/// id of the three, so untrained tie-breaking favours it.
pub const ATTACKED_ELEMENT: ElementId = 3;

/// Two independent chains of eight tasks alternating crypto-secret work
/// with plain loop or general work.
pub fn attack_trace() -> Trace {
    let mut out = Vec::new();
    for t in 0..16u32 {
        let (op, class, sec) = match t % 4 {
            0 | 2 => ("aesenc", AffinityClass::Crypto, Some(SecurityClass::CryptoSecret)),
            1 => ("add", AffinityClass::Loop, None),
            _ => ("icmp", AffinityClass::General, None),
        };
        let ann = Annotations {
            affinity: Some(class),
            sec,
            ..Annotations::default()
        };
        let srcs = if t % 8 == 0 { Vec::new() } else { vec![format!("%o{}", t - 1)] };
        for k in 0..6 {
            let dst = if k == 5 { format!("%o{t}") } else { format!("%x{t}_{k}") };
            let s = if k == 0 { srcs.clone() } else { vec![format!("%x{t}_{}", k - 1)] };
            let mut ins = instr(out.len(), Some(dst), op, s, 16, t);
            ins.annotations = ann.clone();
            out.push(ins);
        }
    }
    Trace {
        instructions: out,
        explicit_edges: Vec::new(),
    }
}
