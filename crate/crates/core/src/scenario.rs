//! Scenario files and the end-to-end experiment pipeline.
//!
//! A scenario is TOML plus `attack <cycle> <element>` directive lines,
//! which may appear anywhere and are stripped before TOML parsing:
//!
//! ```text
//! arch = "mesh.json"
//! trace = "pipeline.trace"
//! seed = 7
//! episodes = 50
//! attack 0 3
//!
//! [rl]
//! agents = 4
//! ```
//!
//! Relative paths resolve against the scenario file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{build_arch, ArchConfig, ArchError, ArchGraph, ElementId};
use crate::ingest::{build_idg, parse_trace, TaskGraph, Trace, TraceError};
use crate::par::Exec;
use crate::partition::{CommunityDetector, Partition, PartitionError, QualityParams};
use crate::rl::{QTable, RlError, RlParams};
use crate::sim::{self, ClusterGraph, Cycles, Mapper, RunRecord, SimConfig, SimError, SimEvent, Training};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("scenario: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("scenario line {line}: {message}")]
    Directive { line: usize, message: String },
    #[error("{path}: {source}")]
    Trace { path: PathBuf, source: TraceError },
    #[error("{path}: {source}")]
    Arch { path: PathBuf, source: ArchError },
    #[error("{path}: {source}")]
    Partition {
        path: PathBuf,
        source: PartitionError,
    },
    #[error("scenario: {0}")]
    Params(#[from] RlError),
    #[error("attack on element {0}, which is not in the architecture")]
    UnknownAttackTarget(ElementId),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl ScenarioError {
    /// Input problems (bad files, bad config) as opposed to failures while simulating.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, ScenarioError::Sim(_))
    }
}

/// How tasks are grouped before mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Clustering {
    #[default]
    Community,
    /// Every task is its own cluster.
    Singletons,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub arch: PathBuf,
    pub trace: PathBuf,
    /// Precomputed partition file; overrides `clustering`.
    #[serde(default)]
    pub partition: Option<PathBuf>,
    #[serde(default)]
    pub clustering: Clustering,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub episodes: usize,
    #[serde(default)]
    pub quality: QualityParams,
    #[serde(default)]
    pub rl: RlParams,
    #[serde(default)]
    pub sim: SimConfig,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub attacks: Vec<(Cycles, ElementId)>,
    pub base_dir: PathBuf,
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl Scenario {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, ScenarioError> {
        let mut attacks = Vec::new();
        let mut toml_text = String::with_capacity(text.len());
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let mut words = line.split_whitespace();
            if words.next() == Some("attack") {
                let bad = |message: &str| ScenarioError::Directive {
                    line: i + 1,
                    message: message.to_string(),
                };
                let cycle = words
                    .next()
                    .ok_or_else(|| bad("attack needs <cycle> <element>"))?
                    .parse::<Cycles>()
                    .map_err(|_| bad("attack cycle must be a non-negative integer"))?;
                let element = words
                    .next()
                    .ok_or_else(|| bad("attack needs <cycle> <element>"))?
                    .parse::<ElementId>()
                    .map_err(|_| bad("attack element must be an element id"))?;
                if let Some(extra) = words.next() {
                    if !extra.starts_with('#') {
                        return Err(bad("unexpected text after attack directive"));
                    }
                }
                attacks.push((cycle, element));
                // Keep line numbering stable for TOML diagnostics.
                toml_text.push('\n');
            } else {
                toml_text.push_str(raw);
                toml_text.push('\n');
            }
        }
        let config: ScenarioConfig = toml::from_str(&toml_text)?;
        config.rl.validate()?;
        Ok(Scenario {
            config,
            attacks,
            base_dir: base_dir.into(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = read(path)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, dir)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Load inputs and cluster the task graph.
    pub fn prepare(&self, exec: Exec) -> Result<Prepared, ScenarioError> {
        let arch_path = self.resolve(&self.config.arch);
        let arch_cfg = ArchConfig::from_json(&read(&arch_path)?).map_err(|source| ScenarioError::Arch {
            path: arch_path.clone(),
            source,
        })?;
        let arch = build_arch(&arch_cfg).map_err(|source| ScenarioError::Arch {
            path: arch_path.clone(),
            source,
        })?;
        for &(_, e) in &self.attacks {
            if arch.get(e).is_err() {
                return Err(ScenarioError::UnknownAttackTarget(e));
            }
        }
        let trace_path = self.resolve(&self.config.trace);
        let trace = parse_trace(&read(&trace_path)?).map_err(|source| ScenarioError::Trace {
            path: trace_path.clone(),
            source,
        })?;
        let graph = build_idg(&trace);
        let partition = match &self.config.partition {
            Some(p) => {
                let path = self.resolve(p);
                Partition::from_text(&read(&path)?, &graph)
                    .map_err(|source| ScenarioError::Partition { path, source })?
            }
            None => match self.config.clustering {
                Clustering::Community => {
                    CommunityDetector::new(self.config.quality)
                        .with_exec(exec)
                        .detect(&graph)
                        .partition
                }
                Clustering::Singletons => Partition::singletons(graph.len()),
            },
        };
        let clusters = ClusterGraph::build(&graph, &partition);
        Ok(Prepared {
            arch,
            trace,
            graph,
            partition,
            clusters,
        })
    }
}

/// Inputs ready for simulation.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub arch: ArchGraph,
    pub trace: Trace,
    pub graph: TaskGraph,
    pub partition: Partition,
    pub clusters: ClusterGraph,
}

/// Per-invocation overrides of the scenario file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub episodes: Option<usize>,
    pub agents: Option<usize>,
    pub epsilon: Option<f64>,
    pub baseline: Option<Mapper>,
    pub exec: Exec,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    /// Training episodes, the greedy evaluation, then the baseline if any.
    pub records: Vec<RunRecord>,
    /// Event log of the greedy evaluation episode.
    pub events: Vec<SimEvent>,
    pub baseline_events: Option<Vec<SimEvent>>,
    pub q: QTable,
}

impl Scenario {
    pub fn run(&self, opts: &RunOptions) -> Result<Outcome, ScenarioError> {
        let prepared = self.prepare(opts.exec)?;
        self.run_prepared(&prepared, opts)
    }

    pub fn run_prepared(&self, p: &Prepared, opts: &RunOptions) -> Result<Outcome, ScenarioError> {
        let mut params = self.config.rl;
        if let Some(a) = opts.agents {
            params.agents = a;
        }
        if let Some(e) = opts.epsilon {
            params.epsilon = e;
        }
        params.validate()?;
        let training = Training {
            episodes: opts.episodes.unwrap_or(self.config.episodes),
            seed: opts.seed.unwrap_or(self.config.seed),
            attacks: self.attacks.clone(),
            exec: opts.exec,
        };
        let q = QTable::new();
        let mut records = sim::train(&p.arch, &p.clusters, self.config.sim, params, &q, &training)?;
        let events = records.last().map(|r| r.report.events.clone()).unwrap_or_default();
        let mut baseline_events = None;
        if let Some(m) = opts.baseline {
            let rec = sim::baseline(&p.arch, &p.clusters, self.config.sim, params, m, &training)?;
            baseline_events = Some(rec.report.events.clone());
            records.push(rec);
        }
        Ok(Outcome {
            records,
            events,
            baseline_events,
            q,
        })
    }
}

impl Outcome {
    /// Greedy evaluation record.
    pub fn greedy(&self) -> Option<&RunRecord> {
        self.records.iter().rev().find(|r| r.label == "greedy")
    }

    pub fn baseline(&self) -> Option<&RunRecord> {
        self.baseline_events.as_ref()?;
        self.records.last()
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        if let Some(first) = self.records.first().filter(|r| r.label == "train") {
            s.push_str(&format!("first training episode\n{}", first.report.summary()));
        }
        if let Some(g) = self.greedy() {
            s.push_str(&format!("greedy evaluation\n{}", g.report.summary()));
        }
        if let Some(b) = self.baseline() {
            s.push_str(&format!("baseline {}\n{}", b.label, b.report.summary()));
        }
        s
    }

    /// Write `metrics.csv`, `events.csv`, `summary.txt` and, with a
    /// baseline, `events_baseline.csv` into `dir`. Returns the paths written.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, ScenarioError> {
        fs::create_dir_all(dir).map_err(|source| ScenarioError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut files = vec![
            ("metrics.csv", sim::metrics_csv(&self.records)),
            ("events.csv", sim::events_csv(&self.events)),
            ("summary.txt", self.summary()),
        ];
        if let Some(ev) = &self.baseline_events {
            files.push(("events_baseline.csv", sim::events_csv(ev)));
        }
        let mut out = Vec::new();
        for (name, body) in files {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|source| ScenarioError::Io {
                path: path.clone(),
                source,
            })?;
            out.push(path);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attack_lines_are_extracted() {
        let s = Scenario::parse(
            "arch = \"a.json\"\ntrace = \"t.trace\"\nattack 0 3\nseed = 9\n  attack 120 4 # late\n[rl]\nagents = 2\n",
            "/tmp",
        )
        .unwrap();
        assert_eq!(s.attacks, vec![(0, 3), (120, 4)]);
        assert_eq!(s.config.seed, 9);
        assert_eq!(s.config.rl.agents, 2);
        assert_eq!(s.config.episodes, 1);
        assert_eq!(s.resolve(Path::new("a.json")), PathBuf::from("/tmp/a.json"));
    }

    #[test]
    fn bad_directives() {
        let e = Scenario::parse("arch = \"a\"\ntrace = \"t\"\nattack x 3\n", ".").unwrap_err();
        assert!(matches!(e, ScenarioError::Directive { line: 3, .. }), "{e}");
        let e = Scenario::parse("arch = \"a\"\ntrace = \"t\"\nbogus = 1\n", ".").unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = Scenario::parse("arch = \"a\"\ntrace = \"t\"\n[rl]\nalpha = 2.0\n", ".").unwrap_err();
        assert!(matches!(e, ScenarioError::Params(_)));
        assert!(e.is_input_error());
    }
}
