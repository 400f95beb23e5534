//! `s4oc` command-line driver.
//!
//! Exit codes: 0 success, 2 input error (bad flags, unreadable or malformed
//! files, invalid config), 3 runtime error (simulation failure).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use s4oc::ingest::{build_dag, build_idg, parse_trace, task_dags, InstructionDag, TaskGraph};
use s4oc::par::Exec;
use s4oc::partition::{modularity, security_cohesion, CommunityDetector, QualityParams};
use s4oc::scenario::{RunOptions, Scenario, ScenarioError};
use s4oc::sim::Mapper;

const DEFAULT_OUT_DIR: &str = "s4oc-out";

#[derive(Parser)]
#[command(name = "s4oc", version, about = "Secure heterogeneous SoC mapping simulator")]
struct Cli {
    /// Run single-threaded (results are identical either way).
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a trace and write the task graph as `idg.edges` and `idg.nodes`.
    Ingest {
        trace: PathBuf,
        #[arg(long, env = "S4OC_OUT_DIR", default_value = DEFAULT_OUT_DIR)]
        out: PathBuf,
        /// Print instruction count N, distinct destinations D and dependency edge count.
        #[arg(long)]
        stats: bool,
    },
    /// Partition a task graph and write `partition.txt`.
    Cluster {
        /// Edge list (`src dst bytes` per line).
        edges: PathBuf,
        /// Node table; security classes default to plain without it.
        #[arg(long)]
        nodes: Option<PathBuf>,
        #[arg(long, default_value_t = QualityParams::default().lambda_sec)]
        lambda_sec: f64,
        #[arg(long, env = "S4OC_OUT_DIR", default_value = DEFAULT_OUT_DIR)]
        out: PathBuf,
    },
    /// Train and evaluate mappers on a scenario; writes metrics.csv, events.csv and summary.txt.
    Run {
        scenario: PathBuf,
        /// Overrides the scenario seed (default 0).
        #[arg(long, env = "S4OC_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        agents: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Also run a non-learning mapper for comparison rows.
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
        #[arg(long, env = "S4OC_OUT_DIR", default_value = DEFAULT_OUT_DIR)]
        out: PathBuf,
    },
    /// Summarize a metrics.csv (or a directory containing one).
    Report { path: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Random,
    GreedyNearest,
}

enum Failure {
    Input(anyhow::Error),
    Runtime(anyhow::Error),
}

type Outcome = Result<(), Failure>;

fn input<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Input(e.into())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(input)
}

fn write(path: &Path, body: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .with_context(|| format!("cannot create {}", dir.display()))
            .map_err(Failure::Runtime)?;
    }
    fs::write(path, body)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::Runtime)
}

fn cmd_ingest(trace: &Path, out: &Path, stats: bool, exec: Exec) -> Outcome {
    let text = read(trace)?;
    let t = parse_trace(&text)
        .with_context(|| trace.display().to_string())
        .map_err(input)?;
    let g = build_idg(&t);
    write(&out.join("idg.edges"), &g.edge_list())?;
    write(&out.join("idg.nodes"), &g.node_table())?;
    if stats {
        let dag: InstructionDag = build_dag(&t.instructions);
        let per_task: usize = task_dags(&t, exec).iter().map(|(_, d)| d.edges.len()).sum();
        println!("N {}", t.instructions.len());
        println!("D {}", InstructionDag::distinct_destinations(&t.instructions));
        println!("edges {}", dag.edges.len());
        println!("free_inputs {}", dag.free_inputs);
        println!("intra_task_edges {per_task}");
        println!("tasks {}", g.len());
        println!("task_edges {}", g.edges.len());
    }
    Ok(())
}

fn cmd_cluster(edges: &Path, nodes: Option<&Path>, lambda_sec: f64, out: &Path, exec: Exec) -> Outcome {
    if !lambda_sec.is_finite() {
        return Err(input(anyhow!("--lambda-sec must be finite")));
    }
    let e = read(edges)?;
    let n = nodes.map(read).transpose()?;
    let g: TaskGraph = TaskGraph::from_files(&e, n.as_deref()).map_err(input)?;
    let params = QualityParams { lambda_sec };
    let d = CommunityDetector::new(params).with_exec(exec).detect(&g);
    let path = out.join("partition.txt");
    write(&path, &d.partition.to_text(&g))?;
    let m = modularity(&g, &d.partition);
    let s = security_cohesion(&g, &d.partition);
    println!("communities {}", d.partition.community_count());
    println!("Q {:.12}", m + lambda_sec * s);
    println!("modularity {m:.12}");
    println!("security {s:.12}");
    println!("lambda_sec {lambda_sec}");
    println!("moves {}", d.history.len());
    println!("wrote {}", path.display());
    Ok(())
}

// Scenario errors already render their cause, so the chain is not repeated.
fn scenario_failure(e: ScenarioError) -> Failure {
    let msg = anyhow!("{e}");
    if e.is_input_error() {
        Failure::Input(msg)
    } else {
        Failure::Runtime(msg)
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    scenario: &Path,
    seed: Option<u64>,
    agents: Option<usize>,
    epsilon: Option<f64>,
    episodes: Option<usize>,
    baseline: Option<Baseline>,
    out: &Path,
    exec: Exec,
) -> Outcome {
    let sc = Scenario::load(scenario).map_err(scenario_failure)?;
    let prepared = sc.prepare(exec).map_err(scenario_failure)?;
    let opts = RunOptions {
        seed,
        episodes,
        agents,
        epsilon,
        baseline: baseline.map(|b| match b {
            Baseline::Random => Mapper::Random,
            Baseline::GreedyNearest => Mapper::GreedyNearest,
        }),
        exec,
    };
    let outcome = sc.run_prepared(&prepared, &opts).map_err(scenario_failure)?;
    let written = outcome.write(out).map_err(|e| Failure::Runtime(e.into()))?;
    println!(
        "clusters {} from {} tasks",
        prepared.clusters.len(),
        prepared.graph.len()
    );
    print!("{}", outcome.summary());
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_report(path: &Path) -> Outcome {
    let file = if path.is_dir() { path.join("metrics.csv") } else { path.to_path_buf() };
    let text = read(&file)?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .with_context(|| file.display().to_string())
        .map_err(input)?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| input(anyhow!("{}: missing column {name}", file.display())))
    };
    let (label, episode) = (col("label")?, col("episode")?);
    let (makespan, comm, energy) = (col("makespan")?, col("total_comm_bytes_hops")?, col("energy")?);
    let (score, viol) = (col("security_score")?, col("violations")?);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec
            .with_context(|| format!("{} row {}", file.display(), i + 2))
            .map_err(input)?;
        let num = |c: usize| -> Result<f64, Failure> {
            rec[c]
                .parse::<f64>()
                .with_context(|| format!("{} row {}: bad number {:?}", file.display(), i + 2, &rec[c]))
                .map_err(input)
        };
        rows.push((
            rec[label].to_string(),
            num(episode)?,
            [num(makespan)?, num(comm)?, num(energy)?, num(score)?, num(viol)?],
        ));
    }
    let train: Vec<_> = rows.iter().filter(|r| r.0 == "train").collect();
    println!("{:<16} {:>8} {:>10} {:>14} {:>12} {:>8} {:>10}", "run", "episode", "makespan", "bytes*hops", "energy", "score", "violations");
    let line = |name: &str, r: &(String, f64, [f64; 5])| {
        println!(
            "{:<16} {:>8} {:>10} {:>14} {:>12.1} {:>8.4} {:>10}",
            name, r.1, r.2[0], r.2[1], r.2[2], r.2[3], r.2[4]
        );
    };
    if let Some(first) = train.first() {
        line("train first", first);
    }
    if let Some(last) = train.last().filter(|_| train.len() > 1) {
        line("train last", last);
    }
    for r in rows.iter().filter(|r| r.0 != "train") {
        line(&r.0, r);
    }
    if train.len() >= 2 {
        let k = (train.len() / 10).max(1);
        let mean = |rs: &[&(String, f64, [f64; 5])], i: usize| rs.iter().map(|r| r.2[i]).sum::<f64>() / rs.len() as f64;
        let (head, tail) = (&train[..k], &train[train.len() - k..]);
        println!(
            "learning curve over {} episodes: makespan {:.1} -> {:.1}, violations {:.2} -> {:.2} (mean of first/last {k})",
            train.len(),
            mean(head, 0),
            mean(tail, 0),
            mean(head, 4),
            mean(tail, 4)
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    let result = match &cli.command {
        Command::Ingest { trace, out, stats } => cmd_ingest(trace, out, *stats, exec),
        Command::Cluster {
            edges,
            nodes,
            lambda_sec,
            out,
        } => cmd_cluster(edges, nodes.as_deref(), *lambda_sec, out, exec),
        Command::Run {
            scenario,
            seed,
            agents,
            epsilon,
            episodes,
            baseline,
            out,
        } => cmd_run(scenario, *seed, *agents, *epsilon, *episodes, *baseline, out, exec),
        Command::Report { path } => cmd_report(path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
