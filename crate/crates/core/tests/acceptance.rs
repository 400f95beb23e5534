//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use s4oc::ingest::{build_dag, build_idg, parse_trace, serialize_trace, SecurityClass};
use s4oc::par::Exec;
use s4oc::partition::{modularity, quality, security_cohesion, CommunityDetector, Partition, QualityParams};
use s4oc::rl::{q_update, select_action, Action, QTable, RlParams, StateId};
use s4oc::scenario::{RunOptions, Scenario};
use s4oc::sim::{self, ClusterGraph, Env, EpisodeOptions, Mapper, SimConfig, SimEventKind, StepOutcome, Training};
use s4oc::synth;

use common::*;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn c1_listing() -> Result<String, String> {
    let t = parse_trace("%4 = and %2, %3;\n%5 = mul %2, %4;\n%6 = add %4, %5;\n").map_err(|e| e.to_string())?;
    let got: BTreeSet<_> = build_dag(&t.instructions).edge_pairs().into_iter().collect();
    let want = BTreeSet::from([(0, 1), (0, 2), (1, 2)]);
    ensure(got == want, || format!("edges {got:?}"))?;
    Ok(format!("edges {got:?}"))
}

fn c2_dependency_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for k in 0..100 {
        let n = rng.random_range(1..=200);
        let d = rng.random_range(1..=50);
        let t = synth::random_trace(n, d, 1000 + k);
        let got: BTreeSet<_> = build_dag(&t.instructions).edge_pairs().into_iter().collect();
        if got != dependency_oracle(&t.instructions) {
            mismatches += 1;
        }
    }
    ensure(mismatches == 0, || format!("{mismatches} mismatching traces"))?;
    Ok("0 mismatches over 100 traces".into())
}

fn median_build_time(n: usize, trials: usize) -> Duration {
    let t = synth::random_trace(n, 1024, n as u64);
    // Warm the allocator once.
    std::hint::black_box(build_dag(&t.instructions));
    let mut times: Vec<Duration> = (0..trials)
        .map(|_| {
            let start = Instant::now();
            std::hint::black_box(build_dag(&t.instructions));
            start.elapsed()
        })
        .collect();
    times.sort();
    times[trials / 2]
}

fn c3_complexity() -> Result<String, String> {
    let small = median_build_time(100_000, 20);
    let large = median_build_time(200_000, 20);
    let ratio = large.as_secs_f64() / small.as_secs_f64();
    let msg = format!("median {small:?} vs {large:?}, ratio {ratio:.3}");
    ensure((1.6..=2.8).contains(&ratio), || msg.clone())?;
    Ok(msg)
}

fn c4_modularity() -> Result<String, String> {
    let mut rng = seeded(4);
    let mut checked = 0usize;
    for _ in 0..50 {
        let g = random_small_graph(&mut rng);
        for labels in all_partitions(g.len()) {
            let p = Partition::from_labels(&labels);
            let (q, qo) = (modularity(&g, &p), modularity_oracle(&g, &p));
            let (s, so) = (security_cohesion(&g, &p), security_oracle(&g, &p));
            ensure((q - qo).abs() <= 1e-12, || format!("modularity {q} vs {qo} on {labels:?}"))?;
            ensure((s - so).abs() <= 1e-12, || format!("security {s} vs {so} on {labels:?}"))?;
            checked += 1;
        }
    }
    let g = two_triangles_with_bridge();
    let params = QualityParams::default();
    let all = all_partitions(g.len());
    ensure(all.len() == 877, || format!("{} partitions enumerated", all.len()))?;
    let scored: Vec<(f64, Partition)> = all
        .iter()
        .map(|l| {
            let p = Partition::from_labels(l);
            (quality(&g, &p, &params), p)
        })
        .collect();
    let best = scored.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    let optimal: Vec<&Partition> = scored.iter().filter(|s| best - s.0 <= 1e-12).map(|s| &s.1).collect();
    let found = CommunityDetector::new(params).detect(&g).partition;
    ensure(optimal.contains(&&found), || {
        format!("detected {:?} is not among {} optimum(s) at {best}", found.assignment(), optimal.len())
    })?;
    Ok(format!(
        "{checked} partitions vs oracles; detected {:?} optimal (Q+S {best:.6}) of 877",
        found.assignment()
    ))
}

fn c5_q_learning() -> Result<String, String> {
    let params = RlParams {
        alpha: 0.5,
        gamma: 0.9,
        ..RlParams::default()
    };
    let truth = value_iteration(params.gamma);
    let q = QTable::new();
    let actions = [Action::Map(0), Action::Map(1)];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = 0usize;
    let mut updates = 0;
    let err = |q: &QTable| {
        let mut worst = 0.0f64;
        for (st, row) in truth.iter().enumerate() {
            for (a, v) in row.iter().enumerate() {
                worst = worst.max((q.get(StateId(st as u64), actions[a]) - v).abs());
            }
        }
        worst
    };
    while updates < 100_000 {
        let c = select_action(&q, StateId(s as u64), &actions, 0.5, &mut rng).map_err(|e| e.to_string())?;
        let a = if c.action == actions[0] { 0 } else { 1 };
        let (s2, r) = MDP[s][a];
        q_update(&q, StateId(s as u64), c.action, r, StateId(s2 as u64), &actions, &params).map_err(|e| e.to_string())?;
        updates += 1;
        s = s2;
        if updates % 1000 == 0 && err(&q) <= 1e-6 {
            break;
        }
    }
    let dist = err(&q);
    ensure(dist <= 1e-6, || format!("max-norm distance {dist:e} after {updates} updates"))?;
    for (st, row) in truth.iter().enumerate() {
        let want = if row[0] >= row[1] { 0 } else { 1 };
        let got = select_action(&q, StateId(st as u64), &actions, 0.0, &mut rng).unwrap().action;
        ensure(got == actions[want], || format!("state {st}: greedy {got:?}, optimal {:?}", actions[want]))?;
    }
    Ok(format!("distance {dist:.2e} after {updates} updates, policy optimal"))
}

fn c6_exploration() -> Result<String, String> {
    let q = QTable::new();
    let s = StateId(6);
    let actions: Vec<Action> = (0..5).map(Action::Map).collect();
    q.set(s, actions[2], 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut explored = 0u32;
    for _ in 0..100_000 {
        explored += select_action(&q, s, &actions, 0.1, &mut rng).unwrap().explored as u32;
    }
    let frac = explored as f64 / 1e5;
    ensure((0.09..=0.11).contains(&frac), || format!("fraction {frac}"))?;
    Ok(format!("exploration fraction {frac:.4}"))
}

fn stress_steps(params: RlParams, cap_check: impl Fn(usize, usize) -> bool) -> Result<(u64, usize), String> {
    let arch = synth::mesh16();
    let g = build_idg(&synth::layered_trace(320, 24, 7));
    let cg = ClusterGraph::build(&g, &Partition::singletons(g.len()));
    let q = QTable::new();
    let opts = EpisodeOptions {
        epsilon: 0.2,
        seed: 7,
        ..EpisodeOptions::default()
    };
    let mut env = Env::new(&arch, &cg, SimConfig::default(), params, &q, opts).map_err(|e| e.to_string())?;
    let mut steps = 0u64;
    let mut peak = 0;
    loop {
        let pool = env.pool();
        for a in 0..pool.agents() {
            let f = pool.in_flight(a);
            peak = peak.max(f);
            ensure(cap_check(f, pool.cap()), || {
                format!("step {steps}: agent {a} has {f} in flight, cap {}", pool.cap())
            })?;
        }
        match env.step().map_err(|e| e.to_string())? {
            StepOutcome::Finished => break,
            StepOutcome::Advanced { .. } => steps += 1,
        }
    }
    Ok((steps, peak))
}

fn c7_workload_cap() -> Result<String, String> {
    let base = RlParams {
        agents: 4,
        ..RlParams::default()
    };
    let (steps, peak) = stress_steps(base, |f, cap| f <= cap)?;
    ensure(steps >= 10_000, || format!("only {steps} steps"))?;
    let fixed = RlParams {
        workload_cap: Some(2),
        ..base
    };
    let (fsteps, fpeak) = stress_steps(fixed, |f, _| f <= 2)?;
    Ok(format!(
        "dynamic cap: {steps} steps, peak {peak}; fixed cap 2: {fsteps} steps, peak {fpeak}"
    ))
}

fn c8_linearizable() -> Result<String, String> {
    let q = QTable::new();
    let (s, a) = (StateId(8), Action::Map(0));
    std::thread::scope(|scope| {
        for _ in 0..8 {
            scope.spawn(|| {
                for _ in 0..10_000 {
                    q.modify(s, a, |v| v + 1.0);
                }
            });
        }
    });
    let got = q.get(s, a);
    ensure(got == 80_000.0, || format!("increments gave {got}"))?;

    // Learning updates toward a fixed target commute, so any interleaving
    // must land on the sequential value bit for bit.
    let params = RlParams {
        alpha: 0.01,
        gamma: 0.0,
        ..RlParams::default()
    };
    let shared = QTable::new();
    std::thread::scope(|scope| {
        for _ in 0..8 {
            scope.spawn(|| {
                for _ in 0..10_000 {
                    q_update(&shared, s, a, 3.0, s, &[], &params).unwrap();
                }
            });
        }
    });
    let seq = QTable::new();
    for _ in 0..80_000 {
        q_update(&seq, s, a, 3.0, s, &[], &params).unwrap();
    }
    let (x, y) = (shared.get(s, a), seq.get(s, a));
    ensure(x.to_bits() == y.to_bits(), || format!("concurrent {x} vs sequential {y}"))?;
    Ok(format!("8x10^4 increments = {got}; update chain {x} matches sequential"))
}

fn secret_starts_on(r: &sim::SimReport, secret: &[bool], element: u32) -> usize {
    r.events
        .iter()
        .filter(|e| matches!(e.kind, SimEventKind::TaskStart { cluster, element: el } if secret[cluster] && el == element))
        .count()
}

fn c9_attack() -> Result<String, String> {
    let arch = s4oc::arch::build_arch(&synth::attack_arch_config()).map_err(|e| e.to_string())?;
    let g = build_idg(&synth::attack_trace());
    let p = CommunityDetector::new(QualityParams::default()).detect(&g).partition;
    let cg = ClusterGraph::build(&g, &p);
    let secret: Vec<bool> = cg
        .clusters
        .iter()
        .map(|c| c.features.security == SecurityClass::CryptoSecret)
        .collect();
    ensure(secret.iter().any(|&s| s), || "no CryptoSecret cluster".into())?;
    let train = |attacks: Vec<(u64, u32)>| {
        let t = Training {
            episodes: 200,
            seed: 9,
            attacks,
            exec: Exec::default(),
        };
        sim::train(&arch, &cg, SimConfig::default(), RlParams::default(), &QTable::new(), &t).map_err(|e| e.to_string())
    };
    // Control: without the attack the learned policy does use the element.
    let calm = train(Vec::new())?;
    let calm_use = secret_starts_on(&calm.last().unwrap().report, &secret, synth::ATTACKED_ELEMENT);
    ensure(calm_use > 0, || "control run never uses the element; scenario is vacuous".into())?;
    let runs = train(vec![(0, synth::ATTACKED_ELEMENT)])?;
    let first = &runs[0].report;
    let last = &runs.last().unwrap().report;
    let on_attacked = secret_starts_on(last, &secret, synth::ATTACKED_ELEMENT);
    let msg = format!(
        "secret clusters on attacked element {on_attacked} (control without attack: {calm_use}); violations first {} final {}",
        first.violations, last.violations
    );
    ensure(on_attacked == 0 && last.violations <= first.violations, || msg.clone())?;
    Ok(msg)
}

fn c10_clustering_benefit() -> Result<String, String> {
    let arch = synth::mesh16();
    let cfg = SimConfig::default();
    let params = RlParams::default();
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in 0..20u64 {
        let g = build_idg(&synth::pipeline_trace(synth::PipelineShape::default(), seed));
        let p = CommunityDetector::new(QualityParams::default()).detect(&g).partition;
        let clustered = ClusterGraph::build(&g, &p);
        let t = Training {
            episodes: 20,
            seed,
            attacks: Vec::new(),
            exec: Exec::default(),
        };
        let q = QTable::new();
        let rl = sim::train(&arch, &clustered, cfg, params, &q, &t).map_err(|e| e.to_string())?;
        let ours = rl.last().unwrap().report.total_comm_bytes_hops;
        let flat = ClusterGraph::build(&g, &Partition::singletons(g.len()));
        let random = sim::baseline(&arch, &flat, cfg, params, Mapper::Random, &t)
            .map_err(|e| e.to_string())?
            .report
            .total_comm_bytes_hops;
        wins += (ours <= random) as u32;
        detail.push(format!("{ours}/{random}"));
    }
    let msg = format!("{wins}/20 wins (clustered/random: {})", detail.join(" "));
    ensure(wins >= 18, || msg.clone())?;
    Ok(msg)
}

fn c11_determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    std::fs::write(root.join("arch.json"), synth::mesh16_config().to_json()).unwrap();
    let trace = synth::pipeline_trace(synth::PipelineShape::default(), 11);
    std::fs::write(root.join("pipeline.trace"), serialize_trace(&trace)).unwrap();
    std::fs::write(
        root.join("run.toml"),
        "arch = \"arch.json\"\ntrace = \"pipeline.trace\"\nseed = 42\nepisodes = 5\nattack 30 8\n[rl]\nepsilon = 0.2\n",
    )
    .unwrap();
    let scenario = Scenario::load(root.join("run.toml")).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for (k, exec) in [Exec::Parallel, Exec::Parallel, Exec::Sequential].into_iter().enumerate() {
        let opts = RunOptions {
            baseline: Some(Mapper::Random),
            exec,
            ..RunOptions::default()
        };
        let out = scenario.run(&opts).map_err(|e| e.to_string())?;
        let dir = root.join(format!("out{k}"));
        out.write(&dir).map_err(|e| e.to_string())?;
        let read = |name: &str| std::fs::read(dir.join(name)).unwrap();
        outputs.push((read("metrics.csv"), read("events.csv")));
    }
    ensure(outputs[0] == outputs[1], || "two identical runs differ".into())?;
    ensure(outputs[0] == outputs[2], || "sequential build differs from parallel".into())?;
    Ok(format!(
        "metrics.csv {} B and events.csv {} B identical across 3 runs",
        outputs[0].0.len(),
        outputs[0].1.len()
    ))
}

fn main() {
    let checks: [(&str, &str, Check, u64); 11] = [
        ("1", "trace listing dependencies", c1_listing, 1),
        ("2", "dependency oracle equivalence", c2_dependency_oracle, 10),
        ("3", "near-linear DAG construction", c3_complexity, 60),
        ("4", "modularity and exhaustive optimum", c4_modularity, 30),
        ("5", "Q-learning convergence", c5_q_learning, 5),
        ("6", "epsilon-greedy statistics", c6_exploration, 5),
        ("7", "workload bound", c7_workload_cap, 30),
        ("8", "shared-table linearizability", c8_linearizable, 10),
        ("9", "self-adaptation under attack", c9_attack, 60),
        ("10", "clustering benefit", c10_clustering_benefit, 120),
        ("11", "determinism", c11_determinism, 10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, check, limit) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(m) if elapsed.as_secs_f64() > limit as f64 => Err(format!("{m}; took {elapsed:.2?}, limit {limit}s")),
            r => r,
        };
        match result {
            Ok(m) => println!("PASS criterion {id:>2} {name} ({elapsed:.2?}): {m}"),
            Err(m) => {
                failed += 1;
                println!("FAIL criterion {id:>2} {name} ({elapsed:.2?}): {m}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
