use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use prcc_core::checker::{check_trace, CheckError, CheckOptions, Verdict};
use prcc_core::graph_analysis::{all_augmented_timestamp_graphs, all_timestamp_graphs, ComparisonRow};
use prcc_core::optimization::SourceCounts;
use prcc_core::simulator::{run_scenario, SimError};
use prcc_core::topology::gen::{random_topology, with_random_clients};
use prcc_core::topology::load_topology;
use prcc_core::{
    apply_dummies, build_augmented_share_graph, build_share_graph, compare_conditions, compression_plan,
    dummy_plan, fuzz, lower_bound_report, register_level_counts, DummyTarget, FuzzConfig, Guard, Mode,
    ReplicaId, Scenario, TimestampGraph, Topology, Trace,
};

/// Edge-indexed causal consistency toolkit.
#[derive(Parser)]
#[command(name = "prcc", version, about)]
struct Cli {
    /// Worker threads for fuzzing.
    #[arg(long, global = true, env = "PRCC_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Timestamp graphs, witnessing loops and the hoop comparison table.
    Analyze(TopologyArgs),
    /// Run a scenario and emit its trace as JSON Lines.
    Simulate(SimulateArgs),
    /// Check a trace for safety and liveness.
    Check(CheckArgs),
    /// Random scenarios over many seeds, each checked.
    Fuzz(FuzzArgs),
    /// Per-replica counter compression.
    Compress(TopologyArgs),
    /// Dummy register placement and the resulting timestamp sizes.
    Dummies(DummiesArgs),
    /// Exhaustive lower-bound check on a small instance.
    Bounds(BoundsArgs),
    /// Rows where the hoop rules and the timestamp graph disagree.
    Compare(TopologyArgs),
}

#[derive(Args)]
struct TopologyArgs {
    #[arg(long)]
    topology: PathBuf,
    /// Use augmented timestamp graphs.
    #[arg(long)]
    client_server: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    topology: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Trace destination; stdout when absent.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    client_server: bool,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Fixes register placement; inferred from the trace otherwise.
    #[arg(long)]
    topology: Option<PathBuf>,
    #[arg(long)]
    client_server: bool,
}

#[derive(Args)]
struct FuzzArgs {
    /// A topology file, or `random` for a fresh topology per seed.
    #[arg(long)]
    topology: String,
    /// Inclusive range `a..b`, or a single seed.
    #[arg(long, value_parser = parse_seeds, default_value = "0..99")]
    seeds: Range<u64>,
    /// Updates per replica.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    m: u64,
    #[arg(long)]
    client_server: bool,
    /// Writes `seed-N.jsonl` for every failing seed.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Full,
    Selective,
}

#[derive(Args)]
struct DummiesArgs {
    #[arg(long)]
    topology: PathBuf,
    #[arg(long, value_enum)]
    target: Target,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    topology: PathBuf,
    #[arg(long)]
    replica: u32,
    #[arg(long, default_value_t = 1)]
    m: usize,
    #[arg(long)]
    max_replicas: Option<usize>,
    #[arg(long)]
    max_m: Option<usize>,
    #[arg(long)]
    max_states: Option<usize>,
    #[arg(long)]
    max_coloring_vertices: Option<usize>,
}

fn parse_seeds(s: &str) -> Result<Range<u64>, String> {
    let num = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("bad seed {t:?}: {e}"));
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (num(a)?, num(b.strip_prefix('=').unwrap_or(b))?),
        None => {
            let n = num(s)?;
            (n, n)
        }
    };
    if b < a {
        return Err(format!("empty seed range {s}"));
    }
    Ok(a..b + 1)
}

/// Failure classes mapped to exit codes.
enum Failure {
    Violation(String),
    Usage(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    let res = match cli.command {
        Command::Analyze(a) => analyze(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Check(a) => check(&a),
        Command::Fuzz(a) => run_fuzz(&a),
        Command::Compress(a) => compress(&a),
        Command::Dummies(a) => dummies(&a),
        Command::Bounds(a) => bounds(&a),
        Command::Compare(a) => compare(&a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violation(msg)) => {
            eprintln!("violation: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn topology(path: &Path, client_server: bool) -> anyhow::Result<Topology> {
    let t = load_topology(path)?;
    if client_server && !t.has_clients() {
        bail!("{}: client-server mode needs clients in the topology", path.display());
    }
    Ok(t)
}

fn print_json<T: Serialize>(v: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn mode(client_server: bool) -> Mode {
    if client_server {
        Mode::ClientServer
    } else {
        Mode::Peer
    }
}

#[derive(Serialize)]
struct Witness {
    edge: (u32, u32),
    #[serde(rename = "loop")]
    cycle: Vec<u32>,
}

#[derive(Serialize)]
struct ReplicaReport {
    replica: u32,
    edge_count: usize,
    edges: Vec<(u32, u32)>,
    witnesses: Vec<Witness>,
}

#[derive(Serialize)]
struct AnalyzeReport {
    replicas: Vec<ReplicaReport>,
    comparison: Vec<ComparisonRow>,
}

fn replica_report(g: &TimestampGraph) -> ReplicaReport {
    ReplicaReport {
        replica: g.owner.0,
        edge_count: g.len(),
        edges: g.edges.iter().map(|e| (*e).into()).collect(),
        witnesses: g
            .witnesses
            .iter()
            .map(|(e, l)| Witness {
                edge: (*e).into(),
                cycle: l.vertices().iter().map(|r| r.0).collect(),
            })
            .collect(),
    }
}

fn timestamp_graphs(t: &Topology, client_server: bool) -> BTreeMap<ReplicaId, TimestampGraph> {
    if client_server {
        all_augmented_timestamp_graphs(&build_augmented_share_graph(t))
    } else {
        all_timestamp_graphs(&build_share_graph(t))
    }
}

fn analyze(a: &TopologyArgs) -> Outcome {
    let t = topology(&a.topology, a.client_server)?;
    let report = AnalyzeReport {
        replicas: timestamp_graphs(&t, a.client_server).values().map(replica_report).collect(),
        comparison: compare_conditions(&build_share_graph(&t)).rows,
    };
    Ok(print_json(&report)?)
}

fn compare(a: &TopologyArgs) -> Outcome {
    let t = topology(&a.topology, false)?;
    let report = compare_conditions(&build_share_graph(&t));
    let rows: Vec<&ComparisonRow> = report.disagreements().collect();
    Ok(print_json(&rows)?)
}

fn write_trace(trace: &Trace, dest: Option<&Path>) -> anyhow::Result<()> {
    match dest {
        Some(p) => fs::write(p, trace.to_jsonl()).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{}", trace.to_jsonl());
            Ok(())
        }
    }
}

fn simulate(a: &SimulateArgs) -> Outcome {
    let t = topology(&a.topology, a.client_server)?;
    let src = fs::read_to_string(&a.scenario).with_context(|| format!("reading {}", a.scenario.display()))?;
    let mut scenario = Scenario::from_json(&src).map_err(|e| anyhow!("{}: {e}", a.scenario.display()))?;
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    match run_scenario(&t, &scenario, mode(a.client_server)) {
        Ok(trace) => Ok(write_trace(&trace, a.trace.as_deref())?),
        Err(SimError::Stuck { trace, witness }) => {
            write_trace(&trace, a.trace.as_deref())?;
            Err(Failure::Violation(format!("execution stuck: {witness:?}")))
        }
        Err(e) => Err(anyhow!(e).into()),
    }
}

fn check(a: &CheckArgs) -> Outcome {
    let t = a.topology.as_deref().map(|p| topology(p, a.client_server)).transpose()?;
    let src = fs::read_to_string(&a.trace).with_context(|| format!("reading {}", a.trace.display()))?;
    let trace = Trace::from_jsonl(&src).map_err(|e| anyhow!("{}: {e}", a.trace.display()))?;
    let opts = CheckOptions {
        client_server: a.client_server,
    };
    match check_trace(&trace, t.as_ref(), opts) {
        Ok(v) => {
            print_json(&v)?;
            if v.passed() {
                Ok(())
            } else {
                Err(Failure::Violation(summary(&v)))
            }
        }
        Err(e @ (CheckError::MalformedTrace { .. } | CheckError::IncompleteTrace)) => Err(Failure::Violation(e.to_string())),
        Err(e) => Err(anyhow!(e).into()),
    }
}

fn summary(v: &Verdict) -> String {
    serde_json::to_string(v).expect("verdicts serialize")
}

#[derive(Serialize)]
struct SeedResult {
    seed: u64,
    replicas: usize,
    events: usize,
    passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    verdict: Option<Verdict>,
}

#[derive(Serialize)]
struct FuzzReport {
    runs: usize,
    passed: usize,
    failed: usize,
    results: Vec<SeedResult>,
}

fn run_fuzz(a: &FuzzArgs) -> Outcome {
    let m = a.m as usize;
    let cfg = FuzzConfig {
        mode: mode(a.client_server),
        ..FuzzConfig::default()
    };
    let mut runs = Vec::new();
    if a.topology == "random" {
        for seed in a.seeds.clone() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut t = random_topology(&mut rng, 6, 8);
            if a.client_server {
                t = with_random_clients(&mut rng, t, 3);
            }
            let n = t.replica_count();
            runs.extend(fuzz(&t, seed..seed + 1, m, &cfg).into_iter().map(|r| (n, r)));
        }
    } else {
        let t = topology(Path::new(&a.topology), a.client_server)?;
        let n = t.replica_count();
        runs.extend(fuzz(&t, a.seeds.clone(), m, &cfg).into_iter().map(|r| (n, r)));
    }
    if let Some(dir) = &a.trace_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (_, r) in runs.iter().filter(|(_, r)| !r.verdict.passed()) {
            write_trace(&r.trace, Some(&dir.join(format!("seed-{}.jsonl", r.seed))))?;
        }
    }
    let results: Vec<SeedResult> = runs
        .into_iter()
        .map(|(replicas, r)| SeedResult {
            seed: r.seed,
            replicas,
            events: r.trace.len(),
            passed: r.verdict.passed(),
            verdict: (!r.verdict.passed()).then_some(r.verdict),
        })
        .collect();
    let passed = results.iter().filter(|r| r.passed).count();
    let report = FuzzReport {
        runs: results.len(),
        passed,
        failed: results.len() - passed,
        results,
    };
    print_json(&report)?;
    if report.failed > 0 {
        return Err(Failure::Violation(format!("{} of {} seeds failed", report.failed, report.runs)));
    }
    Ok(())
}

#[derive(Serialize)]
struct CompressRow {
    replica: u32,
    edge_count: usize,
    compressed_count: usize,
    sources: Vec<SourceCounts>,
}

fn size_rows(t: &Topology) -> Vec<CompressRow> {
    let g = build_share_graph(t);
    all_timestamp_graphs(&g)
        .values()
        .map(|tsg| {
            let plan = compression_plan(&g, tsg);
            CompressRow {
                replica: tsg.owner.0,
                edge_count: plan.edge_count,
                compressed_count: plan.compressed_count,
                sources: register_level_counts(&g, &plan),
            }
        })
        .collect()
}

fn compress(a: &TopologyArgs) -> Outcome {
    let t = topology(&a.topology, false)?;
    Ok(print_json(&size_rows(&t))?)
}

#[derive(Serialize)]
struct DummiesReport {
    target: DummyTarget,
    dummies: Vec<(u32, String)>,
    before: Vec<CompressRow>,
    after: Vec<CompressRow>,
}

fn dummies(a: &DummiesArgs) -> Outcome {
    let t = topology(&a.topology, false)?;
    let target = match a.target {
        Target::Full => DummyTarget::Full,
        Target::Selective => DummyTarget::Selective,
    };
    let plan = dummy_plan(&t, target);
    let after = apply_dummies(&t, &plan).map_err(anyhow::Error::from)?;
    let report = DummiesReport {
        target,
        dummies: plan.iter().map(|(r, x)| (r.0, x.as_str().to_string())).collect(),
        before: size_rows(&t),
        after: size_rows(&after),
    };
    Ok(print_json(&report)?)
}

fn bounds(a: &BoundsArgs) -> Outcome {
    let t = topology(&a.topology, false)?;
    let d = Guard::default();
    let guard = Guard {
        max_replicas: a.max_replicas.unwrap_or(d.max_replicas),
        max_m: a.max_m.unwrap_or(d.max_m),
        max_states: a.max_states.unwrap_or(d.max_states),
        max_coloring_vertices: a.max_coloring_vertices.unwrap_or(d.max_coloring_vertices),
    };
    let report = lower_bound_report(&t, ReplicaId(a.replica), a.m, guard).map_err(anyhow::Error::from)?;
    print_json(&report)?;
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Violation(format!(
            "chromatic number {} against {} realized timestamps",
            report.chromatic_number, report.realized_timestamps
        )))
    }
}
