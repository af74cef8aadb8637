//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use prcc_core::graph_analysis::all_timestamp_graphs;
use prcc_core::simulator::FuzzRun;
use prcc_core::topology::gen::{clique, cycle, fixtures, random_topology, random_tree, with_random_clients};
use prcc_core::{
    build_share_graph, compare_conditions, compression_plan, fuzz, is_loop, lower_bound_report, timestamp_graph,
    DirectedEdge, Event, FuzzConfig, Guard, Mode, Mutations, ReplicaId, SimpleLoop, Topology, Trace,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FAST_LIMIT: Duration = Duration::from_secs(1);
const FUZZ_LIMIT: Duration = Duration::from_secs(300);
const BOUNDS_INSTANCE_LIMIT: Duration = Duration::from_secs(120);

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e(a: u32, b: u32) -> DirectedEdge {
    DirectedEdge::new(a, b)
}

fn diamond_loops() -> Outcome {
    let start = Instant::now();
    let g = build_share_graph(&fixtures::diamond());
    let tsg = timestamp_graph(&g, ReplicaId(1)).map_err(|err| err.to_string())?;
    ensure(tsg.contains(e(4, 3)), || "e43 missing from E_1".into())?;
    ensure(!tsg.contains(e(3, 4)), || "e34 present in E_1".into())?;
    let check = |l: &[u32], r: &[u32], edge: DirectedEdge, want: bool| -> Result<(), String> {
        let c = SimpleLoop::new(1, l, r);
        let got = is_loop(&g, &c, edge).map_err(|err| err.to_string())?;
        ensure(got == want, || format!("{:?} as a loop for {edge}: got {got}", c.vertices()))
    };
    // (1,2,3,4) read with the split before 4, then before 3
    check(&[2, 3], &[4], e(4, 3), true)?;
    check(&[2], &[3, 4], e(3, 2), true)?;
    // (1,4,3,2) with the split before 3, then before 2
    check(&[4], &[3, 2], e(3, 4), false)?;
    check(&[4, 3], &[2], e(2, 3), false)?;
    let took = start.elapsed();
    ensure(took < FAST_LIMIT, || format!("took {took:?}"))?;
    Ok(format!("e43 in E_1, e34 not; loop verdicts exact; {took:?}"))
}

fn hoop_comparison() -> Outcome {
    let start = Instant::now();
    let rep = compare_conditions(&build_share_graph(&fixtures::hoop_ring()));
    for edge in [e(5, 4), e(4, 5)] {
        let row = rep.row(1, edge).ok_or(format!("no row for {edge}"))?;
        ensure(row.minimal_hoop && !row.timestamp_graph && row.disagreement, || {
            format!("hoop_ring row {row:?}")
        })?;
    }
    let rep = compare_conditions(&build_share_graph(&fixtures::hoop_ring_shared_label()));
    let row = rep.row(1, e(4, 5)).ok_or("no row for e45")?;
    ensure(row.timestamp_graph && !row.modified_hoop && row.disagreement, || {
        format!("hoop_ring_shared_label row {row:?}")
    })?;
    let took = start.elapsed();
    ensure(took < FAST_LIMIT, || format!("took {took:?}"))?;
    Ok(format!("minimal rule over-tracks e45/e54; modified rule misses e45; {took:?}"))
}

fn structural_sizes() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut trees = Vec::new();
    for _ in 0..5 {
        use rand::Rng;
        let n = rng.random_range(2..=8);
        trees.push(random_tree(&mut rng, n));
    }
    for t in &trees {
        let g = build_share_graph(t);
        for (i, tsg) in all_timestamp_graphs(&g) {
            ensure(tsg.len() == 2 * g.degree(i), || format!("tree replica {i}: |E_i| = {}", tsg.len()))?;
        }
    }
    for n in 3..=6 {
        let g = build_share_graph(&cycle(n));
        for (i, tsg) in all_timestamp_graphs(&g) {
            ensure(tsg.len() == 2 * n, || format!("cycle {n} replica {i}: |E_i| = {}", tsg.len()))?;
        }
    }
    for r in 3..=5 {
        let g = build_share_graph(&clique(r, 2));
        for (i, tsg) in all_timestamp_graphs(&g) {
            ensure(tsg.len() == r * (r - 1), || format!("clique {r} replica {i}: |E_i| = {}", tsg.len()))?;
            let plan = compression_plan(&g, &tsg);
            ensure(plan.compressed_count == r, || {
                format!("clique {r} replica {i}: compressed {}", plan.compressed_count)
            })?;
        }
    }
    Ok(format!(
        "5 trees (sizes {:?}), cycles 3..=6, cliques 3..=5 exact",
        trees.iter().map(Topology::replica_count).collect::<Vec<_>>()
    ))
}

fn random_family(seed: u64, count: usize, clients: bool) -> Vec<Topology> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let t = random_topology(&mut rng, 6, 8);
            if clients {
                with_random_clients(&mut rng, t, 3)
            } else {
                t
            }
        })
        .collect()
}

fn failures(runs: &[FuzzRun]) -> Vec<u64> {
    runs.iter().filter(|r| !r.verdict.passed()).map(|r| r.seed).collect()
}

fn fuzz_suite() -> Outcome {
    let start = Instant::now();
    let mut total = [0usize; 2];
    for (k, mode) in [Mode::Peer, Mode::ClientServer].into_iter().enumerate() {
        let cfg = FuzzConfig {
            mode,
            ..FuzzConfig::default()
        };
        let family = random_family(40 + k as u64, 25, mode == Mode::ClientServer);
        for (n, t) in family.iter().enumerate() {
            ensure(t.replica_count() <= 6 && t.all_registers().len() <= 8 && t.clients().count() <= 3, || {
                format!("topology {n} out of bounds")
            })?;
            let m = 1 + n % 4;
            let runs = fuzz(t, 0..20, m, &cfg);
            let bad = failures(&runs);
            ensure(bad.is_empty(), || format!("{mode:?} topology {n}: seeds {bad:?} failed"))?;
            total[k] += runs.len();
        }
    }
    let took = start.elapsed();
    ensure(total.iter().all(|n| *n >= 500), || format!("only {total:?} runs"))?;
    ensure(took <= FUZZ_LIMIT, || format!("took {took:?}"))?;
    Ok(format!(
        "{} peer and {} client-server runs over 25 topologies each, all checks clean; {took:.1?}",
        total[0], total[1]
    ))
}

fn mutation_sensitivity() -> Outcome {
    let family = random_family(7, 20, false);
    let mut found = Vec::new();
    for (name, mutations) in [
        (
            "skip_successor_check",
            Mutations {
                skip_successor_check: true,
                ..Mutations::default()
            },
        ),
        (
            "skip_dependency_check",
            Mutations {
                skip_dependency_check: true,
                ..Mutations::default()
            },
        ),
    ] {
        let cfg = FuzzConfig {
            mutations,
            ..FuzzConfig::default()
        };
        let caught = family
            .iter()
            .enumerate()
            .find_map(|(n, t)| failures(&fuzz(t, 0..30, 3, &cfg)).first().map(|s| (n, *s)));
        let (n, seed) = caught.ok_or(format!("{name} never caught"))?;
        found.push(format!("{name} at topology {n} seed {seed}"));
    }
    Ok(found.join(", "))
}

/// Holder sets, one per register, for every topology with at most three
/// replicas, at most two registers shared by any pair and at most one
/// register private to each replica, up to renaming replicas.
fn small_topologies() -> Vec<Vec<Vec<u32>>> {
    fn canonical(regs: &[Vec<u32>], n: u32) -> Vec<Vec<u32>> {
        let perms: Vec<Vec<u32>> = match n {
            1 => vec![vec![1]],
            2 => vec![vec![1, 2], vec![2, 1]],
            _ => vec![
                vec![1, 2, 3],
                vec![1, 3, 2],
                vec![2, 1, 3],
                vec![2, 3, 1],
                vec![3, 1, 2],
                vec![3, 2, 1],
            ],
        };
        perms
            .iter()
            .map(|p| {
                let mut out: Vec<Vec<u32>> = regs
                    .iter()
                    .map(|h| {
                        let mut h: Vec<u32> = h.iter().map(|v| p[(*v - 1) as usize]).collect();
                        h.sort();
                        h
                    })
                    .collect();
                out.sort();
                out
            })
            .min()
            .expect("at least one permutation")
    }
    let mut out = BTreeSet::new();
    for n in 1..=3u32 {
        let pairs: Vec<Vec<u32>> = (1..=n).flat_map(|a| (a + 1..=n).map(move |b| vec![a, b])).collect();
        let everyone: Vec<u32> = (1..=n).collect();
        let shared_max = if n == 3 { 2 } else { 0 };
        for shared in 0..=shared_max {
            let mut counts = vec![0usize; pairs.len()];
            loop {
                for private in 0..(1u32 << n) {
                    let mut regs = vec![everyone.clone(); shared];
                    for (p, c) in pairs.iter().zip(&counts) {
                        regs.extend(std::iter::repeat_n(p.clone(), *c));
                    }
                    for r in 1..=n {
                        if private & (1 << (r - 1)) != 0 {
                            regs.push(vec![r]);
                        }
                    }
                    let covered: BTreeSet<u32> = regs.iter().flatten().copied().collect();
                    if covered.len() == n as usize {
                        out.insert(canonical(&regs, n));
                    }
                }
                // next pair-count vector with shared + c <= 2
                let mut k = 0;
                while k < counts.len() {
                    counts[k] += 1;
                    if shared + counts[k] <= 2 {
                        break;
                    }
                    counts[k] = 0;
                    k += 1;
                }
                if k == counts.len() {
                    break;
                }
            }
        }
    }
    out.into_iter().collect()
}

fn topology_of(holders: &[Vec<u32>]) -> Topology {
    let n = holders.iter().flatten().max().copied().unwrap_or(1) as usize;
    let mut sets: Vec<Vec<String>> = vec![Vec::new(); n];
    for (k, h) in holders.iter().enumerate() {
        for r in h {
            sets[(*r - 1) as usize].push(format!("x{k}"));
        }
    }
    let refs: Vec<Vec<&str>> = sets.iter().map(|v| v.iter().map(String::as_str).collect()).collect();
    let slices: Vec<&[&str]> = refs.iter().map(Vec::as_slice).collect();
    Topology::from_sets(&slices).expect("family members are valid")
}

fn lower_bound_family() -> Outcome {
    let family = small_topologies();
    let mut instances = 0;
    let mut slowest = (Duration::ZERO, String::new());
    for holders in &family {
        let t = topology_of(holders);
        for i in t.replicas() {
            for m in 1..=2 {
                let name = format!("{holders:?} replica {i} m={m}");
                let start = Instant::now();
                let r = lower_bound_report(&t, i, m, Guard::default()).map_err(|err| format!("{name}: {err}"))?;
                let took = start.elapsed();
                ensure(r.bound_holds, || {
                    format!("{name}: chi {} > realized {}", r.chromatic_number, r.realized_timestamps)
                })?;
                ensure(r.constraint1_holds, || format!("{name}: {:?}", r.constraint1_violation))?;
                ensure(took <= BOUNDS_INSTANCE_LIMIT, || format!("{name}: took {took:?}"))?;
                if took > slowest.0 {
                    slowest = (took, name);
                }
                instances += 1;
            }
        }
    }
    Ok(format!(
        "{} topologies, {instances} instances; slowest {} in {:.1?}",
        family.len(),
        slowest.1,
        slowest.0
    ))
}

fn final_timestamp(trace: &Trace, i: ReplicaId) -> BTreeMap<DirectedEdge, u64> {
    let mut last = BTreeMap::new();
    for ev in trace.events() {
        match ev {
            Event::Issue { replica, timestamp, .. } | Event::Apply { replica, timestamp, .. } if *replica == i => {
                last = timestamp.iter().collect();
            }
            _ => {}
        }
    }
    last
}

/// Counter of `e_jk` from the trace alone: writes by `j` to registers `j` and
/// `k` share.
fn issued_counts(trace: &Trace, t: &Topology) -> BTreeMap<DirectedEdge, u64> {
    let g = build_share_graph(t);
    let mut out: BTreeMap<DirectedEdge, u64> = g.edges().map(|e| (e, 0)).collect();
    for ev in trace.events() {
        if let Event::Issue { replica, register, .. } = ev {
            for e in g.edges().filter(|e| e.from == *replica) {
                if g.edge_registers(e).is_some_and(|x| x.contains(register)) {
                    *out.get_mut(&e).expect("share graph edge") += 1;
                }
            }
        }
    }
    out
}

/// Reconstruction is checked twice per source: from the exact counts taken off
/// the trace, and from the replica's own counters whenever those are exact.
fn compression_soundness() -> Outcome {
    let mut family = random_family(99, 16, false);
    family.extend((3..=6).map(|r| clique(r, 3)));
    let mut traces = 0;
    let mut dropped = 0;
    let mut from_replica = 0;
    for t in &family {
        let g = build_share_graph(t);
        let plans: BTreeMap<ReplicaId, _> = all_timestamp_graphs(&g)
            .into_iter()
            .map(|(i, tsg)| (i, compression_plan(&g, &tsg)))
            .collect();
        for run in fuzz(t, 0..5, 3, &FuzzConfig::default()) {
            ensure(run.verdict.passed(), || format!("seed {} failed its own check", run.seed))?;
            let actual = issued_counts(&run.trace, t);
            for (i, plan) in &plans {
                let tau = final_timestamp(&run.trace, *i);
                for (j, src) in &plan.per_source {
                    let exact = src.outgoing.iter().all(|e| tau.get(e).copied().unwrap_or(0) == actual[e]);
                    let sources: &[&BTreeMap<DirectedEdge, u64>] = if exact { &[&actual, &tau] } else { &[&actual] };
                    for counts in sources {
                        let basis: BTreeMap<DirectedEdge, u64> =
                            src.basis.iter().map(|b| (*b, counts.get(b).copied().unwrap_or(0))).collect();
                        let got = plan.reconstruct(*j, &basis).ok_or(format!("replica {i} source {j}: no reconstruction"))?;
                        for e in &src.outgoing {
                            ensure(got.get(e) == actual.get(e), || {
                                format!("replica {i} {e}: reconstructed {:?}, actual {:?}", got.get(e), actual.get(e))
                            })?;
                        }
                    }
                    if exact {
                        from_replica += 1;
                    }
                    dropped += src.reconstruction.len();
                }
            }
            traces += 1;
        }
    }
    ensure(traces >= 100, || format!("only {traces} traces"))?;
    ensure(dropped > 0, || "no counter was ever reconstructed".into())?;
    ensure(from_replica > 0, || "no replica ever held exact counters".into())?;
    Ok(format!(
        "{traces} traces, {dropped} reconstructed counters, {from_replica} sources checked from replica counters, all exact"
    ))
}

fn determinism() -> Outcome {
    let render = || -> Result<Vec<String>, String> {
        let mut out = Vec::new();
        let t = random_family(5, 1, true).remove(0);
        for mode in [Mode::Peer, Mode::ClientServer] {
            let cfg = FuzzConfig {
                mode,
                ..FuzzConfig::default()
            };
            for run in fuzz(&t, 0..10, 3, &cfg) {
                out.push(run.trace.to_jsonl());
                out.push(serde_json::to_string(&run.verdict).map_err(|e| e.to_string())?);
            }
        }
        let g = build_share_graph(&fixtures::hoop_ring());
        out.push(serde_json::to_string(&compare_conditions(&g)).map_err(|e| e.to_string())?);
        let pair = Topology::from_sets(&[&["x", "y"][..], &["x"][..], &["y"][..]]).map_err(|e| e.to_string())?;
        let r = lower_bound_report(&pair, ReplicaId(1), 2, Guard::default()).map_err(|e| e.to_string())?;
        out.push(serde_json::to_string(&r).map_err(|e| e.to_string())?);
        Ok(out)
    };
    let (a, b) = (render()?, render()?);
    ensure(a == b, || "outputs differ between runs".into())?;
    Ok(format!("{} artifacts byte-identical across two runs", a.len()))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("diamond loops", diamond_loops),
        ("hoop rule comparison", hoop_comparison),
        ("structural sizes", structural_sizes),
        ("fuzz safety and liveness", fuzz_suite),
        ("mutation sensitivity", mutation_sensitivity),
        ("lower bound at desk scale", lower_bound_family),
        ("compression soundness", compression_soundness),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (k, (name, run)) in criteria.iter().enumerate() {
        let res = run();
        match &res {
            Ok(detail) => println!("criterion {} ({name}): PASS  {detail}", k + 1),
            Err(why) => {
                println!("criterion {} ({name}): FAIL  {why}", k + 1);
                failed.push(k + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
