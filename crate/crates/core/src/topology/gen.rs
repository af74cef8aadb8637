//! Topology families and named fixtures shared across the workspace.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use super::{RegisterId, ReplicaId, Topology};

fn build(sets: Vec<BTreeSet<String>>) -> Topology {
    let m: BTreeMap<ReplicaId, BTreeSet<RegisterId>> = sets
        .into_iter()
        .enumerate()
        .map(|(k, s)| (ReplicaId(k as u32 + 1), s.into_iter().map(RegisterId).collect()))
        .collect();
    Topology::new(m, BTreeMap::new(), BTreeSet::new()).expect("generated topology is valid")
}

/// `n` replicas all storing the same `regs` registers.
pub fn clique(n: usize, regs: usize) -> Topology {
    let names: BTreeSet<String> = (0..regs).map(|k| format!("x{k}")).collect();
    build(vec![names; n])
}

/// Ring `1..n` where consecutive replicas share one register of their own.
pub fn cycle(n: usize) -> Topology {
    assert!(n >= 3);
    let mut sets = vec![BTreeSet::new(); n];
    for a in 0..n {
        let b = (a + 1) % n;
        let name = format!("c{}_{}", a + 1, b + 1);
        sets[a].insert(name.clone());
        sets[b].insert(name);
    }
    build(sets)
}

/// Random labelled tree on `n ≥ 2` replicas with one register per tree edge.
pub fn random_tree<R: Rng>(rng: &mut R, n: usize) -> Topology {
    assert!(n >= 2);
    let mut sets = vec![BTreeSet::new(); n];
    for v in 1..n {
        let p = rng.random_range(0..v);
        let name = format!("t{}_{}", p + 1, v + 1);
        sets[p].insert(name.clone());
        sets[v].insert(name);
    }
    build(sets)
}

/// Random placement: `2..=max_replicas` replicas, `1..=max_registers`
/// registers, each register on a random non-empty subset, every replica
/// storing at least one register.
pub fn random_topology<R: Rng>(rng: &mut R, max_replicas: usize, max_registers: usize) -> Topology {
    assert!(max_replicas >= 2 && max_registers >= 1);
    let n = rng.random_range(2..=max_replicas);
    let regs = rng.random_range(1..=max_registers);
    let mut sets = vec![BTreeSet::new(); n];
    for x in 0..regs {
        let name = format!("x{x}");
        let mut placed = false;
        for s in sets.iter_mut() {
            if rng.random_bool(0.5) {
                s.insert(name.clone());
                placed = true;
            }
        }
        if !placed {
            sets[rng.random_range(0..n)].insert(name);
        }
    }
    for k in 0..n {
        if sets[k].is_empty() {
            let x = rng.random_range(0..regs);
            sets[k].insert(format!("x{x}"));
        }
    }
    build(sets)
}

/// Adds up to `max_clients` clients, each assigned to a random non-empty
/// subset of at most three replicas.
pub fn with_random_clients<R: Rng>(rng: &mut R, t: Topology, max_clients: usize) -> Topology {
    let n = t.replica_count() as u32;
    let c = rng.random_range(1..=max_clients);
    let mut clients: Vec<Vec<u32>> = Vec::new();
    for _ in 0..c {
        let size = rng.random_range(1..=n.min(3)) as usize;
        let mut rs = BTreeSet::new();
        while rs.len() < size {
            rs.insert(rng.random_range(1..=n));
        }
        clients.push(rs.into_iter().collect());
    }
    let refs: Vec<&[u32]> = clients.iter().map(|v| v.as_slice()).collect();
    t.with_clients(&refs).expect("generated clients are valid")
}

fn from_names(sets: &[&[&str]]) -> Topology {
    build(
        sets.iter()
            .map(|s| s.iter().map(|x| x.to_string()).collect())
            .collect(),
    )
}

/// Named fixtures shared by the test suites and shipped as CLI fixture files.
pub mod fixtures {
    use super::*;

    /// Path 1–2–3–4 over x, y, z.
    pub fn path4() -> Topology {
        from_names(&[&["x"], &["x", "y"], &["y", "z"], &["z"]])
    }

    /// Four replicas where replica 1 must track e43 but not e34.
    pub fn diamond() -> Topology {
        from_names(&[
            &["a", "y", "w"],
            &["b", "x", "y"],
            &["c", "x", "z"],
            &["d", "y", "z", "w"],
        ])
    }

    /// Seven-replica ring: 5 = j and 4 = k share x, reached from 1 = i via
    /// b1 = 6, b2 = 7 on one side and a1 = 2, a2 = 3 on the other. The edge
    /// labels make the x-hoop minimal even though neither e54 nor e45 belongs
    /// in E_1.
    pub fn hoop_ring() -> Topology {
        from_names(&[
            &["r2", "r3"],
            &["y", "z", "r3"],
            &["z", "r4"],
            &["x", "r4"],
            &["x", "r1"],
            &["r1", "y"],
            &["y", "z", "r2"],
        ])
    }

    /// Variant of [`hoop_ring`] where the label y is also stored at a1 = 2,
    /// so the modified minimality rule rejects the hoop while E_1 still has
    /// e45.
    pub fn hoop_ring_shared_label() -> Topology {
        from_names(&[
            &["r2", "r3"],
            &["r3", "y", "r5"],
            &["r5", "r4"],
            &["x", "r4"],
            &["x", "r1"],
            &["r1", "y"],
            &["y", "r2"],
        ])
    }

    pub fn by_name(name: &str) -> Option<Topology> {
        Some(match name {
            "path4" => path4(),
            "diamond" => diamond(),
            "hoop_ring" => hoop_ring(),
            "hoop_ring_shared_label" => hoop_ring_shared_label(),
            _ => return None,
        })
    }

    pub const NAMES: [&str; 4] = ["path4", "diamond", "hoop_ring", "hoop_ring_shared_label"];
}
