//! Timestamp-space lower bounds on tiny instances.
//!
//! Causal pasts of a replica are enumerated by exhaustive search over
//! executions of the replication protocol, conflicts between pasts form a
//! graph, and its chromatic number is compared with the number of distinct
//! timestamps the protocol actually used over the same executions.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::bits::BitSet;
use crate::graph_analysis::SimpleLoop;
use crate::protocol::{merge, predicate_j, EdgeTimestamp, Layout, ReplicaState};
use crate::simulator::{Op, Policy, Scenario};
use crate::topology::{build_share_graph, DirectedEdge, RegisterId, ReplicaId, ShareGraph, Topology};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BoundsError {
    #[error("instance too large: {0}")]
    ExplosionGuard(String),
    #[error("unknown replica {0}")]
    UnknownReplica(ReplicaId),
}

/// Limits on exhaustive work. The defaults keep one instance well under a minute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Guard {
    pub max_replicas: usize,
    pub max_m: usize,
    pub max_states: usize,
    /// Cap on conflict-graph vertices that have at least one edge.
    pub max_coloring_vertices: usize,
}

impl Default for Guard {
    fn default() -> Self {
        Guard {
            max_replicas: 3,
            max_m: 2,
            max_states: 5_000_000,
            max_coloring_vertices: 10_000,
        }
    }
}

/// An update identified across executions.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct PastUpdate {
    pub issuer: ReplicaId,
    pub register: RegisterId,
    pub seq: u64,
}

pub type CausalPast = BTreeSet<PastUpdate>;

/// S|e: updates in `s` by the source of `e` on registers the edge carries.
pub fn restrict(s: &CausalPast, e: DirectedEdge, graph: &ShareGraph) -> CausalPast {
    let Some(x) = graph.edge_registers(e) else {
        return CausalPast::new();
    };
    s.iter()
        .filter(|u| u.issuer == e.from && x.contains(&u.register))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConflictWitness {
    Incident { edge: DirectedEdge },
    Loop { edge: DirectedEdge, cycle: SimpleLoop },
}

/// Simple cycles through `i` split into l and r halves, with the edge they
/// single out.
struct Splits {
    incident: Vec<DirectedEdge>,
    loops: Vec<(SimpleLoop, DirectedEdge)>,
}

fn splits(graph: &ShareGraph, i: ReplicaId) -> Splits {
    let mut cycles: Vec<Vec<ReplicaId>> = Vec::new();
    fn dfs(g: &ShareGraph, i: ReplicaId, path: &mut Vec<ReplicaId>, out: &mut Vec<Vec<ReplicaId>>) {
        let last = *path.last().expect("path starts at the pivot");
        for w in g.neighbors(last) {
            if w == i && path.len() >= 3 {
                out.push(path[1..].to_vec());
            } else if !path.contains(&w) {
                path.push(w);
                dfs(g, i, path, out);
                path.pop();
            }
        }
    }
    dfs(graph, i, &mut vec![i], &mut cycles);
    let mut loops = Vec::new();
    for c in cycles {
        let ids: Vec<u32> = c.iter().map(|r| r.0).collect();
        for s in 1..ids.len() {
            let cand = SimpleLoop::new(i.0, &ids[..s], &ids[s..]);
            let e = cand.edge();
            loops.push((cand, e));
        }
    }
    let incident = graph.edges().filter(|e| e.touches(i)).collect();
    Splits { incident, loops }
}

/// Pasts as bitmasks over a fixed update universe.
struct MaskSpace<'g> {
    graph: &'g ShareGraph,
    /// Universe position to update.
    items: Vec<PastUpdate>,
    /// Mask of the updates carried by each share-graph edge.
    edge_mask: BTreeMap<DirectedEdge, u64>,
}

impl<'g> MaskSpace<'g> {
    fn new(graph: &'g ShareGraph, items: Vec<PastUpdate>) -> Self {
        let edge_mask = graph
            .edges()
            .map(|e| {
                let x = graph.edge_registers(e).expect("listed edge");
                let m = items
                    .iter()
                    .enumerate()
                    .filter(|(_, u)| u.issuer == e.from && x.contains(&u.register))
                    .fold(0u64, |m, (k, _)| m | (1 << k));
                (e, m)
            })
            .collect();
        MaskSpace { graph, items, edge_mask }
    }

    fn mask(&self, s: &CausalPast) -> u64 {
        self.items
            .iter()
            .enumerate()
            .filter(|(_, u)| s.contains(*u))
            .fold(0, |m, (k, _)| m | (1 << k))
    }

    fn on(&self, s: u64, e: DirectedEdge) -> u64 {
        s & self.edge_mask.get(&e).copied().unwrap_or(0)
    }

    fn covers_every_edge(&self, s: u64) -> bool {
        self.edge_mask.values().all(|m| s & m != 0)
    }

    /// Directed conflict test: `s1` restricted to the witness edge is a
    /// strict subset of `s2` restricted to it.
    fn conflict(&self, sp: &Splits, s1: u64, s2: u64) -> Option<ConflictWitness> {
        if !self.covers_every_edge(s1) || !self.covers_every_edge(s2) {
            return None;
        }
        let strict = |e: DirectedEdge| {
            let (a, b) = (self.on(s1, e), self.on(s2, e));
            a != b && a & !b == 0
        };
        if let Some(&edge) = sp.incident.iter().find(|e| strict(**e)) {
            return Some(ConflictWitness::Incident { edge });
        }
        for (cand, e) in &sp.loops {
            if !self.graph.contains_edge(*e) || !strict(*e) {
                continue;
            }
            let l = &cand.l_path;
            let mut r = cand.r_path.clone();
            r.push(cand.pivot);
            let same = r.iter().all(|&rp| {
                l.iter().all(|&lq| {
                    let f = DirectedEdge { from: rp, to: lq };
                    f == *e || self.on(s1, f) == self.on(s2, f)
                })
            });
            if !same {
                continue;
            }
            let reach = (0..r.len() - 1).all(|p| {
                [s1, s2].iter().all(|&s| {
                    let next = self.on(s, DirectedEdge { from: r[p], to: r[p + 1] });
                    let back = l.iter().fold(0, |m, &lq| m | self.on(s, DirectedEdge { from: r[p], to: lq }));
                    next | back != 0
                })
            });
            if reach {
                return Some(ConflictWitness::Loop { edge: *e, cycle: cand.clone() });
            }
        }
        None
    }
}

/// Whether `s1` and `s2` conflict as pasts of `i`, in the stated direction.
pub fn conflicts(s1: &CausalPast, s2: &CausalPast, i: ReplicaId, graph: &ShareGraph) -> Option<ConflictWitness> {
    let items: Vec<PastUpdate> = s1.union(s2).cloned().collect();
    assert!(items.len() <= 64, "at most 64 distinct updates");
    let space = MaskSpace::new(graph, items);
    space.conflict(&splits(graph, i), space.mask(s1), space.mask(s2))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConflictGraph {
    pub vertices: Vec<CausalPast>,
    /// Pairs `(a, b)` with `a < b`.
    pub edges: Vec<(usize, usize)>,
}

/// Edges join pasts that conflict in either direction.
pub fn conflict_graph(graph: &ShareGraph, i: ReplicaId, pasts: &[CausalPast]) -> ConflictGraph {
    let items: BTreeSet<PastUpdate> = pasts.iter().flatten().cloned().collect();
    assert!(items.len() <= 64, "at most 64 distinct updates");
    let space = MaskSpace::new(graph, items.into_iter().collect());
    let sp = splits(graph, i);
    let masks: Vec<u64> = pasts.iter().map(|p| space.mask(p)).collect();
    let full: Vec<usize> = (0..masks.len()).filter(|&k| space.covers_every_edge(masks[k])).collect();
    let mut edges = Vec::new();
    for (x, &a) in full.iter().enumerate() {
        for &b in &full[x + 1..] {
            if space.conflict(&sp, masks[a], masks[b]).is_some() || space.conflict(&sp, masks[b], masks[a]).is_some() {
                edges.push((a, b));
            }
        }
    }
    ConflictGraph {
        vertices: pasts.to_vec(),
        edges,
    }
}

/// Exact chromatic number by branch and bound over DSatur orderings.
/// Isolated vertices are not counted against `cap`.
pub fn chromatic_number(h: &ConflictGraph, cap: usize) -> Result<usize, BoundsError> {
    if h.vertices.is_empty() {
        return Ok(0);
    }
    let touched: BTreeSet<usize> = h.edges.iter().flat_map(|&(a, b)| [a, b]).collect();
    if touched.is_empty() {
        return Ok(1);
    }
    if touched.len() > cap {
        return Err(BoundsError::ExplosionGuard(format!(
            "{} connected vertices exceed the colouring cap {cap}",
            touched.len()
        )));
    }
    let pos: BTreeMap<usize, usize> = touched.iter().enumerate().map(|(k, v)| (*v, k)).collect();
    let mut nbrs = vec![Vec::new(); touched.len()];
    for &(a, b) in &h.edges {
        let (a, b) = (pos[&a], pos[&b]);
        nbrs[a].push(b);
        nbrs[b].push(a);
    }
    Ok(Colouring::new(nbrs).solve())
}

const NONE: usize = usize::MAX;

struct Colouring {
    nbrs: Vec<Vec<usize>>,
    adj: Vec<BitSet>,
    colour: Vec<usize>,
    /// `seen[v][c]`: coloured neighbours of `v` holding colour `c`.
    seen: Vec<Vec<u32>>,
    sat: Vec<usize>,
    free_degree: Vec<usize>,
    best: usize,
    lower: usize,
}

impl Colouring {
    fn new(nbrs: Vec<Vec<usize>>) -> Self {
        let n = nbrs.len();
        let adj = nbrs
            .iter()
            .map(|ns| {
                let mut b = BitSet::new(n);
                ns.iter().for_each(|&u| b.insert(u));
                b
            })
            .collect();
        let free_degree = nbrs.iter().map(Vec::len).collect();
        let mut c = Colouring {
            nbrs,
            adj,
            colour: vec![NONE; n],
            seen: Vec::new(),
            sat: vec![0; n],
            free_degree,
            best: n,
            lower: 1,
        };
        c.best = c.greedy_upper();
        c.seen = vec![vec![0; c.best]; n];
        c.lower = c.greedy_clique();
        c
    }

    fn by_degree(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.nbrs.len()).collect();
        order.sort_by_key(|&v| (std::cmp::Reverse(self.nbrs[v].len()), v));
        order
    }

    fn greedy_upper(&self) -> usize {
        let mut colour = vec![NONE; self.nbrs.len()];
        let mut used = 0;
        for v in self.by_degree() {
            let taken: BTreeSet<usize> = self.nbrs[v].iter().map(|&u| colour[u]).filter(|&c| c != NONE).collect();
            let c = (0..).find(|c| !taken.contains(c)).unwrap();
            colour[v] = c;
            used = used.max(c + 1);
        }
        used
    }

    fn greedy_clique(&self) -> usize {
        let order = self.by_degree();
        let mut best = 1;
        for &start in &order {
            if self.nbrs[start].len() < best {
                break;
            }
            let mut candidates = self.adj[start].clone();
            let mut size = 1;
            for &v in &order {
                if candidates.contains(v) {
                    size += 1;
                    candidates.intersect_with(&self.adj[v]);
                }
            }
            best = best.max(size);
        }
        best
    }

    fn assign(&mut self, v: usize, c: usize) {
        self.colour[v] = c;
        for &u in &self.nbrs[v] {
            if self.seen[u][c] == 0 {
                self.sat[u] += 1;
            }
            self.seen[u][c] += 1;
            self.free_degree[u] -= 1;
        }
    }

    fn unassign(&mut self, v: usize) {
        let c = std::mem::replace(&mut self.colour[v], NONE);
        for &u in &self.nbrs[v] {
            self.seen[u][c] -= 1;
            if self.seen[u][c] == 0 {
                self.sat[u] -= 1;
            }
            self.free_degree[u] += 1;
        }
    }

    fn pick(&self) -> Option<usize> {
        (0..self.colour.len())
            .filter(|&v| self.colour[v] == NONE)
            .max_by_key(|&v| (self.sat[v], self.free_degree[v], std::cmp::Reverse(v)))
    }

    fn search(&mut self, used: usize) {
        if self.best == self.lower || used >= self.best {
            return;
        }
        let Some(v) = self.pick() else {
            self.best = used;
            return;
        };
        for c in 0..=used {
            if c == used && used + 1 >= self.best {
                break;
            }
            if self.seen[v][c] > 0 {
                continue;
            }
            self.assign(v, c);
            self.search(used.max(c + 1));
            self.unassign(v);
            if self.best == self.lower {
                return;
            }
        }
    }

    fn solve(mut self) -> usize {
        self.search(0);
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnumeratedPast {
    pub past: CausalPast,
    /// The replica's timestamp counters whenever it had this past.
    pub timestamp: Vec<u64>,
    /// Explicit scenario reaching a state with this past.
    pub witness: Scenario,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Constraint1Violation {
    pub past: CausalPast,
    pub first: Vec<u64>,
    pub second: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Enumeration {
    pub replica: ReplicaId,
    pub m: usize,
    pub states: usize,
    pub pasts: Vec<EnumeratedPast>,
    /// Distinct timestamps of the replica over all reachable states.
    pub realized: BTreeSet<Vec<u64>>,
    pub constraint1: Option<Constraint1Violation>,
}

/// Global state with everything that cannot influence the observed replica
/// dropped: applied logs, register values, and messages to replicas that
/// have finished issuing.
#[derive(Clone)]
struct Node {
    tau: Vec<EdgeTimestamp>,
    issued: Vec<u64>,
    /// Applied updates and their predecessors, per replica.
    known: Vec<u64>,
    /// Universe positions in flight to each replica.
    flight: Vec<u64>,
    /// Timestamp and strict predecessors of each issued position.
    sent: Vec<Option<Arc<(EdgeTimestamp, u64)>>>,
}

struct Explorer {
    i: usize,
    ids: Vec<ReplicaId>,
    /// One register per class of registers with the same holders, per replica.
    reps: Vec<Vec<RegisterId>>,
    /// Edges a write by the replica to each representative increments.
    bumps: Vec<Vec<Vec<DirectedEdge>>>,
    /// Replicas receiving a write by the replica to each representative.
    targets: Vec<Vec<u64>>,
    m: u64,
    guard: Guard,
    items: Vec<PastUpdate>,
    seen: HashSet<Box<[u8]>>,
    pasts: BTreeMap<u64, (Vec<u64>, Vec<Op>)>,
    realized: BTreeSet<Vec<u64>>,
    constraint1: Option<Constraint1Violation>,
    path: Vec<Op>,
}

impl Explorer {
    /// Universe position of the `seq`-th update of `r` to its `x`-th representative.
    fn slot(&self, r: usize, seq: u64, x: usize) -> usize {
        let before: usize = self.reps[..r].iter().map(|v| v.len()).sum::<usize>() * self.m as usize;
        before + (seq as usize - 1) * self.reps[r].len() + x
    }

    fn key(&self, n: &Node) -> Box<[u8]> {
        let mut k = Vec::with_capacity(64);
        let word = |k: &mut Vec<u8>, v: u64| k.extend_from_slice(&v.to_le_bytes());
        for r in 0..n.tau.len() {
            // counters never exceed the number of updates, well below 256
            k.extend(n.tau[r].counters().iter().map(|&c| c as u8));
            k.push(n.issued[r] as u8);
            word(&mut k, n.known[r]);
            word(&mut k, n.flight[r]);
        }
        let live = n.flight.iter().fold(0, |a, f| a | f);
        for (u, s) in n.sent.iter().enumerate() {
            if live & (1 << u) != 0 {
                let (t, past) = &**s.as_ref().expect("in-flight updates were issued");
                k.extend(t.counters().iter().map(|&c| c as u8));
                word(&mut k, *past);
            }
        }
        k.into_boxed_slice()
    }

    fn record(&mut self, n: &Node) {
        let tau = n.tau[self.i].counters().to_vec();
        let past = n.known[self.i];
        self.realized.insert(tau.clone());
        match self.pasts.get(&past) {
            Some((t, _)) => {
                if *t != tau && self.constraint1.is_none() {
                    self.constraint1 = Some(Constraint1Violation {
                        past: self.decode(past),
                        first: t.clone(),
                        second: tau,
                    });
                }
            }
            None => {
                self.pasts.insert(past, (tau, self.path.clone()));
            }
        }
    }

    fn decode(&self, mask: u64) -> CausalPast {
        (0..self.items.len())
            .filter(|k| mask & (1 << k) != 0)
            .map(|k| self.items[k].clone())
            .collect()
    }

    fn issue(&mut self, n: &Node, r: usize, x: usize) -> Result<(), BoundsError> {
        let mut next = n.clone();
        let seq = next.issued[r] + 1;
        let k = self.slot(r, seq, x);
        let tau = &mut next.tau[r];
        for e in &self.bumps[r][x] {
            tau.set(*e, tau.get(*e).expect("indexed edge") + 1);
        }
        next.sent[k] = Some(Arc::new((tau.clone(), next.known[r])));
        next.issued[r] = seq;
        next.known[r] |= 1 << k;
        for to in 0..next.flight.len() {
            if self.targets[r][x] & (1 << to) != 0 {
                next.flight[to] |= 1 << k;
            }
        }
        // a replica other than i that will never issue again cannot influence i
        for (to, f) in next.flight.iter_mut().enumerate() {
            if to != self.i && next.issued[to] == self.m {
                *f = 0;
            }
        }
        self.path.push(Op::Write {
            replica: self.ids[r],
            register: self.reps[r][x].clone(),
            value: None,
        });
        let res = self.explore(next);
        self.path.pop();
        res
    }

    fn deliverable(&self, n: &Node, r: usize, k: usize) -> bool {
        let (t, _) = &**n.sent[k].as_ref().expect("in-flight updates were issued");
        // a buffered message changes nothing observable until it applies
        predicate_j(self.ids[r], &n.tau[r], self.items[k].issuer, t)
    }

    fn deliver(&self, n: &Node, r: usize, k: usize) -> (Node, Op) {
        let mut next = n.clone();
        let (t, past) = &**n.sent[k].as_ref().expect("in-flight updates were issued");
        next.tau[r] = merge(&n.tau[r], t);
        next.known[r] |= (1 << k) | past;
        next.flight[r] &= !(1 << k);
        let u = &self.items[k];
        let op = Op::Deliver {
            issuer: u.issuer,
            seq: u.seq,
            to: self.ids[r],
        };
        (next, op)
    }

    fn deliverable_to(&self, n: &Node, r: usize) -> Vec<usize> {
        (0..self.items.len())
            .filter(|&k| n.flight[r] & (1 << k) != 0 && self.deliverable(n, r, k))
            .collect()
    }

    /// States of `r` reachable by local applies alone, with the deliveries used.
    fn local_applies(&self, n: &Node, r: usize) -> Vec<(Node, Vec<Op>)> {
        let mut out = vec![(n.clone(), Vec::new())];
        let mut seen = HashSet::from([n.flight[r]]);
        let mut at = 0;
        while at < out.len() {
            for k in self.deliverable_to(&out[at].0, r) {
                let (next, op) = self.deliver(&out[at].0, r, k);
                if seen.insert(next.flight[r]) {
                    let mut ops = out[at].1.clone();
                    ops.push(op);
                    out.push((next, ops));
                }
            }
            at += 1;
        }
        out
    }

    fn explore(&mut self, n: Node) -> Result<(), BoundsError> {
        if !self.seen.insert(self.key(&n)) {
            return Ok(());
        }
        if self.seen.len() > self.guard.max_states {
            return Err(BoundsError::ExplosionGuard(format!(
                "more than {} execution states",
                self.guard.max_states
            )));
        }
        self.record(&n);
        for k in self.deliverable_to(&n, self.i) {
            let (next, op) = self.deliver(&n, self.i, k);
            self.path.push(op);
            self.explore(next)?;
            self.path.pop();
        }
        for r in 0..n.tau.len() {
            if n.issued[r] >= self.m {
                continue;
            }
            // applies at other replicas only matter once they issue, so they are
            // taken together just before each issue
            let starts = if r == self.i { vec![(n.clone(), Vec::new())] } else { self.local_applies(&n, r) };
            for (start, ops) in starts {
                let depth = self.path.len();
                self.path.extend(ops);
                for x in 0..self.reps[r].len() {
                    self.issue(&start, r, x)?;
                }
                self.path.truncate(depth);
            }
        }
        Ok(())
    }
}

/// Registers grouped by their holders (dummy marks included), keyed by the
/// smallest name in each group.
fn register_classes(topology: &Topology) -> BTreeMap<RegisterId, Vec<RegisterId>> {
    let mut by_holders: BTreeMap<Vec<(ReplicaId, bool)>, Vec<RegisterId>> = BTreeMap::new();
    for x in topology.all_registers() {
        let holders = topology.holders(&x).map(|r| (r, topology.is_dummy(r, &x))).collect();
        by_holders.entry(holders).or_default().push(x);
    }
    by_holders.into_values().map(|v| (v[0].clone(), v)).collect()
}

/// Every past obtained by re-choosing each update's register within its
/// class, with the choices made for each (issuer, seq).
fn expand(
    past: &CausalPast,
    classes: &BTreeMap<RegisterId, Vec<RegisterId>>,
) -> Vec<(CausalPast, BTreeMap<(ReplicaId, u64), RegisterId>)> {
    let mut out = vec![(CausalPast::new(), BTreeMap::new())];
    for u in past {
        let members = &classes[&u.register];
        let mut next = Vec::with_capacity(out.len() * members.len());
        for (p, assign) in &out {
            for x in members {
                let mut p = p.clone();
                p.insert(PastUpdate {
                    register: x.clone(),
                    ..u.clone()
                });
                let mut a: BTreeMap<(ReplicaId, u64), RegisterId> = assign.clone();
                a.insert((u.issuer, u.seq), x.clone());
                next.push((p, a));
            }
        }
        out = next;
    }
    out
}

fn substitute(ops: &[Op], assign: &BTreeMap<(ReplicaId, u64), RegisterId>) -> Vec<Op> {
    let mut seq: BTreeMap<ReplicaId, u64> = BTreeMap::new();
    ops.iter()
        .map(|op| match op {
            Op::Write { replica, register, value } => {
                let s = seq.entry(*replica).or_default();
                *s += 1;
                Op::Write {
                    replica: *replica,
                    register: assign.get(&(*replica, *s)).unwrap_or(register).clone(),
                    value: value.clone(),
                }
            }
            other => other.clone(),
        })
        .collect()
}

/// Every causal past replica `i` reaches in executions where each replica
/// issues at most `m` updates, one per chosen register of its own.
pub fn enumerate_causal_pasts(topology: &Topology, i: ReplicaId, m: usize, guard: Guard) -> Result<Enumeration, BoundsError> {
    if !topology.contains_replica(i) {
        return Err(BoundsError::UnknownReplica(i));
    }
    if topology.replica_count() > guard.max_replicas || m > guard.max_m {
        return Err(BoundsError::ExplosionGuard(format!(
            "{} replicas with m = {m} exceeds {} replicas with m = {}",
            topology.replica_count(),
            guard.max_replicas,
            guard.max_m
        )));
    }
    let classes = register_classes(topology);
    let reps: Vec<Vec<RegisterId>> = topology
        .replicas()
        .map(|r| {
            classes
                .keys()
                .filter(|x| topology.stores_real(r, x))
                .cloned()
                .collect()
        })
        .collect();
    let mut items = Vec::new();
    for (r, regs) in topology.replicas().zip(&reps) {
        for seq in 1..=m as u64 {
            for x in regs {
                items.push(PastUpdate {
                    issuer: r,
                    register: x.clone(),
                    seq,
                });
            }
        }
    }
    if items.len() > 64 {
        return Err(BoundsError::ExplosionGuard(format!("{} possible updates exceed 64", items.len())));
    }
    let layout = Layout::peer(topology);
    let ids: Vec<ReplicaId> = topology.replicas().collect();
    let fresh: Vec<ReplicaState> = ids
        .iter()
        .map(|r| ReplicaState::new(layout.clone(), *r).expect("layout covers every replica"))
        .collect();
    let bumps = fresh
        .iter()
        .zip(&reps)
        .map(|(s, regs)| {
            regs.iter()
                .map(|x| {
                    let t = s.advance(x).expect("representatives are stored");
                    t.iter().filter(|(_, c)| *c > 0).map(|(e, _)| e).collect()
                })
                .collect()
        })
        .collect();
    let targets = ids
        .iter()
        .zip(&reps)
        .map(|(r, regs)| {
            regs.iter()
                .map(|x| {
                    layout
                        .recipients(*r, x)
                        .map(|(to, _)| 1u64 << ids.iter().position(|v| *v == to).expect("holders are replicas"))
                        .fold(0, |a, b| a | b)
                })
                .collect()
        })
        .collect();
    let n = ids.len();
    let root = Node {
        tau: fresh.iter().map(|s| s.tau().clone()).collect(),
        issued: vec![0; n],
        known: vec![0; n],
        flight: vec![0; n],
        sent: vec![None; items.len()],
    };
    let mut ex = Explorer {
        i: ids.iter().position(|r| *r == i).expect("checked above"),
        ids,
        reps,
        bumps,
        targets,
        m: m as u64,
        guard,
        items,
        seen: HashSet::new(),
        pasts: BTreeMap::new(),
        realized: BTreeSet::new(),
        constraint1: None,
        path: Vec::new(),
    };
    ex.explore(root)?;
    let mut pasts = Vec::new();
    for (mask, (tau, ops)) in &ex.pasts {
        for (past, assign) in expand(&ex.decode(*mask), &classes) {
            if pasts.len() >= guard.max_states {
                return Err(BoundsError::ExplosionGuard(format!("more than {} causal pasts", guard.max_states)));
            }
            let ops = substitute(ops, &assign);
            pasts.push(EnumeratedPast {
                past,
                timestamp: tau.clone(),
                witness: Scenario {
                    policy: Policy::Explicit,
                    seed: 0,
                    ops,
                },
            });
        }
    }
    pasts.sort_by(|a, b| (a.past.len(), &a.past).cmp(&(b.past.len(), &b.past)));
    Ok(Enumeration {
        replica: i,
        m,
        states: ex.seen.len(),
        pasts,
        realized: ex.realized,
        constraint1: ex.constraint1,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LowerBoundReport {
    pub replica: ReplicaId,
    pub m: usize,
    pub states: usize,
    pub pasts: usize,
    pub conflict_edges: usize,
    pub chromatic_number: usize,
    pub realized_timestamps: usize,
    /// The chromatic number does not exceed the realized count.
    pub bound_holds: bool,
    /// Equal pasts always carried equal timestamps.
    pub constraint1_holds: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraint1_violation: Option<Constraint1Violation>,
}

impl LowerBoundReport {
    pub fn passed(&self) -> bool {
        self.bound_holds && self.constraint1_holds
    }
}

pub fn lower_bound_report(topology: &Topology, i: ReplicaId, m: usize, guard: Guard) -> Result<LowerBoundReport, BoundsError> {
    let en = enumerate_causal_pasts(topology, i, m, guard)?;
    let graph = build_share_graph(topology);
    let pasts: Vec<CausalPast> = en.pasts.iter().map(|p| p.past.clone()).collect();
    let h = conflict_graph(&graph, i, &pasts);
    let chi = chromatic_number(&h, guard.max_coloring_vertices)?;
    Ok(LowerBoundReport {
        replica: i,
        m,
        states: en.states,
        pasts: pasts.len(),
        conflict_edges: h.edges.len(),
        chromatic_number: chi,
        realized_timestamps: en.realized.len(),
        bound_holds: chi <= en.realized.len(),
        constraint1_holds: en.constraint1.is_none(),
        constraint1_violation: en.constraint1,
    })
}
