//! Loop detection, per-replica timestamp graphs and the hoop-based
//! comparison rules.
//!
//! A replica `i` must track a non-incident edge `e_jk` exactly when some
//! simple loop through `i` lets an update on `e_jk` reach `i` along the
//! `r` side without touching the `l` side before `k`. [`timestamp_graph`]
//! searches all simple cycles through `i` depth-first and tests every way of
//! splitting each cycle into an `l` and an `r` side.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bits::BitSet;
use crate::topology::{AugmentedShareGraph, DirectedEdge, RegisterId, ReplicaId, ShareGraph};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("unknown replica {0}")]
    UnknownReplica(ReplicaId),
    #[error("unknown register {0}")]
    UnknownRegister(RegisterId),
    #[error("not a simple loop: {0}")]
    NotASimpleLoop(String),
}

/// Loop `(pivot, l_1..l_s, r_1..r_t, pivot)` witnessing edge `e_{r_1 l_s}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SimpleLoop {
    pub pivot: ReplicaId,
    pub l_path: Vec<ReplicaId>,
    pub r_path: Vec<ReplicaId>,
}

impl SimpleLoop {
    pub fn new(pivot: u32, l_path: &[u32], r_path: &[u32]) -> Self {
        SimpleLoop {
            pivot: ReplicaId(pivot),
            l_path: l_path.iter().map(|&r| ReplicaId(r)).collect(),
            r_path: r_path.iter().map(|&r| ReplicaId(r)).collect(),
        }
    }

    /// `e_jk` with `j = r_1`, `k = l_s`. Panics on an empty side.
    pub fn edge(&self) -> DirectedEdge {
        DirectedEdge {
            from: self.r_path[0],
            to: *self.l_path.last().expect("l_path is non-empty"),
        }
    }

    /// Vertices in loop order, starting at the pivot.
    pub fn vertices(&self) -> Vec<ReplicaId> {
        let mut v = vec![self.pivot];
        v.extend(&self.l_path);
        v.extend(&self.r_path);
        v
    }
}

/// `E_i` together with one witnessing loop per non-incident edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TimestampGraph {
    pub owner: ReplicaId,
    pub edges: BTreeSet<DirectedEdge>,
    pub vertices: BTreeSet<ReplicaId>,
    pub witnesses: BTreeMap<DirectedEdge, SimpleLoop>,
}

impl TimestampGraph {
    pub fn contains(&self, e: DirectedEdge) -> bool {
        self.edges.contains(&e)
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Edges leaving `j`, in canonical order.
    pub fn outgoing(&self, j: ReplicaId) -> impl Iterator<Item = DirectedEdge> + '_ {
        self.edges.iter().copied().filter(move |e| e.from == j)
    }
}

/// Loop search limits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoopSearch {
    /// Longest loop considered, counted in vertices. `None` searches every
    /// simple loop; any cap may drop edges that only long loops witness.
    pub max_len: Option<usize>,
}

/// Dense view of a share graph for the search routines.
struct Dense {
    ids: Vec<ReplicaId>,
    pos: BTreeMap<ReplicaId, usize>,
    regs: Vec<BitSet>,
    nregs: usize,
    adj: Vec<Vec<usize>>,
    /// Pairs co-assigned to a client, when searching the augmented graph.
    co: Option<Vec<Vec<bool>>>,
    base_edges: BTreeSet<(usize, usize)>,
}

impl Dense {
    fn new(g: &ShareGraph) -> Self {
        let ids: Vec<ReplicaId> = g.vertices().collect();
        let pos: BTreeMap<ReplicaId, usize> = ids.iter().enumerate().map(|(k, r)| (*r, k)).collect();
        let names: BTreeMap<&RegisterId, usize> = ids
            .iter()
            .flat_map(|r| g.registers(*r))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(k, x)| (x, k))
            .collect();
        let regs = ids
            .iter()
            .map(|r| {
                let mut b = BitSet::new(names.len());
                for x in g.registers(*r) {
                    b.insert(names[x]);
                }
                b
            })
            .collect();
        let mut adj = vec![Vec::new(); ids.len()];
        let mut base_edges = BTreeSet::new();
        for e in g.edges() {
            adj[pos[&e.from]].push(pos[&e.to]);
            base_edges.insert((pos[&e.from], pos[&e.to]));
        }
        Dense {
            ids,
            pos,
            regs,
            nregs: names.len(),
            adj,
            co: None,
            base_edges,
        }
    }

    fn augmented(ag: &AugmentedShareGraph) -> Self {
        let mut d = Dense::new(&ag.base);
        let n = d.ids.len();
        let mut co = vec![vec![false; n]; n];
        d.adj = vec![Vec::new(); n];
        for e in &ag.all_edges {
            let (a, b) = (d.pos[&e.from], d.pos[&e.to]);
            d.adj[a].push(b);
            co[a][b] = ag.co_assigned(e.from, e.to);
        }
        d.co = Some(co);
        d
    }

    fn edge(&self, a: usize, b: usize) -> DirectedEdge {
        DirectedEdge {
            from: self.ids[a],
            to: self.ids[b],
        }
    }

    /// `X_ab − minus ≠ ∅`, or `a, b` share a client in augmented mode.
    fn hop_ok(&self, a: usize, b: usize, minus: &BitSet) -> bool {
        self.regs[a].meet_outside(&self.regs[b], minus)
            || self.co.as_ref().is_some_and(|co| co[a][b])
    }

    /// Tests the three loop conditions for the cycle `i, v_1..v_n` split
    /// after `v_s` (1-based `s`), i.e. edge `e_{v_{s+1} v_s}`.
    fn split_ok(&self, i: usize, v: &[usize], s: usize, prefix: &[BitSet]) -> bool {
        let n = v.len();
        let next = |q: usize| if q < n { v[q] } else { i };
        let (j, k) = (v[s], v[s - 1]);
        // (i)
        if !self.regs[j].meet_outside(&self.regs[k], &prefix[s - 1]) {
            return false;
        }
        // (ii): r_2 is v_{s+2}, or i when t = 1
        if !self.hop_ok(j, next(s + 1), &prefix[s - 1]) {
            return false;
        }
        // (iii): r_q = v_{s+q} for 2 ≤ q ≤ t
        (s + 2..=n).all(|q| self.hop_ok(v[q - 1], next(q), &prefix[s]))
    }

    fn prefix_unions(&self, v: &[usize]) -> Vec<BitSet> {
        let mut cur = BitSet::new(self.nregs);
        let mut out = vec![cur.clone()];
        for &x in v {
            cur.union_with(&self.regs[x]);
            out.push(cur.clone());
        }
        out
    }

    /// Depth-first search over simple cycles through `i`, recording the first
    /// witness found for each edge in `targets`.
    fn search(
        &self,
        i: usize,
        targets: &BTreeSet<(usize, usize)>,
        opts: LoopSearch,
    ) -> BTreeMap<(usize, usize), Vec<usize>> {
        struct St<'a> {
            d: &'a Dense,
            i: usize,
            targets: &'a BTreeSet<(usize, usize)>,
            cap: usize,
            path: Vec<usize>,
            on_path: Vec<bool>,
            found: BTreeMap<(usize, usize), (Vec<usize>, usize)>,
        }
        fn dfs(st: &mut St, v: usize) {
            if st.found.len() == st.targets.len() {
                return;
            }
            let d = st.d;
            for &w in &d.adj[v] {
                if w == st.i {
                    if st.path.len() >= 2 {
                        close(st);
                    }
                } else if !st.on_path[w] && st.path.len() + 1 < st.cap {
                    st.on_path[w] = true;
                    st.path.push(w);
                    dfs(st, w);
                    st.path.pop();
                    st.on_path[w] = false;
                }
            }
        }
        fn close(st: &mut St) {
            let v = &st.path;
            let mut prefix: Option<Vec<BitSet>> = None;
            for s in 1..v.len() {
                let key = (v[s], v[s - 1]);
                if !st.targets.contains(&key) || st.found.contains_key(&key) {
                    continue;
                }
                let prefix = prefix.get_or_insert_with(|| st.d.prefix_unions(v));
                if st.d.split_ok(st.i, v, s, prefix) {
                    st.found.insert(key, (v.clone(), s));
                }
            }
        }
        let n = self.ids.len();
        let mut st = St {
            d: self,
            i,
            targets,
            cap: opts.max_len.unwrap_or(usize::MAX),
            path: Vec::new(),
            on_path: vec![false; n],
            found: BTreeMap::new(),
        };
        st.on_path[i] = true;
        if !targets.is_empty() {
            dfs(&mut st, i);
        }
        st.found
            .into_iter()
            .map(|(k, (mut v, s))| {
                v.insert(0, s);
                (k, v)
            })
            .collect()
    }

    fn timestamp_graph(&self, owner: ReplicaId, opts: LoopSearch) -> Result<TimestampGraph, AnalysisError> {
        let i = *self.pos.get(&owner).ok_or(AnalysisError::UnknownReplica(owner))?;
        let mut edges = BTreeSet::new();
        let mut targets = BTreeSet::new();
        for &(a, b) in &self.base_edges {
            if a == i || b == i {
                edges.insert(self.edge(a, b));
            } else {
                targets.insert((a, b));
            }
        }
        let mut witnesses = BTreeMap::new();
        for ((a, b), sv) in self.search(i, &targets, opts) {
            let (s, v) = (sv[0], &sv[1..]);
            let e = self.edge(a, b);
            edges.insert(e);
            witnesses.insert(
                e,
                SimpleLoop {
                    pivot: owner,
                    l_path: v[..s].iter().map(|&x| self.ids[x]).collect(),
                    r_path: v[s..].iter().map(|&x| self.ids[x]).collect(),
                },
            );
        }
        let vertices = edges.iter().flat_map(|e| [e.from, e.to]).collect();
        Ok(TimestampGraph {
            owner,
            edges,
            vertices,
            witnesses,
        })
    }

    fn check_loop(&self, c: &SimpleLoop, edge: DirectedEdge) -> Result<(usize, Vec<usize>, usize), AnalysisError> {
        let bad = |m: String| Err(AnalysisError::NotASimpleLoop(m));
        if c.l_path.is_empty() || c.r_path.is_empty() {
            return bad("both sides must be non-empty".into());
        }
        if c.edge() != edge {
            return bad(format!("loop closes {} not {}", c.edge(), edge));
        }
        let verts = c.vertices();
        let mut idx = Vec::with_capacity(verts.len());
        for r in &verts {
            match self.pos.get(r) {
                Some(&p) => idx.push(p),
                None => return Err(AnalysisError::UnknownReplica(*r)),
            }
        }
        if idx.iter().collect::<BTreeSet<_>>().len() != idx.len() {
            return bad("repeated vertex".into());
        }
        for w in 0..idx.len() {
            let (a, b) = (idx[w], idx[(w + 1) % idx.len()]);
            if !self.adj[a].contains(&b) {
                return bad(format!("{} and {} are not adjacent", self.ids[a], self.ids[b]));
            }
        }
        Ok((idx[0], idx[1..].to_vec(), c.l_path.len()))
    }
}

/// True iff `candidate` is a loop witnessing `edge` for its pivot.
pub fn is_loop(graph: &ShareGraph, candidate: &SimpleLoop, edge: DirectedEdge) -> Result<bool, AnalysisError> {
    let d = Dense::new(graph);
    let (i, v, s) = d.check_loop(candidate, edge)?;
    Ok(d.split_ok(i, &v, s, &d.prefix_unions(&v)))
}

/// As [`is_loop`] over the augmented graph, where a hop also passes the
/// second and third conditions when both ends share a client.
pub fn augmented_is_loop(
    ag: &AugmentedShareGraph,
    candidate: &SimpleLoop,
    edge: DirectedEdge,
) -> Result<bool, AnalysisError> {
    let d = Dense::augmented(ag);
    let (i, v, s) = d.check_loop(candidate, edge)?;
    Ok(d.split_ok(i, &v, s, &d.prefix_unions(&v)))
}

pub fn timestamp_graph(graph: &ShareGraph, i: ReplicaId) -> Result<TimestampGraph, AnalysisError> {
    timestamp_graph_with(graph, i, LoopSearch::default())
}

pub fn timestamp_graph_with(
    graph: &ShareGraph,
    i: ReplicaId,
    opts: LoopSearch,
) -> Result<TimestampGraph, AnalysisError> {
    Dense::new(graph).timestamp_graph(i, opts)
}

/// `Ê_i`: loops may use client-only hops, but only share-graph edges are kept.
pub fn augmented_timestamp_graph(
    ag: &AugmentedShareGraph,
    i: ReplicaId,
) -> Result<TimestampGraph, AnalysisError> {
    Dense::augmented(ag).timestamp_graph(i, LoopSearch::default())
}

/// Timestamp graphs of every replica, computed in parallel.
pub fn all_timestamp_graphs(graph: &ShareGraph) -> BTreeMap<ReplicaId, TimestampGraph> {
    let d = Dense::new(graph);
    d.ids
        .par_iter()
        .map(|&r| (r, d.timestamp_graph(r, LoopSearch::default()).expect("known replica")))
        .collect()
}

pub fn all_augmented_timestamp_graphs(ag: &AugmentedShareGraph) -> BTreeMap<ReplicaId, TimestampGraph> {
    let d = Dense::augmented(ag);
    d.ids
        .par_iter()
        .map(|&r| (r, d.timestamp_graph(r, LoopSearch::default()).expect("known replica")))
        .collect()
}

/// Path `r_0..r_k` between two holders of `register` through non-holders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Hoop {
    pub register: RegisterId,
    pub path: Vec<ReplicaId>,
    /// Smallest usable label on each hop.
    pub edge_labels: Vec<RegisterId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HoopVariant {
    /// Labels distinct and none stored by both endpoints.
    Original,
    /// Labels distinct and none stored by more than two hoop replicas.
    Modified,
}

/// Every x-hoop with at least one interior replica, each endpoint pair
/// reported once from its lower endpoint. `max_len` bounds the number of
/// replicas on the path; `None` means `|V|`.
pub fn find_hoops(
    graph: &ShareGraph,
    x: &RegisterId,
    max_len: Option<usize>,
) -> Result<Vec<Hoop>, AnalysisError> {
    let holders: BTreeSet<ReplicaId> = graph
        .vertices()
        .filter(|r| graph.registers(*r).contains(x))
        .collect();
    if holders.is_empty() {
        return Err(AnalysisError::UnknownRegister(x.clone()));
    }
    let cap = max_len.unwrap_or(graph.vertex_count());
    let label = |a: ReplicaId, b: ReplicaId| {
        graph
            .edge_registers(DirectedEdge { from: a, to: b })
            .and_then(|regs| regs.iter().find(|y| *y != x))
            .cloned()
    };
    let mut out = Vec::new();
    for &start in &holders {
        let mut path = vec![start];
        hoop_dfs(graph, &holders, start, cap, &label, &mut path, &mut |p| {
            out.push(Hoop {
                register: x.clone(),
                path: p.to_vec(),
                edge_labels: p.windows(2).map(|w| label(w[0], w[1]).expect("hop has a label")).collect(),
            })
        });
    }
    Ok(out)
}

fn hoop_dfs(
    graph: &ShareGraph,
    holders: &BTreeSet<ReplicaId>,
    start: ReplicaId,
    cap: usize,
    label: &dyn Fn(ReplicaId, ReplicaId) -> Option<RegisterId>,
    path: &mut Vec<ReplicaId>,
    emit: &mut dyn FnMut(&[ReplicaId]),
) {
    let v = *path.last().unwrap();
    for w in graph.neighbors(v) {
        if path.contains(&w) || path.len() + 1 > cap || label(v, w).is_none() {
            continue;
        }
        path.push(w);
        if holders.contains(&w) {
            if w > start && path.len() >= 3 {
                emit(path);
            }
        } else {
            hoop_dfs(graph, holders, start, cap, label, path, emit);
        }
        path.pop();
    }
}

/// Whether some assignment of distinct labels to the hops meets the
/// variant's extra restriction.
pub fn is_minimal_hoop(graph: &ShareGraph, hoop: &Hoop, variant: HoopVariant) -> bool {
    let (a, b) = (hoop.path[0], *hoop.path.last().unwrap());
    let on_hoop: BTreeSet<ReplicaId> = hoop.path.iter().copied().collect();
    let allowed = |y: &RegisterId| match variant {
        HoopVariant::Original => !(graph.registers(a).contains(y) && graph.registers(b).contains(y)),
        HoopVariant::Modified => {
            on_hoop.iter().filter(|r| graph.registers(**r).contains(y)).count() <= 2
        }
    };
    let choices: Vec<Vec<&RegisterId>> = hoop
        .path
        .windows(2)
        .map(|w| {
            graph
                .edge_registers(DirectedEdge { from: w[0], to: w[1] })
                .into_iter()
                .flatten()
                .filter(|y| **y != hoop.register && allowed(y))
                .collect()
        })
        .collect();
    distinct_labelling(&choices, &mut Vec::new())
}

fn distinct_labelling<'a>(choices: &[Vec<&'a RegisterId>], used: &mut Vec<&'a RegisterId>) -> bool {
    let Some((first, rest)) = choices.split_first() else {
        return true;
    };
    for y in first {
        if !used.contains(y) {
            used.push(y);
            if distinct_labelling(rest, used) {
                return true;
            }
            used.pop();
        }
    }
    false
}

/// Membership of one non-incident edge in the three tracking rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComparisonRow {
    pub replica: ReplicaId,
    pub edge: DirectedEdge,
    pub timestamp_graph: bool,
    pub minimal_hoop: bool,
    pub modified_hoop: bool,
    pub disagreement: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    pub fn row(&self, replica: u32, edge: DirectedEdge) -> Option<&ComparisonRow> {
        self.rows
            .iter()
            .find(|r| r.replica == ReplicaId(replica) && r.edge == edge)
    }

    pub fn disagreements(&self) -> impl Iterator<Item = &ComparisonRow> {
        self.rows.iter().filter(|r| r.disagreement)
    }
}

/// For every replica `i` and non-incident edge `e_jk`, compares `e_jk ∈ E_i`
/// against the hoop rules: `i` tracks `e_jk` when it stores some
/// `x ∈ X_jk` or lies inside a minimal x-hoop between `j` and `k`.
pub fn compare_conditions(graph: &ShareGraph) -> ComparisonReport {
    let tsgs = all_timestamp_graphs(graph);
    // (x, {j,k}) -> replicas interior to a minimal hoop, per variant
    let mut interior: BTreeMap<(RegisterId, ReplicaId, ReplicaId), [BTreeSet<ReplicaId>; 2]> = BTreeMap::new();
    let registers: BTreeSet<RegisterId> = graph
        .vertices()
        .flat_map(|r| graph.registers(r).iter().cloned())
        .collect();
    for x in &registers {
        for h in find_hoops(graph, x, None).expect("register is stored") {
            let (a, b) = (h.path[0], *h.path.last().unwrap());
            let entry = interior.entry((x.clone(), a, b)).or_default();
            let inner = &h.path[1..h.path.len() - 1];
            if is_minimal_hoop(graph, &h, HoopVariant::Original) {
                entry[0].extend(inner);
            }
            if is_minimal_hoop(graph, &h, HoopVariant::Modified) {
                entry[1].extend(inner);
            }
        }
    }
    let mut rows = Vec::new();
    for (&i, tsg) in &tsgs {
        for e in graph.edges().filter(|e| !e.touches(i)) {
            let (a, b) = (e.from.min(e.to), e.from.max(e.to));
            let shared = graph.edge_registers(e).expect("edge in E");
            let rule = |variant: usize| {
                shared.iter().any(|x| {
                    graph.registers(i).contains(x)
                        || interior
                            .get(&(x.clone(), a, b))
                            .is_some_and(|s| s[variant].contains(&i))
                })
            };
            let (ts, orig, modi) = (tsg.contains(e), rule(0), rule(1));
            rows.push(ComparisonRow {
                replica: i,
                edge: e,
                timestamp_graph: ts,
                minimal_hoop: orig,
                modified_hoop: modi,
                disagreement: ts != orig || ts != modi,
            });
        }
    }
    ComparisonReport { rows }
}
