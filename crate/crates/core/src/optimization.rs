//! Timestamp compression analysis and dummy-register planning.
//!
//! The counter on e_jk counts updates by j on registers in X_jk, so it is
//! the 0/1 incidence vector of X_jk applied to per-register counts. Edges
//! whose vectors are dependent on others can be reconstructed exactly.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Rational64;
use serde::{Serialize, Serializer};

use crate::graph_analysis::TimestampGraph;
use crate::topology::{DirectedEdge, RegisterId, ReplicaId, ShareGraph, Topology};

/// A linear combination of basis edge counters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Combination(pub Vec<(DirectedEdge, Rational64)>);

impl Serialize for Combination {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let terms: Vec<(DirectedEdge, String)> = self.0.iter().map(|(e, c)| (*e, c.to_string())).collect();
        terms.serialize(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SourcePlan {
    /// O_j: edges out of the source present in the owner's timestamp graph.
    pub outgoing: Vec<DirectedEdge>,
    /// I_j: the retained counters.
    pub basis: Vec<DirectedEdge>,
    /// How each dropped counter is recomputed from the basis.
    pub reconstruction: BTreeMap<DirectedEdge, Combination>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CompressionPlan {
    pub owner: ReplicaId,
    pub per_source: BTreeMap<ReplicaId, SourcePlan>,
    pub edge_count: usize,
    pub compressed_count: usize,
}

fn incidence(graph: &ShareGraph, e: DirectedEdge, regs: &[&RegisterId]) -> Vec<Rational64> {
    let x = graph.edge_registers(e).expect("timestamp graph edges are share graph edges");
    regs.iter()
        .map(|r| Rational64::from_integer(i64::from(x.contains(*r))))
        .collect()
}

/// Coefficients expressing `v` over `basis`, or `None` when `v` is independent.
fn solve(basis: &[Vec<Rational64>], v: &[Rational64]) -> Option<Vec<Rational64>> {
    let rows = v.len();
    let cols = basis.len();
    // augmented matrix, one row per register
    let mut m: Vec<Vec<Rational64>> = (0..rows)
        .map(|r| basis.iter().map(|b| b[r]).chain([v[r]]).collect())
        .collect();
    let zero = Rational64::from_integer(0);
    let mut pivots = Vec::new();
    let mut row = 0;
    for c in 0..cols {
        let Some(p) = (row..rows).find(|&r| m[r][c] != zero) else { continue };
        m.swap(row, p);
        let inv = m[row][c].recip();
        for x in m[row].iter_mut() {
            *x *= inv;
        }
        for r in 0..rows {
            if r != row && m[r][c] != zero {
                let f = m[r][c];
                for k in 0..=cols {
                    let t = m[row][k] * f;
                    m[r][k] -= t;
                }
            }
        }
        pivots.push(c);
        row += 1;
    }
    if m[row..].iter().any(|r| r[cols] != zero) {
        return None;
    }
    let mut coef = vec![zero; cols];
    for (r, &c) in pivots.iter().enumerate() {
        coef[c] = m[r][cols];
    }
    Some(coef)
}

/// Greedy basis per source in canonical edge order.
pub fn compression_plan(graph: &ShareGraph, tsg: &TimestampGraph) -> CompressionPlan {
    let mut by_source: BTreeMap<ReplicaId, Vec<DirectedEdge>> = BTreeMap::new();
    for e in &tsg.edges {
        by_source.entry(e.from).or_default().push(*e);
    }
    let mut per_source = BTreeMap::new();
    for (j, outgoing) in by_source {
        let regs: Vec<&RegisterId> = graph.registers(j).iter().collect();
        let mut basis: Vec<DirectedEdge> = Vec::new();
        let mut vectors: Vec<Vec<Rational64>> = Vec::new();
        let mut dependent = Vec::new();
        for &e in &outgoing {
            let v = incidence(graph, e, &regs);
            if solve(&vectors, &v).is_some() {
                dependent.push((e, v));
            } else {
                basis.push(e);
                vectors.push(v);
            }
        }
        let zero = Rational64::from_integer(0);
        let reconstruction = dependent
            .into_iter()
            .map(|(e, v)| {
                let coef = solve(&vectors, &v).expect("dependent by construction");
                let terms = basis.iter().copied().zip(coef).filter(|(_, c)| *c != zero).collect();
                (e, Combination(terms))
            })
            .collect();
        per_source.insert(
            j,
            SourcePlan {
                outgoing,
                basis,
                reconstruction,
            },
        );
    }
    let compressed_count = per_source.values().map(|p| p.basis.len()).sum();
    CompressionPlan {
        owner: tsg.owner,
        per_source,
        edge_count: tsg.len(),
        compressed_count,
    }
}

impl CompressionPlan {
    /// Recomputes every counter of O_j from the basis counters of source `j`.
    /// Missing basis entries count as zero; a non-integral result is `None`.
    pub fn reconstruct(&self, j: ReplicaId, basis_counts: &BTreeMap<DirectedEdge, u64>) -> Option<BTreeMap<DirectedEdge, u64>> {
        let plan = self.per_source.get(&j)?;
        let mut out = BTreeMap::new();
        for e in &plan.basis {
            out.insert(*e, basis_counts.get(e).copied().unwrap_or(0));
        }
        for (e, comb) in &plan.reconstruction {
            let mut total = Rational64::from_integer(0);
            for (b, c) in &comb.0 {
                let n = i64::try_from(basis_counts.get(b).copied().unwrap_or(0)).ok()?;
                total += *c * Rational64::from_integer(n);
            }
            if !total.is_integer() || total < Rational64::from_integer(0) {
                return None;
            }
            out.insert(*e, u64::try_from(total.to_integer()).ok()?);
        }
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SourceCounts {
    pub source: ReplicaId,
    pub edge_counters: usize,
    pub basis_counters: usize,
    /// Distinct registers labelling the source's edges.
    pub register_counters: usize,
}

/// Counter totals per source under each counting scheme.
pub fn register_level_counts(graph: &ShareGraph, plan: &CompressionPlan) -> Vec<SourceCounts> {
    plan.per_source
        .iter()
        .map(|(j, p)| {
            let regs: BTreeSet<&RegisterId> = p
                .outgoing
                .iter()
                .flat_map(|e| graph.edge_registers(*e).into_iter().flatten())
                .collect();
            SourceCounts {
                source: *j,
                edge_counters: p.outgoing.len(),
                basis_counters: p.basis.len(),
                register_counters: regs.len(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DummyTarget {
    /// A dummy copy of every register a replica lacks.
    Full,
    /// Registers labelling share-graph edges on loops through each replica.
    Selective,
}

/// Dummy copies to add for `target`. Existing dummies are kept as they are.
pub fn dummy_plan(topology: &Topology, target: DummyTarget) -> BTreeSet<(ReplicaId, RegisterId)> {
    let all = topology.all_registers();
    let mut out = BTreeSet::new();
    match target {
        DummyTarget::Full => {
            for r in topology.replicas() {
                for x in &all {
                    if !topology.stores(r, x) {
                        out.insert((r, x.clone()));
                    }
                }
            }
        }
        DummyTarget::Selective => {
            let g = crate::topology::build_share_graph(topology);
            for block in cyclic_blocks(&g) {
                let regs: BTreeSet<&RegisterId> = block
                    .iter()
                    .flat_map(|v| topology.registers(*v).into_iter().flatten())
                    .filter(|x| block.iter().filter(|v| topology.stores(**v, x)).count() >= 2)
                    .collect();
                for &j in &block {
                    for x in &regs {
                        if !topology.stores(j, x) {
                            out.insert((j, (*x).clone()));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Vertex sets of the biconnected components with a cycle, i.e. every set of
/// replicas joined by simple loops.
fn cyclic_blocks(g: &ShareGraph) -> Vec<BTreeSet<ReplicaId>> {
    struct St<'a> {
        g: &'a ShareGraph,
        time: usize,
        disc: BTreeMap<ReplicaId, usize>,
        low: BTreeMap<ReplicaId, usize>,
        stack: Vec<(ReplicaId, ReplicaId)>,
        blocks: Vec<BTreeSet<ReplicaId>>,
    }
    fn visit(st: &mut St<'_>, v: ReplicaId, parent: Option<ReplicaId>) {
        st.time += 1;
        st.disc.insert(v, st.time);
        st.low.insert(v, st.time);
        let nbrs: Vec<ReplicaId> = st.g.neighbors(v).collect();
        for w in nbrs {
            if Some(w) == parent {
                continue;
            }
            if let Some(&dw) = st.disc.get(&w) {
                if dw < st.disc[&v] {
                    st.stack.push((v, w));
                    let l = st.low[&v].min(dw);
                    st.low.insert(v, l);
                }
                continue;
            }
            st.stack.push((v, w));
            visit(st, w, Some(v));
            let l = st.low[&v].min(st.low[&w]);
            st.low.insert(v, l);
            if st.low[&w] >= st.disc[&v] {
                let mut edges = 0;
                let mut block = BTreeSet::new();
                while let Some((a, b)) = st.stack.pop() {
                    edges += 1;
                    block.insert(a);
                    block.insert(b);
                    if (a, b) == (v, w) {
                        break;
                    }
                }
                if edges > 1 {
                    st.blocks.push(block);
                }
            }
        }
    }
    let mut st = St {
        g,
        time: 0,
        disc: BTreeMap::new(),
        low: BTreeMap::new(),
        stack: Vec::new(),
        blocks: Vec::new(),
    };
    let vs: Vec<ReplicaId> = g.vertices().collect();
    for v in vs {
        if !st.disc.contains_key(&v) {
            visit(&mut st, v, None);
        }
    }
    st.blocks.sort();
    st.blocks
}
