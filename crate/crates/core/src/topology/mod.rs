//! Register placement and the share graphs derived from it.
//!
//! A [`Topology`] records which registers each replica stores (including
//! metadata-only dummy copies) and, for the client-server model, which
//! replicas each client may contact. From it we build the [`ShareGraph`]
//! (replicas joined whenever they store a common register) and the
//! [`AugmentedShareGraph`] (additionally joining replicas that share a client).

mod config;
pub mod gen;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{load_topology, parse_topology};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("replica {replica} already stores a real copy of register {register}")]
    DummyConflict {
        replica: ReplicaId,
        register: RegisterId,
    },
    #[error("unknown replica {0}")]
    UnknownReplica(ReplicaId),
    #[error("unknown register {0}")]
    UnknownRegister(RegisterId),
    #[error("topology config: {0}")]
    Config(String),
}

/// Name of a shared register.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegisterId(String);

impl RegisterId {
    pub fn new(name: impl Into<String>) -> Self {
        RegisterId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for RegisterId {
    fn from(s: &str) -> Self {
        RegisterId(s.to_owned())
    }
}

impl fmt::Display for RegisterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Replica index, `1..=R`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ReplicaId(pub u32);

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Client index, `1..=C`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ClientId(pub u32);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// Directed edge `e_{from,to}`. Ordered by `(from, to)`, which is the
/// canonical order every replica uses to index its timestamp.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(into = "(u32, u32)", try_from = "(u32, u32)")]
pub struct DirectedEdge {
    pub from: ReplicaId,
    pub to: ReplicaId,
}

impl DirectedEdge {
    pub fn new(from: u32, to: u32) -> Self {
        DirectedEdge {
            from: ReplicaId(from),
            to: ReplicaId(to),
        }
    }

    pub fn reversed(self) -> Self {
        DirectedEdge {
            from: self.to,
            to: self.from,
        }
    }

    pub fn touches(self, r: ReplicaId) -> bool {
        self.from == r || self.to == r
    }
}

impl From<DirectedEdge> for (u32, u32) {
    fn from(e: DirectedEdge) -> Self {
        (e.from.0, e.to.0)
    }
}

impl TryFrom<(u32, u32)> for DirectedEdge {
    type Error = String;

    fn try_from((from, to): (u32, u32)) -> Result<Self, Self::Error> {
        if from == to {
            return Err(format!("self-loop edge [{from},{to}]"));
        }
        Ok(DirectedEdge::new(from, to))
    }
}

impl fmt::Display for DirectedEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}{}", self.from, self.to)
    }
}

/// Register placement over replicas and replica access sets of clients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    replica_registers: BTreeMap<ReplicaId, BTreeSet<RegisterId>>,
    client_replicas: BTreeMap<ClientId, BTreeSet<ReplicaId>>,
    dummy_marks: BTreeSet<(ReplicaId, RegisterId)>,
}

impl Topology {
    /// Builds and validates a topology. `replica_registers` must hold every
    /// copy, dummies included; `dummy_marks` flags which of those are dummy.
    pub fn new(
        replica_registers: BTreeMap<ReplicaId, BTreeSet<RegisterId>>,
        client_replicas: BTreeMap<ClientId, BTreeSet<ReplicaId>>,
        dummy_marks: BTreeSet<(ReplicaId, RegisterId)>,
    ) -> Result<Self, TopologyError> {
        let t = Topology {
            replica_registers,
            client_replicas,
            dummy_marks,
        };
        t.validate()?;
        Ok(t)
    }

    /// Peer-to-peer topology where replica `k+1` stores `sets[k]`.
    pub fn from_sets<S: AsRef<str>>(sets: &[&[S]]) -> Result<Self, TopologyError> {
        let replica_registers = sets
            .iter()
            .enumerate()
            .map(|(k, regs)| {
                (
                    ReplicaId(k as u32 + 1),
                    regs.iter().map(|r| RegisterId::new(r.as_ref())).collect(),
                )
            })
            .collect();
        Topology::new(replica_registers, BTreeMap::new(), BTreeSet::new())
    }

    /// Same topology with client `k+1` assigned to `clients[k]`.
    pub fn with_clients(self, clients: &[&[u32]]) -> Result<Self, TopologyError> {
        let client_replicas = clients
            .iter()
            .enumerate()
            .map(|(k, rs)| {
                (
                    ClientId(k as u32 + 1),
                    rs.iter().map(|&r| ReplicaId(r)).collect(),
                )
            })
            .collect();
        Topology::new(self.replica_registers, client_replicas, self.dummy_marks)
    }

    fn validate(&self) -> Result<(), TopologyError> {
        let invalid = |m: String| Err(TopologyError::InvalidTopology(m));
        if self.replica_registers.is_empty() {
            return invalid("no replicas".into());
        }
        for (k, r) in self.replica_registers.keys().enumerate() {
            if r.0 != k as u32 + 1 {
                return invalid(format!(
                    "replica ids must be 1..={}, found {}",
                    self.replica_registers.len(),
                    r
                ));
            }
        }
        for (r, regs) in &self.replica_registers {
            if regs.iter().any(|x| x.as_str().is_empty()) {
                return invalid(format!("replica {r} has an empty register name"));
            }
        }
        for (k, (c, rs)) in self.client_replicas.iter().enumerate() {
            if c.0 != k as u32 + 1 {
                return invalid(format!(
                    "client ids must be 1..={}, found {}",
                    self.client_replicas.len(),
                    c.0
                ));
            }
            if rs.is_empty() {
                return invalid(format!("client {} has no replicas", c.0));
            }
            if let Some(r) = rs.iter().find(|r| !self.replica_registers.contains_key(r)) {
                return Err(TopologyError::UnknownReplica(*r));
            }
        }
        for (r, x) in &self.dummy_marks {
            match self.replica_registers.get(r) {
                None => return Err(TopologyError::UnknownReplica(*r)),
                Some(regs) if !regs.contains(x) => {
                    return invalid(format!("dummy copy ({r}, {x}) is not in X_{r}"))
                }
                _ => {}
            }
            if !self.real_holders(x).any(|_| true) {
                return invalid(format!("register {x} has dummy copies but no real copy"));
            }
        }
        Ok(())
    }

    pub fn replica_count(&self) -> usize {
        self.replica_registers.len()
    }

    pub fn replicas(&self) -> impl Iterator<Item = ReplicaId> + '_ {
        self.replica_registers.keys().copied()
    }

    pub fn contains_replica(&self, r: ReplicaId) -> bool {
        self.replica_registers.contains_key(&r)
    }

    /// `X_r`, including dummy copies.
    pub fn registers(&self, r: ReplicaId) -> Option<&BTreeSet<RegisterId>> {
        self.replica_registers.get(&r)
    }

    pub fn replica_registers(&self) -> &BTreeMap<ReplicaId, BTreeSet<RegisterId>> {
        &self.replica_registers
    }

    pub fn stores(&self, r: ReplicaId, x: &RegisterId) -> bool {
        self.replica_registers
            .get(&r)
            .is_some_and(|regs| regs.contains(x))
    }

    pub fn is_dummy(&self, r: ReplicaId, x: &RegisterId) -> bool {
        self.dummy_marks.contains(&(r, x.clone()))
    }

    /// Stored and not a dummy: clients may read and write it here.
    pub fn stores_real(&self, r: ReplicaId, x: &RegisterId) -> bool {
        self.stores(r, x) && !self.is_dummy(r, x)
    }

    pub fn dummy_marks(&self) -> &BTreeSet<(ReplicaId, RegisterId)> {
        &self.dummy_marks
    }

    pub fn all_registers(&self) -> BTreeSet<RegisterId> {
        self.replica_registers.values().flatten().cloned().collect()
    }

    /// `C(x)`: every replica holding a copy (dummy or real) of `x`.
    pub fn holders<'a>(&'a self, x: &'a RegisterId) -> impl Iterator<Item = ReplicaId> + 'a {
        self.replica_registers
            .iter()
            .filter(move |(_, regs)| regs.contains(x))
            .map(|(r, _)| *r)
    }

    fn real_holders<'a>(&'a self, x: &'a RegisterId) -> impl Iterator<Item = ReplicaId> + 'a {
        self.holders(x).filter(move |r| !self.is_dummy(*r, x))
    }

    pub fn has_clients(&self) -> bool {
        !self.client_replicas.is_empty()
    }

    pub fn clients(&self) -> impl Iterator<Item = ClientId> + '_ {
        self.client_replicas.keys().copied()
    }

    /// `R_c`.
    pub fn client_replicas(&self, c: ClientId) -> Option<&BTreeSet<ReplicaId>> {
        self.client_replicas.get(&c)
    }

    pub fn client_map(&self) -> &BTreeMap<ClientId, BTreeSet<ReplicaId>> {
        &self.client_replicas
    }

    /// Drops all client assignments.
    pub fn without_clients(&self) -> Topology {
        Topology {
            client_replicas: BTreeMap::new(),
            ..self.clone()
        }
    }
}

/// Share graph: `e_ij, e_ji ∈ E` iff `X_i ∩ X_j ≠ ∅`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareGraph {
    vertices: BTreeSet<ReplicaId>,
    edge_registers: BTreeMap<DirectedEdge, BTreeSet<RegisterId>>,
    replica_registers: BTreeMap<ReplicaId, BTreeSet<RegisterId>>,
}

impl ShareGraph {
    pub fn vertices(&self) -> impl Iterator<Item = ReplicaId> + '_ {
        self.vertices.iter().copied()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn contains_vertex(&self, r: ReplicaId) -> bool {
        self.vertices.contains(&r)
    }

    /// Directed edges in canonical `(from, to)` order.
    pub fn edges(&self) -> impl Iterator<Item = DirectedEdge> + '_ {
        self.edge_registers.keys().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_registers.len()
    }

    pub fn contains_edge(&self, e: DirectedEdge) -> bool {
        self.edge_registers.contains_key(&e)
    }

    /// `X_e`; `None` when `e ∉ E`.
    pub fn edge_registers(&self, e: DirectedEdge) -> Option<&BTreeSet<RegisterId>> {
        self.edge_registers.get(&e)
    }

    /// `X_r`.
    pub fn registers(&self, r: ReplicaId) -> &BTreeSet<RegisterId> {
        static EMPTY: BTreeSet<RegisterId> = BTreeSet::new();
        self.replica_registers.get(&r).unwrap_or(&EMPTY)
    }

    pub fn neighbors(&self, r: ReplicaId) -> impl Iterator<Item = ReplicaId> + '_ {
        self.edge_registers
            .range(DirectedEdge { from: r, to: ReplicaId(0) }..)
            .take_while(move |(e, _)| e.from == r)
            .map(|(e, _)| e.to)
    }

    pub fn degree(&self, r: ReplicaId) -> usize {
        self.neighbors(r).count()
    }

    /// Every edge with `x ∈ X_e`.
    pub fn edges_carrying<'a>(
        &'a self,
        x: &'a RegisterId,
    ) -> impl Iterator<Item = DirectedEdge> + 'a {
        self.edge_registers
            .iter()
            .filter(move |(_, regs)| regs.contains(x))
            .map(|(e, _)| *e)
    }
}

/// Builds `G = (V, E)` with `X_ij = X_i ∩ X_j` on every edge.
pub fn build_share_graph(topology: &Topology) -> ShareGraph {
    let vertices: BTreeSet<ReplicaId> = topology.replicas().collect();
    let mut edge_registers = BTreeMap::new();
    for (i, xi) in &topology.replica_registers {
        for (j, xj) in &topology.replica_registers {
            if i == j {
                continue;
            }
            let shared: BTreeSet<RegisterId> = xi.intersection(xj).cloned().collect();
            if !shared.is_empty() {
                edge_registers.insert(DirectedEdge { from: *i, to: *j }, shared);
            }
        }
    }
    ShareGraph {
        vertices,
        edge_registers,
        replica_registers: topology.replica_registers.clone(),
    }
}

/// `Ĝ`: the share graph plus both directions between any two replicas that
/// a common client may access.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedShareGraph {
    pub base: ShareGraph,
    /// `Ê − E`.
    pub extra_edges: BTreeSet<DirectedEdge>,
    /// `Ê`.
    pub all_edges: BTreeSet<DirectedEdge>,
    client_edges: BTreeSet<DirectedEdge>,
}

impl AugmentedShareGraph {
    /// True when some client may access both `a` and `b`.
    pub fn co_assigned(&self, a: ReplicaId, b: ReplicaId) -> bool {
        self.client_edges.contains(&DirectedEdge { from: a, to: b })
    }

    pub fn contains_edge(&self, e: DirectedEdge) -> bool {
        self.all_edges.contains(&e)
    }

    pub fn neighbors(&self, r: ReplicaId) -> impl Iterator<Item = ReplicaId> + '_ {
        self.all_edges
            .range(DirectedEdge { from: r, to: ReplicaId(0) }..)
            .take_while(move |e| e.from == r)
            .map(|e| e.to)
    }
}

pub fn build_augmented_share_graph(topology: &Topology) -> AugmentedShareGraph {
    let base = build_share_graph(topology);
    let mut client_edges = BTreeSet::new();
    for rs in topology.client_replicas.values() {
        for &a in rs {
            for &b in rs {
                if a != b {
                    client_edges.insert(DirectedEdge { from: a, to: b });
                }
            }
        }
    }
    let extra_edges: BTreeSet<DirectedEdge> = client_edges
        .iter()
        .filter(|e| !base.contains_edge(**e))
        .copied()
        .collect();
    let all_edges = base.edges().chain(extra_edges.iter().copied()).collect();
    AugmentedShareGraph {
        base,
        extra_edges,
        all_edges,
        client_edges,
    }
}

/// Adds metadata-only copies of registers. Each register must already have a
/// real copy somewhere and the target replica must not already store it.
pub fn apply_dummies(
    topology: &Topology,
    dummies: &BTreeSet<(ReplicaId, RegisterId)>,
) -> Result<Topology, TopologyError> {
    let all = topology.all_registers();
    let mut out = topology.clone();
    for (r, x) in dummies {
        if !all.contains(x) {
            return Err(TopologyError::UnknownRegister(x.clone()));
        }
        let regs = out
            .replica_registers
            .get_mut(r)
            .ok_or(TopologyError::UnknownReplica(*r))?;
        if regs.contains(x) && !topology.is_dummy(*r, x) {
            return Err(TopologyError::DummyConflict {
                replica: *r,
                register: x.clone(),
            });
        }
        regs.insert(x.clone());
        out.dummy_marks.insert((*r, x.clone()));
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn regs(names: &[&str]) -> BTreeSet<RegisterId> {
        names.iter().map(|n| RegisterId::from(*n)).collect()
    }

    fn path4() -> Topology {
        gen::fixtures::path4()
    }

    fn diamond() -> Topology {
        gen::fixtures::diamond()
    }

    fn undirected(g: &ShareGraph) -> Vec<(u32, u32)> {
        g.edges()
            .filter(|e| e.from < e.to)
            .map(|e| (e.from.0, e.to.0))
            .collect()
    }

    #[test]
    fn path_share_graph() {
        let g = build_share_graph(&path4());
        assert_eq!(undirected(&g), vec![(1, 2), (2, 3), (3, 4)]);
        assert_eq!(g.edge_count(), 6);
        assert_eq!(g.edge_registers(DirectedEdge::new(2, 3)), Some(&regs(&["y"])));
        assert_eq!(g.edge_registers(DirectedEdge::new(1, 4)), None);
    }

    #[test]
    fn single_replica_has_no_edges() {
        let g = build_share_graph(&Topology::from_sets(&[&["x"]]).unwrap());
        assert_eq!(g.vertex_count(), 1);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn diamond_share_graph() {
        let g = build_share_graph(&diamond());
        assert_eq!(undirected(&g), vec![(1, 2), (1, 4), (2, 3), (2, 4), (3, 4)]);
        assert_eq!(g.edge_registers(DirectedEdge::new(3, 4)), Some(&regs(&["z"])));
        assert_eq!(g.edge_registers(DirectedEdge::new(1, 4)), Some(&regs(&["w", "y"])));
        assert_eq!(g.edge_registers(DirectedEdge::new(2, 3)), Some(&regs(&["x"])));
    }

    #[test]
    fn neighbors_in_order() {
        let g = build_share_graph(&diamond());
        let n: Vec<u32> = g.neighbors(ReplicaId(2)).map(|r| r.0).collect();
        assert_eq!(n, vec![1, 3, 4]);
    }

    #[test]
    fn augmented_adds_client_edges() {
        let t = Topology::from_sets(&[&["x"], &["y"]])
            .unwrap()
            .with_clients(&[&[1, 2]])
            .unwrap();
        let ag = build_augmented_share_graph(&t);
        assert_eq!(ag.base.edge_count(), 0);
        let all: Vec<_> = ag.all_edges.iter().copied().collect();
        assert_eq!(all, vec![DirectedEdge::new(1, 2), DirectedEdge::new(2, 1)]);
        assert_eq!(ag.extra_edges.len(), 2);
    }

    #[test]
    fn augmented_without_clients_is_base() {
        let ag = build_augmented_share_graph(&diamond());
        assert!(ag.extra_edges.is_empty());
        assert!(ag.all_edges.iter().copied().eq(ag.base.edges()));
    }

    #[test]
    fn augmented_client_clique() {
        let t = Topology::from_sets(&[&["x"], &["y"], &["z"]])
            .unwrap()
            .with_clients(&[&[1, 2, 3]])
            .unwrap();
        assert_eq!(build_augmented_share_graph(&t).all_edges.len(), 6);
    }

    #[test]
    fn client_with_unknown_replica_rejected() {
        let err = Topology::from_sets(&[&["x"]])
            .unwrap()
            .with_clients(&[&[1, 3]])
            .unwrap_err();
        assert_eq!(err, TopologyError::UnknownReplica(ReplicaId(3)));
    }

    #[test]
    fn empty_client_set_rejected() {
        assert!(Topology::from_sets(&[&["x"]])
            .unwrap()
            .with_clients(&[&[]])
            .is_err());
    }

    #[test]
    fn full_dummies_make_identical_clique() {
        let t = &path4();
        let dummies: BTreeSet<_> = t
            .replicas()
            .flat_map(|r| {
                t.all_registers()
                    .into_iter()
                    .filter(move |x| !t.stores(r, x))
                    .map(move |x| (r, x))
            })
            .collect();
        let d = apply_dummies(t, &dummies).unwrap();
        let g = build_share_graph(&d);
        assert_eq!(g.edge_count(), 12);
        let all = regs(&["x", "y", "z"]);
        assert!(g.edges().all(|e| g.edge_registers(e) == Some(&all)));
        assert!(d.is_dummy(ReplicaId(1), &"y".into()));
        assert!(!d.stores_real(ReplicaId(1), &"y".into()));
    }

    #[test]
    fn empty_dummy_set_is_identity() {
        assert_eq!(apply_dummies(&path4(), &BTreeSet::new()).unwrap(), path4());
    }

    #[test]
    fn dummy_z_at_replica_1_adds_edges() {
        let d = apply_dummies(&path4(), &[(ReplicaId(1), "z".into())].into()).unwrap();
        let g = build_share_graph(&d);
        assert_eq!(undirected(&g), vec![(1, 2), (1, 3), (1, 4), (2, 3), (3, 4)]);
    }

    #[test]
    fn dummy_conflicts_with_real_copy() {
        let err = apply_dummies(&path4(), &[(ReplicaId(2), "x".into())].into()).unwrap_err();
        assert!(matches!(err, TopologyError::DummyConflict { .. }));
        let err = apply_dummies(&path4(), &[(ReplicaId(2), "q".into())].into()).unwrap_err();
        assert_eq!(err, TopologyError::UnknownRegister("q".into()));
    }

    #[test]
    fn ids_must_be_contiguous() {
        let mut m = BTreeMap::new();
        m.insert(ReplicaId(1), regs(&["x"]));
        m.insert(ReplicaId(3), regs(&["x"]));
        assert!(Topology::new(m, BTreeMap::new(), BTreeSet::new()).is_err());
    }

    #[test]
    fn edge_serializes_as_pair() {
        let s = serde_json::to_string(&DirectedEdge::new(4, 3)).unwrap();
        assert_eq!(s, "[4,3]");
        assert!(serde_json::from_str::<DirectedEdge>("[2,2]").is_err());
    }
}
