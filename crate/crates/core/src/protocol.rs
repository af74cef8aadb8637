//! Peer-to-peer replica state machine over edge-indexed timestamps.
//!
//! Each replica keeps one counter per edge of its timestamp graph. Writing
//! `x` bumps the counters of the outgoing edges that carry `x`; a remote
//! update is applied once it is the next one from its sender and everything
//! it depends on along shared incoming edges has been applied.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::de::{self, Deserializer};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph_analysis::{all_augmented_timestamp_graphs, all_timestamp_graphs};
use crate::topology::{
    build_augmented_share_graph, build_share_graph, ClientId, DirectedEdge, RegisterId, ReplicaId,
    ShareGraph, Topology,
};
use crate::trace::{Event, EventSink};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("replica {replica} does not store {register}")]
    NotStored {
        replica: ReplicaId,
        register: RegisterId,
    },
    #[error("replica {replica} holds only a dummy copy of {register}")]
    DummyAccess {
        replica: ReplicaId,
        register: RegisterId,
    },
    #[error("update {update} on {register} sent to replica {replica}, which does not store it")]
    Misrouted {
        replica: ReplicaId,
        update: UpdateId,
        register: RegisterId,
    },
    #[error("no replica accessible to client {client} stores {register}")]
    NotAccessible {
        client: ClientId,
        register: RegisterId,
    },
    #[error("unknown replica {0}")]
    UnknownReplica(ReplicaId),
    #[error("unknown client {0}")]
    UnknownClient(ClientId),
}

/// Register contents. Opaque to the protocol.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Value(pub String);

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value(s.to_owned())
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// `(issuer, n)`: the issuer's `n`-th update, counting from 1.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(into = "(u32, u64)", from = "(u32, u64)")]
pub struct UpdateId {
    pub issuer: ReplicaId,
    pub seq: u64,
}

impl UpdateId {
    pub fn new(issuer: u32, seq: u64) -> Self {
        UpdateId {
            issuer: ReplicaId(issuer),
            seq,
        }
    }
}

impl From<UpdateId> for (u32, u64) {
    fn from(u: UpdateId) -> Self {
        (u.issuer.0, u.seq)
    }
}

impl From<(u32, u64)> for UpdateId {
    fn from((i, s): (u32, u64)) -> Self {
        UpdateId::new(i, s)
    }
}

impl fmt::Display for UpdateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u{}.{}", self.issuer, self.seq)
    }
}

/// Counters indexed by a sorted edge list shared between snapshots.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EdgeTimestamp {
    index: Arc<[DirectedEdge]>,
    counters: Vec<u64>,
}

impl EdgeTimestamp {
    /// All-zero timestamp. `index` must be sorted and duplicate free.
    pub fn zeros(index: Arc<[DirectedEdge]>) -> Self {
        debug_assert!(index.windows(2).all(|w| w[0] < w[1]));
        let counters = vec![0; index.len()];
        EdgeTimestamp { index, counters }
    }

    pub fn index(&self) -> &Arc<[DirectedEdge]> {
        &self.index
    }

    pub fn counters(&self) -> &[u64] {
        &self.counters
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, e: DirectedEdge) -> bool {
        self.index.binary_search(&e).is_ok()
    }

    pub fn get(&self, e: DirectedEdge) -> Option<u64> {
        self.index.binary_search(&e).ok().map(|k| self.counters[k])
    }

    /// Panics when `e` is not indexed.
    pub fn set(&mut self, e: DirectedEdge, v: u64) {
        let k = self.index.binary_search(&e).expect("edge is indexed");
        self.counters[k] = v;
    }

    pub fn iter(&self) -> impl Iterator<Item = (DirectedEdge, u64)> + '_ {
        self.index.iter().copied().zip(self.counters.iter().copied())
    }

    /// Positions `(k_self, k_other)` of the edges indexed by both.
    pub fn shared_positions<'a>(
        &'a self,
        other: &'a EdgeTimestamp,
    ) -> impl Iterator<Item = (DirectedEdge, usize, usize)> + 'a {
        let (a, b) = (&self.index, &other.index);
        let (mut p, mut q) = (0, 0);
        std::iter::from_fn(move || {
            while p < a.len() && q < b.len() {
                match a[p].cmp(&b[q]) {
                    std::cmp::Ordering::Less => p += 1,
                    std::cmp::Ordering::Greater => q += 1,
                    std::cmp::Ordering::Equal => {
                        let out = (a[p], p, q);
                        p += 1;
                        q += 1;
                        return Some(out);
                    }
                }
            }
            None
        })
    }

    /// Entrywise max over the edges both index; others keep `self`'s value.
    pub fn max_with(&self, other: &EdgeTimestamp) -> EdgeTimestamp {
        let mut out = self.clone();
        for (_, p, q) in self.shared_positions(other) {
            out.counters[p] = out.counters[p].max(other.counters[q]);
        }
        out
    }
}

impl Serialize for EdgeTimestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.len()))?;
        for (e, c) in self.iter() {
            seq.serialize_element(&(e.from.0, e.to.0, c))?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for EdgeTimestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let triples = Vec::<(u32, u32, u64)>::deserialize(d)?;
        let index: Vec<DirectedEdge> = triples
            .iter()
            .map(|&(a, b, _)| DirectedEdge::try_from((a, b)).map_err(de::Error::custom))
            .collect::<Result<_, _>>()?;
        if !index.windows(2).all(|w| w[0] < w[1]) {
            return Err(de::Error::custom("timestamp edges must be strictly increasing"));
        }
        Ok(EdgeTimestamp {
            index: index.into(),
            counters: triples.into_iter().map(|t| t.2).collect(),
        })
    }
}

/// Which edges each replica tracks, plus the placement they derive from.
#[derive(Debug, Clone)]
pub struct Layout {
    topology: Topology,
    graph: ShareGraph,
    index: BTreeMap<ReplicaId, Arc<[DirectedEdge]>>,
}

impl Layout {
    /// Every replica indexes its timestamp graph.
    pub fn peer(topology: &Topology) -> Arc<Layout> {
        let graph = build_share_graph(topology);
        let index = all_timestamp_graphs(&graph)
            .into_iter()
            .map(|(r, t)| (r, t.edges.into_iter().collect()))
            .collect();
        Arc::new(Layout {
            topology: topology.clone(),
            graph,
            index,
        })
    }

    /// Every replica indexes its augmented timestamp graph.
    pub fn client_server(topology: &Topology) -> Arc<Layout> {
        let ag = build_augmented_share_graph(topology);
        let index = all_augmented_timestamp_graphs(&ag)
            .into_iter()
            .map(|(r, t)| (r, t.edges.into_iter().collect()))
            .collect();
        Arc::new(Layout {
            topology: topology.clone(),
            graph: ag.base,
            index,
        })
    }

    /// Explicit per-replica edge sets; replicas not listed track nothing.
    pub fn with_index(
        topology: &Topology,
        index: BTreeMap<ReplicaId, BTreeSet<DirectedEdge>>,
    ) -> Arc<Layout> {
        let index = topology
            .replicas()
            .map(|r| {
                let edges: Vec<DirectedEdge> = index.get(&r).into_iter().flatten().copied().collect();
                (r, edges.into())
            })
            .collect();
        Arc::new(Layout {
            topology: topology.clone(),
            graph: build_share_graph(topology),
            index,
        })
    }

    /// Same layout with `edge` removed from `replica`'s index.
    pub fn without_edge(&self, replica: ReplicaId, edge: DirectedEdge) -> Arc<Layout> {
        let mut l = self.clone();
        if let Some(ix) = l.index.get_mut(&replica) {
            *ix = ix.iter().copied().filter(|e| *e != edge).collect();
        }
        Arc::new(l)
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn graph(&self) -> &ShareGraph {
        &self.graph
    }

    pub fn index(&self, r: ReplicaId) -> Option<&Arc<[DirectedEdge]>> {
        self.index.get(&r)
    }

    /// Replicas that receive `i`'s updates to `x`, flagged when they hold a dummy copy.
    pub fn recipients<'a>(
        &'a self,
        i: ReplicaId,
        x: &'a RegisterId,
    ) -> impl Iterator<Item = (ReplicaId, bool)> + 'a {
        self.topology
            .holders(x)
            .filter(move |k| *k != i)
            .map(move |k| (k, self.topology.is_dummy(k, x)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateMessage {
    pub id: UpdateId,
    pub register: RegisterId,
    /// `None` for dummy recipients.
    pub value: Option<Value>,
    pub timestamp: EdgeTimestamp,
    pub metadata_only: bool,
}

impl UpdateMessage {
    pub fn issuer(&self) -> ReplicaId {
        self.id.issuer
    }
}

/// A message leaving a replica.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outbound {
    pub to: ReplicaId,
    pub message: UpdateMessage,
}

/// Deliberate defects used to show that the checker notices broken engines.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Mutations {
    /// Drop the next-from-sender clause of the delivery predicate.
    pub skip_successor_check: bool,
    /// Drop the transitive-dependency clause of the delivery predicate.
    pub skip_dependency_check: bool,
    /// Merge only edges incident to the receiver.
    pub merge_incident_only: bool,
}

/// Delivery predicate for an update from `sender` with timestamp `t` at
/// `receiver`: it must be the next update from `sender`, and every shared
/// incoming edge from a third replica must already be caught up.
pub fn predicate_j(
    receiver: ReplicaId,
    tau: &EdgeTimestamp,
    sender: ReplicaId,
    t: &EdgeTimestamp,
) -> bool {
    predicate_with(receiver, tau, sender, t, Mutations::default())
}

fn predicate_with(
    receiver: ReplicaId,
    tau: &EdgeTimestamp,
    sender: ReplicaId,
    t: &EdgeTimestamp,
    m: Mutations,
) -> bool {
    let e_ki = DirectedEdge {
        from: sender,
        to: receiver,
    };
    if !m.skip_successor_check {
        match (tau.get(e_ki), t.get(e_ki)) {
            (Some(mine), Some(theirs)) if mine + 1 == theirs => {}
            _ => return false,
        }
    }
    if m.skip_dependency_check {
        return true;
    }
    tau.shared_positions(t)
        .filter(|(e, _, _)| e.to == receiver && e.from != sender)
        .all(|(_, p, q)| tau.counters[p] >= t.counters[q])
}

/// Entrywise max of `tau` and `t` over the edges both index.
pub fn merge(tau: &EdgeTimestamp, t: &EdgeTimestamp) -> EdgeTimestamp {
    tau.max_with(t)
}

#[derive(Debug, Clone)]
pub struct ReplicaState {
    id: ReplicaId,
    layout: Arc<Layout>,
    tau: EdgeTimestamp,
    store: BTreeMap<RegisterId, Value>,
    pending: BTreeMap<UpdateId, UpdateMessage>,
    applied_log: Vec<UpdateId>,
    next_seq: u64,
    mutations: Mutations,
}

impl ReplicaState {
    pub fn new(layout: Arc<Layout>, id: ReplicaId) -> Result<Self, ProtocolError> {
        let index = layout.index(id).ok_or(ProtocolError::UnknownReplica(id))?.clone();
        let t = layout.topology();
        let store = t
            .registers(id)
            .into_iter()
            .flatten()
            .filter(|x| !t.is_dummy(id, x))
            .map(|x| (x.clone(), Value::default()))
            .collect();
        Ok(ReplicaState {
            id,
            tau: EdgeTimestamp::zeros(index),
            layout,
            store,
            pending: BTreeMap::new(),
            applied_log: Vec::new(),
            next_seq: 0,
            mutations: Mutations::default(),
        })
    }

    pub fn with_mutations(mut self, m: Mutations) -> Self {
        self.mutations = m;
        self
    }

    pub fn id(&self) -> ReplicaId {
        self.id
    }

    pub fn tau(&self) -> &EdgeTimestamp {
        &self.tau
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn store(&self) -> &BTreeMap<RegisterId, Value> {
        &self.store
    }

    pub fn pending(&self) -> impl Iterator<Item = &UpdateMessage> {
        self.pending.values()
    }

    pub fn applied_log(&self) -> &[UpdateId] {
        &self.applied_log
    }

    fn check_access(&self, x: &RegisterId) -> Result<(), ProtocolError> {
        let t = self.layout.topology();
        if !t.stores(self.id, x) {
            return Err(ProtocolError::NotStored {
                replica: self.id,
                register: x.clone(),
            });
        }
        if t.is_dummy(self.id, x) {
            return Err(ProtocolError::DummyAccess {
                replica: self.id,
                register: x.clone(),
            });
        }
        Ok(())
    }

    pub fn handle_read(&self, x: &RegisterId) -> Result<&Value, ProtocolError> {
        self.check_access(x)?;
        Ok(&self.store[x])
    }

    /// Timestamp after a write to `x`: one more on every outgoing edge that
    /// carries `x`. Does not change state.
    pub fn advance(&self, x: &RegisterId) -> Result<EdgeTimestamp, ProtocolError> {
        if !self.layout.topology().stores(self.id, x) {
            return Err(ProtocolError::NotStored {
                replica: self.id,
                register: x.clone(),
            });
        }
        let g = &self.layout.graph;
        let mut t = self.tau.clone();
        for (k, e) in self.tau.index.iter().enumerate() {
            if e.from == self.id && g.edge_registers(*e).is_some_and(|regs| regs.contains(x)) {
                t.counters[k] += 1;
            }
        }
        Ok(t)
    }

    /// Writes locally and returns one message per other holder of `x`.
    pub fn handle_write(
        &mut self,
        x: &RegisterId,
        v: Value,
        sink: &mut dyn EventSink,
    ) -> Result<Vec<Outbound>, ProtocolError> {
        self.check_access(x)?;
        let t = self.advance(x)?;
        Ok(self.commit_write(x, v, t, None, sink))
    }

    /// Installs `t` as the new timestamp and issues the update.
    pub(crate) fn commit_write(
        &mut self,
        x: &RegisterId,
        v: Value,
        t: EdgeTimestamp,
        client: Option<ClientId>,
        sink: &mut dyn EventSink,
    ) -> Vec<Outbound> {
        self.next_seq += 1;
        let id = UpdateId {
            issuer: self.id,
            seq: self.next_seq,
        };
        self.store.insert(x.clone(), v.clone());
        self.tau = t;
        self.applied_log.push(id);
        sink.event(Event::Issue {
            replica: self.id,
            update: id,
            register: x.clone(),
            value: Some(v.clone()),
            client,
            timestamp: self.tau.clone(),
        });
        let out: Vec<Outbound> = self
            .layout
            .recipients(self.id, x)
            .map(|(to, dummy)| Outbound {
                to,
                message: UpdateMessage {
                    id,
                    register: x.clone(),
                    value: (!dummy).then(|| v.clone()),
                    timestamp: self.tau.clone(),
                    metadata_only: dummy,
                },
            })
            .collect();
        for o in &out {
            sink.event(Event::Send {
                from: self.id,
                to: o.to,
                update: id,
                metadata_only: o.message.metadata_only,
            });
        }
        out
    }

    pub fn is_deliverable(&self, msg: &UpdateMessage) -> bool {
        predicate_with(self.id, &self.tau, msg.issuer(), &msg.timestamp, self.mutations)
    }

    /// Buffers `msg` and applies every pending update that becomes
    /// deliverable, returning them in application order.
    pub fn receive_update(
        &mut self,
        msg: UpdateMessage,
        sink: &mut dyn EventSink,
    ) -> Result<Vec<UpdateId>, ProtocolError> {
        if !self.layout.topology().stores(self.id, &msg.register) {
            return Err(ProtocolError::Misrouted {
                replica: self.id,
                update: msg.id,
                register: msg.register,
            });
        }
        sink.event(Event::Deliver {
            replica: self.id,
            update: msg.id,
        });
        let id = msg.id;
        let ready = self.is_deliverable(&msg);
        self.pending.insert(id, msg);
        if !ready {
            sink.event(Event::Buffer {
                replica: self.id,
                update: id,
                timestamp: self.tau.clone(),
            });
            return Ok(Vec::new());
        }
        Ok(self.drain_pending(sink))
    }

    /// Applies deliverable pending updates until none is left, rescanning in
    /// `(issuer, seq)` order after each application.
    fn drain_pending(&mut self, sink: &mut dyn EventSink) -> Vec<UpdateId> {
        let mut applied = Vec::new();
        while let Some(id) = self
            .pending
            .values()
            .find(|m| self.is_deliverable(m))
            .map(|m| m.id)
        {
            let msg = self.pending.remove(&id).expect("found above");
            self.apply(msg, sink);
            applied.push(id);
        }
        applied
    }

    fn apply(&mut self, msg: UpdateMessage, sink: &mut dyn EventSink) {
        if let (false, Some(v)) = (msg.metadata_only, msg.value) {
            self.store.insert(msg.register, v);
        }
        if self.mutations.merge_incident_only {
            let me = self.id;
            for (e, p, q) in self.tau.clone().shared_positions(&msg.timestamp) {
                if e.touches(me) {
                    self.tau.counters[p] = self.tau.counters[p].max(msg.timestamp.counters[q]);
                }
            }
        } else {
            self.tau = merge(&self.tau, &msg.timestamp);
        }
        self.applied_log.push(msg.id);
        sink.event(Event::Apply {
            replica: self.id,
            update: msg.id,
            timestamp: self.tau.clone(),
        });
    }

}
