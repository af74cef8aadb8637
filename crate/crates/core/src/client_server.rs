//! Clients that move between replicas carrying their own timestamp.
//!
//! A replica indexes its augmented timestamp graph. A client request waits
//! at the replica until the replica has caught up with every incoming-edge
//! counter the client has observed; writes then fold the client's counters
//! into the issued timestamp. Replica-to-replica delivery is unchanged from
//! the peer-to-peer engine.

use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

use crate::protocol::{
    EdgeTimestamp, Layout, Mutations, Outbound, ProtocolError, ReplicaState, UpdateId,
    UpdateMessage, Value,
};
use crate::topology::{ClientId, RegisterId, ReplicaId, Topology};
use crate::trace::{Event, EventSink, RequestKind};

/// True iff the replica has caught up with every incoming edge of its
/// index as seen by the client.
pub fn predicate_j1_j2(replica: ReplicaId, tau: &EdgeTimestamp, mu: &EdgeTimestamp) -> bool {
    tau.shared_positions(mu)
        .filter(|(e, _, _)| e.to == replica)
        .all(|(_, p, q)| tau.counters()[p] >= mu.counters()[q])
}

/// Timestamp for a write to `x` issued on a client's behalf: incremented on
/// outgoing edges carrying `x`, otherwise the max of replica and client.
pub fn cs_advance(
    replica: &ReplicaState,
    mu: &EdgeTimestamp,
    x: &RegisterId,
) -> Result<EdgeTimestamp, ProtocolError> {
    let bumped = replica.advance(x)?;
    let tau = replica.tau();
    let mut out = bumped.max_with(mu);
    for (e, c) in bumped.iter() {
        if c != tau.get(e).expect("same index") {
            out.set(e, c);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ClientState {
    id: ClientId,
    mu: EdgeTimestamp,
    replicas: BTreeSet<ReplicaId>,
}

impl ClientState {
    /// Indexed by the union of the accessible replicas' indexes.
    pub fn new(layout: &Layout, id: ClientId) -> Result<Self, ProtocolError> {
        let replicas = layout
            .topology()
            .client_replicas(id)
            .ok_or(ProtocolError::UnknownClient(id))?
            .clone();
        let index: BTreeSet<_> = replicas
            .iter()
            .flat_map(|r| layout.index(*r).into_iter().flat_map(|ix| ix.iter().copied()))
            .collect();
        Ok(ClientState {
            id,
            mu: EdgeTimestamp::zeros(index.into_iter().collect::<Vec<_>>().into()),
            replicas,
        })
    }

    pub fn id(&self) -> ClientId {
        self.id
    }

    pub fn mu(&self) -> &EdgeTimestamp {
        &self.mu
    }

    pub fn replicas(&self) -> &BTreeSet<ReplicaId> {
        &self.replicas
    }

    /// Folds a replica's reply into `mu` over that replica's index.
    pub fn merge_reply(&mut self, from: ReplicaId, tau: &EdgeTimestamp) -> Result<(), ProtocolError> {
        self.mu = client_merge(self, from, tau)?;
        Ok(())
    }

    /// Builds a request for `x`, routed to `via` when given, otherwise to
    /// the lowest-numbered accessible replica holding a real copy.
    pub fn request(
        &self,
        topology: &Topology,
        kind: RequestKind,
        x: &RegisterId,
        value: Option<Value>,
        via: Option<ReplicaId>,
    ) -> Result<(ReplicaId, ClientRequest), ProtocolError> {
        let target = select_replica(topology, self.id, x, via)?;
        Ok((
            target,
            ClientRequest {
                client: self.id,
                kind,
                register: x.clone(),
                value,
                mu: self.mu.clone(),
            },
        ))
    }
}

/// `mu` raised to `tau` over the replica's edges.
pub fn client_merge(
    client: &ClientState,
    i: ReplicaId,
    tau: &EdgeTimestamp,
) -> Result<EdgeTimestamp, ProtocolError> {
    if !client.replicas.contains(&i) {
        return Err(ProtocolError::NotAccessible {
            client: client.id,
            register: RegisterId::new(format!("<replica {i}>")),
        });
    }
    Ok(client.mu.max_with(tau))
}

pub fn select_replica(
    topology: &Topology,
    c: ClientId,
    x: &RegisterId,
    via: Option<ReplicaId>,
) -> Result<ReplicaId, ProtocolError> {
    let rs = topology
        .client_replicas(c)
        .ok_or(ProtocolError::UnknownClient(c))?;
    let not_accessible = || ProtocolError::NotAccessible {
        client: c,
        register: x.clone(),
    };
    match via {
        Some(r) if rs.contains(&r) && topology.stores_real(r, x) => Ok(r),
        Some(_) => Err(not_accessible()),
        None => rs
            .iter()
            .copied()
            .find(|r| topology.stores_real(*r, x))
            .ok_or_else(not_accessible),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientRequest {
    pub client: ClientId,
    pub kind: RequestKind,
    pub register: RegisterId,
    pub value: Option<Value>,
    pub mu: EdgeTimestamp,
}

/// A replica's answer to a client request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Served {
    pub client: ClientId,
    pub replica: ReplicaId,
    pub kind: RequestKind,
    /// Value read, for reads.
    pub value: Option<Value>,
    /// Update issued, for writes.
    pub update: Option<UpdateId>,
    /// Replica timestamp after serving.
    pub tau: EdgeTimestamp,
    pub outbound: Vec<Outbound>,
}

#[derive(Debug, Clone)]
pub struct CsReplicaState {
    inner: ReplicaState,
    queue: VecDeque<ClientRequest>,
}

impl CsReplicaState {
    pub fn new(layout: Arc<Layout>, id: ReplicaId) -> Result<Self, ProtocolError> {
        Ok(CsReplicaState {
            inner: ReplicaState::new(layout, id)?,
            queue: VecDeque::new(),
        })
    }

    pub fn with_mutations(mut self, m: Mutations) -> Self {
        self.inner = self.inner.with_mutations(m);
        self
    }

    pub fn replica(&self) -> &ReplicaState {
        &self.inner
    }

    pub fn replica_mut(&mut self) -> &mut ReplicaState {
        &mut self.inner
    }

    pub fn queued(&self) -> impl Iterator<Item = &ClientRequest> {
        self.queue.iter()
    }

    /// Queues a request and serves whatever is ready.
    pub fn submit(
        &mut self,
        req: ClientRequest,
        sink: &mut dyn EventSink,
    ) -> Result<Vec<Served>, ProtocolError> {
        let t = self.inner.layout().topology();
        if !t.stores(self.inner.id(), &req.register) {
            return Err(ProtocolError::NotStored {
                replica: self.inner.id(),
                register: req.register,
            });
        }
        if t.is_dummy(self.inner.id(), &req.register) {
            return Err(ProtocolError::DummyAccess {
                replica: self.inner.id(),
                register: req.register,
            });
        }
        sink.event(Event::ClientRequest {
            client: req.client,
            replica: self.inner.id(),
            op: req.kind,
            register: req.register.clone(),
        });
        self.queue.push_back(req);
        self.serve_ready(sink)
    }

    /// Delivers an update from another replica, then serves any request it unblocked.
    pub fn receive_update(
        &mut self,
        msg: UpdateMessage,
        sink: &mut dyn EventSink,
    ) -> Result<(Vec<UpdateId>, Vec<Served>), ProtocolError> {
        let applied = self.inner.receive_update(msg, sink)?;
        let served = if applied.is_empty() {
            Vec::new()
        } else {
            self.serve_ready(sink)?
        };
        Ok((applied, served))
    }

    fn serve_ready(&mut self, sink: &mut dyn EventSink) -> Result<Vec<Served>, ProtocolError> {
        let mut out = Vec::new();
        loop {
            let id = self.inner.id();
            let Some(pos) = self
                .queue
                .iter()
                .position(|r| predicate_j1_j2(id, self.inner.tau(), &r.mu))
            else {
                return Ok(out);
            };
            let req = self.queue.remove(pos).expect("position is valid");
            out.push(self.serve(req, sink)?);
        }
    }

    fn serve(&mut self, req: ClientRequest, sink: &mut dyn EventSink) -> Result<Served, ProtocolError> {
        let id = self.inner.id();
        let (value, update, outbound) = match req.kind {
            RequestKind::Read => {
                let v = self.inner.handle_read(&req.register)?.clone();
                (Some(v), None, Vec::new())
            }
            RequestKind::Write => {
                let t = cs_advance(&self.inner, &req.mu, &req.register)?;
                let v = req.value.clone().unwrap_or_default();
                let out = self.inner.commit_write(&req.register, v, t, Some(req.client), sink);
                let u = *self.inner.applied_log().last().expect("just issued");
                (None, Some(u), out)
            }
        };
        sink.event(Event::ClientServe {
            client: req.client,
            replica: id,
            op: req.kind,
            register: req.register.clone(),
            update,
            value: value.clone(),
        });
        Ok(Served {
            client: req.client,
            replica: id,
            kind: req.kind,
            value,
            update,
            tau: self.inner.tau().clone(),
            outbound,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::DirectedEdge;
    use crate::trace::NullSink;

    fn e(a: u32, b: u32) -> DirectedEdge {
        DirectedEdge::new(a, b)
    }

    fn ts(pairs: &[((u32, u32), u64)]) -> EdgeTimestamp {
        let index: Arc<[DirectedEdge]> = pairs.iter().map(|((a, b), _)| e(*a, *b)).collect();
        let mut t = EdgeTimestamp::zeros(index);
        for ((a, b), v) in pairs {
            t.set(e(*a, *b), *v);
        }
        t
    }

    #[test]
    fn j1_j2_cases() {
        let tau = ts(&[((1, 2), 0), ((2, 1), 1)]);
        assert!(predicate_j1_j2(ReplicaId(1), &tau, &ts(&[((2, 1), 0)])));
        assert!(!predicate_j1_j2(ReplicaId(1), &tau, &ts(&[((2, 1), 2)])));
        // only edges into the replica matter
        assert!(predicate_j1_j2(ReplicaId(1), &tau, &ts(&[((1, 2), 5), ((2, 1), 1)])));
    }

    fn two_replicas() -> (Topology, Arc<Layout>) {
        let t = Topology::from_sets(&[&["x", "y"], &["x", "y"]])
            .unwrap()
            .with_clients(&[&[1, 2]])
            .unwrap();
        let l = Layout::client_server(&t);
        (t, l)
    }

    #[test]
    fn cs_advance_branches() {
        let (_, l) = two_replicas();
        let r = ReplicaState::new(l, ReplicaId(1)).unwrap();
        let zero = EdgeTimestamp::zeros(r.tau().index().clone());
        assert_eq!(cs_advance(&r, &zero, &"x".into()).unwrap(), r.advance(&"x".into()).unwrap());
        let mu = ts(&[((1, 2), 7), ((2, 1), 3)]);
        let t = cs_advance(&r, &mu, &"x".into()).unwrap();
        assert_eq!(t.get(e(2, 1)), Some(3));
        assert_eq!(t.get(e(1, 2)), Some(1));
    }

    #[test]
    fn merge_and_access() {
        let (t, l) = two_replicas();
        let mut c = ClientState::new(&l, ClientId(1)).unwrap();
        let r = ReplicaState::new(l.clone(), ReplicaId(1)).unwrap();
        let before = c.mu().clone();
        c.merge_reply(ReplicaId(1), r.tau()).unwrap();
        assert_eq!(c.mu(), &before);
        let tau = ts(&[((1, 2), 2), ((2, 1), 0)]);
        c.merge_reply(ReplicaId(1), &tau).unwrap();
        let once = c.mu().clone();
        c.merge_reply(ReplicaId(1), &tau).unwrap();
        assert_eq!(c.mu(), &once);

        let t3 = Topology::from_sets(&[&["x"], &["y"], &["z"]])
            .unwrap()
            .with_clients(&[&[1, 2]])
            .unwrap();
        let l3 = Layout::client_server(&t3);
        let c3 = ClientState::new(&l3, ClientId(1)).unwrap();
        assert!(matches!(
            c3.request(&t3, RequestKind::Read, &"z".into(), None, None),
            Err(ProtocolError::NotAccessible { .. })
        ));
        assert!(client_merge(&c3, ReplicaId(3), r.tau()).is_err());
        assert_eq!(select_replica(&t, ClientId(1), &"x".into(), None).unwrap(), ReplicaId(1));
        assert_eq!(select_replica(&t, ClientId(1), &"x".into(), Some(ReplicaId(2))).unwrap(), ReplicaId(2));
    }

    #[test]
    fn single_replica_serves_immediately() {
        let t = Topology::from_sets(&[&["x"]]).unwrap().with_clients(&[&[1]]).unwrap();
        let l = Layout::client_server(&t);
        let mut r = CsReplicaState::new(l.clone(), ReplicaId(1)).unwrap();
        let mut c = ClientState::new(&l, ClientId(1)).unwrap();
        let (to, req) = c
            .request(&t, RequestKind::Write, &"x".into(), Some("5".into()), None)
            .unwrap();
        let served = r.submit(req, &mut NullSink).unwrap();
        assert_eq!(served.len(), 1);
        c.merge_reply(to, &served[0].tau).unwrap();
        let (_, req) = c.request(&t, RequestKind::Read, &"x".into(), None, None).unwrap();
        let served = r.submit(req, &mut NullSink).unwrap();
        assert_eq!(served[0].value, Some(Value::from("5")));
    }

    #[test]
    fn stale_replica_holds_request() {
        // client writes at 1, then reads at 2 before 2 has the write
        let (t, l) = two_replicas();
        let mut r1 = CsReplicaState::new(l.clone(), ReplicaId(1)).unwrap();
        let mut r2 = CsReplicaState::new(l.clone(), ReplicaId(2)).unwrap();
        let mut c = ClientState::new(&l, ClientId(1)).unwrap();
        let (_, w) = c
            .request(&t, RequestKind::Write, &"x".into(), Some("1".into()), Some(ReplicaId(1)))
            .unwrap();
        let s = r1.submit(w, &mut NullSink).unwrap().remove(0);
        c.merge_reply(ReplicaId(1), &s.tau).unwrap();
        let (_, rd) = c
            .request(&t, RequestKind::Read, &"x".into(), None, Some(ReplicaId(2)))
            .unwrap();
        assert!(r2.submit(rd, &mut NullSink).unwrap().is_empty());
        let (applied, served) = r2
            .receive_update(s.outbound[0].message.clone(), &mut NullSink)
            .unwrap();
        assert_eq!(applied.len(), 1);
        assert_eq!(served[0].value, Some(Value::from("1")));
    }

    #[test]
    fn client_carried_dependency_is_buffered() {
        // 1 and 3 share nothing, yet a client spans both
        let t = Topology::from_sets(&[&["a", "c"], &["a", "b"], &["b", "c2"]])
            .unwrap()
            .with_clients(&[&[1, 3]])
            .unwrap();
        let l = Layout::client_server(&t);
        let mut rs: Vec<CsReplicaState> = t
            .replicas()
            .map(|r| CsReplicaState::new(l.clone(), r).unwrap())
            .collect();
        assert!(l.index(ReplicaId(2)).unwrap().contains(&e(1, 2)));
        // 1 writes a (to 2)
        let mut c = ClientState::new(&l, ClientId(1)).unwrap();
        let (_, w) = c
            .request(&t, RequestKind::Write, &"a".into(), Some("1".into()), None)
            .unwrap();
        let s1 = rs[0].submit(w, &mut NullSink).unwrap().remove(0);
        c.merge_reply(ReplicaId(1), &s1.tau).unwrap();
        // client then writes b2 at 3; the resulting update to 2 depends on s1
        let (_, w) = c
            .request(&t, RequestKind::Write, &"b".into(), Some("2".into()), Some(ReplicaId(3)))
            .unwrap();
        let s3 = rs[2].submit(w, &mut NullSink).unwrap().remove(0);
        let to2 = s3.outbound[0].message.clone();
        let (applied, _) = rs[1].receive_update(to2, &mut NullSink).unwrap();
        assert!(applied.is_empty(), "must wait for the update from 1");
        let (applied, _) = rs[1]
            .receive_update(s1.outbound[0].message.clone(), &mut NullSink)
            .unwrap();
        assert_eq!(applied, vec![UpdateId::new(1, 1), UpdateId::new(3, 1)]);
    }
}
