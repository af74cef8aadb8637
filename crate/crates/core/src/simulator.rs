//! Deterministic execution over reliable, unordered channels.
//!
//! The adversary is a seeded generator: at every step it picks uniformly
//! among the enabled actions, which are the next scripted operation and the
//! delivery of any in-flight message. Once the script is exhausted, a
//! quiescence phase delivers everything still in flight.

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::checker::{check_trace, CheckOptions, Verdict};
use crate::client_server::{ClientState, CsReplicaState, Served};
use crate::protocol::{Layout, Mutations, Outbound, ProtocolError, UpdateId, UpdateMessage, Value};
use crate::topology::{ClientId, RegisterId, ReplicaId, Topology};
use crate::trace::RequestKind;

pub use crate::trace::{Event, EventSink, Step, Trace, TraceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Only scripted `deliver` operations deliver before quiescence.
    Explicit,
    /// The seeded adversary interleaves operations and deliveries.
    #[default]
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Peer,
    ClientServer,
}

fn value_from_json<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Value>, D::Error> {
    let v = Option::<serde_json::Value>::deserialize(d)?;
    Ok(v.map(|v| match v {
        serde_json::Value::String(s) => Value(s),
        other => Value(other.to_string()),
    }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Op {
    Write {
        replica: ReplicaId,
        register: RegisterId,
        #[serde(default, deserialize_with = "value_from_json")]
        value: Option<Value>,
    },
    Read {
        replica: ReplicaId,
        register: RegisterId,
    },
    /// Deliver the in-flight copy of update `(issuer, seq)` addressed to `to`.
    Deliver { issuer: ReplicaId, seq: u64, to: ReplicaId },
    ClientWrite {
        client: ClientId,
        register: RegisterId,
        #[serde(default, deserialize_with = "value_from_json")]
        value: Option<Value>,
        #[serde(default)]
        via: Option<ReplicaId>,
    },
    ClientRead {
        client: ClientId,
        register: RegisterId,
        #[serde(default)]
        via: Option<ReplicaId>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub policy: Policy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ops: Vec<Op>,
}

impl Scenario {
    pub fn from_json(src: &str) -> Result<Scenario, SimError> {
        serde_json::from_str(src).map_err(|e| SimError::Scenario(e.to_string()))
    }
}

/// What was left over when the quiescence phase ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StuckWitness {
    Pending { replica: ReplicaId, update: UpdateId },
    Request { replica: ReplicaId, client: ClientId },
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("execution stuck after quiescence: {witness:?}")]
    Stuck {
        trace: Box<Trace>,
        witness: StuckWitness,
    },
}

struct InFlight {
    to: ReplicaId,
    message: UpdateMessage,
}

/// A running system of replicas and clients.
pub struct Simulation {
    layout: Arc<Layout>,
    mode: Mode,
    replicas: BTreeMap<ReplicaId, CsReplicaState>,
    clients: BTreeMap<ClientId, ClientState>,
    busy: BTreeMap<ClientId, ReplicaId>,
    in_flight: Vec<InFlight>,
    trace: Trace,
}

impl Simulation {
    pub fn new(topology: &Topology, mode: Mode) -> Self {
        let layout = match mode {
            Mode::Peer => Layout::peer(topology),
            Mode::ClientServer => Layout::client_server(topology),
        };
        Simulation::with_layout(layout, mode, Mutations::default())
    }

    /// Uses `layout` as given; the hook for engines with altered indexes.
    pub fn with_layout(layout: Arc<Layout>, mode: Mode, mutations: Mutations) -> Self {
        let t = layout.topology();
        let replicas = t
            .replicas()
            .map(|r| {
                let s = CsReplicaState::new(layout.clone(), r)
                    .expect("layout covers every replica")
                    .with_mutations(mutations);
                (r, s)
            })
            .collect();
        let clients = match mode {
            Mode::Peer => BTreeMap::new(),
            Mode::ClientServer => t
                .clients()
                .map(|c| (c, ClientState::new(&layout, c).expect("known client")))
                .collect(),
        };
        Simulation {
            layout,
            mode,
            replicas,
            clients,
            busy: BTreeMap::new(),
            in_flight: Vec::new(),
            trace: Trace::default(),
        }
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn replica(&self, r: ReplicaId) -> Option<&CsReplicaState> {
        self.replicas.get(&r)
    }

    pub fn client(&self, c: ClientId) -> Option<&ClientState> {
        self.clients.get(&c)
    }

    pub fn in_flight_len(&self) -> usize {
        self.in_flight.len()
    }

    fn enqueue(&mut self, out: Vec<Outbound>) {
        self.in_flight.extend(out.into_iter().map(|o| InFlight {
            to: o.to,
            message: o.message,
        }));
    }

    fn settle(&mut self, served: Vec<Served>) -> Result<(), SimError> {
        for s in served {
            let c = self.clients.get_mut(&s.client).expect("request came from a known client");
            c.merge_reply(s.replica, &s.tau)?;
            self.busy.remove(&s.client);
            self.enqueue(s.outbound);
        }
        Ok(())
    }

    /// True when the operation must wait for an earlier client request.
    pub fn blocked(&self, op: &Op) -> bool {
        match op {
            Op::ClientWrite { client, .. } | Op::ClientRead { client, .. } => {
                self.busy.contains_key(client)
            }
            _ => false,
        }
    }

    pub fn execute(&mut self, op: &Op) -> Result<(), SimError> {
        match op {
            Op::Write {
                replica,
                register,
                value,
            } => {
                let seq = self.trace.len() + 1;
                let v = value.clone().unwrap_or_else(|| Value(seq.to_string()));
                let r = self
                    .replicas
                    .get_mut(replica)
                    .ok_or(ProtocolError::UnknownReplica(*replica))?;
                if self.mode == Mode::ClientServer && self.layout.topology().has_clients() {
                    return Err(SimError::Scenario(
                        "replicas do not issue writes on their own in client-server mode".into(),
                    ));
                }
                let out = r.replica_mut().handle_write(register, v, &mut self.trace)?;
                self.enqueue(out);
            }
            Op::Read { replica, register } => {
                let r = self
                    .replicas
                    .get(replica)
                    .ok_or(ProtocolError::UnknownReplica(*replica))?;
                r.replica().handle_read(register)?;
            }
            Op::Deliver { issuer, seq, to } => {
                let id = UpdateId {
                    issuer: *issuer,
                    seq: *seq,
                };
                let k = self
                    .in_flight
                    .iter()
                    .position(|m| m.message.id == id && m.to == *to)
                    .ok_or_else(|| SimError::Scenario(format!("no in-flight copy of {id} for replica {to}")))?;
                self.deliver(k)?;
            }
            Op::ClientWrite {
                client,
                register,
                value,
                via,
            } => {
                let seq = self.trace.len() + 1;
                let v = value.clone().unwrap_or_else(|| Value(seq.to_string()));
                self.client_op(*client, RequestKind::Write, register, Some(v), *via)?;
            }
            Op::ClientRead {
                client,
                register,
                via,
            } => self.client_op(*client, RequestKind::Read, register, None, *via)?,
        }
        Ok(())
    }

    fn client_op(
        &mut self,
        c: ClientId,
        kind: RequestKind,
        x: &RegisterId,
        v: Option<Value>,
        via: Option<ReplicaId>,
    ) -> Result<(), SimError> {
        if self.mode == Mode::Peer {
            return Err(SimError::Scenario("client operations need client-server mode".into()));
        }
        if self.busy.contains_key(&c) {
            return Err(SimError::Scenario(format!("{c} already has a request outstanding")));
        }
        let client = self.clients.get(&c).ok_or(ProtocolError::UnknownClient(c))?;
        let (target, req) = client.request(self.layout.topology(), kind, x, v, via)?;
        self.busy.insert(c, target);
        let served = self
            .replicas
            .get_mut(&target)
            .expect("selected replica exists")
            .submit(req, &mut self.trace)?;
        self.settle(served)
    }

    /// Delivers the `k`-th in-flight message.
    pub fn deliver(&mut self, k: usize) -> Result<(), SimError> {
        let m = self.in_flight.remove(k);
        let (_, served) = self
            .replicas
            .get_mut(&m.to)
            .expect("messages go to known replicas")
            .receive_update(m.message, &mut self.trace)?;
        self.settle(served)
    }

    /// Delivers every in-flight message in seeded order, then reports
    /// whatever is still buffered.
    pub fn quiesce<R: Rng>(mut self, rng: &mut R) -> Result<Trace, SimError> {
        self.trace.mark_quiescence_start();
        while !self.in_flight.is_empty() {
            let k = rng.random_range(0..self.in_flight.len());
            self.deliver(k)?;
        }
        self.trace.quiescent = true;
        let stuck = self.replicas.iter().find_map(|(r, s)| {
            if let Some(m) = s.replica().pending().next() {
                return Some(StuckWitness::Pending {
                    replica: *r,
                    update: m.id,
                });
            }
            s.queued().next().map(|q| StuckWitness::Request {
                replica: *r,
                client: q.client,
            })
        });
        match stuck {
            None => Ok(self.trace),
            Some(witness) => Err(SimError::Stuck {
                trace: Box::new(self.trace),
                witness,
            }),
        }
    }
}

/// Runs a scenario to quiescence. The same scenario always yields the same trace.
pub fn run_scenario(topology: &Topology, scenario: &Scenario, mode: Mode) -> Result<Trace, SimError> {
    run_with(Simulation::new(topology, mode), scenario)
}

/// As [`run_scenario`] on a prepared simulation.
pub fn run_with(mut sim: Simulation, scenario: &Scenario) -> Result<Trace, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    match scenario.policy {
        Policy::Explicit => {
            for op in &scenario.ops {
                sim.execute(op)?;
            }
        }
        Policy::Random => {
            if scenario.ops.iter().any(|op| matches!(op, Op::Deliver { .. })) {
                return Err(SimError::Scenario("deliver operations need the explicit policy".into()));
            }
            let mut next = 0;
            loop {
                let op_ready = next < scenario.ops.len() && !sim.blocked(&scenario.ops[next]);
                let choices = sim.in_flight.len() + usize::from(op_ready);
                if choices == 0 {
                    if next < scenario.ops.len() {
                        // a client waits on a request no delivery can unblock
                        break;
                    }
                    break;
                }
                let pick = rng.random_range(0..choices);
                if op_ready && pick == sim.in_flight.len() {
                    sim.execute(&scenario.ops[next])?;
                    next += 1;
                } else {
                    sim.deliver(pick)?;
                }
            }
        }
    }
    sim.quiesce(&mut rng)
}

/// Random operations for one fuzz run: `m` writes per replica in peer mode,
/// `m` reads or writes per client in client-server mode.
pub fn random_ops<R: Rng>(rng: &mut R, topology: &Topology, m: usize, mode: Mode) -> Vec<Op> {
    let mut ops = Vec::new();
    match mode {
        Mode::Peer => {
            let mut issuers: Vec<ReplicaId> = topology
                .replicas()
                .flat_map(|r| std::iter::repeat_n(r, m))
                .collect();
            issuers.shuffle(rng);
            for (k, r) in issuers.into_iter().enumerate() {
                let regs: Vec<&RegisterId> = topology
                    .registers(r)
                    .into_iter()
                    .flatten()
                    .filter(|x| !topology.is_dummy(r, x))
                    .collect();
                let Some(x) = regs.choose(rng) else { continue };
                ops.push(Op::Write {
                    replica: r,
                    register: (*x).clone(),
                    value: Some(Value((k + 1).to_string())),
                });
            }
        }
        Mode::ClientServer => {
            let mut slots: Vec<ClientId> = topology
                .clients()
                .flat_map(|c| std::iter::repeat_n(c, m))
                .collect();
            slots.shuffle(rng);
            for (k, c) in slots.into_iter().enumerate() {
                let rs = topology.client_replicas(c).expect("known client");
                let options: Vec<(ReplicaId, &RegisterId)> = rs
                    .iter()
                    .flat_map(|r| {
                        topology
                            .registers(*r)
                            .into_iter()
                            .flatten()
                            .filter(|x| !topology.is_dummy(*r, x))
                            .map(move |x| (*r, x))
                    })
                    .collect();
                let Some((via, x)) = options.choose(rng) else { continue };
                let op = if rng.random_bool(0.5) {
                    Op::ClientWrite {
                        client: c,
                        register: (*x).clone(),
                        value: Some(Value((k + 1).to_string())),
                        via: Some(*via),
                    }
                } else {
                    Op::ClientRead {
                        client: c,
                        register: (*x).clone(),
                        via: Some(*via),
                    }
                };
                ops.push(op);
            }
        }
    }
    ops
}

/// Fuzzing knobs beyond topology and seeds.
#[derive(Debug, Clone, Default)]
pub struct FuzzConfig {
    pub mode: Mode,
    pub mutations: Mutations,
    /// Replaces the computed layout, e.g. with an edge removed.
    pub layout: Option<Arc<Layout>>,
}

#[derive(Debug, Clone)]
pub struct FuzzRun {
    pub seed: u64,
    pub scenario: Scenario,
    pub trace: Trace,
    pub verdict: Verdict,
}

/// One checked random run per seed, run in parallel. Stuck executions are
/// returned with their trace; the verdict records the liveness failure.
pub fn fuzz(topology: &Topology, seeds: Range<u64>, m: usize, cfg: &FuzzConfig) -> Vec<FuzzRun> {
    let layout = cfg.layout.clone().unwrap_or_else(|| match cfg.mode {
        Mode::Peer => Layout::peer(topology),
        Mode::ClientServer => Layout::client_server(topology),
    });
    let opts = CheckOptions {
        client_server: cfg.mode == Mode::ClientServer,
    };
    seeds
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scenario = Scenario {
                policy: Policy::Random,
                seed,
                ops: random_ops(&mut rng, topology, m, cfg.mode),
            };
            let sim = Simulation::with_layout(layout.clone(), cfg.mode, cfg.mutations);
            let trace = match run_with(sim, &scenario) {
                Ok(t) => t,
                Err(SimError::Stuck { trace, .. }) => *trace,
                Err(e) => panic!("generated scenario is valid: {e}"),
            };
            let verdict = check_trace(&trace, Some(topology), opts).expect("simulator traces are well formed");
            FuzzRun {
                seed,
                scenario,
                trace,
                verdict,
            }
        })
        .collect()
}

/// Mean number of steps between delivery and application over all
/// delivered updates; 0 when nothing was delivered.
pub fn mean_buffering_delay(trace: &Trace) -> f64 {
    let mut delivered: BTreeMap<(ReplicaId, UpdateId), u64> = BTreeMap::new();
    let (mut total, mut n) = (0u64, 0u64);
    for s in &trace.steps {
        match &s.event {
            Event::Deliver { replica, update } => {
                delivered.insert((*replica, *update), s.step);
            }
            Event::Apply { replica, update, .. } => {
                if let Some(d) = delivered.remove(&(*replica, *update)) {
                    total += s.step - d;
                    n += 1;
                }
            }
            _ => {}
        }
    }
    if n == 0 {
        0.0
    } else {
        total as f64 / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::gen::{self, fixtures};

    fn w(r: u32, x: &str) -> Op {
        Op::Write {
            replica: ReplicaId(r),
            register: x.into(),
            value: None,
        }
    }

    fn d(i: u32, s: u64, to: u32) -> Op {
        Op::Deliver {
            issuer: ReplicaId(i),
            seq: s,
            to: ReplicaId(to),
        }
    }

    fn explicit(ops: Vec<Op>) -> Scenario {
        Scenario {
            policy: Policy::Explicit,
            seed: 0,
            ops,
        }
    }

    #[test]
    fn empty_scenario_has_no_events() {
        let t = run_scenario(&fixtures::path4(), &Scenario::default(), Mode::Peer).unwrap();
        assert!(t.is_empty());
        assert!(t.quiescent);
    }

    #[test]
    fn reorder_buffers_then_applies() {
        let t = Topology::from_sets(&[&["x"], &["x"]]).unwrap();
        let s = explicit(vec![w(1, "x"), w(1, "x"), d(1, 2, 2), d(1, 1, 2)]);
        let tr = run_scenario(&t, &s, Mode::Peer).unwrap();
        let tail: Vec<&str> = tr
            .events()
            .skip(4)
            .map(|e| match e {
                Event::Deliver { .. } => "deliver",
                Event::Buffer { .. } => "buffer",
                Event::Apply { .. } => "apply",
                _ => "other",
            })
            .collect();
        assert_eq!(tail, vec!["deliver", "buffer", "deliver", "apply", "apply"]);
    }

    #[test]
    fn bad_delivery_is_rejected() {
        let t = Topology::from_sets(&[&["x"], &["x"]]).unwrap();
        let s = explicit(vec![d(1, 1, 2)]);
        assert!(matches!(run_scenario(&t, &s, Mode::Peer), Err(SimError::Scenario(_))));
    }

    #[test]
    fn same_seed_same_trace() {
        let t = gen::clique(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = Scenario {
            policy: Policy::Random,
            seed: 11,
            ops: random_ops(&mut rng, &t, 3, Mode::Peer),
        };
        let a = run_scenario(&t, &s, Mode::Peer).unwrap().to_jsonl();
        let b = run_scenario(&t, &s, Mode::Peer).unwrap().to_jsonl();
        assert_eq!(a, b);
    }

    #[test]
    fn some_seed_reorders_a_channel() {
        let t = Topology::from_sets(&[&["x"], &["x"]]).unwrap();
        let reordered = (0..50).any(|seed| {
            let s = Scenario {
                policy: Policy::Random,
                seed,
                ops: vec![w(1, "x"), w(1, "x"), w(1, "x")],
            };
            let tr = run_scenario(&t, &s, Mode::Peer).unwrap();
            let order: Vec<u64> = tr
                .events()
                .filter_map(|e| match e {
                    Event::Deliver { update, .. } => Some(update.seq),
                    _ => None,
                })
                .collect();
            order.windows(2).any(|p| p[0] > p[1])
        });
        assert!(reordered);
    }

    #[test]
    fn scenario_json() {
        let s = Scenario::from_json(
            r#"{"policy":"explicit","seed":3,"ops":[
                {"op":"write","replica":1,"register":"x","value":7},
                {"op":"deliver","issuer":1,"seq":1,"to":2},
                {"op":"client_write","client":1,"register":"x","value":"a","via":2},
                {"op":"client_read","client":1,"register":"x"}]}"#,
        )
        .unwrap();
        assert_eq!(s.ops.len(), 4);
        assert_eq!(
            s.ops[0],
            Op::Write {
                replica: ReplicaId(1),
                register: "x".into(),
                value: Some(Value::from("7"))
            }
        );
        assert!(Scenario::from_json(r#"{"ops":[{"op":"jump"}]}"#).is_err());
    }

    #[test]
    fn dropped_edge_gets_stuck_or_violates() {
        let t = fixtures::diamond();
        let layout = Layout::peer(&t).without_edge(ReplicaId(1), crate::DirectedEdge::new(4, 3));
        let cfg = FuzzConfig {
            layout: Some(layout),
            ..FuzzConfig::default()
        };
        let runs = fuzz(&t, 0..200, 3, &cfg);
        assert!(runs.iter().any(|r| !r.verdict.passed()));
    }

    #[test]
    fn client_mode_runs() {
        let t = Topology::from_sets(&[&["x"], &["x", "y"], &["y"]])
            .unwrap()
            .with_clients(&[&[1, 3], &[2]])
            .unwrap();
        let cfg = FuzzConfig {
            mode: Mode::ClientServer,
            ..FuzzConfig::default()
        };
        for r in fuzz(&t, 0..40, 3, &cfg) {
            assert!(r.verdict.passed(), "seed {}: {:?}", r.seed, r.verdict);
        }
    }
}
