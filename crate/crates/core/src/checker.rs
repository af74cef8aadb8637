//! Trace-only verification of replica-centric causal consistency.
//!
//! Nothing here looks at protocol state. Register placement comes from the
//! topology when one is supplied and is otherwise inferred from the trace.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::bits::BitSet;
use crate::protocol::{EdgeTimestamp, UpdateId};
use crate::topology::{ClientId, DirectedEdge, RegisterId, ReplicaId, Topology};
use crate::trace::{Event, Trace};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CheckError {
    #[error("malformed trace at step {step}: {message}")]
    MalformedTrace { step: u64, message: String },
    #[error("trace has no completed quiescence phase")]
    IncompleteTrace,
    #[error("step {0} is outside the trace")]
    StepOutOfRange(u64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CheckOptions {
    /// Use the client-server happened-before and serve-time safety clause.
    pub client_server: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HbVariant {
    Peer,
    ClientServer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum Safety {
    Pass,
    /// `replica` applied or issued `update` while `missing`, which precedes
    /// it, was not applied there.
    Violation {
        step: u64,
        replica: ReplicaId,
        update: UpdateId,
        missing: UpdateId,
    },
    /// `replica` served `client` while `missing` was not applied there.
    ClientViolation {
        step: u64,
        client: ClientId,
        replica: ReplicaId,
        missing: UpdateId,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum Liveness {
    Pass,
    /// `update` was never applied at `replica`, which stores its register.
    Stuck { replica: ReplicaId, update: UpdateId },
    Unserved { client: ClientId, replica: ReplicaId },
    /// The trace did not finish a quiescence phase.
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum LemmaResult {
    Pass,
    Fail { step: u64, detail: String },
}

impl LemmaResult {
    pub fn passed(&self) -> bool {
        matches!(self, LemmaResult::Pass)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LemmaReport {
    /// A caught-up counter implies the update was applied.
    pub counter_implies_applied: LemmaResult,
    /// Timestamps of causally ordered updates to one receiver are monotone on its incoming edge.
    pub monotone_incoming: LemmaResult,
    /// Stored predecessors are applied before an update is.
    pub predecessors_applied: LemmaResult,
}

impl LemmaReport {
    pub fn passed(&self) -> bool {
        self.counter_implies_applied.passed()
            && self.monotone_incoming.passed()
            && self.predecessors_applied.passed()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub safety: Safety,
    pub liveness: Liveness,
    pub lemmas: LemmaReport,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.safety == Safety::Pass && self.liveness == Liveness::Pass && self.lemmas.passed()
    }
}

/// Strict causal order on the updates of one trace.
#[derive(Debug, Clone)]
pub struct HappenedBefore {
    pub variant: HbVariant,
    updates: Vec<UpdateId>,
    pos: BTreeMap<UpdateId, usize>,
    past: Vec<BitSet>,
}

impl HappenedBefore {
    /// Updates in issue order.
    pub fn updates(&self) -> &[UpdateId] {
        &self.updates
    }

    pub fn precedes(&self, a: UpdateId, b: UpdateId) -> bool {
        match (self.pos.get(&a), self.pos.get(&b)) {
            (Some(&a), Some(&b)) => self.past[b].contains(a),
            _ => false,
        }
    }

    pub fn concurrent(&self, a: UpdateId, b: UpdateId) -> bool {
        a != b && !self.precedes(a, b) && !self.precedes(b, a)
    }

    /// Strict predecessors of `u`.
    pub fn predecessors(&self, u: UpdateId) -> BTreeSet<UpdateId> {
        self.pos
            .get(&u)
            .map(|&k| self.past[k].iter().map(|p| self.updates[p]).collect())
            .unwrap_or_default()
    }

    pub fn pairs(&self) -> Vec<(UpdateId, UpdateId)> {
        let mut out = Vec::new();
        for (b, past) in self.past.iter().enumerate() {
            out.extend(past.iter().map(|a| (self.updates[a], self.updates[b])));
        }
        out.sort();
        out
    }
}

struct UpdateInfo {
    id: UpdateId,
    register: RegisterId,
    timestamp: EdgeTimestamp,
    issue_step: u64,
}

/// Incremental replay of a trace. `known` holds, per replica and client,
/// every update applied or seen there together with its predecessors.
struct Replay {
    n: usize,
    variant: HbVariant,
    updates: Vec<UpdateInfo>,
    pos: BTreeMap<UpdateId, usize>,
    past: Vec<BitSet>,
    applied: BTreeMap<ReplicaId, BitSet>,
    known: BTreeMap<ReplicaId, BitSet>,
    client_known: BTreeMap<ClientId, BitSet>,
    client_strict: BTreeMap<ClientId, BitSet>,
    sent: BTreeMap<(UpdateId, ReplicaId), u32>,
    delivered: BTreeMap<(UpdateId, ReplicaId), u32>,
}

fn malformed(step: u64, message: impl Into<String>) -> CheckError {
    CheckError::MalformedTrace {
        step,
        message: message.into(),
    }
}

impl Replay {
    fn new(trace: &Trace, variant: HbVariant) -> Self {
        let n = trace
            .events()
            .filter(|e| matches!(e, Event::Issue { .. }))
            .count();
        Replay {
            n: n.max(1),
            variant,
            updates: Vec::with_capacity(n),
            pos: BTreeMap::new(),
            past: Vec::with_capacity(n),
            applied: BTreeMap::new(),
            known: BTreeMap::new(),
            client_known: BTreeMap::new(),
            client_strict: BTreeMap::new(),
            sent: BTreeMap::new(),
            delivered: BTreeMap::new(),
        }
    }

    fn capacity(&self) -> usize {
        self.n
    }

    fn slot<K: Ord + Copy>(map: &mut BTreeMap<K, BitSet>, k: K, n: usize) -> &mut BitSet {
        map.entry(k).or_insert_with(|| BitSet::new(n))
    }

    fn index(&self, step: u64, u: UpdateId) -> Result<usize, CheckError> {
        self.pos
            .get(&u)
            .copied()
            .ok_or_else(|| malformed(step, format!("{u} used before it was issued")))
    }

    fn is_applied(&self, r: ReplicaId, k: usize) -> bool {
        self.applied.get(&r).is_some_and(|a| a.contains(k))
    }

    fn mark_applied(&mut self, r: ReplicaId, k: usize) {
        let n = self.capacity();
        Self::slot(&mut self.applied, r, n).insert(k);
        let past = self.past[k].clone();
        let known = Self::slot(&mut self.known, r, n);
        known.insert(k);
        known.union_with(&past);
    }

    /// Processes one step. Returns the update index for issue and apply events.
    fn step(&mut self, step: u64, e: &Event) -> Result<Option<usize>, CheckError> {
        let n = self.capacity();
        match e {
            Event::Issue {
                replica,
                update,
                register,
                client,
                timestamp,
                ..
            } => {
                if update.issuer != *replica {
                    return Err(malformed(step, format!("{update} issued by replica {replica}")));
                }
                if self.pos.contains_key(update) {
                    return Err(malformed(step, format!("{update} issued twice")));
                }
                let k = self.updates.len();
                let mut past = self.known.get(replica).cloned().unwrap_or_else(|| BitSet::new(n));
                if self.variant == HbVariant::ClientServer {
                    if let Some(c) = client.and_then(|c| self.client_known.get(&c)) {
                        past.union_with(c);
                    }
                }
                self.updates.push(UpdateInfo {
                    id: *update,
                    register: register.clone(),
                    timestamp: timestamp.clone(),
                    issue_step: step,
                });
                self.pos.insert(*update, k);
                self.past.push(past);
                self.mark_applied(*replica, k);
                Ok(Some(k))
            }
            Event::Send { from, to, update, .. } => {
                let k = self.index(step, *update)?;
                if self.updates[k].id.issuer != *from {
                    return Err(malformed(step, format!("{update} sent by a replica other than its issuer")));
                }
                *self.sent.entry((*update, *to)).or_default() += 1;
                Ok(None)
            }
            Event::Deliver { replica, update } => {
                self.index(step, *update)?;
                let key = (*update, *replica);
                let d = self.delivered.entry(key).or_default();
                *d += 1;
                if *d > self.sent.get(&key).copied().unwrap_or(0) {
                    return Err(malformed(step, format!("{update} delivered to {replica} without a send")));
                }
                Ok(None)
            }
            Event::Buffer { replica, update, .. } => {
                let k = self.index(step, *update)?;
                if !self.delivered.contains_key(&(*update, *replica)) {
                    return Err(malformed(step, format!("{update} buffered at {replica} before delivery")));
                }
                if self.is_applied(*replica, k) {
                    return Err(malformed(step, format!("{update} buffered at {replica} after it was applied")));
                }
                Ok(None)
            }
            Event::Apply { replica, update, .. } => {
                let k = self.index(step, *update)?;
                if !self.delivered.contains_key(&(*update, *replica)) {
                    return Err(malformed(step, format!("{update} applied at {replica} before delivery")));
                }
                if self.is_applied(*replica, k) {
                    return Err(malformed(step, format!("{update} applied twice at {replica}")));
                }
                self.mark_applied(*replica, k);
                Ok(Some(k))
            }
            Event::ClientRequest { .. } => Ok(None),
            Event::ClientServe {
                client,
                replica,
                update,
                ..
            } => {
                if let Some(u) = update {
                    let k = self.index(step, *u)?;
                    if !self.is_applied(*replica, k) {
                        return Err(malformed(step, format!("{u} reported for a write that {replica} never issued")));
                    }
                }
                let known = self.known.get(replica).cloned().unwrap_or_else(|| BitSet::new(n));
                let mut strict = BitSet::new(n);
                if let Some(a) = self.applied.get(replica) {
                    for k in a.iter() {
                        strict.union_with(&self.past[k]);
                    }
                }
                Self::slot(&mut self.client_known, *client, n).union_with(&known);
                Self::slot(&mut self.client_strict, *client, n).union_with(&strict);
                Ok(None)
            }
        }
    }

    fn hb(self) -> HappenedBefore {
        HappenedBefore {
            variant: self.variant,
            updates: self.updates.iter().map(|u| u.id).collect(),
            pos: self.pos,
            past: self.past,
        }
    }
}

/// Per-replica register sets: from the topology (dummies included), or
/// inferred from issue and send events.
fn placement(trace: &Trace, topology: Option<&Topology>) -> BTreeMap<ReplicaId, BTreeSet<RegisterId>> {
    if let Some(t) = topology {
        return t.replica_registers().clone();
    }
    let mut reg: BTreeMap<UpdateId, RegisterId> = BTreeMap::new();
    let mut out: BTreeMap<ReplicaId, BTreeSet<RegisterId>> = BTreeMap::new();
    for e in trace.events() {
        match e {
            Event::Issue {
                replica,
                update,
                register,
                ..
            } => {
                reg.insert(*update, register.clone());
                out.entry(*replica).or_default().insert(register.clone());
            }
            Event::Send { to, update, .. } => {
                if let Some(x) = reg.get(update) {
                    out.entry(*to).or_default().insert(x.clone());
                }
            }
            Event::ClientRequest { replica, register, .. } | Event::ClientServe { replica, register, .. } => {
                out.entry(*replica).or_default().insert(register.clone());
            }
            _ => {}
        }
    }
    out
}

fn variant_of(opts: CheckOptions) -> HbVariant {
    if opts.client_server {
        HbVariant::ClientServer
    } else {
        HbVariant::Peer
    }
}

pub fn happened_before(trace: &Trace, variant: HbVariant) -> Result<HappenedBefore, CheckError> {
    let mut r = Replay::new(trace, variant);
    for s in &trace.steps {
        r.step(s.step, &s.event)?;
    }
    Ok(r.hb())
}

/// The updates applied at `replica` by `at_step`, closed under predecessors.
pub fn causal_past(
    trace: &Trace,
    replica: ReplicaId,
    at_step: u64,
    variant: HbVariant,
) -> Result<BTreeSet<UpdateId>, CheckError> {
    if at_step > trace.len() as u64 {
        return Err(CheckError::StepOutOfRange(at_step));
    }
    let mut r = Replay::new(trace, variant);
    for s in trace.steps.iter().take_while(|s| s.step <= at_step) {
        r.step(s.step, &s.event)?;
    }
    Ok(r
        .known
        .get(&replica)
        .map(|k| k.iter().map(|p| r.updates[p].id).collect())
        .unwrap_or_default())
}

/// Safety alone, as the first violation in step order.
pub fn check_safety(trace: &Trace, topology: Option<&Topology>, opts: CheckOptions) -> Result<Safety, CheckError> {
    Ok(check_trace(trace, topology, opts)?.safety)
}

/// Liveness alone; requires a completed quiescence phase.
pub fn check_liveness(trace: &Trace, topology: Option<&Topology>) -> Result<Liveness, CheckError> {
    if !trace.quiescent {
        return Err(CheckError::IncompleteTrace);
    }
    let hb = happened_before(trace, HbVariant::Peer)?;
    let x = placement(trace, topology);
    Ok(liveness(trace, &hb, &x))
}

fn liveness(trace: &Trace, hb: &HappenedBefore, x: &BTreeMap<ReplicaId, BTreeSet<RegisterId>>) -> Liveness {
    if !trace.quiescent {
        return Liveness::Incomplete;
    }
    let mut applied: BTreeSet<(ReplicaId, UpdateId)> = BTreeSet::new();
    let mut registers: BTreeMap<UpdateId, RegisterId> = BTreeMap::new();
    let mut requests: BTreeMap<ClientId, Vec<ReplicaId>> = BTreeMap::new();
    for e in trace.events() {
        match e {
            Event::Issue {
                replica,
                update,
                register,
                ..
            } => {
                applied.insert((*replica, *update));
                registers.insert(*update, register.clone());
            }
            Event::Apply { replica, update, .. } => {
                applied.insert((*replica, *update));
            }
            Event::ClientRequest { client, replica, .. } => requests.entry(*client).or_default().push(*replica),
            Event::ClientServe { client, .. } => {
                if let Some(q) = requests.get_mut(client) {
                    if !q.is_empty() {
                        q.remove(0);
                    }
                }
            }
            _ => {}
        }
    }
    for u in hb.updates() {
        let reg = &registers[u];
        for (r, xs) in x {
            if xs.contains(reg) && !applied.contains(&(*r, *u)) {
                return Liveness::Stuck { replica: *r, update: *u };
            }
        }
    }
    for (c, q) in requests {
        if let Some(r) = q.first() {
            return Liveness::Unserved { client: c, replica: *r };
        }
    }
    Liveness::Pass
}

/// Runs every check in one pass.
pub fn check_trace(trace: &Trace, topology: Option<&Topology>, opts: CheckOptions) -> Result<Verdict, CheckError> {
    let variant = variant_of(opts);
    let x = placement(trace, topology);
    let empty = BTreeSet::new();
    let mut r = Replay::new(trace, variant);
    let mut safety = Safety::Pass;
    let mut counter_check = LemmaResult::Pass;
    // Updates addressed to each replica, by index.
    let mut addressed: BTreeMap<ReplicaId, Vec<usize>> = BTreeMap::new();

    for s in &trace.steps {
        let step = s.step;
        if let Event::ClientServe { client, replica, .. } = &s.event {
            if safety == Safety::Pass && variant == HbVariant::ClientServer {
                let xs = x.get(replica).unwrap_or(&empty);
                if let Some(strict) = r.client_strict.get(client) {
                    if let Some(m) = strict
                        .iter()
                        .find(|&k| xs.contains(&r.updates[k].register) && !r.is_applied(*replica, k))
                    {
                        safety = Safety::ClientViolation {
                            step,
                            client: *client,
                            replica: *replica,
                            missing: r.updates[m].id,
                        };
                    }
                }
            }
        }
        let Some(k) = r.step(step, &s.event)? else { continue };
        let (i, tau) = match &s.event {
            Event::Issue { replica, timestamp, .. } | Event::Apply { replica, timestamp, .. } => (*replica, timestamp),
            _ => unreachable!("only issue and apply yield an update"),
        };
        if let Event::Issue { replica, register, .. } = &s.event {
            for (to, xs) in &x {
                if to != replica && xs.contains(register) {
                    addressed.entry(*to).or_default().push(k);
                }
            }
        }
        let xs = x.get(&i).unwrap_or(&empty);
        if safety == Safety::Pass {
            if let Some(m) = r.past[k]
                .iter()
                .find(|&p| xs.contains(&r.updates[p].register) && !r.is_applied(i, p))
            {
                safety = Safety::Violation {
                    step,
                    replica: i,
                    update: r.updates[k].id,
                    missing: r.updates[m].id,
                };
            }
        }
        if counter_check.passed() {
            for &u in addressed.get(&i).into_iter().flatten() {
                let info = &r.updates[u];
                let e = DirectedEdge::new(info.id.issuer.0, i.0);
                let (Some(have), Some(need)) = (tau.get(e), info.timestamp.get(e)) else { continue };
                if have >= need && !r.is_applied(i, u) {
                    counter_check = LemmaResult::Fail {
                        step,
                        detail: format!("replica {i} has {e} = {have} >= {need} of {} but has not applied it", info.id),
                    };
                    break;
                }
            }
        }
    }

    let monotone_check = monotone_incoming(&r, &addressed);
    let hb = r.hb();
    let predecessor_check = match &safety {
        Safety::Violation { step, replica, update, missing } => LemmaResult::Fail {
            step: *step,
            detail: format!("{missing} precedes {update} but was not applied at {replica}"),
        },
        _ => LemmaResult::Pass,
    };
    Ok(Verdict {
        safety,
        liveness: liveness(trace, &hb, &x),
        lemmas: LemmaReport {
            counter_implies_applied: counter_check,
            monotone_incoming: monotone_check,
            predecessors_applied: predecessor_check,
        },
    })
}

/// For u' from k preceding u from j, both addressed to i: T[e_ki] ≥ T'[e_ki],
/// strictly when k = j. Pairs where u's timestamp lacks e_ki are skipped.
fn monotone_incoming(r: &Replay, addressed: &BTreeMap<ReplicaId, Vec<usize>>) -> LemmaResult {
    let mut first: Option<(u64, String)> = None;
    for (i, us) in addressed {
        for &u in us {
            let later = &r.updates[u];
            for &p in us {
                if !r.past[u].contains(p) {
                    continue;
                }
                let earlier = &r.updates[p];
                let k = earlier.id.issuer;
                let e = DirectedEdge::new(k.0, i.0);
                let (Some(t), Some(t0)) = (later.timestamp.get(e), earlier.timestamp.get(e)) else { continue };
                let ok = if k == later.id.issuer { t > t0 } else { t >= t0 };
                if !ok && first.as_ref().is_none_or(|(s, _)| later.issue_step < *s) {
                    first = Some((
                        later.issue_step,
                        format!("{} precedes {} but {e} goes from {t0} to {t}", earlier.id, later.id),
                    ));
                }
            }
        }
    }
    match first {
        None => LemmaResult::Pass,
        Some((step, detail)) => LemmaResult::Fail { step, detail },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{run_scenario, Mode, Op, Policy, Scenario};
    use crate::trace::EventSink;

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

    fn u(i: u32, s: u64) -> UpdateId {
        UpdateId::new(i, s)
    }

    /// r1 issues u1 then u2, r2 applies u2 and issues u3, r3 issues u4 and
    /// then applies u3.
    fn three_replica_story() -> (Topology, Trace) {
        let t = Topology::from_sets(&[&["a", "b"], &["b", "c"], &["c", "d"]]).unwrap();
        let s = Scenario {
            policy: Policy::Explicit,
            seed: 0,
            ops: vec![w(1, "a"), w(1, "b"), d(1, 2, 2), w(2, "c"), w(3, "d"), d(2, 1, 3)],
        };
        let tr = run_scenario(&t, &s, Mode::Peer).unwrap();
        (t, tr)
    }

    #[test]
    fn three_replica_story_relations() {
        let (_, tr) = three_replica_story();
        let hb = happened_before(&tr, HbVariant::Peer).unwrap();
        let (u1, u2, u3, u4) = (u(1, 1), u(1, 2), u(2, 1), u(3, 1));
        assert!(hb.precedes(u1, u2));
        assert!(hb.precedes(u2, u3));
        assert!(hb.precedes(u1, u3));
        assert!(hb.concurrent(u1, u4));
        assert!(hb.concurrent(u2, u4));
        assert!(hb.concurrent(u3, u4));
        assert_eq!(hb.pairs().len(), 3);
    }

    #[test]
    fn three_replica_story_causal_past() {
        let (_, tr) = three_replica_story();
        let issue_u3 = tr
            .steps
            .iter()
            .find(|s| matches!(&s.event, Event::Issue { update, .. } if *update == u(2, 1)))
            .unwrap()
            .step;
        let past = causal_past(&tr, ReplicaId(2), issue_u3, HbVariant::Peer).unwrap();
        assert_eq!(past, [u(1, 1), u(1, 2), u(2, 1)].into_iter().collect());
        assert!(causal_past(&tr, ReplicaId(2), 0, HbVariant::Peer).unwrap().is_empty());
        assert!(causal_past(&tr, ReplicaId(2), 10_000, HbVariant::Peer).is_err());
    }

    #[test]
    fn three_replica_story_passes() {
        let (t, tr) = three_replica_story();
        let v = check_trace(&tr, Some(&t), CheckOptions::default()).unwrap();
        assert!(v.passed(), "{v:?}");
        let inferred = check_trace(&tr, None, CheckOptions::default()).unwrap();
        assert_eq!(inferred, v);
    }

    #[test]
    fn causal_past_grows() {
        let (_, tr) = three_replica_story();
        let mut prev = BTreeSet::new();
        for s in 0..=tr.len() as u64 {
            let p = causal_past(&tr, ReplicaId(3), s, HbVariant::Peer).unwrap();
            assert!(prev.is_subset(&p));
            prev = p;
        }
    }

    #[test]
    fn empty_trace() {
        let mut tr = Trace::default();
        tr.quiescent = true;
        assert!(check_trace(&tr, None, CheckOptions::default()).unwrap().passed());
        assert!(happened_before(&tr, HbVariant::Peer).unwrap().pairs().is_empty());
    }

    #[test]
    fn single_update_has_no_pairs() {
        let t = Topology::from_sets(&[&["x"], &["x"]]).unwrap();
        let s = Scenario {
            ops: vec![w(1, "x")],
            ..Scenario::default()
        };
        let tr = run_scenario(&t, &s, Mode::Peer).unwrap();
        assert!(happened_before(&tr, HbVariant::Peer).unwrap().pairs().is_empty());
    }

    /// Swaps the two applies at replica 3 so the dependent update lands first.
    fn reordered_applies() -> (Topology, Trace) {
        let t = Topology::from_sets(&[&["x"], &["x", "y"], &["x", "y"]]).unwrap();
        let s = Scenario {
            policy: Policy::Explicit,
            seed: 0,
            ops: vec![w(1, "x"), d(1, 1, 2), w(2, "y"), d(1, 1, 3), d(2, 1, 3)],
        };
        let good = run_scenario(&t, &s, Mode::Peer).unwrap();
        let mut bad = Trace::default();
        let mut held = None;
        for e in good.events() {
            match e {
                Event::Apply { replica, update, .. } if replica.0 == 3 && *update == u(1, 1) => held = Some(e.clone()),
                Event::Apply { replica, update, .. } if replica.0 == 3 && *update == u(2, 1) => {
                    bad.event(e.clone());
                    bad.event(held.take().unwrap());
                }
                _ => bad.event(e.clone()),
            }
        }
        bad.quiescence_start = good.quiescence_start;
        bad.quiescent = true;
        (t, bad)
    }

    #[test]
    fn out_of_order_apply_is_a_violation() {
        let (t, bad) = reordered_applies();
        let v = check_trace(&bad, Some(&t), CheckOptions::default()).unwrap();
        match v.safety {
            Safety::Violation { replica, update, missing, .. } => {
                assert_eq!((replica, update, missing), (ReplicaId(3), u(2, 1), u(1, 1)));
            }
            other => panic!("{other:?}"),
        }
        assert!(!v.lemmas.predecessors_applied.passed());
    }

    #[test]
    fn missing_apply_is_stuck() {
        let t = Topology::from_sets(&[&["x"], &["x"]]).unwrap();
        let s = Scenario {
            ops: vec![w(1, "x")],
            ..Scenario::default()
        };
        let mut tr = run_scenario(&t, &s, Mode::Peer).unwrap();
        tr.steps.retain(|s| !matches!(s.event, Event::Apply { .. }));
        let v = check_trace(&tr, Some(&t), CheckOptions::default()).unwrap();
        assert_eq!(
            v.liveness,
            Liveness::Stuck {
                replica: ReplicaId(2),
                update: u(1, 1)
            }
        );
        tr.quiescent = false;
        assert_eq!(check_liveness(&tr, Some(&t)), Err(CheckError::IncompleteTrace));
    }

    #[test]
    fn malformed_traces() {
        let t = Topology::from_sets(&[&["x"], &["x"]]).unwrap();
        let s = Scenario {
            ops: vec![w(1, "x")],
            ..Scenario::default()
        };
        let tr = run_scenario(&t, &s, Mode::Peer).unwrap();
        let mut no_issue = tr.clone();
        no_issue.steps.remove(0);
        assert!(matches!(
            happened_before(&no_issue, HbVariant::Peer),
            Err(CheckError::MalformedTrace { .. })
        ));
        let mut twice = tr.clone();
        let last = twice.steps.last().unwrap().event.clone();
        twice.event(last);
        assert!(matches!(
            check_trace(&twice, None, CheckOptions::default()),
            Err(CheckError::MalformedTrace { .. })
        ));
    }

    #[test]
    fn same_sender_chain_is_strict() {
        let t = Topology::from_sets(&[&["x"], &["x"]]).unwrap();
        let s = Scenario {
            ops: vec![w(1, "x"), w(1, "x"), w(1, "x")],
            seed: 4,
            ..Scenario::default()
        };
        let tr = run_scenario(&t, &s, Mode::Peer).unwrap();
        let v = check_trace(&tr, Some(&t), CheckOptions::default()).unwrap();
        assert!(v.lemmas.monotone_incoming.passed());
    }

    #[test]
    fn client_session_orders_updates() {
        // Client 1 reads at replica 1 after it applied u1, then writes at replica 3.
        let t = Topology::from_sets(&[&["a"], &["a", "b"], &["b"]])
            .unwrap()
            .with_clients(&[&[1, 3], &[2]])
            .unwrap();
        let s = Scenario {
            policy: Policy::Explicit,
            seed: 0,
            ops: vec![
                Op::ClientWrite {
                    client: ClientId(2),
                    register: "a".into(),
                    value: None,
                    via: None,
                },
                d(2, 1, 1),
                Op::ClientRead {
                    client: ClientId(1),
                    register: "a".into(),
                    via: None,
                },
                Op::ClientWrite {
                    client: ClientId(1),
                    register: "b".into(),
                    value: None,
                    via: None,
                },
            ],
        };
        let tr = run_scenario(&t, &s, Mode::ClientServer).unwrap();
        let cs = happened_before(&tr, HbVariant::ClientServer).unwrap();
        assert!(cs.precedes(u(2, 1), u(3, 1)));
        let peer = happened_before(&tr, HbVariant::Peer).unwrap();
        assert!(!peer.precedes(u(2, 1), u(3, 1)));
        let v = check_trace(&tr, Some(&t), CheckOptions { client_server: true }).unwrap();
        assert!(v.passed(), "{v:?}");
    }
}
