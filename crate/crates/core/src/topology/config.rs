//! JSON topology documents:
//! `{"replicas":[{"id":1,"registers":["x"]}],"clients":[{"id":1,"replicas":[1]}],"dummies":[[2,"x"]]}`.
//!
//! Parsing runs twice. The first pass only collects replica ids and their
//! registers; the second walks the document again with that knowledge so
//! duplicate and dangling references are reported at their line and column.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::de::{self, DeserializeSeed, Deserializer, IgnoredAny, MapAccess, SeqAccess, Visitor};
use serde::ser::{SerializeMap, SerializeSeq, SerializeStruct};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize, Serializer};

use super::{ClientId, RegisterId, ReplicaId, Topology, TopologyError};

#[derive(Deserialize)]
struct RawReplica {
    id: u32,
    registers: Vec<String>,
}

#[derive(Deserialize)]
struct ReplicasOnly {
    replicas: Vec<RawReplica>,
}

struct Known {
    replicas: BTreeMap<u32, BTreeSet<String>>,
    registers: BTreeSet<String>,
}

#[derive(Default)]
struct Parsed {
    replicas: BTreeMap<u32, BTreeSet<String>>,
    clients: BTreeMap<u32, BTreeSet<u32>>,
    dummies: BTreeSet<(u32, String)>,
}

pub fn parse_topology(src: &str) -> Result<Topology, TopologyError> {
    let cfg = |e: serde_json::Error| TopologyError::Config(e.to_string());
    let first: ReplicasOnly = serde_json::from_str(src).map_err(cfg)?;
    let mut known = Known {
        replicas: BTreeMap::new(),
        registers: BTreeSet::new(),
    };
    for r in first.replicas {
        known.registers.extend(r.registers.iter().cloned());
        known.replicas.entry(r.id).or_default().extend(r.registers);
    }

    let mut de = serde_json::Deserializer::from_str(src);
    let parsed = DocSeed { known: &known }
        .deserialize(&mut de)
        .map_err(cfg)?;
    de.end().map_err(cfg)?;

    let mut replica_registers: BTreeMap<ReplicaId, BTreeSet<RegisterId>> = parsed
        .replicas
        .into_iter()
        .map(|(id, regs)| (ReplicaId(id), regs.into_iter().map(RegisterId).collect()))
        .collect();
    let mut dummy_marks = BTreeSet::new();
    for (r, x) in parsed.dummies {
        let x = RegisterId(x);
        replica_registers
            .get_mut(&ReplicaId(r))
            .expect("checked during parse")
            .insert(x.clone());
        dummy_marks.insert((ReplicaId(r), x));
    }
    let client_replicas = parsed
        .clients
        .into_iter()
        .map(|(c, rs)| (ClientId(c), rs.into_iter().map(ReplicaId).collect()))
        .collect();
    Topology::new(replica_registers, client_replicas, dummy_marks)
}

pub fn load_topology(path: impl AsRef<Path>) -> Result<Topology, TopologyError> {
    let path = path.as_ref();
    let src = std::fs::read_to_string(path)
        .map_err(|e| TopologyError::Config(format!("{}: {e}", path.display())))?;
    parse_topology(&src)
        .map_err(|e| match e {
            TopologyError::Config(m) => TopologyError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
}

struct DocSeed<'a> {
    known: &'a Known,
}

impl<'de> DeserializeSeed<'de> for DocSeed<'_> {
    type Value = Parsed;

    fn deserialize<D: Deserializer<'de>>(self, d: D) -> Result<Parsed, D::Error> {
        d.deserialize_map(self)
    }
}

impl<'de> Visitor<'de> for DocSeed<'_> {
    type Value = Parsed;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a topology object")
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Parsed, A::Error> {
        let mut out = Parsed::default();
        let mut seen = BTreeSet::new();
        while let Some(key) = map.next_key::<String>()? {
            if !seen.insert(key.clone()) {
                return Err(de::Error::custom(format!("duplicate field `{key}`")));
            }
            match key.as_str() {
                "replicas" => out.replicas = map.next_value_seed(ReplicaList)?,
                "clients" => out.clients = map.next_value_seed(ClientList { known: self.known })?,
                "dummies" => out.dummies = map.next_value_seed(DummyList { known: self.known })?,
                _ => {
                    map.next_value::<IgnoredAny>()?;
                    return Err(de::Error::unknown_field(&key, &["replicas", "clients", "dummies"]));
                }
            }
        }
        Ok(out)
    }
}

struct ReplicaList;

impl<'de> DeserializeSeed<'de> for ReplicaList {
    type Value = BTreeMap<u32, BTreeSet<String>>;

    fn deserialize<D: Deserializer<'de>>(self, d: D) -> Result<Self::Value, D::Error> {
        d.deserialize_seq(self)
    }
}

impl<'de> Visitor<'de> for ReplicaList {
    type Value = BTreeMap<u32, BTreeSet<String>>;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a list of replicas")
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Self::Value, A::Error> {
        let mut out = BTreeMap::new();
        while let Some((id, regs)) = seq.next_element_seed(Entity {
            kind: "replica",
            list_key: "registers",
            seen: &out,
            item: RegisterItem,
        })? {
            out.insert(id, regs);
        }
        check_contiguous(&out, "replica")?;
        Ok(out)
    }
}

fn check_contiguous<E: de::Error, V>(m: &BTreeMap<u32, V>, what: &str) -> Result<(), E> {
    for (k, id) in m.keys().enumerate() {
        if *id != k as u32 + 1 {
            return Err(E::custom(format!(
                "{what} ids must be 1..={}, missing {}",
                m.len(),
                k + 1
            )));
        }
    }
    Ok(())
}

/// Validates one member of an entity's list.
trait ItemCheck: Copy {
    type Item: Ord + DeserializeOwned + fmt::Debug;
    fn check<E: de::Error>(&self, owner: &str, item: &Self::Item) -> Result<(), E>;
}

#[derive(Clone, Copy)]
struct RegisterItem;

impl ItemCheck for RegisterItem {
    type Item = String;

    fn check<E: de::Error>(&self, owner: &str, item: &String) -> Result<(), E> {
        if item.is_empty() {
            return Err(E::custom(format!("{owner}: empty register name")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct ReplicaItem<'a>(&'a Known);

impl ItemCheck for ReplicaItem<'_> {
    type Item = u32;

    fn check<E: de::Error>(&self, owner: &str, item: &u32) -> Result<(), E> {
        if !self.0.replicas.contains_key(item) {
            return Err(E::custom(format!("{owner} references unknown replica {item}")));
        }
        Ok(())
    }
}

/// One `{"id":..,"<list_key>":[..]}` object. Errors are raised as soon as
/// the offending token has been read so their position points at it.
struct Entity<'s, C: ItemCheck> {
    kind: &'static str,
    list_key: &'static str,
    seen: &'s BTreeMap<u32, BTreeSet<C::Item>>,
    item: C,
}

impl<'de, C: ItemCheck> DeserializeSeed<'de> for Entity<'_, C> {
    type Value = (u32, BTreeSet<C::Item>);

    fn deserialize<D: Deserializer<'de>>(self, d: D) -> Result<Self::Value, D::Error> {
        d.deserialize_map(self)
    }
}

impl<'de, C: ItemCheck> Visitor<'de> for Entity<'_, C> {
    type Value = (u32, BTreeSet<C::Item>);

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "a {} object", self.kind)
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
        let mut id = None;
        let mut items = None;
        while let Some(key) = map.next_key::<String>()? {
            if key == "id" {
                if id.is_some() {
                    return Err(de::Error::duplicate_field("id"));
                }
                let v: u32 = map.next_value()?;
                if v == 0 {
                    return Err(de::Error::custom(format!("{} ids start at 1", self.kind)));
                }
                if self.seen.contains_key(&v) {
                    return Err(de::Error::custom(format!("duplicate {} id {v}", self.kind)));
                }
                id = Some(v);
            } else if key == self.list_key {
                if items.is_some() {
                    return Err(de::Error::duplicate_field(self.list_key));
                }
                let owner = match id {
                    Some(v) => format!("{} {v}", self.kind),
                    None => self.kind.to_string(),
                };
                items = Some(map.next_value_seed(ItemList {
                    owner,
                    check: self.item,
                })?);
            } else {
                map.next_value::<IgnoredAny>()?;
                return Err(de::Error::custom(format!(
                    "unknown field `{key}` in {} object",
                    self.kind
                )));
            }
        }
        let id = id.ok_or_else(|| de::Error::missing_field("id"))?;
        let items = items.ok_or_else(|| de::Error::missing_field(self.list_key))?;
        if items.is_empty() && self.kind == "client" {
            return Err(de::Error::custom(format!("client {id} has no replicas")));
        }
        Ok((id, items))
    }
}

struct ItemList<C> {
    owner: String,
    check: C,
}

impl<'de, C: ItemCheck> DeserializeSeed<'de> for ItemList<C> {
    type Value = BTreeSet<C::Item>;

    fn deserialize<D: Deserializer<'de>>(self, d: D) -> Result<Self::Value, D::Error> {
        d.deserialize_seq(self)
    }
}

impl<'de, C: ItemCheck> Visitor<'de> for ItemList<C> {
    type Value = BTreeSet<C::Item>;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a list")
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Self::Value, A::Error> {
        let mut out = BTreeSet::new();
        while let Some(item) = seq.next_element_seed(Checked {
            owner: &self.owner,
            check: self.check,
            seen: &out,
        })? {
            out.insert(item);
        }
        Ok(out)
    }
}

struct Checked<'a, C: ItemCheck> {
    owner: &'a str,
    check: C,
    seen: &'a BTreeSet<C::Item>,
}

impl<'de, C: ItemCheck> DeserializeSeed<'de> for Checked<'_, C> {
    type Value = C::Item;

    fn deserialize<D: Deserializer<'de>>(self, d: D) -> Result<C::Item, D::Error> {
        let item = C::Item::deserialize(d)?;
        self.check.check::<D::Error>(self.owner, &item)?;
        if self.seen.contains(&item) {
            return Err(de::Error::custom(format!("{}: duplicate entry {item:?}", self.owner)));
        }
        Ok(item)
    }
}

struct ClientList<'a> {
    known: &'a Known,
}

impl<'de> DeserializeSeed<'de> for ClientList<'_> {
    type Value = BTreeMap<u32, BTreeSet<u32>>;

    fn deserialize<D: Deserializer<'de>>(self, d: D) -> Result<Self::Value, D::Error> {
        d.deserialize_seq(self)
    }
}

impl<'de> Visitor<'de> for ClientList<'_> {
    type Value = BTreeMap<u32, BTreeSet<u32>>;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a list of clients")
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Self::Value, A::Error> {
        let mut out = BTreeMap::new();
        while let Some((id, rs)) = seq.next_element_seed(Entity {
            kind: "client",
            list_key: "replicas",
            seen: &out,
            item: ReplicaItem(self.known),
        })? {
            out.insert(id, rs);
        }
        check_contiguous(&out, "client")?;
        Ok(out)
    }
}

struct DummyList<'a> {
    known: &'a Known,
}

impl<'de> DeserializeSeed<'de> for DummyList<'_> {
    type Value = BTreeSet<(u32, String)>;

    fn deserialize<D: Deserializer<'de>>(self, d: D) -> Result<Self::Value, D::Error> {
        d.deserialize_seq(self)
    }
}

impl<'de> Visitor<'de> for DummyList<'_> {
    type Value = BTreeSet<(u32, String)>;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a list of [replica, register] pairs")
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Self::Value, A::Error> {
        let mut out = BTreeSet::new();
        while let Some(pair) = seq.next_element_seed(DummyPair {
            known: self.known,
            seen: &out,
        })? {
            out.insert(pair);
        }
        Ok(out)
    }
}

struct DummyPair<'a> {
    known: &'a Known,
    seen: &'a BTreeSet<(u32, String)>,
}

impl<'de> DeserializeSeed<'de> for DummyPair<'_> {
    type Value = (u32, String);

    fn deserialize<D: Deserializer<'de>>(self, d: D) -> Result<Self::Value, D::Error> {
        d.deserialize_seq(self)
    }
}

impl<'de> Visitor<'de> for DummyPair<'_> {
    type Value = (u32, String);

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a [replica, register] pair")
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Self::Value, A::Error> {
        let r: u32 = seq
            .next_element()?
            .ok_or_else(|| de::Error::invalid_length(0, &self))?;
        let Some(regs) = self.known.replicas.get(&r) else {
            return Err(de::Error::custom(format!("dummy references unknown replica {r}")));
        };
        let x: String = seq
            .next_element()?
            .ok_or_else(|| de::Error::invalid_length(1, &self))?;
        if !self.known.registers.contains(&x) {
            return Err(de::Error::custom(format!("dummy references unknown register \"{x}\"")));
        }
        if regs.contains(&x) {
            return Err(de::Error::custom(format!("dummy [{r},\"{x}\"] conflicts with a real copy")));
        }
        if self.seen.contains(&(r, x.clone())) {
            return Err(de::Error::custom(format!("duplicate dummy [{r},\"{x}\"]")));
        }
        if seq.next_element::<IgnoredAny>()?.is_some() {
            return Err(de::Error::invalid_length(3, &self));
        }
        Ok((r, x))
    }
}

struct RealRegisters<'a>(&'a Topology, ReplicaId);

impl Serialize for RealRegisters<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let regs = self.0.registers(self.1).into_iter().flatten();
        let real: Vec<_> = regs.filter(|x| !self.0.is_dummy(self.1, x)).collect();
        let mut seq = s.serialize_seq(Some(real.len()))?;
        for x in real {
            seq.serialize_element(x)?;
        }
        seq.end()
    }
}

struct Entry<'a, T: Serialize> {
    id: u32,
    key: &'static str,
    value: &'a T,
}

impl<T: Serialize> Serialize for Entry<'_, T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("Entry", 2)?;
        st.serialize_field("id", &self.id)?;
        st.serialize_field(self.key, self.value)?;
        st.end()
    }
}

/// Writes the same document shape the loader reads; dummy copies appear only
/// under `"dummies"`.
impl Serialize for Topology {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let replicas: Vec<_> = self
            .replicas()
            .map(|r| (r, RealRegisters(self, r)))
            .collect();
        let replicas: Vec<_> = replicas
            .iter()
            .map(|(r, regs)| Entry {
                id: r.0,
                key: "registers",
                value: regs,
            })
            .collect();
        let mut map = s.serialize_map(None)?;
        map.serialize_entry("replicas", &replicas)?;
        if self.has_clients() {
            let clients: Vec<_> = self
                .client_map()
                .iter()
                .map(|(c, rs)| Entry {
                    id: c.0,
                    key: "replicas",
                    value: rs,
                })
                .collect();
            map.serialize_entry("clients", &clients)?;
        }
        if !self.dummy_marks().is_empty() {
            map.serialize_entry("dummies", self.dummy_marks())?;
        }
        map.end()
    }
}
