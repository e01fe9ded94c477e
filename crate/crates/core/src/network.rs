//! The queryable business network: participants, hosts, message flows and
//! runs-on edges, with generated stable ids.
//!
//! Entity ids are kind-scoped ascending integers (`participant:1`,
//! `host:2`, `mflow:3`). Ids are never reused; a participant or host keeps
//! its id for as long as its equivalence class lives, a flow for as long as
//! its endpoint pair carries at least one outbound record.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::equivalence::ClassId;
use crate::error::{Error, Result};
use crate::key::{Category, CompositeKey, RecordId, RecordKind};
use crate::provenance::SourceRef;
use crate::raw_store::RawRecord;
use crate::surrogate::{Contributor, MemberView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityKind {
    Participant,
    Host,
    MessageFlow,
}

impl EntityKind {
    pub const ALL: [EntityKind; 3] = [
        EntityKind::Participant,
        EntityKind::Host,
        EntityKind::MessageFlow,
    ];

    /// Prefix used in entity ids.
    pub fn prefix(self) -> &'static str {
        match self {
            EntityKind::Participant => "participant",
            EntityKind::Host => "host",
            EntityKind::MessageFlow => "mflow",
        }
    }

    pub fn type_name(self) -> &'static str {
        match self {
            EntityKind::Participant => "Participant",
            EntityKind::Host => "Host",
            EntityKind::MessageFlow => "MessageFlow",
        }
    }

    /// Parses a type name or id prefix, case-insensitively.
    pub fn parse(s: &str) -> Option<EntityKind> {
        let s = s.trim().to_ascii_lowercase();
        EntityKind::ALL.into_iter().find(|k| {
            s == k.prefix()
                || s == k.type_name().to_ascii_lowercase()
                || s == format!("{}s", k.prefix())
        })
    }

    pub fn for_category(category: Category) -> Option<EntityKind> {
        match category {
            Category::System => Some(EntityKind::Participant),
            Category::Host => Some(EntityKind::Host),
            Category::Fragment => None,
        }
    }

    /// Raw record kind a new entity of this kind is created as at a source.
    pub fn record_kind(self) -> RecordKind {
        match self {
            EntityKind::Participant => RecordKind::Sys,
            EntityKind::Host => RecordKind::Host,
            EntityKind::MessageFlow => RecordKind::Out,
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.type_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BnId {
    pub kind: EntityKind,
    pub seq: u64,
}

impl BnId {
    pub fn new(kind: EntityKind, seq: u64) -> Self {
        BnId { kind, seq }
    }
}

impl fmt::Display for BnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.prefix(), self.seq)
    }
}

impl FromStr for BnId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::BadParameter(format!("invalid entity id {s:?}"));
        let (prefix, seq) = s.split_once(':').ok_or_else(bad)?;
        let kind = EntityKind::ALL
            .into_iter()
            .find(|k| k.prefix() == prefix)
            .ok_or_else(bad)?;
        if seq.is_empty() || !seq.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        Ok(BnId {
            kind,
            seq: seq.parse().map_err(|_| bad())?,
        })
    }
}

impl Serialize for BnId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BnId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowEnds {
    pub source: BnId,
    pub target: BnId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkEntity {
    pub bn_id: BnId,
    pub kind: EntityKind,
    pub name: String,
    pub attributes: BTreeMap<String, String>,
    pub contributions: BTreeMap<String, Contributor>,
    /// Backing class of participants and hosts.
    pub class_id: Option<ClassId>,
    /// Raw records the entity is derived from.
    pub sources: BTreeSet<SourceRef>,
    pub leading_member: CompositeKey,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoints: Option<FlowEnds>,
    /// Hosts a participant runs on.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub hosts: BTreeSet<BnId>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub labels: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub groups: BTreeSet<String>,
}

/// Display name: attribute `description`, else `name`, else the leading
/// member's local id.
pub fn display_name(attributes: &BTreeMap<String, String>, leading: &CompositeKey) -> String {
    attributes
        .get("description")
        .or_else(|| attributes.get("name"))
        .cloned()
        .unwrap_or_else(|| match &leading.id {
            RecordId::Local(id) => id.clone(),
            RecordId::Hash(_) => leading.id.to_string(),
        })
}

/// A reference that could not be resolved during materialization.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PendingReference {
    pub record: SourceRef,
    pub field: String,
    pub reference: CompositeKey,
}

/// One inferred message flow before it receives an id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowDraft {
    pub ends: FlowEnds,
    /// Outbound records of the endpoint pair, then corroborating runtime
    /// records.
    pub members: Vec<MemberView>,
    pub sources: BTreeSet<SourceRef>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlowInference {
    pub flows: BTreeMap<(BnId, BnId), FlowDraft>,
    pub pending: Vec<PendingReference>,
}

/// Groups outbound records by their resolved `(from, to)` participant pair.
/// Each non-empty group becomes one flow, joined by the runtime records
/// that observe one of its endpoints. Outbound records with an unresolved
/// endpoint are reported and produce no flow.
pub fn infer_message_flows<F>(
    outs: &[&RawRecord],
    rsys: &[&RawRecord],
    participant_of: F,
) -> FlowInference
where
    F: Fn(&CompositeKey) -> Option<BnId>,
{
    let mut inference = FlowInference::default();
    let mut groups: BTreeMap<(BnId, BnId), Vec<&RawRecord>> = BTreeMap::new();
    for out in outs {
        let mut ends = [None, None];
        let mut complete = true;
        for (slot, field) in ["from", "to"].into_iter().enumerate() {
            let Some(reference) = out.reference(field) else {
                complete = false;
                continue;
            };
            match participant_of(&reference) {
                Some(bn) => ends[slot] = Some(bn),
                None => {
                    complete = false;
                    inference.pending.push(PendingReference {
                        record: SourceRef::of(out),
                        field: field.to_string(),
                        reference,
                    });
                }
            }
        }
        if let (true, [Some(s), Some(t)]) = (complete, ends) {
            groups.entry((s, t)).or_default().push(out);
        }
    }

    let mut observed: BTreeMap<BnId, Vec<&RawRecord>> = BTreeMap::new();
    for r in rsys {
        let Some(reference) = r.reference("sys") else {
            continue;
        };
        match participant_of(&reference) {
            Some(bn) => observed.entry(bn).or_default().push(r),
            None => inference.pending.push(PendingReference {
                record: SourceRef::of(r),
                field: "sys".into(),
                reference,
            }),
        }
    }

    for ((s, t), outs) in groups {
        let mut records: BTreeMap<&CompositeKey, &RawRecord> =
            outs.iter().map(|r| (&r.key, *r)).collect();
        for end in [s, t] {
            for r in observed.get(&end).into_iter().flatten() {
                records.insert(&r.key, r);
            }
        }
        inference.flows.insert(
            (s, t),
            FlowDraft {
                ends: FlowEnds {
                    source: s,
                    target: t,
                },
                members: records
                    .values()
                    .map(|r| MemberView::from_record(r))
                    .collect(),
                sources: records.values().map(|r| SourceRef::of(r)).collect(),
            },
        );
    }
    inference
}

/// Resolves `runs_on` records to participant → hosts edges.
pub fn infer_runs_on<F>(
    records: &[&RawRecord],
    resolve: F,
) -> (BTreeMap<BnId, BTreeSet<BnId>>, Vec<PendingReference>)
where
    F: Fn(&CompositeKey) -> Option<BnId>,
{
    let mut edges: BTreeMap<BnId, BTreeSet<BnId>> = BTreeMap::new();
    let mut pending = Vec::new();
    for r in records {
        let mut resolved = Vec::new();
        for (field, kind) in [("sys", EntityKind::Participant), ("host", EntityKind::Host)] {
            let Some(reference) = r.reference(field) else {
                continue;
            };
            match resolve(&reference).filter(|bn| bn.kind == kind) {
                Some(bn) => resolved.push(bn),
                None => pending.push(PendingReference {
                    record: SourceRef::of(r),
                    field: field.to_string(),
                    reference,
                }),
            }
        }
        if let [p, h] = resolved[..] {
            edges.entry(p).or_default().insert(h);
        }
    }
    (edges, pending)
}

/// Entities touched by a commit.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NetworkDelta {
    pub upserted: BTreeSet<BnId>,
    pub removed: BTreeSet<BnId>,
}

impl NetworkDelta {
    pub fn is_empty(&self) -> bool {
        self.upserted.is_empty() && self.removed.is_empty()
    }

    pub fn absorb(&mut self, other: NetworkDelta) {
        for bn in other.removed {
            self.upserted.remove(&bn);
            self.removed.insert(bn);
        }
        for bn in other.upserted {
            self.removed.remove(&bn);
            self.upserted.insert(bn);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct Counters {
    participant: u64,
    host: u64,
    mflow: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Network {
    entities: BTreeMap<BnId, NetworkEntity>,
    by_class: BTreeMap<ClassId, BnId>,
    /// Live flows by `(source, target)`; stored as a list for serialization.
    #[serde(with = "pairs")]
    flow_ids: BTreeMap<(BnId, BnId), BnId>,
    names: BTreeMap<String, BTreeSet<BnId>>,
    counters: Counters,
    pending: Vec<PendingReference>,
}

mod pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::BnId;

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<(BnId, BnId), BnId>,
        serializer: S,
    ) -> Result<S::Ok, S::Error> {
        let list: Vec<(&BnId, &BnId, &BnId)> = map.iter().map(|((a, b), f)| (a, b, f)).collect();
        list.serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> Result<BTreeMap<(BnId, BnId), BnId>, D::Error> {
        let list: Vec<(BnId, BnId, BnId)> = Vec::deserialize(deserializer)?;
        Ok(list.into_iter().map(|(a, b, f)| ((a, b), f)).collect())
    }
}

fn fold(name: &str) -> String {
    name.to_lowercase()
}

impl Network {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn get(&self, bn: &BnId) -> Option<&NetworkEntity> {
        self.entities.get(bn)
    }

    pub fn entities(&self) -> impl Iterator<Item = &NetworkEntity> {
        self.entities.values()
    }

    pub fn entities_of(&self, kind: EntityKind) -> impl Iterator<Item = &NetworkEntity> {
        self.entities.values().filter(move |e| e.kind == kind)
    }

    pub fn entity_for_class(&self, class: ClassId) -> Option<BnId> {
        self.by_class.get(&class).copied()
    }

    pub fn flow_between(&self, source: BnId, target: BnId) -> Option<BnId> {
        self.flow_ids.get(&(source, target)).copied()
    }

    /// References that did not resolve at the last commit.
    pub fn pending(&self) -> &[PendingReference] {
        &self.pending
    }

    pub fn set_pending(&mut self, mut pending: Vec<PendingReference>) {
        pending.sort();
        pending.dedup();
        self.pending = pending;
    }

    pub fn allocate(&mut self, kind: EntityKind) -> BnId {
        let counter = match kind {
            EntityKind::Participant => &mut self.counters.participant,
            EntityKind::Host => &mut self.counters.host,
            EntityKind::MessageFlow => &mut self.counters.mflow,
        };
        *counter += 1;
        BnId::new(kind, *counter)
    }

    /// Stores an entity; returns whether anything changed.
    pub fn put(&mut self, entity: NetworkEntity) -> bool {
        let bn = entity.bn_id;
        if let Some(old) = self.entities.get(&bn) {
            if old == &entity {
                return false;
            }
            let old_name = fold(&old.name);
            if let Some(set) = self.names.get_mut(&old_name) {
                set.remove(&bn);
                if set.is_empty() {
                    self.names.remove(&old_name);
                }
            }
        }
        if let Some(class) = entity.class_id {
            self.by_class.insert(class, bn);
        }
        if let Some(ends) = entity.endpoints {
            self.flow_ids.insert((ends.source, ends.target), bn);
        }
        self.names.entry(fold(&entity.name)).or_default().insert(bn);
        self.entities.insert(bn, entity);
        true
    }

    pub fn remove(&mut self, bn: &BnId) -> Option<NetworkEntity> {
        let entity = self.entities.remove(bn)?;
        if let Some(class) = entity.class_id {
            if self.by_class.get(&class) == Some(bn) {
                self.by_class.remove(&class);
            }
        }
        if let Some(ends) = entity.endpoints {
            if self.flow_ids.get(&(ends.source, ends.target)) == Some(bn) {
                self.flow_ids.remove(&(ends.source, ends.target));
            }
        }
        let name = fold(&entity.name);
        if let Some(set) = self.names.get_mut(&name) {
            set.remove(bn);
            if set.is_empty() {
                self.names.remove(&name);
            }
        }
        Some(entity)
    }

    /// Withdraws the entity of a class, if it has one.
    pub fn withdraw_class(&mut self, class: ClassId) -> Option<NetworkEntity> {
        let bn = self.by_class.get(&class).copied()?;
        self.remove(&bn)
    }

    /// Id for the entity of `class`: the current one, or a fresh one when
    /// the class has none (or had one of another kind).
    pub fn id_for_class(&mut self, class: ClassId, kind: EntityKind) -> (BnId, Option<BnId>) {
        match self.by_class.get(&class).copied() {
            Some(bn) if bn.kind == kind => (bn, None),
            Some(old) => (self.allocate(kind), Some(old)),
            None => (self.allocate(kind), None),
        }
    }

    /// Id for the flow between `source` and `target`.
    pub fn id_for_flow(&mut self, source: BnId, target: BnId) -> BnId {
        match self.flow_ids.get(&(source, target)) {
            Some(bn) => *bn,
            None => {
                let bn = self.allocate(EntityKind::MessageFlow);
                self.flow_ids.insert((source, target), bn);
                bn
            }
        }
    }

    /// Participant or host a raw key currently belongs to.
    pub fn resolve_class(&self, class: Option<ClassId>) -> Option<BnId> {
        class.and_then(|c| self.by_class.get(&c).copied())
    }

    /// Resolves an entity by literal id or by case-insensitive unique name.
    pub fn resolve_name(&self, name: &str) -> Result<BnId> {
        if let Ok(bn) = name.parse::<BnId>() {
            if self.entities.contains_key(&bn) {
                return Ok(bn);
            }
        }
        match self.names.get(&fold(name)) {
            None => Err(Error::NotFound(format!("no entity named {name:?}"))),
            Some(set) if set.len() == 1 => Ok(*set.iter().next().unwrap()),
            Some(set) => Err(Error::Ambiguous {
                name: name.to_string(),
                candidates: set.iter().map(BnId::to_string).collect(),
            }),
        }
    }

    /// Key mapping: every source record with the entity it maps to.
    pub fn key_mapping(&self) -> Vec<(SourceRef, BnId)> {
        let mut out: Vec<(SourceRef, BnId)> = self
            .entities
            .values()
            .flat_map(|e| e.sources.iter().map(move |s| (s.clone(), e.bn_id)))
            .collect();
        out.sort();
        out
    }

    pub fn export(&self) -> NetworkExport {
        let mut export = NetworkExport::default();
        for e in self.entities.values() {
            let doc = ExportEntity {
                bn_id: e.bn_id.to_string(),
                kind: e.kind,
                name: e.name.clone(),
                class_id: e.class_id.map(|c| c.to_string()),
                attributes: e.attributes.clone(),
                contributions: e
                    .contributions
                    .iter()
                    .map(|(f, c)| (f.clone(), c.to_string()))
                    .collect(),
                sources: e.sources.iter().map(SourceRef::to_string).collect(),
                source: e.endpoints.map(|x| x.source.to_string()),
                target: e.endpoints.map(|x| x.target.to_string()),
                hosts: e.hosts.iter().map(BnId::to_string).collect(),
                labels: e.labels.iter().cloned().collect(),
                groups: e.groups.iter().cloned().collect(),
            };
            match e.kind {
                EntityKind::MessageFlow => export.flows.push(doc),
                _ => export.entities.push(doc),
            }
        }
        export.mappings = self
            .key_mapping()
            .into_iter()
            .map(|(s, bn)| MappingEntry {
                source: s.to_string(),
                bn_id: bn.to_string(),
            })
            .collect();
        export
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportEntity {
    pub bn_id: String,
    pub kind: EntityKind,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_id: Option<String>,
    pub attributes: BTreeMap<String, String>,
    pub contributions: BTreeMap<String, String>,
    pub sources: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hosts: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingEntry {
    pub source: String,
    pub bn_id: String,
}

/// Network export document: `entities[]`, `flows[]`, `mappings[]`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkExport {
    pub entities: Vec<ExportEntity>,
    pub flows: Vec<ExportEntity>,
    pub mappings: Vec<MappingEntry>,
}

impl NetworkExport {
    /// Replaces generated ids with fingerprints derived from the source
    /// records (participants/hosts: their sources; flows: their endpoint
    /// fingerprints) and drops class ids, so that exports of the same raw
    /// state compare equal whatever order ids were handed out in.
    pub fn normalized(&self) -> NetworkExport {
        let mut fp: BTreeMap<String, String> = BTreeMap::new();
        for e in &self.entities {
            fp.insert(
                e.bn_id.clone(),
                format!("{}[{}]", e.kind, e.sources.join(",")),
            );
        }
        for f in &self.flows {
            let end = |x: &Option<String>| {
                x.as_ref()
                    .and_then(|id| fp.get(id))
                    .cloned()
                    .unwrap_or_default()
            };
            let print = format!("MessageFlow[{}->{}]", end(&f.source), end(&f.target));
            fp.insert(f.bn_id.clone(), print);
        }
        let map = |id: &String| fp.get(id).cloned().unwrap_or_else(|| id.clone());
        let rewrite = |e: &ExportEntity| {
            let mut e = e.clone();
            e.bn_id = map(&e.bn_id);
            e.class_id = None;
            e.source = e.source.as_ref().map(map);
            e.target = e.target.as_ref().map(map);
            e.hosts = e.hosts.iter().map(map).collect();
            e.hosts.sort();
            e
        };
        let mut entities: Vec<ExportEntity> = self.entities.iter().map(rewrite).collect();
        entities.sort_by(|a, b| a.bn_id.cmp(&b.bn_id));
        let mut flows: Vec<ExportEntity> = self.flows.iter().map(rewrite).collect();
        flows.sort_by(|a, b| a.bn_id.cmp(&b.bn_id));
        let mut mappings: Vec<MappingEntry> = self
            .mappings
            .iter()
            .map(|m| MappingEntry {
                source: m.source.clone(),
                bn_id: map(&m.bn_id),
            })
            .collect();
        mappings.sort_by(|a, b| (&a.source, &a.bn_id).cmp(&(&b.source, &b.bn_id)));
        NetworkExport {
            entities,
            flows,
            mappings,
        }
    }
}
