//! Preserving merge of an equivalence class into one surrogate.
//!
//! All members are kept. Members are ranked by a single total order and
//! every surrogate field takes the first non-empty value in that order,
//! unless a user enhancement sets the field. The leading member therefore
//! wins every field it has, and the remaining fields are filled in from the
//! next members. The contributor of each field is recorded, which is what
//! field lineage and write-back are built on.
//!
//! The total order is:
//!
//! 1. instance-level override rank (records with an override first, lower
//!    rank first),
//! 2. source-type priority of the record's origin,
//! 3. completeness, descending,
//! 4. origin, ascending,
//! 5. local id / hash, ascending.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::equivalence::ClassId;
use crate::error::{Error, Result};
use crate::key::{CompositeKey, RecordId, RecordKind};
use crate::raw_store::RawRecord;

/// User-set field values of one entity.
pub type Enhancements = BTreeMap<String, String>;

/// Relevance configuration of the surrogate function.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourcePriorityConfig {
    /// Source types, most relevant first.
    #[serde(default)]
    pub types: Vec<String>,
    /// Origin → source type.
    #[serde(default)]
    pub origins: BTreeMap<String, String>,
    /// Per-record rank overrides; lower ranks first.
    #[serde(default)]
    pub overrides: BTreeMap<CompositeKey, i64>,
}

/// Rank of an origin's source type: listed types by position, then
/// unlisted types by name, then origins without a type.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum TypeRank<'a> {
    Listed(usize),
    Unlisted(&'a str),
    Untyped,
}

impl SourcePriorityConfig {
    fn type_rank(&self, origin: &str) -> TypeRank<'_> {
        match self.origins.get(origin) {
            Some(t) => match self.types.iter().position(|x| x == t) {
                Some(i) => TypeRank::Listed(i),
                None => TypeRank::Unlisted(t),
            },
            None => TypeRank::Untyped,
        }
    }

    fn override_rank(&self, key: &CompositeKey) -> (u8, i64) {
        match self.overrides.get(key) {
            Some(r) => (0, *r),
            None => (1, 0),
        }
    }
}

/// Who supplied a surrogate value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Contributor {
    Source(CompositeKey),
    User,
}

impl Contributor {
    pub fn source(&self) -> Option<&CompositeKey> {
        match self {
            Contributor::Source(k) => Some(k),
            Contributor::User => None,
        }
    }
}

impl fmt::Display for Contributor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Contributor::Source(k) => k.fmt(f),
            Contributor::User => f.write_str("user"),
        }
    }
}

impl Serialize for Contributor {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Contributor {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        if s == "user" {
            return Ok(Contributor::User);
        }
        s.parse()
            .map(Contributor::Source)
            .map_err(serde::de::Error::custom)
    }
}

/// A member as seen by the surrogate function: its key and the fields it
/// can contribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemberView {
    pub key: CompositeKey,
    pub fields: BTreeMap<String, String>,
}

impl MemberView {
    pub fn new(key: CompositeKey, fields: BTreeMap<String, String>) -> Self {
        let fields = fields.into_iter().filter(|(_, v)| !v.is_empty()).collect();
        MemberView { key, fields }
    }

    pub fn from_record(record: &RawRecord) -> Self {
        MemberView {
            key: record.key.clone(),
            fields: contributed_fields(record),
        }
    }
}

/// Fields a record contributes to an entity. A prop fragment contributes
/// its single `key` = `value` pair; reference fields are never data.
pub fn contributed_fields(record: &RawRecord) -> BTreeMap<String, String> {
    match record.kind {
        RecordKind::Prop => match (record.field("key"), record.field("value")) {
            (Some(k), Some(v)) => BTreeMap::from([(k.to_string(), v.to_string())]),
            _ => BTreeMap::new(),
        },
        ref kind => {
            let skip = kind.reference_fields();
            record
                .fields
                .iter()
                .filter(|(name, v)| !v.is_empty() && !skip.contains(&name.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect()
        }
    }
}

/// Number of non-empty contributed fields.
pub fn completeness(member: &MemberView) -> usize {
    member.fields.values().filter(|v| !v.is_empty()).count()
}

type RankKey<'a> = (
    (u8, i64),
    TypeRank<'a>,
    Reverse<usize>,
    &'a str,
    &'a RecordId,
);

fn rank_key<'a>(member: &'a MemberView, config: &'a SourcePriorityConfig) -> RankKey<'a> {
    (
        config.override_rank(&member.key),
        config.type_rank(&member.key.origin),
        Reverse(completeness(member)),
        member.key.origin.as_str(),
        &member.key.id,
    )
}

/// Members in surrogate order; the first one leads.
pub fn order_members<'a>(
    members: &'a [MemberView],
    config: &SourcePriorityConfig,
) -> Vec<&'a MemberView> {
    let mut ordered: Vec<&MemberView> = members.iter().collect();
    ordered.sort_by(|a, b| rank_key(a, config).cmp(&rank_key(b, config)));
    ordered
}

/// Field values and their contributors.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub values: BTreeMap<String, String>,
    pub contributions: BTreeMap<String, Contributor>,
}

impl Selection {
    fn set(&mut self, field: &str, pick: Option<(String, Contributor)>) {
        match pick {
            Some((v, c)) => {
                self.values.insert(field.to_string(), v);
                self.contributions.insert(field.to_string(), c);
            }
            None => {
                self.values.remove(field);
                self.contributions.remove(field);
            }
        }
    }
}

/// First non-empty value of `field` along `ordered`, ignoring enhancements.
pub fn discovered_value<'a>(
    ordered: &[&'a MemberView],
    field: &str,
) -> Option<(&'a str, &'a CompositeKey)> {
    ordered.iter().find_map(|m| {
        m.fields
            .get(field)
            .filter(|v| !v.is_empty())
            .map(|v| (v.as_str(), &m.key))
    })
}

fn pick(
    ordered: &[&MemberView],
    enhancements: &Enhancements,
    field: &str,
) -> Option<(String, Contributor)> {
    if let Some(v) = enhancements.get(field).filter(|v| !v.is_empty()) {
        return Some((v.clone(), Contributor::User));
    }
    discovered_value(ordered, field).map(|(v, k)| (v.to_string(), Contributor::Source(k.clone())))
}

/// Per-field selection over already ordered members.
pub fn select(ordered: &[&MemberView], enhancements: &Enhancements) -> Selection {
    let fields: BTreeSet<&String> = ordered
        .iter()
        .flat_map(|m| m.fields.keys())
        .chain(enhancements.keys())
        .collect();
    let mut selection = Selection::default();
    for f in fields {
        selection.set(f, pick(ordered, enhancements, f));
    }
    selection
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Surrogate {
    pub class_id: ClassId,
    pub values: BTreeMap<String, String>,
    pub contributions: BTreeMap<String, Contributor>,
    pub leading_member: CompositeKey,
}

/// Builds the surrogate of a class from scratch. `None` for an empty class.
pub fn compute_surrogate(
    class_id: ClassId,
    members: &[MemberView],
    config: &SourcePriorityConfig,
    enhancements: &Enhancements,
) -> Option<Surrogate> {
    let ordered = order_members(members, config);
    let leading_member = ordered.first()?.key.clone();
    let Selection {
        values,
        contributions,
    } = select(&ordered, enhancements);
    Some(Surrogate {
        class_id,
        values,
        contributions,
        leading_member,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Cached {
    surrogate: Surrogate,
    order: Vec<CompositeKey>,
}

#[derive(Debug, PartialEq, Eq)]
pub enum MemberRemoved<'a> {
    Updated(&'a Surrogate),
    /// The class is empty: its entity leaves the network.
    EntityRemoved,
}

/// Current surrogates with the member order they were computed under, so
/// that later changes only re-select the affected fields.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurrogateStore {
    entries: BTreeMap<ClassId, Cached>,
}

fn keys_of(ordered: &[&MemberView]) -> Vec<CompositeKey> {
    ordered.iter().map(|m| m.key.clone()).collect()
}

impl SurrogateStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, class: ClassId) -> Option<&Surrogate> {
        self.entries.get(&class).map(|c| &c.surrogate)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Surrogate> {
        self.entries.values().map(|c| &c.surrogate)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn remove(&mut self, class: ClassId) -> Option<Surrogate> {
        self.entries.remove(&class).map(|c| c.surrogate)
    }

    /// Full recomputation. Removes the entry for an empty class.
    pub fn compute(
        &mut self,
        class: ClassId,
        members: &[MemberView],
        config: &SourcePriorityConfig,
        enhancements: &Enhancements,
    ) -> Option<&Surrogate> {
        let ordered = order_members(members, config);
        let Some(surrogate) = compute_surrogate(class, members, config, enhancements) else {
            self.entries.remove(&class);
            return None;
        };
        self.entries.insert(
            class,
            Cached {
                surrogate,
                order: keys_of(&ordered),
            },
        );
        self.get(class)
    }

    /// Re-selects only `changed` fields. Falls back to a full computation
    /// when the member order itself changed (a completeness change can move
    /// a member past another).
    pub fn delta_update(
        &mut self,
        class: ClassId,
        members: &[MemberView],
        config: &SourcePriorityConfig,
        enhancements: &Enhancements,
        changed: &BTreeSet<String>,
    ) -> Result<&Surrogate> {
        let cached = self
            .entries
            .get(&class)
            .ok_or_else(|| Error::NotFound(format!("no surrogate for class {class}")))?;
        if changed.is_empty() {
            return Ok(&self.entries[&class].surrogate);
        }
        let ordered = order_members(members, config);
        if keys_of(&ordered) != cached.order {
            return self
                .compute(class, members, config, enhancements)
                .ok_or_else(|| Error::NotFound(format!("class {class} is empty")));
        }
        let cached = self.entries.get_mut(&class).unwrap();
        let mut selection = Selection {
            values: std::mem::take(&mut cached.surrogate.values),
            contributions: std::mem::take(&mut cached.surrogate.contributions),
        };
        for f in changed {
            selection.set(f, pick(&ordered, enhancements, f));
        }
        cached.surrogate.values = selection.values;
        cached.surrogate.contributions = selection.contributions;
        Ok(&cached.surrogate)
    }

    /// Deletion fallback: fields the removed member contributed are taken
    /// from the next members in order. `members` are the remaining members.
    pub fn on_member_removed(
        &mut self,
        class: ClassId,
        removed: &CompositeKey,
        members: &[MemberView],
        config: &SourcePriorityConfig,
        enhancements: &Enhancements,
    ) -> MemberRemoved<'_> {
        if members.is_empty() {
            self.entries.remove(&class);
            return MemberRemoved::EntityRemoved;
        }
        let ordered = order_members(members, config);
        let order = keys_of(&ordered);
        let reusable = self.entries.get(&class).is_some_and(|cached| {
            cached
                .order
                .iter()
                .filter(|k| *k != removed)
                .eq(order.iter())
        });
        if !reusable {
            let s = self.compute(class, members, config, enhancements).unwrap();
            return MemberRemoved::Updated(s);
        }
        let cached = self.entries.get_mut(&class).unwrap();
        let affected: Vec<String> = cached
            .surrogate
            .contributions
            .iter()
            .filter(|(_, c)| c.source() == Some(removed))
            .map(|(f, _)| f.clone())
            .collect();
        let mut selection = Selection {
            values: std::mem::take(&mut cached.surrogate.values),
            contributions: std::mem::take(&mut cached.surrogate.contributions),
        };
        for f in &affected {
            selection.set(f, pick(&ordered, enhancements, f));
        }
        cached.surrogate.values = selection.values;
        cached.surrogate.contributions = selection.contributions;
        cached.surrogate.leading_member = order[0].clone();
        cached.order = order;
        MemberRemoved::Updated(&cached.surrogate)
    }
}
