//! Lineage of network entities back to raw records.
//!
//! An entity fed by a single record is the output of a black-box
//! transformation of that record; an entity fed by several is an
//! aggregation. Every surrogate field additionally names the member (or the
//! user) it came from.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::key::{CompositeKey, RecordKind};
use crate::network::{BnId, NetworkEntity};
use crate::raw_store::RawRecord;
use crate::surrogate::Contributor;

/// A raw record together with its kind; displayed as `kind:id@origin`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceRef {
    pub key: CompositeKey,
    pub kind: RecordKind,
}

impl SourceRef {
    pub fn new(key: CompositeKey, kind: RecordKind) -> Self {
        SourceRef { key, kind }
    }

    pub fn of(record: &RawRecord) -> Self {
        SourceRef::new(record.key.clone(), record.kind.clone())
    }
}

impl fmt::Display for SourceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}@{}", self.kind, self.key.id, self.key.origin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transformation {
    BlackBox,
    Aggregator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageRecord {
    pub bn_id: BnId,
    pub transformation: Transformation,
    pub sources: BTreeSet<SourceRef>,
    pub field_contributions: BTreeMap<String, Contributor>,
}

impl LineageRecord {
    pub fn of(entity: &NetworkEntity) -> Self {
        let transformation = if entity.sources.len() == 1 {
            Transformation::BlackBox
        } else {
            Transformation::Aggregator
        };
        LineageRecord {
            bn_id: entity.bn_id,
            transformation,
            sources: entity.sources.clone(),
            field_contributions: entity.contributions.clone(),
        }
    }

    /// JSON view used by the API.
    pub fn to_document(&self) -> Value {
        let kinds: BTreeMap<&CompositeKey, &SourceRef> =
            self.sources.iter().map(|s| (&s.key, s)).collect();
        let sources: Vec<Value> = self
            .sources
            .iter()
            .map(|s| {
                json!({
                    "ref": s.to_string(),
                    "kind": s.kind.as_str(),
                    "origin": s.key.origin,
                    "key": s.key.to_string(),
                })
            })
            .collect();
        let fields: serde_json::Map<String, Value> = self
            .field_contributions
            .iter()
            .map(|(f, c)| {
                let mut v = json!({ "contributor": c.to_string() });
                if let Some(s) = c.source().and_then(|k| kinds.get(k)) {
                    v["ref"] = Value::String(s.to_string());
                }
                (f.clone(), v)
            })
            .collect();
        json!({
            "bn_id": self.bn_id.to_string(),
            "transformation": self.transformation,
            "sources": sources,
            "field_contributions": fields,
        })
    }
}

/// Materialized lineage with a reverse index from raw keys to entities.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageStore {
    records: BTreeMap<BnId, LineageRecord>,
    #[serde(skip)]
    reverse: BTreeMap<CompositeKey, BTreeSet<BnId>>,
}

impl LineageStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &LineageRecord> {
        self.records.values()
    }

    pub fn set(&mut self, record: LineageRecord) {
        self.remove(&record.bn_id);
        for s in &record.sources {
            self.reverse
                .entry(s.key.clone())
                .or_default()
                .insert(record.bn_id);
        }
        self.records.insert(record.bn_id, record);
    }

    pub fn remove(&mut self, bn: &BnId) -> Option<LineageRecord> {
        let old = self.records.remove(bn)?;
        for s in &old.sources {
            if let Some(set) = self.reverse.get_mut(&s.key) {
                set.remove(bn);
                if set.is_empty() {
                    self.reverse.remove(&s.key);
                }
            }
        }
        Some(old)
    }

    /// Rebuilds the reverse index after deserialization.
    pub fn reindex(&mut self) {
        let records = std::mem::take(&mut self.records);
        self.reverse.clear();
        for r in records.into_values() {
            self.set(r);
        }
    }

    pub fn lineage(&self, bn: &BnId) -> Result<&LineageRecord> {
        self.records
            .get(bn)
            .ok_or_else(|| Error::NotFound(format!("no entity {bn}")))
    }

    /// Contributor of one field of an entity.
    pub fn trace_field(&self, bn: &BnId, field: &str) -> Result<&Contributor> {
        self.lineage(bn)?
            .field_contributions
            .get(field)
            .ok_or_else(|| Error::NotFound(format!("{bn} has no field {field:?}")))
    }

    /// Entities a raw record feeds.
    pub fn reverse_lookup(&self, key: &CompositeKey) -> BTreeSet<BnId> {
        self.reverse.get(key).cloned().unwrap_or_default()
    }
}
