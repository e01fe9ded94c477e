//! The conform raw data layer.
//!
//! Records are stored under a [`CompositeKey`] so that identifiers which are
//! only unique inside one source never collide across sources. Records from
//! the same origin with the same identifier are merged on the way in;
//! everything else stays a separate record.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::content_hash;
use crate::key::{CompositeKey, RecordId, RecordKind, ORIGIN_SEPARATOR};
use crate::snapshot::SnapshotRecord;

/// Separator of member ids in the combined key of a `same_sys` fact.
pub const COMBINED_KEY_SEPARATOR: char = '+';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// The snapshot is the complete content of the origin: absent records
    /// are tombstoned and empty values clear stored ones.
    Full,
    /// The snapshot only adds or changes records.
    Delta,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub key: CompositeKey,
    pub kind: RecordKind,
    /// Non-empty values only; an empty value is an absent value.
    pub fields: BTreeMap<String, String>,
    pub load_seq: u64,
}

impl RawRecord {
    pub fn field(&self, name: &str) -> Option<&str> {
        self.fields.get(name).map(String::as_str)
    }

    /// Resolves a reference-valued field to the key it points at.
    pub fn reference(&self, field: &str) -> Option<CompositeKey> {
        self.field(field)
            .map(|r| CompositeKey::resolve_ref(&self.key.origin, r))
    }

    /// Member keys of a `same_sys` fact, taken from its combined key.
    pub fn combined_members(&self) -> Vec<CompositeKey> {
        match (&self.kind, &self.key.id) {
            (RecordKind::SameSys, RecordId::Local(id)) => id
                .split(COMBINED_KEY_SEPARATOR)
                .map(|m| CompositeKey::resolve_ref(&self.key.origin, m))
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Wire form of the record, as a source would hold it.
    pub fn to_snapshot(&self) -> SnapshotRecord {
        let (id, ids) = match (&self.kind, &self.key.id) {
            (RecordKind::SameSys, RecordId::Local(id)) => (
                None,
                Some(
                    id.split(COMBINED_KEY_SEPARATOR)
                        .map(str::to_string)
                        .collect(),
                ),
            ),
            (_, RecordId::Local(id)) => (Some(id.clone()), None),
            (_, RecordId::Hash(_)) => (None, None),
        };
        SnapshotRecord {
            kind: self.kind.to_string(),
            origin: Some(self.key.origin.clone()),
            id,
            ids,
            fields: self.fields.clone(),
        }
    }
}

/// Input to [`RawStore::upsert_record`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordInput {
    pub kind: RecordKind,
    pub local_id: Option<String>,
    /// Member ids, only for `same_sys`.
    pub ids: Vec<String>,
    pub fields: BTreeMap<String, String>,
}

impl RecordInput {
    pub fn new(kind: impl Into<RecordKind>, local_id: Option<&str>) -> Self {
        RecordInput {
            kind: kind.into(),
            local_id: local_id.filter(|s| !s.is_empty()).map(str::to_string),
            ids: Vec::new(),
            fields: BTreeMap::new(),
        }
    }

    pub fn same(ids: &[&str]) -> Self {
        RecordInput {
            kind: RecordKind::SameSys,
            local_id: None,
            ids: ids.iter().map(|s| s.to_string()).collect(),
            fields: BTreeMap::new(),
        }
    }

    pub fn field(mut self, name: &str, value: &str) -> Self {
        self.fields.insert(name.to_string(), value.to_string());
        self
    }

    pub fn from_snapshot(record: SnapshotRecord) -> Self {
        RecordInput {
            kind: RecordKind::from(record.kind.as_str()),
            local_id: record.id.filter(|s| !s.is_empty()),
            ids: record.ids.unwrap_or_default(),
            fields: record.fields,
        }
    }
}

impl From<RecordKind> for RecordInput {
    fn from(kind: RecordKind) -> Self {
        RecordInput {
            kind,
            local_id: None,
            ids: Vec::new(),
            fields: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsertStatus {
    Created,
    Updated,
    Unchanged,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpsertOutcome {
    pub key: CompositeKey,
    pub status: UpsertStatus,
    /// Names of fields whose value changed (empty unless updated).
    pub changed: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub origin: String,
    pub mode: Mode,
    /// Non-blank lines processed.
    pub lines: usize,
    pub created: usize,
    pub updated: usize,
    pub unchanged: usize,
    pub tombstoned: usize,
    pub rejected: Vec<Rejection>,
}

impl IngestReport {
    fn new(origin: &str, mode: Mode) -> Self {
        IngestReport {
            origin: origin.to_string(),
            mode,
            lines: 0,
            created: 0,
            updated: 0,
            unchanged: 0,
            tombstoned: 0,
            rejected: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op", content = "fields")]
pub enum ChangeOp {
    Created,
    Updated(BTreeSet<String>),
    Tombstoned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordChange {
    pub key: CompositeKey,
    pub kind: RecordKind,
    pub op: ChangeOp,
}

/// Keys touched by one ingestion, consumed by the inference pipeline.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChangeSet {
    changes: BTreeMap<CompositeKey, RecordChange>,
}

impl ChangeSet {
    pub fn is_empty(&self) -> bool {
        self.changes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.changes.len()
    }

    /// Changes in key order.
    pub fn iter(&self) -> impl Iterator<Item = &RecordChange> {
        self.changes.values()
    }

    pub fn get(&self, key: &CompositeKey) -> Option<&RecordChange> {
        self.changes.get(key)
    }

    /// Folds a single upsert/tombstone into the set. A key created and then
    /// updated within one set stays `Created`; created and then tombstoned
    /// disappears.
    pub fn record(&mut self, key: &CompositeKey, kind: &RecordKind, op: ChangeOp) {
        let Some(existing) = self.changes.get_mut(key) else {
            self.changes.insert(
                key.clone(),
                RecordChange {
                    key: key.clone(),
                    kind: kind.clone(),
                    op,
                },
            );
            return;
        };
        let merged = match (&existing.op, op) {
            (ChangeOp::Created, ChangeOp::Updated(_)) => Some(ChangeOp::Created),
            (ChangeOp::Created, ChangeOp::Tombstoned) => None,
            (ChangeOp::Updated(a), ChangeOp::Updated(b)) => {
                Some(ChangeOp::Updated(a.union(&b).cloned().collect()))
            }
            // Tombstoned and recreated: every field may differ.
            (ChangeOp::Tombstoned, ChangeOp::Created) => Some(ChangeOp::Created),
            (_, op) => Some(op),
        };
        match merged {
            Some(op) => {
                existing.op = op;
                existing.kind = kind.clone();
            }
            None => {
                self.changes.remove(key);
            }
        }
    }

    pub fn extend(&mut self, other: ChangeSet) {
        for c in other.changes.into_values() {
            self.record(&c.key, &c.kind, c.op);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawStore {
    records: BTreeMap<CompositeKey, RawRecord>,
    next_seq: u64,
}

impl RawStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, key: &CompositeKey) -> Option<&RawRecord> {
        self.records.get(key)
    }

    pub fn contains(&self, key: &CompositeKey) -> bool {
        self.records.contains_key(key)
    }

    pub fn records(&self) -> impl Iterator<Item = &RawRecord> {
        self.records.values()
    }

    pub fn origin_records<'a>(&'a self, origin: &'a str) -> impl Iterator<Item = &'a RawRecord> {
        self.records
            .values()
            .filter(move |r| r.key.origin == origin)
    }

    pub fn origins(&self) -> BTreeSet<&str> {
        self.records.keys().map(|k| k.origin.as_str()).collect()
    }

    /// Store content without load sequence numbers, for state comparison.
    pub fn content(&self) -> BTreeMap<CompositeKey, (RecordKind, BTreeMap<String, String>)> {
        self.records
            .iter()
            .map(|(k, r)| (k.clone(), (r.kind.clone(), r.fields.clone())))
            .collect()
    }

    /// Computes the key an input would be stored under.
    pub fn key_for(origin: &str, input: &RecordInput) -> Result<CompositeKey> {
        if origin.is_empty() {
            return Err(Error::Rejected("missing origin".into()));
        }
        if origin.contains(ORIGIN_SEPARATOR) {
            return Err(Error::Rejected(format!(
                "origin {origin:?} must not contain {ORIGIN_SEPARATOR:?}"
            )));
        }
        if input.kind == RecordKind::SameSys {
            let mut ids: Vec<&str> = input
                .ids
                .iter()
                .map(String::as_str)
                .filter(|s| !s.is_empty())
                .collect();
            ids.sort_unstable();
            ids.dedup();
            if ids.len() < 2 {
                return Err(Error::Rejected(
                    "same_sys needs at least two distinct ids".into(),
                ));
            }
            if ids.iter().any(|id| id.contains(COMBINED_KEY_SEPARATOR)) {
                return Err(Error::Rejected(format!(
                    "same_sys ids must not contain {COMBINED_KEY_SEPARATOR:?}"
                )));
            }
            let combined = ids.join(&COMBINED_KEY_SEPARATOR.to_string());
            return Ok(CompositeKey::local(origin, combined));
        }
        match &input.local_id {
            Some(id) if id.starts_with('#') => Err(Error::Rejected(format!(
                "local id {id:?} must not start with '#'"
            ))),
            Some(id) => Ok(CompositeKey::local(origin, id.clone())),
            None => {
                if input.fields.values().all(String::is_empty) {
                    return Err(Error::Rejected(
                        "record has neither an id nor any field value".into(),
                    ));
                }
                Ok(CompositeKey::hashed(
                    origin,
                    content_hash(input.kind.as_str(), &input.fields),
                ))
            }
        }
    }

    /// Inserts or merges one record.
    ///
    /// Same origin and id: field-wise update. In [`Mode::Full`] the incoming
    /// record replaces the stored fields (empty clears); in [`Mode::Delta`]
    /// only non-empty incoming values are applied.
    pub fn upsert_record(
        &mut self,
        origin: &str,
        input: RecordInput,
        mode: Mode,
    ) -> Result<UpsertOutcome> {
        let key = Self::key_for(origin, &input)?;
        let incoming: BTreeMap<String, String> = input
            .fields
            .into_iter()
            .filter(|(_, v)| !v.is_empty())
            .collect();
        self.next_seq += 1;
        let seq = self.next_seq;

        let Some(existing) = self.records.get_mut(&key) else {
            self.records.insert(
                key.clone(),
                RawRecord {
                    key: key.clone(),
                    kind: input.kind,
                    fields: incoming,
                    load_seq: seq,
                },
            );
            return Ok(UpsertOutcome {
                key,
                status: UpsertStatus::Created,
                changed: BTreeSet::new(),
            });
        };

        if existing.kind != input.kind {
            return Err(Error::Rejected(format!(
                "{key} is already stored as kind {}, not {}",
                existing.kind, input.kind
            )));
        }

        let merged = match mode {
            Mode::Full => incoming,
            Mode::Delta => {
                let mut m = existing.fields.clone();
                m.extend(incoming);
                m
            }
        };
        let changed: BTreeSet<String> = existing
            .fields
            .keys()
            .chain(merged.keys())
            .filter(|f| existing.fields.get(*f) != merged.get(*f))
            .cloned()
            .collect();
        existing.load_seq = seq;
        if changed.is_empty() {
            return Ok(UpsertOutcome {
                key,
                status: UpsertStatus::Unchanged,
                changed,
            });
        }
        existing.fields = merged;
        Ok(UpsertOutcome {
            key,
            status: UpsertStatus::Updated,
            changed,
        })
    }

    pub fn remove(&mut self, key: &CompositeKey) -> Option<RawRecord> {
        self.records.remove(key)
    }

    /// Ingests a snapshot of one origin. Malformed lines are rejected and
    /// reported with their 1-based line number; blank lines are skipped.
    pub fn ingest_lines<'a, I>(
        &mut self,
        origin: &str,
        lines: I,
        mode: Mode,
    ) -> Result<(IngestReport, ChangeSet)>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if origin.is_empty() || origin.contains(ORIGIN_SEPARATOR) {
            return Err(Error::BadParameter(format!("invalid origin {origin:?}")));
        }
        let mut report = IngestReport::new(origin, mode);
        let mut changes = ChangeSet::default();
        let mut seen = BTreeSet::new();

        for (idx, line) in lines.into_iter().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            report.lines += 1;
            let lineno = idx + 1;
            let reject = |report: &mut IngestReport, reason: String| {
                report.rejected.push(Rejection {
                    line: lineno,
                    reason,
                })
            };
            let record = match SnapshotRecord::parse_line(line) {
                Ok(r) => r,
                Err(e) => {
                    reject(&mut report, format!("malformed record: {e}"));
                    continue;
                }
            };
            match record.origin.as_deref() {
                None | Some("") => {
                    reject(&mut report, "missing origin".into());
                    continue;
                }
                Some(o) if o != origin => {
                    reject(
                        &mut report,
                        format!("record origin {o:?} does not match snapshot origin {origin:?}"),
                    );
                    continue;
                }
                Some(_) => {}
            }
            let input = RecordInput::from_snapshot(record);
            let kind = input.kind.clone();
            match self.upsert_record(origin, input, mode) {
                Ok(outcome) => {
                    seen.insert(outcome.key.clone());
                    match outcome.status {
                        UpsertStatus::Created => {
                            report.created += 1;
                            changes.record(&outcome.key, &kind, ChangeOp::Created);
                        }
                        UpsertStatus::Updated => {
                            report.updated += 1;
                            changes.record(&outcome.key, &kind, ChangeOp::Updated(outcome.changed));
                        }
                        UpsertStatus::Unchanged => report.unchanged += 1,
                    }
                }
                Err(e) => reject(&mut report, e.to_string()),
            }
        }

        if mode == Mode::Full {
            let stale: Vec<CompositeKey> = self
                .origin_records(origin)
                .filter(|r| !seen.contains(&r.key))
                .map(|r| r.key.clone())
                .collect();
            for key in stale {
                if let Some(old) = self.records.remove(&key) {
                    report.tombstoned += 1;
                    changes.record(&key, &old.kind, ChangeOp::Tombstoned);
                }
            }
        }
        Ok((report, changes))
    }
}
