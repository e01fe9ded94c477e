//! The engine: one writer that turns raw changes and curation into a new
//! published network.
//!
//! Every mutation runs the same commit: structural equivalence changes,
//! migration of curation across merges, surrogate maintenance for the
//! touched classes only, materialization of their entities, re-inference
//! of flows and runs-on edges, then lineage and index updates from the
//! resulting entity delta. Readers hold an `Arc` of the last published
//! state and never see a commit half-way.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::adapter::{AdapterRegistry, FileSources};
use crate::config::EngineConfig;
use crate::curation::{
    Anchor, Curation, Enhancement, EnhancementOp, EnhancementStatus, EnrichmentArtifact,
    RecordEdit, WriteBackPlan,
};
use crate::equivalence::{
    apply_rules, AssertionSource, ClassDelta, ClassId, Equivalence, EquivalenceAssertion,
    MatchRule, Removal,
};
use crate::error::{Error, Result};
use crate::key::{CompositeKey, RecordId, RecordKind};
use crate::network::{
    display_name, infer_message_flows, infer_runs_on, BnId, EntityKind, Network, NetworkDelta,
    NetworkEntity, NetworkExport,
};
use crate::provenance::{LineageRecord, LineageStore, SourceRef};
use crate::query::{self, NetworkIndex, SearchHit, SearchParams, ShowPaths};
use crate::raw_store::{
    ChangeOp, ChangeSet, IngestReport, Mode, RawRecord, RawStore, RecordInput, UpsertOutcome,
    UpsertStatus,
};
use crate::snapshot::SnapshotRecord;
use crate::surrogate::{
    discovered_value, order_members, select, MemberView, SourcePriorityConfig, SurrogateStore,
};

/// Inference settings: surrogate priorities and match rules.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Settings {
    pub priorities: SourcePriorityConfig,
    pub rules: Vec<MatchRule>,
}

impl From<&EngineConfig> for Settings {
    fn from(c: &EngineConfig) -> Self {
        Settings {
            priorities: c.priorities.clone(),
            rules: c.rules.clone(),
        }
    }
}

/// The state readers query: network, lineage and index of one commit.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Published {
    pub network: Network,
    pub lineage: LineageStore,
    pub index: NetworkIndex,
}

impl Published {
    pub fn resolve(&self, name: &str) -> Result<BnId> {
        self.network.resolve_name(name)
    }

    pub fn entity(&self, bn: &BnId) -> Result<&NetworkEntity> {
        self.network
            .get(bn)
            .ok_or_else(|| Error::NotFound(format!("no entity {bn}")))
    }

    pub fn search(&self, params: &SearchParams) -> Result<Vec<SearchHit>> {
        query::search(&self.network, &self.index, params)
    }

    pub fn project(&self, bn: &BnId, paths: &ShowPaths) -> Result<Value> {
        query::project(&self.network, &self.index, bn, paths)
    }

    pub fn neighbors(&self, bn: &BnId, kind: Option<EntityKind>) -> Result<Vec<BnId>> {
        query::neighbors(&self.network, &self.index, bn, kind)
    }

    pub fn lineage(&self, bn: &BnId) -> Result<&LineageRecord> {
        self.lineage.lineage(bn)
    }

    pub fn export(&self) -> NetworkExport {
        self.network.export()
    }
}

/// What a commit did to the published network.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitSummary {
    pub upserted: usize,
    pub removed: usize,
    /// Equivalence assertions refused (kind category conflicts).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected_assertions: Vec<String>,
    /// References to records not (yet) present.
    pub pending_references: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadOutcome {
    #[serde(flatten)]
    pub report: IngestReport,
    pub network: CommitSummary,
}

#[derive(Debug, Default)]
struct Work {
    full: BTreeSet<ClassId>,
    fields: BTreeMap<ClassId, BTreeSet<String>>,
    shrunk: BTreeMap<ClassId, Vec<CompositeKey>>,
    gone: BTreeSet<ClassId>,
    merged: Vec<(ClassId, ClassId)>,
    rejected: Vec<String>,
    /// Entities whose curation artifacts changed.
    decorate: BTreeSet<BnId>,
}

impl Work {
    fn absorb(&mut self, delta: ClassDelta) {
        self.full.extend(delta.created);
        self.full.extend(delta.changed);
        self.gone.extend(delta.removed);
        for (absorbed, survivor) in delta.merged {
            self.gone.insert(absorbed);
            self.full.insert(survivor);
            self.merged.push((absorbed, survivor));
        }
        self.rejected.extend(
            delta
                .rejected
                .into_iter()
                .map(|(a, why)| format!("{a:?}: {why}")),
        );
    }

    fn touched(&self) -> BTreeSet<ClassId> {
        let mut t = self.full.clone();
        t.extend(self.fields.keys());
        t.extend(self.shrunk.keys());
        t
    }
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    format: u32,
    raw: RawStore,
    equivalence: Equivalence,
    surrogates: SurrogateStore,
    curation: Curation,
    network: Network,
    lineage: LineageStore,
}

const STATE_FORMAT: u32 = 1;

#[derive(Debug, Clone, Default)]
pub struct Engine {
    settings: Settings,
    raw: RawStore,
    equivalence: Equivalence,
    surrogates: SurrogateStore,
    curation: Curation,
    published: Arc<Published>,
}

fn anchor_of(e: &NetworkEntity) -> Anchor {
    match e.class_id {
        Some(c) => Anchor::Class(c),
        None => Anchor::Entity(e.bn_id),
    }
}

impl Engine {
    pub fn new(settings: Settings) -> Self {
        Engine {
            settings,
            ..Engine::default()
        }
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    pub fn raw(&self) -> &RawStore {
        &self.raw
    }

    pub fn equivalence(&self) -> &Equivalence {
        &self.equivalence
    }

    pub fn surrogates(&self) -> &SurrogateStore {
        &self.surrogates
    }

    pub fn curation(&self) -> &Curation {
        &self.curation
    }

    /// The current published state; cheap to clone and safe to keep.
    pub fn published(&self) -> Arc<Published> {
        Arc::clone(&self.published)
    }

    pub fn network(&self) -> &Network {
        &self.published.network
    }

    pub fn export(&self) -> NetworkExport {
        self.published.export()
    }

    // ---- raw input ------------------------------------------------------

    /// Ingests one snapshot of an origin.
    pub fn ingest<'a, I>(&mut self, origin: &str, lines: I, mode: Mode) -> Result<LoadOutcome>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let (report, changes) = self.raw.ingest_lines(origin, lines, mode)?;
        let network = self.commit(&changes, Work::default());
        Ok(LoadOutcome { report, network })
    }

    pub fn ingest_file(&mut self, origin: &str, path: &Path, mode: Mode) -> Result<LoadOutcome> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.ingest(origin, text.lines(), mode)
    }

    /// Ingests the latest snapshot of `origin` under `sources`.
    pub fn reload(
        &mut self,
        origin: &str,
        sources: &FileSources,
        mode: Mode,
    ) -> Result<LoadOutcome> {
        let (_, path) = sources.latest_snapshot(origin)?.ok_or_else(|| {
            Error::NotFound(format!(
                "no snapshot for origin {origin:?} under {}",
                sources.root().display()
            ))
        })?;
        self.ingest_file(origin, &path, mode)
    }

    /// Upserts a single record and commits.
    pub fn upsert(
        &mut self,
        origin: &str,
        input: RecordInput,
        mode: Mode,
    ) -> Result<UpsertOutcome> {
        let kind = input.kind.clone();
        let outcome = self.raw.upsert_record(origin, input, mode)?;
        let mut changes = ChangeSet::default();
        match outcome.status {
            UpsertStatus::Created => changes.record(&outcome.key, &kind, ChangeOp::Created),
            UpsertStatus::Updated => changes.record(
                &outcome.key,
                &kind,
                ChangeOp::Updated(outcome.changed.clone()),
            ),
            UpsertStatus::Unchanged => {}
        }
        self.commit(&changes, Work::default());
        Ok(outcome)
    }

    /// Removes a single record and commits.
    pub fn remove(&mut self, key: &CompositeKey) -> Option<RawRecord> {
        let record = self.raw.remove(key)?;
        let mut changes = ChangeSet::default();
        changes.record(key, &record.kind, ChangeOp::Tombstoned);
        self.commit(&changes, Work::default());
        Some(record)
    }

    /// User assertion that two records denote the same entity.
    pub fn assert_same(&mut self, a: CompositeKey, b: CompositeKey) -> Result<CommitSummary> {
        let mut work = Work::default();
        let (_, delta) = self.equivalence.assert_same(a, b, AssertionSource::User)?;
        work.absorb(delta);
        Ok(self.commit(&ChangeSet::default(), work))
    }

    /// Withdraws a user assertion.
    pub fn retract_same(&mut self, a: &CompositeKey, b: &CompositeKey) -> CommitSummary {
        let mut work = Work::default();
        let delta = self.equivalence.retract(|x| {
            x.provenance == AssertionSource::User
                && ((&x.member_a == a && &x.member_b == b)
                    || (&x.member_a == b && &x.member_b == a))
        });
        work.absorb(delta);
        self.commit(&ChangeSet::default(), work)
    }

    /// A fresh engine derived in one commit from this engine's raw records
    /// and user assertions. Curation is not carried over.
    pub fn rebuild(&self) -> Engine {
        let mut fresh = Engine::new(self.settings.clone());
        let user: Vec<EquivalenceAssertion> = self
            .equivalence
            .assertions()
            .into_iter()
            .chain(self.equivalence.pending())
            .filter(|a| a.provenance == AssertionSource::User)
            .cloned()
            .collect();
        let mut work = Work::default();
        for a in user {
            fresh.assert_fact(a, &mut work);
        }
        let mut changes = ChangeSet::default();
        for r in self.raw.records() {
            let input = RecordInput::from_snapshot(r.to_snapshot());
            if let Ok(outcome) = fresh.raw.upsert_record(&r.key.origin, input, Mode::Full) {
                changes.record(&outcome.key, &r.kind, ChangeOp::Created);
            }
        }
        fresh.commit(&changes, work);
        fresh
    }

    /// Re-derives every surrogate and entity, e.g. after the settings
    /// changed.
    pub fn recompute_all(&mut self) -> CommitSummary {
        let work = Work {
            full: self.equivalence.classes().map(|(c, _)| c).collect(),
            ..Work::default()
        };
        self.commit(&ChangeSet::default(), work)
    }

    // ---- commit -----------------------------------------------------------

    fn assert_fact(&mut self, assertion: EquivalenceAssertion, work: &mut Work) {
        let EquivalenceAssertion {
            member_a,
            member_b,
            provenance,
        } = assertion;
        match self.equivalence.assert_same(member_a, member_b, provenance) {
            Ok((_, delta)) => work.absorb(delta),
            Err(e) => work.rejected.push(e.to_string()),
        }
    }

    /// Equivalence facts stated by a record: a `same_sys` record links every
    /// pair of its members, so losing one member keeps the rest together; a
    /// property fragment joins its target.
    fn derive_facts(&mut self, key: &CompositeKey, work: &mut Work) {
        let Some(record) = self.raw.get(key) else {
            return;
        };
        let source = AssertionSource::Fact(key.clone());
        let pairs: Vec<(CompositeKey, CompositeKey)> = match record.kind {
            RecordKind::SameSys => {
                let members = record.combined_members();
                let mut pairs = Vec::new();
                for (i, a) in members.iter().enumerate() {
                    for b in &members[i + 1..] {
                        pairs.push((a.clone(), b.clone()));
                    }
                }
                pairs
            }
            RecordKind::Prop => record
                .reference("target")
                .map(|t| vec![(key.clone(), t)])
                .unwrap_or_default(),
            _ => Vec::new(),
        };
        for (a, b) in pairs {
            match EquivalenceAssertion::new(a, b, source.clone()) {
                Ok(assertion) => self.assert_fact(assertion, work),
                Err(e) => work.rejected.push(e.to_string()),
            }
        }
    }

    fn rule_relevant(&self, kind: &RecordKind, fields: &BTreeSet<String>) -> bool {
        self.settings
            .rules
            .iter()
            .any(|r| &r.kind == kind && r.fields.iter().any(|f| fields.contains(f)))
    }

    fn structural(&mut self, changes: &ChangeSet, work: &mut Work) {
        let mut rule_keys: Vec<CompositeKey> = Vec::new();
        for change in changes.iter() {
            let key = &change.key;
            let category = change.kind.category();
            let states_facts = matches!(change.kind, RecordKind::SameSys | RecordKind::Prop);
            match &change.op {
                ChangeOp::Tombstoned => {
                    if states_facts {
                        let delta = self.equivalence.retract_fact(key);
                        work.absorb(delta);
                    }
                    if category.is_some() {
                        let (removal, _) = self.equivalence.remove_member(key);
                        match removal {
                            Removal::Unknown => {}
                            Removal::Shrunk(c) => {
                                work.shrunk.entry(c).or_default().push(key.clone())
                            }
                            Removal::Split { kept, new } => {
                                work.full.insert(kept);
                                work.full.extend(new);
                            }
                            Removal::Emptied(c) => {
                                work.gone.insert(c);
                            }
                        }
                    }
                }
                ChangeOp::Created => {
                    if let Some(cat) = category {
                        match self.equivalence.class_of(key) {
                            Some(c) => {
                                work.full.insert(c);
                            }
                            None => {
                                let delta = self.equivalence.add_key(key.clone(), cat);
                                work.absorb(delta);
                            }
                        }
                        if !self.settings.rules.is_empty() {
                            rule_keys.push(key.clone());
                        }
                    }
                    if states_facts {
                        let delta = self.equivalence.retract_fact(key);
                        work.absorb(delta);
                        self.derive_facts(key, work);
                    }
                }
                ChangeOp::Updated(fields) => {
                    if states_facts {
                        let delta = self.equivalence.retract_fact(key);
                        work.absorb(delta);
                        self.derive_facts(key, work);
                    }
                    if category.is_some() {
                        if let Some(c) = self.equivalence.class_of(key) {
                            if change.kind == RecordKind::Prop {
                                work.full.insert(c);
                            } else {
                                work.fields
                                    .entry(c)
                                    .or_default()
                                    .extend(fields.iter().cloned());
                            }
                        }
                        if self.rule_relevant(&change.kind, fields) {
                            rule_keys.push(key.clone());
                        }
                    }
                }
            }
        }
        if !rule_keys.is_empty() {
            for k in &rule_keys {
                let delta = self.equivalence.retract_rules_for(k);
                work.absorb(delta);
            }
            for a in apply_rules(&rule_keys, &self.settings.rules, &self.raw) {
                self.assert_fact(a, work);
            }
        }
    }

    fn member_views<'a, I>(&self, keys: I) -> Vec<MemberView>
    where
        I: IntoIterator<Item = &'a CompositeKey>,
    {
        keys.into_iter()
            .filter_map(|k| self.raw.get(k))
            .map(MemberView::from_record)
            .collect()
    }

    fn class_members(&self, class: ClassId) -> Vec<MemberView> {
        self.equivalence
            .members(class)
            .map(|m| self.member_views(m))
            .unwrap_or_default()
    }

    fn class_sources(&self, class: ClassId) -> BTreeSet<SourceRef> {
        self.equivalence
            .members(class)
            .into_iter()
            .flatten()
            .filter_map(|k| self.raw.get(k))
            .map(SourceRef::of)
            .collect()
    }

    /// Brings the surrogate of one touched class up to date.
    fn refresh_surrogate(&mut self, class: ClassId, work: &Work) {
        let anchor = Anchor::Class(class);
        let members = self.class_members(class);
        let cfg = &self.settings.priorities;
        let retired = {
            let ordered = order_members(&members, cfg);
            self.curation.retire_caught_up(&anchor, |f| {
                discovered_value(&ordered, f).map(|(v, _)| v.to_string())
            })
        };
        let enh = self.curation.overlay_for(&anchor);
        if work.full.contains(&class) || self.surrogates.get(class).is_none() {
            self.surrogates.compute(class, &members, cfg, &enh);
            return;
        }
        for removed in work.shrunk.get(&class).into_iter().flatten() {
            self.surrogates
                .on_member_removed(class, removed, &members, cfg, &enh);
        }
        let mut fields: BTreeSet<String> = work.fields.get(&class).cloned().unwrap_or_default();
        fields.extend(retired);
        if !fields.is_empty() {
            // the entry exists: checked above
            let _ = self
                .surrogates
                .delta_update(class, &members, cfg, &enh, &fields);
        }
    }

    fn decorate(&self, entity: &mut NetworkEntity) {
        let anchor = anchor_of(entity);
        entity.labels = self.curation.labels_for(&anchor);
        entity.groups = self.curation.groups_for(&anchor);
    }

    fn put(&mut self, entity: NetworkEntity, delta: &mut NetworkDelta) {
        let bn = entity.bn_id;
        if Arc::make_mut(&mut self.published).network.put(entity) {
            delta.upserted.insert(bn);
        }
    }

    fn withdraw(&mut self, bn: BnId, delta: &mut NetworkDelta) {
        let published = Arc::make_mut(&mut self.published);
        if let Some(e) = published.network.remove(&bn) {
            self.curation.on_anchor_removed(&anchor_of(&e));
            delta.upserted.remove(&bn);
            delta.removed.insert(bn);
        }
    }

    fn materialize_class(&mut self, class: ClassId, delta: &mut NetworkDelta) {
        let kind = self
            .equivalence
            .category(class)
            .and_then(EntityKind::for_category);
        let current = self.published.network.entity_for_class(class);
        let (Some(kind), Some(s)) = (kind, self.surrogates.get(class)) else {
            if let Some(bn) = current {
                self.withdraw(bn, delta);
            }
            return;
        };
        let s = s.clone();
        if let Some(bn) = current.filter(|bn| bn.kind != kind) {
            self.withdraw(bn, delta);
        }
        let (bn, _) = Arc::make_mut(&mut self.published)
            .network
            .id_for_class(class, kind);
        let hosts = self
            .published
            .network
            .get(&bn)
            .map(|e| e.hosts.clone())
            .unwrap_or_default();
        let mut entity = NetworkEntity {
            bn_id: bn,
            kind,
            name: display_name(&s.values, &s.leading_member),
            attributes: s.values,
            contributions: s.contributions,
            class_id: Some(class),
            sources: self.class_sources(class),
            leading_member: s.leading_member,
            endpoints: None,
            hosts,
            labels: BTreeSet::new(),
            groups: BTreeSet::new(),
        };
        self.decorate(&mut entity);
        self.put(entity, delta);
    }

    /// Re-infers runs-on edges and message flows from the raw store.
    fn materialize_edges(&mut self, delta: &mut NetworkDelta) {
        let resolve = |k: &CompositeKey| {
            self.published
                .network
                .resolve_class(self.equivalence.class_of(k))
        };
        let participant =
            |k: &CompositeKey| resolve(k).filter(|bn| bn.kind == EntityKind::Participant);

        let mut outs = Vec::new();
        let mut rsys = Vec::new();
        let mut runs = Vec::new();
        for r in self.raw.records() {
            match r.kind {
                RecordKind::Out => outs.push(r),
                RecordKind::Rsys => rsys.push(r),
                RecordKind::RunsOn => runs.push(r),
                _ => {}
            }
        }
        let (edges, mut pending) = infer_runs_on(&runs, resolve);
        let inference = infer_message_flows(&outs, &rsys, participant);
        pending.extend(inference.pending);

        let participants: Vec<(BnId, BTreeSet<BnId>)> = self
            .published
            .network
            .entities_of(EntityKind::Participant)
            .map(|e| (e.bn_id, e.hosts.clone()))
            .collect();
        for (bn, hosts) in participants {
            let wanted = edges.get(&bn).cloned().unwrap_or_default();
            if hosts != wanted {
                let mut e = self.published.network.get(&bn).unwrap().clone();
                e.hosts = wanted;
                self.put(e, delta);
            }
        }

        let live: BTreeSet<BnId> = self
            .published
            .network
            .entities_of(EntityKind::MessageFlow)
            .map(|e| e.bn_id)
            .collect();
        let mut kept = BTreeSet::new();
        let cfg = self.settings.priorities.clone();
        for ((s, t), draft) in inference.flows {
            let bn = Arc::make_mut(&mut self.published).network.id_for_flow(s, t);
            kept.insert(bn);
            let anchor = Anchor::Entity(bn);
            let ordered = order_members(&draft.members, &cfg);
            self.curation.retire_caught_up(&anchor, |f| {
                discovered_value(&ordered, f).map(|(v, _)| v.to_string())
            });
            let selection = select(&ordered, &self.curation.overlay_for(&anchor));
            let leading = ordered[0].key.clone();
            let mut entity = NetworkEntity {
                bn_id: bn,
                kind: EntityKind::MessageFlow,
                name: display_name(&selection.values, &leading),
                attributes: selection.values,
                contributions: selection.contributions,
                class_id: None,
                sources: draft.sources,
                leading_member: leading,
                endpoints: Some(draft.ends),
                hosts: BTreeSet::new(),
                labels: BTreeSet::new(),
                groups: BTreeSet::new(),
            };
            self.decorate(&mut entity);
            self.put(entity, delta);
        }
        for bn in live.difference(&kept) {
            self.withdraw(*bn, delta);
        }
        Arc::make_mut(&mut self.published)
            .network
            .set_pending(pending);
    }

    fn commit(&mut self, changes: &ChangeSet, mut work: Work) -> CommitSummary {
        self.structural(changes, &mut work);
        for (absorbed, survivor) in &work.merged {
            self.curation.on_class_merged(*absorbed, *survivor);
        }

        let mut delta = NetworkDelta::default();
        for class in &work.gone {
            if self.equivalence.members(*class).is_none() {
                self.surrogates.remove(*class);
                if let Some(bn) = self.published.network.entity_for_class(*class) {
                    self.withdraw(bn, &mut delta);
                }
            }
        }
        for class in work.touched() {
            if self.equivalence.members(class).is_none() {
                continue;
            }
            self.refresh_surrogate(class, &work);
            self.materialize_class(class, &mut delta);
        }
        self.materialize_edges(&mut delta);
        for bn in std::mem::take(&mut work.decorate) {
            if let Some(e) = self.published.network.get(&bn) {
                let mut e = e.clone();
                self.decorate(&mut e);
                self.put(e, &mut delta);
            }
        }

        let published = Arc::make_mut(&mut self.published);
        for bn in &delta.removed {
            published.lineage.remove(bn);
        }
        for bn in &delta.upserted {
            if let Some(e) = published.network.get(bn) {
                published.lineage.set(LineageRecord::of(e));
            }
        }
        published.index.update(&published.network, &delta);

        CommitSummary {
            upserted: delta.upserted.len(),
            removed: delta.removed.len(),
            rejected_assertions: work.rejected,
            pending_references: published.network.pending().len(),
        }
    }

    // ---- curation ---------------------------------------------------------

    fn entity_by_name(&self, name: &str) -> Result<NetworkEntity> {
        let bn = self.published.resolve(name)?;
        Ok(self.published.entity(&bn)?.clone())
    }

    /// Attaches a label to an entity (by name or id).
    pub fn add_label(&mut self, target: &str, text: &str) -> Result<EnrichmentArtifact> {
        let e = self.entity_by_name(target)?;
        let artifact = self.curation.add_label(anchor_of(&e), text)?.clone();
        let work = Work {
            decorate: BTreeSet::from([e.bn_id]),
            ..Work::default()
        };
        self.commit(&ChangeSet::default(), work);
        Ok(artifact)
    }

    /// Groups entities (by name or id) under a name.
    pub fn add_group<S: AsRef<str>>(
        &mut self,
        name: &str,
        members: &[S],
    ) -> Result<EnrichmentArtifact> {
        let mut anchors = BTreeSet::new();
        let mut bns = BTreeSet::new();
        for m in members {
            let e = self.entity_by_name(m.as_ref())?;
            anchors.insert(anchor_of(&e));
            bns.insert(e.bn_id);
        }
        let artifact = self.curation.add_group(name, anchors)?.clone();
        let work = Work {
            decorate: bns,
            ..Work::default()
        };
        self.commit(&ChangeSet::default(), work);
        Ok(artifact)
    }

    /// Sets a field of an entity. The value shows at once and outranks
    /// discovery; the write-back plan targets the record that contributes
    /// the field today.
    pub fn enhance_field(&mut self, target: &str, field: &str, value: &str) -> Result<Enhancement> {
        let field = field.trim();
        if field.is_empty() {
            return Err(Error::BadParameter("field name is empty".into()));
        }
        if value.is_empty() {
            return Err(Error::BadParameter("value is empty".into()));
        }
        let e = self.entity_by_name(target)?;
        let anchor = anchor_of(&e);
        let id = self.curation.next_enhancement_id();
        let mut enhancement = Enhancement {
            id: id.clone(),
            op: EnhancementOp::Modify,
            target: Some(e.bn_id),
            anchor: Some(anchor),
            fields: BTreeMap::from([(field.to_string(), value.to_string())]),
            plans: Vec::new(),
            status: EnhancementStatus::Pending,
            warning: None,
            error: None,
        };
        if e.attributes.get(field).map(String::as_str) == Some(value) {
            enhancement.status = EnhancementStatus::Deployed;
            enhancement.warning = Some("value unchanged; nothing to do".into());
            return Ok(self.curation.store_enhancement(enhancement)?.clone());
        }

        let keys: Vec<&CompositeKey> = e.sources.iter().map(|s| &s.key).collect();
        let members = self.member_views(keys);
        let ordered = order_members(&members, &self.settings.priorities);
        match discovered_value(&ordered, field) {
            Some((_, contributor)) => {
                let record = self.raw.get(contributor).expect("member record");
                enhancement
                    .plans
                    .push(modify_plan(&id, record, field, value));
            }
            // a new field goes to the most relevant system or host record
            None => match ordered
                .iter()
                .filter_map(|m| self.raw.get(&m.key))
                .find(|r| r.kind != RecordKind::Prop)
            {
                Some(record) => enhancement
                    .plans
                    .push(modify_plan(&id, record, field, value)),
                None => {
                    enhancement.warning = Some(format!(
                        "no source record can carry {field:?}; the value is kept in the network only"
                    ));
                }
            },
        }
        self.curation.set_overlay(anchor, field, value, &id);
        let stored = self.curation.store_enhancement(enhancement)?.clone();
        let mut work = Work::default();
        if let Anchor::Class(c) = anchor {
            work.fields.insert(c, BTreeSet::from([field.to_string()]));
        }
        self.commit(&ChangeSet::default(), work);
        Ok(stored)
    }

    /// Plans a new entity at an origin. It enters the network only after
    /// deployment and the next load of that origin.
    pub fn create_entity(
        &mut self,
        kind: EntityKind,
        origin: &str,
        id: Option<&str>,
        fields: &BTreeMap<String, String>,
    ) -> Result<Enhancement> {
        if !self.raw.origins().contains(origin) {
            return Err(Error::Rejected(format!("unknown source origin {origin:?}")));
        }
        let fields: BTreeMap<String, String> = fields
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        if fields.is_empty() {
            return Err(Error::Rejected("no field values given".into()));
        }
        if kind == EntityKind::MessageFlow
            && !(fields.contains_key("from") && fields.contains_key("to"))
        {
            return Err(Error::Rejected("a message flow needs from and to".into()));
        }
        let record_kind = kind.record_kind();
        let id = id.map(str::trim).filter(|s| !s.is_empty());
        let mut input = RecordInput::new(record_kind.clone(), id);
        input.fields = fields.clone();
        let key = RawStore::key_for(origin, &input)?;
        if self.raw.contains(&key) {
            return Err(Error::Rejected(format!("record {key} already exists")));
        }
        let enh_id = self.curation.next_enhancement_id();
        let record = SnapshotRecord {
            kind: record_kind.to_string(),
            origin: Some(origin.to_string()),
            id: id.map(str::to_string),
            ids: None,
            fields: fields.clone(),
        };
        let enhancement = Enhancement {
            id: enh_id.clone(),
            op: EnhancementOp::Create,
            target: None,
            anchor: None,
            fields,
            plans: vec![WriteBackPlan {
                enhancement_id: enh_id,
                origin: origin.to_string(),
                edits: vec![RecordEdit::Upsert(record)],
            }],
            status: EnhancementStatus::Pending,
            warning: None,
            error: None,
        };
        Ok(self.curation.store_enhancement(enhancement)?.clone())
    }

    /// Plans deletion of the records an entity is derived from (for a flow,
    /// its outbound records), one plan per origin.
    pub fn delete_entity(&mut self, target: &str) -> Result<Enhancement> {
        let e = self.entity_by_name(target)?;
        let id = self.curation.next_enhancement_id();
        let mut by_origin: BTreeMap<&str, Vec<RecordEdit>> = BTreeMap::new();
        for s in &e.sources {
            if e.kind == EntityKind::MessageFlow && s.kind != RecordKind::Out {
                continue;
            }
            if let Some(r) = self.raw.get(&s.key) {
                by_origin
                    .entry(&s.key.origin)
                    .or_default()
                    .push(RecordEdit::Delete(r.to_snapshot()));
            }
        }
        let plans = by_origin
            .into_iter()
            .map(|(origin, edits)| WriteBackPlan {
                enhancement_id: id.clone(),
                origin: origin.to_string(),
                edits,
            })
            .collect();
        let enhancement = Enhancement {
            id,
            op: EnhancementOp::Delete,
            target: Some(e.bn_id),
            anchor: Some(anchor_of(&e)),
            fields: BTreeMap::new(),
            plans,
            status: EnhancementStatus::Pending,
            warning: None,
            error: None,
        };
        Ok(self.curation.store_enhancement(enhancement)?.clone())
    }

    pub fn enhancement(&self, id: &str) -> Result<&Enhancement> {
        self.curation.enhancement(id)
    }

    /// Pushes an enhancement's plans to the sources.
    pub fn deploy(&mut self, id: &str, adapters: &dyn AdapterRegistry) -> Result<Enhancement> {
        self.curation.deploy(id, adapters).cloned()
    }

    // ---- persistence ------------------------------------------------------

    pub fn save(&self, path: &Path) -> Result<()> {
        let state = StateFile {
            format: STATE_FORMAT,
            raw: self.raw.clone(),
            equivalence: self.equivalence.clone(),
            surrogates: self.surrogates.clone(),
            curation: self.curation.clone(),
            network: self.published.network.clone(),
            lineage: self.published.lineage.clone(),
        };
        let body = serde_json::to_vec(&state).map_err(|e| Error::State {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Loads a saved state, or starts empty if the file does not exist.
    /// Derived state is re-derived under the given settings.
    pub fn load(path: &Path, settings: Settings) -> Result<Self> {
        let body = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Engine::new(settings)),
            Err(e) => return Err(Error::io(path, e)),
        };
        let state: StateFile = serde_json::from_slice(&body).map_err(|e| Error::State {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if state.format != STATE_FORMAT {
            return Err(Error::State {
                path: path.to_path_buf(),
                message: format!("unsupported format {}", state.format),
            });
        }
        let mut lineage = state.lineage;
        lineage.reindex();
        let index = NetworkIndex::build(&state.network);
        let mut engine = Engine {
            settings,
            raw: state.raw,
            equivalence: state.equivalence,
            surrogates: state.surrogates,
            curation: state.curation,
            published: Arc::new(Published {
                network: state.network,
                lineage,
                index,
            }),
        };
        engine.recompute_all();
        Ok(engine)
    }
}

/// Write-back of a field value to the record that contributes it. A
/// property fragment carries the value in its `value` field. Records
/// without a local id are identified by content, so they are replaced.
fn modify_plan(
    enhancement_id: &str,
    record: &RawRecord,
    field: &str,
    value: &str,
) -> WriteBackPlan {
    let record_field = if record.kind == RecordKind::Prop {
        "value"
    } else {
        field
    };
    let mut updated = record.to_snapshot();
    updated
        .fields
        .insert(record_field.to_string(), value.to_string());
    let edits = match record.key.id {
        RecordId::Local(_) => {
            updated.fields = BTreeMap::from([(record_field.to_string(), value.to_string())]);
            vec![RecordEdit::Upsert(updated)]
        }
        RecordId::Hash(_) => vec![
            RecordEdit::Delete(record.to_snapshot()),
            RecordEdit::Upsert(updated),
        ],
    };
    WriteBackPlan {
        enhancement_id: enhancement_id.to_string(),
        origin: record.key.origin.clone(),
        edits,
    }
}
