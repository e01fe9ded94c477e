//! User curation of the network.
//!
//! Enrichment artifacts (labels, groups) live only in the network. Enhancements
//! change entities: the new value is shown immediately through an overlay
//! and, once deployed, written back to the contributing source so that the
//! next discovery run reproduces it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::adapter::{AdapterRegistry, ApplyOutcome};
use crate::equivalence::ClassId;
use crate::error::{Error, Result};
use crate::network::BnId;
use crate::snapshot::SnapshotRecord;
use crate::surrogate::Enhancements;

/// What curation is attached to: the equivalence class behind a participant
/// or host, or a flow by id. Anchoring at the class keeps curation on the
/// surviving entity when classes merge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Anchor {
    Class(ClassId),
    Entity(BnId),
}

impl fmt::Display for Anchor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Anchor::Class(c) => c.fmt(f),
            Anchor::Entity(bn) => bn.fmt(f),
        }
    }
}

impl FromStr for Anchor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.parse::<ClassId>() {
            Ok(c) => Ok(Anchor::Class(c)),
            Err(_) => s.parse().map(Anchor::Entity),
        }
    }
}

impl Serialize for Anchor {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Anchor {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactKind {
    Label,
    Group,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichmentArtifact {
    pub artifact_id: String,
    pub kind: ArtifactKind,
    /// Labels: the labelled entity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<Anchor>,
    /// Groups: the grouped entities.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub members: BTreeSet<Anchor>,
    pub payload: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnhancementOp {
    Create,
    Modify,
    Delete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnhancementStatus {
    Pending,
    Deployed,
    Failed,
}

/// One change to a source snapshot. `Upsert` sets the given fields on the
/// record with the same identity, or appends the record; `Delete` removes
/// it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", content = "record", rename_all = "lowercase")]
pub enum RecordEdit {
    Upsert(SnapshotRecord),
    Delete(SnapshotRecord),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteBackPlan {
    pub enhancement_id: String,
    pub origin: String,
    pub edits: Vec<RecordEdit>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Enhancement {
    pub id: String,
    pub op: EnhancementOp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<BnId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<Anchor>,
    #[serde(default)]
    pub fields: BTreeMap<String, String>,
    #[serde(default)]
    pub plans: Vec<WriteBackPlan>,
    pub status: EnhancementStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlayValue {
    pub value: String,
    pub enhancement_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Curation {
    artifacts: BTreeMap<u64, EnrichmentArtifact>,
    enhancements: BTreeMap<u64, Enhancement>,
    overlay: BTreeMap<Anchor, BTreeMap<String, OverlayValue>>,
    next_artifact: u64,
    next_enhancement: u64,
}

fn parse_id(id: &str, prefix: char) -> Option<u64> {
    id.strip_prefix(prefix)?.parse().ok()
}

fn replace_anchor(set: &mut BTreeSet<Anchor>, from: &Anchor, to: Anchor) -> bool {
    if set.remove(from) {
        set.insert(to);
        true
    } else {
        false
    }
}

impl Curation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn artifacts(&self) -> impl Iterator<Item = &EnrichmentArtifact> {
        self.artifacts.values()
    }

    pub fn artifact(&self, id: &str) -> Option<&EnrichmentArtifact> {
        self.artifacts.get(&parse_id(id, 'a')?)
    }

    fn push_artifact(
        &mut self,
        kind: ArtifactKind,
        anchor: Option<Anchor>,
        members: BTreeSet<Anchor>,
        payload: &str,
    ) -> &EnrichmentArtifact {
        self.next_artifact += 1;
        let n = self.next_artifact;
        self.artifacts.insert(
            n,
            EnrichmentArtifact {
                artifact_id: format!("a{n}"),
                kind,
                anchor,
                members,
                payload: payload.to_string(),
            },
        );
        &self.artifacts[&n]
    }

    pub fn add_label(&mut self, anchor: Anchor, text: &str) -> Result<&EnrichmentArtifact> {
        let text = text.trim();
        if text.is_empty() {
            return Err(Error::BadParameter("label text is empty".into()));
        }
        Ok(self.push_artifact(ArtifactKind::Label, Some(anchor), BTreeSet::new(), text))
    }

    pub fn add_group(
        &mut self,
        name: &str,
        members: BTreeSet<Anchor>,
    ) -> Result<&EnrichmentArtifact> {
        let name = name.trim();
        if name.is_empty() {
            return Err(Error::BadParameter("group name is empty".into()));
        }
        if members.is_empty() {
            return Err(Error::BadParameter("group has no members".into()));
        }
        Ok(self.push_artifact(ArtifactKind::Group, None, members, name))
    }

    pub fn labels_for(&self, anchor: &Anchor) -> BTreeSet<String> {
        self.artifacts
            .values()
            .filter(|a| a.kind == ArtifactKind::Label && a.anchor.as_ref() == Some(anchor))
            .map(|a| a.payload.clone())
            .collect()
    }

    pub fn groups_for(&self, anchor: &Anchor) -> BTreeSet<String> {
        self.artifacts
            .values()
            .filter(|a| a.kind == ArtifactKind::Group && a.members.contains(anchor))
            .map(|a| a.payload.clone())
            .collect()
    }

    /// Drops curation of an anchor whose entity left the network. Groups
    /// left without members are dropped too.
    pub fn on_anchor_removed(&mut self, anchor: &Anchor) {
        self.artifacts.retain(|_, a| match a.kind {
            ArtifactKind::Label => a.anchor.as_ref() != Some(anchor),
            ArtifactKind::Group => {
                a.members.remove(anchor);
                !a.members.is_empty()
            }
        });
        self.overlay.remove(anchor);
    }

    /// Moves curation of an absorbed class onto the surviving class. On an
    /// overlay conflict the survivor's value stays.
    pub fn on_class_merged(&mut self, absorbed: ClassId, survivor: ClassId) {
        let (from, to) = (Anchor::Class(absorbed), Anchor::Class(survivor));
        for a in self.artifacts.values_mut() {
            if a.anchor == Some(from) {
                a.anchor = Some(to);
            }
            replace_anchor(&mut a.members, &from, to);
        }
        if let Some(moved) = self.overlay.remove(&from) {
            let target = self.overlay.entry(to).or_default();
            for (field, v) in moved {
                target.entry(field).or_insert(v);
            }
        }
        for e in self.enhancements.values_mut() {
            if e.anchor == Some(from) {
                e.anchor = Some(to);
            }
        }
    }

    pub fn next_enhancement_id(&mut self) -> String {
        self.next_enhancement += 1;
        format!("e{}", self.next_enhancement)
    }

    pub fn store_enhancement(&mut self, enhancement: Enhancement) -> Result<&Enhancement> {
        let n = parse_id(&enhancement.id, 'e').ok_or_else(|| {
            Error::BadParameter(format!("invalid enhancement id {:?}", enhancement.id))
        })?;
        self.next_enhancement = self.next_enhancement.max(n);
        self.enhancements.insert(n, enhancement);
        Ok(&self.enhancements[&n])
    }

    pub fn enhancements(&self) -> impl Iterator<Item = &Enhancement> {
        self.enhancements.values()
    }

    pub fn enhancement(&self, id: &str) -> Result<&Enhancement> {
        parse_id(id, 'e')
            .and_then(|n| self.enhancements.get(&n))
            .ok_or_else(|| Error::NotFound(format!("no enhancement {id:?}")))
    }

    /// User values on an anchor, as input to the surrogate function.
    pub fn overlay_for(&self, anchor: &Anchor) -> Enhancements {
        self.overlay
            .get(anchor)
            .map(|m| {
                m.iter()
                    .map(|(f, v)| (f.clone(), v.value.clone()))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn overlay_entries(&self, anchor: &Anchor) -> Option<&BTreeMap<String, OverlayValue>> {
        self.overlay.get(anchor)
    }

    pub fn set_overlay(&mut self, anchor: Anchor, field: &str, value: &str, enhancement_id: &str) {
        self.overlay.entry(anchor).or_default().insert(
            field.to_string(),
            OverlayValue {
                value: value.to_string(),
                enhancement_id: enhancement_id.to_string(),
            },
        );
    }

    /// Overlay fields whose enhancement is deployed and whose discovered
    /// value now matches: discovery has caught up and the overlay retires.
    /// Returns the retired fields.
    pub fn retire_caught_up<F>(&mut self, anchor: &Anchor, discovered: F) -> Vec<String>
    where
        F: Fn(&str) -> Option<String>,
    {
        let Some(entries) = self.overlay.get(anchor) else {
            return Vec::new();
        };
        let retired: Vec<String> = entries
            .iter()
            .filter(|(field, v)| {
                let deployed = self
                    .enhancement(&v.enhancement_id)
                    .is_ok_and(|e| e.status == EnhancementStatus::Deployed);
                deployed && discovered(field).as_deref() == Some(v.value.as_str())
            })
            .map(|(f, _)| f.clone())
            .collect();
        if !retired.is_empty() {
            let entries = self.overlay.get_mut(anchor).unwrap();
            for f in &retired {
                entries.remove(f);
            }
            if entries.is_empty() {
                self.overlay.remove(anchor);
            }
        }
        retired
    }

    /// Pushes the write-back plans of an enhancement through the source
    /// adapters. Plans already recorded in an adapter's journal are skipped,
    /// so a failed deploy can be retried. Network state is not touched:
    /// the change arrives with the next discovery run.
    pub fn deploy(&mut self, id: &str, adapters: &dyn AdapterRegistry) -> Result<&Enhancement> {
        let n = parse_id(id, 'e')
            .filter(|n| self.enhancements.contains_key(n))
            .ok_or_else(|| Error::NotFound(format!("no enhancement {id:?}")))?;
        if self.enhancements[&n].status == EnhancementStatus::Deployed {
            return Ok(&self.enhancements[&n]);
        }
        let plans = self.enhancements[&n].plans.clone();
        if plans.is_empty() {
            return Err(Error::Rejected(format!(
                "enhancement {id} has no write-back plan"
            )));
        }
        let mut failure = None;
        for plan in &plans {
            let outcome = match adapters.adapter(&plan.origin) {
                Some(adapter) => adapter.apply(plan),
                None => Err(Error::NotFound(format!(
                    "no source adapter for origin {:?}",
                    plan.origin
                ))),
            };
            match outcome {
                Ok(ApplyOutcome::Applied { .. } | ApplyOutcome::AlreadyApplied) => {}
                Err(err) => {
                    failure = Some(err.to_string());
                    break;
                }
            }
        }
        let e = self.enhancements.get_mut(&n).unwrap();
        match failure {
            None => {
                e.status = EnhancementStatus::Deployed;
                e.error = None;
            }
            Some(msg) => {
                e.status = EnhancementStatus::Failed;
                e.error = Some(msg);
            }
        }
        Ok(e)
    }
}
