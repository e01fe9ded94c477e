//! Equivalence classes over raw-record keys.
//!
//! Classes are built incrementally from assertions (explicit `same_*` facts,
//! prop fragments attaching to their target, match rules and user input)
//! with a quick-find union: each class owns its member set and a union
//! relabels the younger class into the older one, which keeps its id.
//! Union-find cannot un-merge, so removing a member or retracting an
//! assertion re-derives the partition of the one affected class from its
//! surviving assertions.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::key::{Category, CompositeKey, RecordId, RecordKind};
use crate::raw_store::{RawStore, COMBINED_KEY_SEPARATOR};

/// Stable class identifier. Ids are allocated in ascending order, so the
/// lexicographically smallest id of two classes is the older one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassId(u64);

impl ClassId {
    pub fn new(n: u64) -> Self {
        ClassId(n)
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{:06}", self.0)
    }
}

impl FromStr for ClassId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.strip_prefix('c')
            .and_then(|n| n.parse().ok())
            .map(ClassId)
            .ok_or_else(|| Error::BadParameter(format!("invalid class id {s:?}")))
    }
}

impl Serialize for ClassId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ClassId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "source")]
pub enum AssertionSource {
    /// Stated by a raw record (a `same_sys` fact, or a prop fragment naming
    /// its target).
    Fact(CompositeKey),
    Rule(String),
    User,
}

/// An undirected equivalence between two distinct keys, stored with
/// `member_a < member_b`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EquivalenceAssertion {
    pub member_a: CompositeKey,
    pub member_b: CompositeKey,
    pub provenance: AssertionSource,
}

impl EquivalenceAssertion {
    pub fn new(a: CompositeKey, b: CompositeKey, provenance: AssertionSource) -> Result<Self> {
        if a == b {
            return Err(Error::Rejected(format!("self-assertion on {a}")));
        }
        let (member_a, member_b) = if a < b { (a, b) } else { (b, a) };
        Ok(EquivalenceAssertion {
            member_a,
            member_b,
            provenance,
        })
    }

    pub fn other(&self, key: &CompositeKey) -> &CompositeKey {
        if &self.member_a == key {
            &self.member_b
        } else {
            &self.member_a
        }
    }
}

/// Attribute-match rule: two records of `kind` are equivalent when all
/// `fields` are non-empty and equal after trimming and case folding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchRule {
    pub id: String,
    pub kind: RecordKind,
    pub fields: Vec<String>,
}

impl MatchRule {
    pub fn new(id: &str, kind: impl Into<RecordKind>, fields: &[&str]) -> Result<Self> {
        let rule = MatchRule {
            id: id.to_string(),
            kind: kind.into(),
            fields: fields.iter().map(|f| f.to_string()).collect(),
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::BadParameter("match rule without id".into()));
        }
        if self.fields.is_empty() || self.fields.iter().any(String::is_empty) {
            return Err(Error::BadParameter(format!(
                "match rule {:?} needs a non-empty list of field names",
                self.id
            )));
        }
        if self.kind.category().is_none() {
            return Err(Error::BadParameter(format!(
                "match rule {:?}: kind {} does not form equivalence classes",
                self.id, self.kind
            )));
        }
        Ok(())
    }

    fn block_key(&self, fields: &BTreeMap<String, String>) -> Option<Vec<String>> {
        self.fields
            .iter()
            .map(|f| {
                let v = fields.get(f)?.trim().to_lowercase();
                (!v.is_empty()).then_some(v)
            })
            .collect()
    }
}

/// Evaluates match rules for the changed records against the whole store.
/// Output is sorted by rule id, then key pair, without duplicates.
pub fn apply_rules(
    changed: &[CompositeKey],
    rules: &[MatchRule],
    store: &RawStore,
) -> Vec<EquivalenceAssertion> {
    let mut out = BTreeSet::new();
    for rule in rules {
        let candidates: Vec<&CompositeKey> = changed
            .iter()
            .filter(|k| store.get(k).is_some_and(|r| r.kind == rule.kind))
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let mut blocks: BTreeMap<Vec<String>, Vec<&CompositeKey>> = BTreeMap::new();
        for record in store.records().filter(|r| r.kind == rule.kind) {
            if let Some(block) = rule.block_key(&record.fields) {
                blocks.entry(block).or_default().push(&record.key);
            }
        }
        for key in candidates {
            let record = store.get(key).expect("filtered above");
            let Some(block) = rule.block_key(&record.fields) else {
                continue;
            };
            for other in &blocks[&block] {
                if *other != key {
                    let a = EquivalenceAssertion::new(
                        key.clone(),
                        (*other).clone(),
                        AssertionSource::Rule(rule.id.clone()),
                    )
                    .expect("distinct keys");
                    out.insert((rule.id.clone(), a.member_a.clone(), a.member_b.clone(), a));
                }
            }
        }
    }
    out.into_iter().map(|(_, _, _, a)| a).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssertOutcome {
    /// Both keys now share `class`; `merged` names the absorbed class when
    /// two classes were united.
    Joined {
        class: ClassId,
        merged: Option<ClassId>,
    },
    /// One of the keys is not known yet; the assertion waits for it.
    Pending,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Removal {
    Unknown,
    /// The class lost the member and stays connected.
    Shrunk(ClassId),
    /// The class fell apart; `kept` retains the id, `new` are the other parts.
    Split {
        kept: ClassId,
        new: Vec<ClassId>,
    },
    /// The class has no members left.
    Emptied(ClassId),
}

/// Structural changes produced by one equivalence operation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassDelta {
    pub created: BTreeSet<ClassId>,
    /// Classes whose member set changed.
    pub changed: BTreeSet<ClassId>,
    pub removed: BTreeSet<ClassId>,
    /// `(absorbed, survivor)` pairs.
    pub merged: Vec<(ClassId, ClassId)>,
    /// Assertions dropped because their classes' categories conflict.
    pub rejected: Vec<(EquivalenceAssertion, String)>,
}

impl ClassDelta {
    pub fn is_empty(&self) -> bool {
        self.created.is_empty()
            && self.changed.is_empty()
            && self.removed.is_empty()
            && self.merged.is_empty()
    }

    pub fn absorb(&mut self, other: ClassDelta) {
        self.created.extend(other.created);
        self.changed.extend(other.changed);
        self.removed.extend(other.removed);
        self.merged.extend(other.merged);
        self.rejected.extend(other.rejected);
    }

    /// A class can be created, absorbed or removed within one sequence of
    /// operations; keep only its net effect. Absorbed classes stay listed in
    /// `merged`.
    pub fn settle(&mut self) {
        let absorbed: BTreeSet<ClassId> = self.merged.iter().map(|(a, _)| *a).collect();
        let removed = &self.removed;
        self.changed
            .retain(|c| !absorbed.contains(c) && !removed.contains(c));
        self.created
            .retain(|c| !absorbed.contains(c) && !removed.contains(c));
    }

    fn note_removal(&mut self, removal: &Removal) {
        match removal {
            Removal::Unknown => {}
            Removal::Shrunk(c) => {
                self.changed.insert(*c);
            }
            Removal::Split { kept, new } => {
                self.changed.insert(*kept);
                self.created.extend(new.iter().copied());
            }
            Removal::Emptied(c) => {
                self.removed.insert(*c);
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Equivalence {
    class_of: BTreeMap<CompositeKey, ClassId>,
    categories: BTreeMap<CompositeKey, Category>,
    classes: BTreeMap<ClassId, BTreeSet<CompositeKey>>,
    active: BTreeMap<CompositeKey, BTreeSet<EquivalenceAssertion>>,
    pending: BTreeMap<CompositeKey, BTreeSet<EquivalenceAssertion>>,
    next_id: u64,
}

impl Equivalence {
    pub fn new() -> Self {
        Self::default()
    }

    fn allocate(&mut self) -> ClassId {
        self.next_id += 1;
        ClassId(self.next_id)
    }

    pub fn contains(&self, key: &CompositeKey) -> bool {
        self.class_of.contains_key(key)
    }

    pub fn class_of(&self, key: &CompositeKey) -> Option<ClassId> {
        self.class_of.get(key).copied()
    }

    pub fn members(&self, class: ClassId) -> Option<&BTreeSet<CompositeKey>> {
        self.classes.get(&class)
    }

    pub fn classes(&self) -> impl Iterator<Item = (ClassId, &BTreeSet<CompositeKey>)> {
        self.classes.iter().map(|(c, m)| (*c, m))
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    /// System or Host when the class holds such a member, else Fragment.
    pub fn category(&self, class: ClassId) -> Option<Category> {
        let members = self.classes.get(&class)?;
        let mut category = Category::Fragment;
        for m in members {
            match self.categories[m] {
                Category::Fragment => {}
                c => {
                    category = c;
                    break;
                }
            }
        }
        Some(category)
    }

    /// Active assertions, each once.
    pub fn assertions(&self) -> BTreeSet<&EquivalenceAssertion> {
        self.active.values().flatten().collect()
    }

    pub fn pending(&self) -> BTreeSet<&EquivalenceAssertion> {
        self.pending.values().flatten().collect()
    }

    /// Adds a key as a singleton class and activates assertions that were
    /// waiting for it.
    pub fn add_key(&mut self, key: CompositeKey, category: Category) -> ClassDelta {
        let mut delta = ClassDelta::default();
        if self.class_of.contains_key(&key) {
            return delta;
        }
        let id = self.allocate();
        self.class_of.insert(key.clone(), id);
        self.categories.insert(key.clone(), category);
        self.classes.insert(id, BTreeSet::from([key.clone()]));
        delta.created.insert(id);

        let waiting: Vec<EquivalenceAssertion> = self
            .pending
            .get(&key)
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default();
        for a in waiting {
            if self.contains(a.other(&key)) {
                self.unlink_pending(&a);
                match self.activate(a.clone()) {
                    Ok(d) => delta.absorb(d),
                    Err(e) => delta.rejected.push((a, e.to_string())),
                }
            }
        }
        delta.settle();
        delta
    }

    /// Asserts that `a` and `b` denote the same entity.
    pub fn assert_same(
        &mut self,
        a: CompositeKey,
        b: CompositeKey,
        provenance: AssertionSource,
    ) -> Result<(AssertOutcome, ClassDelta)> {
        let assertion = EquivalenceAssertion::new(a, b, provenance)?;
        if !self.contains(&assertion.member_a) || !self.contains(&assertion.member_b) {
            for k in [&assertion.member_a, &assertion.member_b] {
                self.pending
                    .entry(k.clone())
                    .or_default()
                    .insert(assertion.clone());
            }
            return Ok((AssertOutcome::Pending, ClassDelta::default()));
        }
        let mut delta = self.activate(assertion.clone())?;
        let class = self.class_of[&assertion.member_a];
        let merged = delta.merged.first().map(|(absorbed, _)| *absorbed);
        delta.settle();
        Ok((AssertOutcome::Joined { class, merged }, delta))
    }

    fn activate(&mut self, assertion: EquivalenceAssertion) -> Result<ClassDelta> {
        let ca = self.class_of[&assertion.member_a];
        let cb = self.class_of[&assertion.member_b];
        let (cat_a, cat_b) = (self.category(ca).unwrap(), self.category(cb).unwrap());
        if !cat_a.compatible(cat_b) {
            return Err(Error::Rejected(format!(
                "{} ({cat_a:?}) and {} ({cat_b:?}) are of different kind categories",
                assertion.member_a, assertion.member_b
            )));
        }
        for k in [&assertion.member_a, &assertion.member_b] {
            self.active
                .entry(k.clone())
                .or_default()
                .insert(assertion.clone());
        }
        let mut delta = ClassDelta::default();
        if ca != cb {
            let (survivor, absorbed) = if ca < cb { (ca, cb) } else { (cb, ca) };
            let moved = self.classes.remove(&absorbed).expect("live class");
            for k in &moved {
                self.class_of.insert(k.clone(), survivor);
            }
            self.classes.get_mut(&survivor).unwrap().extend(moved);
            delta.merged.push((absorbed, survivor));
            delta.changed.insert(survivor);
        }
        Ok(delta)
    }

    fn unlink_pending(&mut self, a: &EquivalenceAssertion) {
        for k in [&a.member_a, &a.member_b] {
            if let Some(set) = self.pending.get_mut(k) {
                set.remove(a);
                if set.is_empty() {
                    self.pending.remove(k);
                }
            }
        }
    }

    fn unlink_active(&mut self, a: &EquivalenceAssertion) {
        for k in [&a.member_a, &a.member_b] {
            if let Some(set) = self.active.get_mut(k) {
                set.remove(a);
                if set.is_empty() {
                    self.active.remove(k);
                }
            }
        }
    }

    /// Removes a key. Its assertions are deactivated (user and fact
    /// assertions go back to pending, rule assertions are dropped) and the
    /// remaining members are re-partitioned.
    pub fn remove_member(&mut self, key: &CompositeKey) -> (Removal, ClassDelta) {
        let mut delta = ClassDelta::default();
        let Some(class) = self.class_of.remove(key) else {
            return (Removal::Unknown, delta);
        };
        self.categories.remove(key);
        self.classes.get_mut(&class).unwrap().remove(key);
        let assertions: Vec<EquivalenceAssertion> = self
            .active
            .get(key)
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default();
        for a in assertions {
            self.unlink_active(&a);
            if !matches!(a.provenance, AssertionSource::Rule(_)) {
                for k in [&a.member_a, &a.member_b] {
                    self.pending.entry(k.clone()).or_default().insert(a.clone());
                }
            }
        }
        let removal = self.rederive(class);
        delta.note_removal(&removal);
        delta.settle();
        (removal, delta)
    }

    /// Drops every assertion (active or pending) matching `pred` and
    /// re-partitions the classes that lost an active assertion.
    pub fn retract<F>(&mut self, pred: F) -> ClassDelta
    where
        F: Fn(&EquivalenceAssertion) -> bool,
    {
        let pending: BTreeSet<EquivalenceAssertion> = self
            .pending()
            .into_iter()
            .filter(|a| pred(a))
            .cloned()
            .collect();
        let active: BTreeSet<EquivalenceAssertion> = self
            .assertions()
            .into_iter()
            .filter(|a| pred(a))
            .cloned()
            .collect();
        self.drop_assertions(pending, active)
    }

    /// Like [`Equivalence::retract`], looking only at assertions that
    /// involve one of `keys`.
    fn retract_among<F>(&mut self, keys: &[CompositeKey], pred: F) -> ClassDelta
    where
        F: Fn(&EquivalenceAssertion) -> bool,
    {
        let collect = |map: &BTreeMap<CompositeKey, BTreeSet<EquivalenceAssertion>>| {
            keys.iter()
                .filter_map(|k| map.get(k))
                .flatten()
                .filter(|a| pred(a))
                .cloned()
                .collect::<BTreeSet<_>>()
        };
        let pending = collect(&self.pending);
        let active = collect(&self.active);
        self.drop_assertions(pending, active)
    }

    fn drop_assertions(
        &mut self,
        pending: BTreeSet<EquivalenceAssertion>,
        active: BTreeSet<EquivalenceAssertion>,
    ) -> ClassDelta {
        for a in &pending {
            self.unlink_pending(a);
        }
        let mut affected = BTreeSet::new();
        for a in &active {
            self.unlink_active(a);
            affected.insert(self.class_of[&a.member_a]);
        }
        let mut delta = ClassDelta::default();
        for class in affected {
            let removal = self.rederive(class);
            delta.note_removal(&removal);
        }
        delta.settle();
        delta
    }

    /// Retracts the facts stated by one raw record. Facts involve the
    /// record itself (a property fragment) or the members named in its
    /// combined key (a `same_sys` record).
    pub fn retract_fact(&mut self, source: &CompositeKey) -> ClassDelta {
        let mut keys = vec![source.clone()];
        if let RecordId::Local(id) = &source.id {
            keys.extend(
                id.split(COMBINED_KEY_SEPARATOR)
                    .map(|m| CompositeKey::resolve_ref(&source.origin, m)),
            );
        }
        self.retract_among(
            &keys,
            |a| matches!(&a.provenance, AssertionSource::Fact(s) if s == source),
        )
    }

    /// Retracts rule-derived assertions involving `key`.
    pub fn retract_rules_for(&mut self, key: &CompositeKey) -> ClassDelta {
        self.retract_among(std::slice::from_ref(key), |a| {
            matches!(a.provenance, AssertionSource::Rule(_))
        })
    }

    /// Recomputes the connected components of one class over its active
    /// assertions.
    fn rederive(&mut self, class: ClassId) -> Removal {
        let members = self.classes.get(&class).cloned().unwrap_or_default();
        if members.is_empty() {
            self.classes.remove(&class);
            return Removal::Emptied(class);
        }
        let mut unseen = members.clone();
        let mut components: Vec<BTreeSet<CompositeKey>> = Vec::new();
        while let Some(start) = unseen.pop_first() {
            let mut component = BTreeSet::from([start.clone()]);
            let mut queue = VecDeque::from([start]);
            while let Some(k) = queue.pop_front() {
                for a in self.active.get(&k).into_iter().flatten() {
                    let other = a.other(&k);
                    if unseen.remove(other) {
                        component.insert(other.clone());
                        queue.push_back(other.clone());
                    }
                }
            }
            components.push(component);
        }
        if components.len() == 1 {
            return Removal::Shrunk(class);
        }
        // components come out ordered by their smallest member
        let mut new = Vec::new();
        let mut parts = components.into_iter();
        let kept = parts.next().unwrap();
        self.classes.insert(class, kept);
        for part in parts {
            let id = self.allocate();
            for k in &part {
                self.class_of.insert(k.clone(), id);
            }
            self.classes.insert(id, part);
            new.push(id);
        }
        Removal::Split { kept: class, new }
    }

    /// Partition as sorted member lists, for comparisons.
    pub fn partition(&self) -> BTreeSet<BTreeSet<CompositeKey>> {
        self.classes.values().cloned().collect()
    }
}
