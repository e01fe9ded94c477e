//! Independent reference implementations the engine is checked against.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

use bns_core::key::RecordId;
use bns_core::query::NetworkIndex;
use bns_core::surrogate::Contributor;
use bns_core::{
    BnId, CompositeKey, Engine, EntityKind, NetworkEntity, RecordKind, SourcePriorityConfig,
    Transformation,
};
use serde_json::{json, Value};

// ---- surrogate ------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Member {
    pub key: CompositeKey,
    pub fields: BTreeMap<String, String>,
}

fn filled(m: &Member) -> usize {
    m.fields.values().filter(|v| !v.is_empty()).count()
}

/// Does `a` rank before `b`? Written as the plain rule chain: override,
/// source type, completeness, origin, id.
pub fn ranks_before(a: &Member, b: &Member, cfg: &SourcePriorityConfig) -> bool {
    let ov = |m: &Member| cfg.overrides.get(&m.key).copied();
    match (ov(a), ov(b)) {
        (Some(x), Some(y)) if x != y => return x < y,
        (Some(_), None) => return true,
        (None, Some(_)) => return false,
        _ => {}
    }
    // 0 = listed (by position), 1 = unlisted (by name), 2 = untyped
    let ty = |m: &Member| -> (u8, usize, String) {
        match cfg.origins.get(&m.key.origin) {
            None => (2, 0, String::new()),
            Some(t) => match cfg.types.iter().position(|x| x == t) {
                Some(i) => (0, i, String::new()),
                None => (1, 0, t.clone()),
            },
        }
    };
    let (ta, tb) = (ty(a), ty(b));
    if ta != tb {
        return ta < tb;
    }
    if filled(a) != filled(b) {
        return filled(a) > filled(b);
    }
    if a.key.origin != b.key.origin {
        return a.key.origin < b.key.origin;
    }
    let id = |m: &Member| match &m.key.id {
        RecordId::Local(s) => (0u8, s.clone(), 0u64),
        RecordId::Hash(h) => (1u8, String::new(), *h),
    };
    id(a) < id(b)
}

/// The member that ranks before every other one among `candidates`.
fn best<'a>(candidates: &[&'a Member], cfg: &SourcePriorityConfig) -> Option<&'a Member> {
    candidates
        .iter()
        .find(|c| {
            candidates
                .iter()
                .all(|o| std::ptr::eq(**c, *o) || ranks_before(c, o, cfg))
        })
        .copied()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expected {
    pub values: BTreeMap<String, String>,
    pub contributions: BTreeMap<String, Contributor>,
    pub leading: Option<CompositeKey>,
}

/// Per-field brute-force selection: the user value if set, else the value
/// of the best-ranked member among those that have the field.
pub fn expected_surrogate(
    members: &[Member],
    cfg: &SourcePriorityConfig,
    user: &BTreeMap<String, String>,
) -> Expected {
    let all: Vec<&Member> = members.iter().collect();
    let leading = best(&all, cfg).map(|m| m.key.clone());
    let fields: BTreeSet<&String> = members
        .iter()
        .flat_map(|m| {
            m.fields
                .iter()
                .filter(|(_, v)| !v.is_empty())
                .map(|(k, _)| k)
        })
        .chain(user.keys())
        .collect();
    let mut out = Expected {
        values: BTreeMap::new(),
        contributions: BTreeMap::new(),
        leading,
    };
    for f in fields {
        if let Some(v) = user.get(f).filter(|v| !v.is_empty()) {
            out.values.insert(f.clone(), v.clone());
            out.contributions.insert(f.clone(), Contributor::User);
            continue;
        }
        let having: Vec<&Member> = members
            .iter()
            .filter(|m| m.fields.get(f).is_some_and(|v| !v.is_empty()))
            .collect();
        if let Some(m) = best(&having, cfg) {
            out.values.insert(f.clone(), m.fields[f].clone());
            out.contributions
                .insert(f.clone(), Contributor::Source(m.key.clone()));
        }
    }
    out
}

/// Members ordered by repeated extraction of the best one.
pub fn ranking(members: &[Member], cfg: &SourcePriorityConfig) -> Vec<CompositeKey> {
    let mut rest: Vec<&Member> = members.iter().collect();
    let mut out = Vec::new();
    while let Some(b) = best(&rest, cfg) {
        out.push(b.key.clone());
        rest.retain(|m| !std::ptr::eq(*m, b));
    }
    out
}

// ---- lineage --------------------------------------------------------------

/// Exhaustive consistency and completeness check of the lineage of one
/// engine state.
pub fn check_lineage(engine: &Engine) -> Result<usize, String> {
    let published = engine.published();
    let network = &published.network;
    let lineage = &published.lineage;
    let mut checked = 0;

    for e in network.entities() {
        let l = lineage
            .lineage(&e.bn_id)
            .map_err(|_| format!("{} has no lineage", e.bn_id))?;
        let expect = if e.sources.len() == 1 {
            Transformation::BlackBox
        } else {
            Transformation::Aggregator
        };
        if l.transformation != expect
            || l.sources != e.sources
            || l.field_contributions != e.contributions
        {
            return Err(format!("lineage of {} disagrees with the entity", e.bn_id));
        }
        let keys: BTreeSet<&CompositeKey> = e.sources.iter().map(|s| &s.key).collect();
        for (f, c) in &e.contributions {
            if let Contributor::Source(k) = c {
                if !keys.contains(k) {
                    return Err(format!("{}.{f} contributed by {k}, not a source", e.bn_id));
                }
            }
            if !e.attributes.contains_key(f) {
                return Err(format!("{}.{f} has a contributor but no value", e.bn_id));
            }
        }
        checked += 1;
    }
    if lineage.len() != network.len() {
        return Err(format!(
            "{} lineage records for {} entities",
            lineage.len(),
            network.len()
        ));
    }

    let mut by_key: BTreeMap<&CompositeKey, BTreeSet<BnId>> = BTreeMap::new();
    for e in network.entities() {
        for s in &e.sources {
            by_key.entry(&s.key).or_default().insert(e.bn_id);
        }
    }
    for r in engine.raw().records() {
        let expect = by_key.get(&r.key).cloned().unwrap_or_default();
        let got = lineage.reverse_lookup(&r.key);
        if got != expect {
            return Err(format!(
                "reverse_lookup({}) = {got:?}, scan gives {expect:?}",
                r.key
            ));
        }
        for bn in &got {
            let sources = &lineage.lineage(bn).unwrap().sources;
            if !sources.iter().any(|s| s.key == r.key) {
                return Err(format!(
                    "{bn} reverse-indexed from {} but not a source",
                    r.key
                ));
            }
        }
        checked += 1;
    }
    for k in by_key.keys() {
        if !engine.raw().contains(k) {
            return Err(format!("{k} is a source but not a raw record"));
        }
    }

    // every classified record whose class has an entity is one of its sources
    for (class, members) in engine.equivalence().classes() {
        if let Some(bn) = network.entity_for_class(class) {
            let e = network.get(&bn).unwrap();
            for m in members {
                if engine.raw().contains(m) && !e.sources.iter().any(|s| &s.key == m) {
                    return Err(format!("{m} is in the class of {bn} but not traced"));
                }
            }
        }
    }
    // every out record whose ends are participants feeds exactly one flow
    for r in engine.raw().records().filter(|r| r.kind == RecordKind::Out) {
        let ends: Vec<Option<BnId>> = ["from", "to"]
            .iter()
            .map(|f| {
                r.reference(f)
                    .and_then(|k| engine.equivalence().class_of(&k))
                    .and_then(|c| network.entity_for_class(c))
                    .filter(|bn| bn.kind == EntityKind::Participant)
            })
            .collect();
        let feeds = lineage.reverse_lookup(&r.key).len();
        let resolved = ends.iter().all(Option::is_some);
        if resolved != (feeds == 1) {
            return Err(format!("out record {} feeds {feeds} flows", r.key));
        }
    }
    if NetworkIndex::build(network) != published.index {
        return Err("incremental index differs from a rebuild".into());
    }
    Ok(checked)
}

// ---- queries --------------------------------------------------------------

pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn searchable(e: &NetworkEntity) -> BTreeSet<String> {
    let mut texts = vec![e.name.clone()];
    texts.extend(e.attributes.values().cloned());
    texts.extend(e.labels.iter().cloned());
    texts.extend(e.groups.iter().cloned());
    texts.iter().flat_map(|t| words(t)).collect()
}

/// Linear-scan search: (bn_id, score) in result order.
pub fn scan_search(
    entities: &[NetworkEntity],
    term: Option<&str>,
    kind: Option<EntityKind>,
    filters: &[(String, String)],
) -> Vec<(BnId, usize)> {
    let wanted: BTreeSet<String> = term
        .map(|t| words(t).into_iter().collect())
        .unwrap_or_default();
    let mut out: Vec<(BnId, usize)> = Vec::new();
    for e in entities {
        if kind.is_some_and(|k| k != e.kind) {
            continue;
        }
        let tokens = searchable(e);
        let score = wanted.iter().filter(|w| tokens.contains(*w)).count();
        if term.is_some() && score == 0 {
            continue;
        }
        let pass = filters.iter().all(|(f, v)| {
            e.attributes
                .get(f)
                .is_some_and(|a| a.to_lowercase() == v.to_lowercase())
        });
        if pass {
            out.push((e.bn_id, score));
        }
    }
    out.sort_by(|a, b| match b.1.cmp(&a.1) {
        Ordering::Equal => a.0.cmp(&b.0),
        o => o,
    });
    out
}

/// Participants joined to `start` by a flow in either direction.
pub fn bfs_neighbors(entities: &[NetworkEntity], start: BnId) -> BTreeSet<BnId> {
    let mut adj: BTreeMap<BnId, BTreeSet<BnId>> = BTreeMap::new();
    for e in entities {
        if let Some(ends) = e.endpoints {
            adj.entry(ends.source).or_default().insert(ends.target);
            adj.entry(ends.target).or_default().insert(ends.source);
        }
    }
    let mut seen = BTreeSet::from([start]);
    let mut out = BTreeSet::new();
    let mut queue = VecDeque::from([(start, 0)]);
    while let Some((n, depth)) = queue.pop_front() {
        if depth == 1 {
            continue;
        }
        for m in adj.get(&n).into_iter().flatten() {
            if *m != start {
                out.insert(*m);
            }
            if seen.insert(*m) {
                queue.push_back((*m, depth + 1));
            }
        }
    }
    out
}

pub fn scan_hosts_of(entities: &[NetworkEntity], participant: BnId) -> BTreeSet<BnId> {
    entities
        .iter()
        .find(|e| e.bn_id == participant)
        .map(|e| e.hosts.clone())
        .unwrap_or_default()
}

fn plain(e: &NetworkEntity, field: &str) -> Value {
    match field {
        "meta" => json!({ "bn_id": e.bn_id.to_string(), "kind": e.kind, "name": e.name }),
        "bn_id" => json!(e.bn_id.to_string()),
        "kind" => json!(e.kind),
        "labels" => json!(e.labels),
        "groups" => json!(e.groups),
        _ => match e.attributes.get(field) {
            Some(v) => json!(v),
            None if field == "name" => json!(e.name),
            None => Value::Null,
        },
    }
}

/// Expected projection, computed by scanning the entity list.
pub fn scan_project(entities: &[NetworkEntity], target: &NetworkEntity, paths: &[&str]) -> Value {
    let find = |bn: &BnId| entities.iter().find(|e| &e.bn_id == bn);
    let mut doc = serde_json::Map::new();
    let mut errors = serde_json::Map::new();
    let mut seen = BTreeSet::new();
    let list: Vec<&str> = if paths.iter().all(|p| p.trim().is_empty()) {
        vec!["meta"]
    } else {
        paths
            .iter()
            .map(|p| p.trim())
            .filter(|p| !p.is_empty())
            .collect()
    };
    for p in list {
        if !seen.insert(p) {
            continue;
        }
        let parts: Vec<&str> = p.split('.').collect();
        match parts[..] {
            [f] => {
                doc.insert(p.into(), plain(target, f));
            }
            [edge, f] if !f.is_empty() => {
                let targets: Option<BTreeSet<BnId>> = match (edge, target.kind) {
                    ("host" | "hosts", EntityKind::Participant) => Some(target.hosts.clone()),
                    ("neighbors", EntityKind::Participant) => {
                        Some(bfs_neighbors(entities, target.bn_id))
                    }
                    ("participants" | "participant", EntityKind::Host) => Some(
                        entities
                            .iter()
                            .filter(|e| e.hosts.contains(&target.bn_id))
                            .map(|e| e.bn_id)
                            .collect(),
                    ),
                    ("source", EntityKind::MessageFlow) => {
                        target.endpoints.map(|x| BTreeSet::from([x.source]))
                    }
                    ("target", EntityKind::MessageFlow) => {
                        target.endpoints.map(|x| BTreeSet::from([x.target]))
                    }
                    (
                        "host" | "hosts" | "neighbors" | "participants" | "participant" | "source"
                        | "target",
                        _,
                    ) => None,
                    _ => {
                        errors.insert(p.into(), json!(format!("unknown edge {edge:?}")));
                        continue;
                    }
                };
                match targets {
                    Some(set) => {
                        let values: Vec<Value> = set
                            .iter()
                            .filter_map(find)
                            .map(|t| plain(t, f))
                            .filter(|v| !v.is_null())
                            .collect();
                        doc.insert(p.into(), Value::Array(values));
                    }
                    None => {
                        errors.insert(p.into(), Value::Null);
                    }
                }
            }
            _ => {
                errors.insert(p.into(), Value::Null);
            }
        }
    }
    if !errors.is_empty() {
        doc.insert("errors".into(), Value::Object(errors));
    }
    Value::Object(doc)
}

/// Compares a projection with the oracle; error messages are only
/// required to be present, not to have a given wording.
pub fn same_projection(got: &Value, expected: &Value) -> bool {
    let (Some(g), Some(e)) = (got.as_object(), expected.as_object()) else {
        return false;
    };
    if g.keys().collect::<Vec<_>>() != e.keys().collect::<Vec<_>>() {
        return false;
    }
    g.iter().all(|(k, v)| {
        if k == "errors" {
            let (Some(gv), Some(ev)) = (v.as_object(), e[k].as_object()) else {
                return false;
            };
            gv.keys().collect::<BTreeSet<_>>() == ev.keys().collect::<BTreeSet<_>>()
                && gv.values().all(Value::is_string)
        } else {
            v == &e[k]
        }
    })
}
