//! Search, projection and traversal over the published network.
//!
//! The index holds a keyword index over names, attribute values, labels and
//! group names, a field index for exact (case-folded) attribute filters and
//! the adjacency needed for neighbor queries. It is maintained from commit
//! deltas and always equals a rebuild from scratch.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::network::{BnId, EntityKind, Network, NetworkDelta, NetworkEntity};

/// Splits on non-alphanumerics and case-folds.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

pub fn fold(value: &str) -> String {
    value.to_lowercase()
}

type FieldKey = (EntityKind, String, String);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Postings {
    tokens: BTreeSet<String>,
    fields: Vec<FieldKey>,
    /// Flow endpoints, for flows.
    ends: Option<(BnId, BnId)>,
    /// Runs-on hosts, for participants.
    hosts: BTreeSet<BnId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NetworkIndex {
    tokens: HashMap<String, BTreeSet<BnId>>,
    fields: HashMap<FieldKey, BTreeSet<BnId>>,
    /// Participant → neighbor participant → number of flows between them.
    neighbors: BTreeMap<BnId, BTreeMap<BnId, usize>>,
    /// Host → participants running on it.
    runs_here: BTreeMap<BnId, BTreeSet<BnId>>,
    entries: BTreeMap<BnId, Postings>,
}

fn postings_of(e: &NetworkEntity) -> Postings {
    let mut tokens: BTreeSet<String> = tokenize(&e.name).collect();
    for v in e.attributes.values() {
        tokens.extend(tokenize(v));
    }
    for v in e.labels.iter().chain(&e.groups) {
        tokens.extend(tokenize(v));
    }
    Postings {
        tokens,
        fields: e
            .attributes
            .iter()
            .map(|(f, v)| (e.kind, f.clone(), fold(v)))
            .collect(),
        ends: e.endpoints.map(|x| (x.source, x.target)),
        hosts: e.hosts.clone(),
    }
}

fn unpost<K: std::hash::Hash + Eq>(map: &mut HashMap<K, BTreeSet<BnId>>, key: &K, bn: &BnId) {
    if let Some(set) = map.get_mut(key) {
        set.remove(bn);
        if set.is_empty() {
            map.remove(key);
        }
    }
}

impl NetworkIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn build(network: &Network) -> Self {
        let mut index = NetworkIndex::new();
        for e in network.entities() {
            index.insert(e);
        }
        index
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn insert(&mut self, e: &NetworkEntity) {
        let bn = e.bn_id;
        let p = postings_of(e);
        for t in &p.tokens {
            self.tokens.entry(t.clone()).or_default().insert(bn);
        }
        for f in &p.fields {
            self.fields.entry(f.clone()).or_default().insert(bn);
        }
        if let Some((s, t)) = p.ends {
            if s != t {
                *self.neighbors.entry(s).or_default().entry(t).or_default() += 1;
                *self.neighbors.entry(t).or_default().entry(s).or_default() += 1;
            }
        }
        for h in &p.hosts {
            self.runs_here.entry(*h).or_default().insert(bn);
        }
        self.entries.insert(bn, p);
    }

    fn unlink(&mut self, a: BnId, b: BnId) {
        if let Some(m) = self.neighbors.get_mut(&a) {
            if let Some(n) = m.get_mut(&b) {
                *n -= 1;
                if *n == 0 {
                    m.remove(&b);
                }
            }
            if m.is_empty() {
                self.neighbors.remove(&a);
            }
        }
    }

    fn delete(&mut self, bn: &BnId) {
        let Some(p) = self.entries.remove(bn) else {
            return;
        };
        for t in &p.tokens {
            unpost(&mut self.tokens, t, bn);
        }
        for f in &p.fields {
            unpost(&mut self.fields, f, bn);
        }
        if let Some((s, t)) = p.ends {
            if s != t {
                self.unlink(s, t);
                self.unlink(t, s);
            }
        }
        for h in &p.hosts {
            if let Some(set) = self.runs_here.get_mut(h) {
                set.remove(bn);
                if set.is_empty() {
                    self.runs_here.remove(h);
                }
            }
        }
    }

    /// Applies a commit delta. `network` is the state after the commit.
    pub fn update(&mut self, network: &Network, delta: &NetworkDelta) {
        for bn in delta.removed.iter().chain(&delta.upserted) {
            self.delete(bn);
        }
        for bn in &delta.upserted {
            if let Some(e) = network.get(bn) {
                self.insert(e);
            }
        }
    }

    /// Participants connected to `bn` by a flow in either direction.
    pub fn flow_neighbors(&self, bn: &BnId) -> BTreeSet<BnId> {
        self.neighbors
            .get(bn)
            .map(|m| m.keys().copied().collect())
            .unwrap_or_default()
    }

    pub fn hosts_of(&self, bn: &BnId) -> BTreeSet<BnId> {
        self.entries
            .get(bn)
            .map(|p| p.hosts.clone())
            .unwrap_or_default()
    }

    pub fn participants_on(&self, host: &BnId) -> BTreeSet<BnId> {
        self.runs_here.get(host).cloned().unwrap_or_default()
    }

    fn token_postings(&self, token: &str) -> Option<&BTreeSet<BnId>> {
        self.tokens.get(token)
    }

    fn field_postings(&self, kinds: &[EntityKind], field: &str, value: &str) -> BTreeSet<BnId> {
        let folded = fold(value);
        kinds
            .iter()
            .filter_map(|k| self.fields.get(&(*k, field.to_string(), folded.clone())))
            .flatten()
            .copied()
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SearchParams {
    pub term: Option<String>,
    pub kind: Option<EntityKind>,
    pub filters: Vec<(String, String)>,
    pub offset: usize,
    pub limit: Option<usize>,
}

impl SearchParams {
    /// Reads `query`, `type`, `offset`, `limit`; every other pair is a field
    /// filter.
    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut params = SearchParams::default();
        for (k, v) in pairs {
            let (k, v) = (k.as_ref().trim(), v.as_ref());
            match k {
                "" => return Err(Error::BadParameter("empty parameter name".into())),
                "query" => {
                    if !v.trim().is_empty() {
                        let term = params.term.get_or_insert_with(String::new);
                        if !term.is_empty() {
                            term.push(' ');
                        }
                        term.push_str(v);
                    }
                }
                "type" => {
                    let kind = EntityKind::parse(v)
                        .ok_or_else(|| Error::BadParameter(format!("unknown type {v:?}")))?;
                    if params.kind.is_some_and(|k| k != kind) {
                        return Err(Error::BadParameter("conflicting type parameters".into()));
                    }
                    params.kind = Some(kind);
                }
                "offset" | "limit" => {
                    let n: usize = v.trim().parse().map_err(|_| {
                        Error::BadParameter(format!("{k} must be a non-negative integer"))
                    })?;
                    if k == "offset" {
                        params.offset = n;
                    } else {
                        params.limit = Some(n);
                    }
                }
                field => params.filters.push((field.to_string(), v.to_string())),
            }
        }
        Ok(params)
    }

    pub fn is_empty(&self) -> bool {
        self.term.is_none() && self.kind.is_none() && self.filters.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SearchHit {
    pub bn_id: BnId,
    pub kind: EntityKind,
    pub name: String,
    pub score: usize,
}

/// Term matches ∩ type ∩ every field filter, ranked by the number of
/// distinct query tokens matched, then by id.
pub fn search(
    network: &Network,
    index: &NetworkIndex,
    params: &SearchParams,
) -> Result<Vec<SearchHit>> {
    if params.is_empty() {
        return Err(Error::BadParameter(
            "give at least one of query, type or a field filter".into(),
        ));
    }
    let kinds: Vec<EntityKind> = match params.kind {
        Some(k) => vec![k],
        None => EntityKind::ALL.to_vec(),
    };

    let mut scores: Option<BTreeMap<BnId, usize>> = None;
    if let Some(term) = &params.term {
        let tokens: BTreeSet<String> = tokenize(term).collect();
        let mut s: BTreeMap<BnId, usize> = BTreeMap::new();
        for t in &tokens {
            for bn in index.token_postings(t).into_iter().flatten() {
                *s.entry(*bn).or_default() += 1;
            }
        }
        scores = Some(s);
    }
    for (field, value) in &params.filters {
        let hits = index.field_postings(&kinds, field, value);
        scores = Some(match scores {
            None => hits.into_iter().map(|bn| (bn, 0)).collect(),
            Some(mut s) => {
                s.retain(|bn, _| hits.contains(bn));
                s
            }
        });
    }
    let scores = match scores {
        Some(s) => s,
        None => network
            .entities()
            .filter(|e| kinds.contains(&e.kind))
            .map(|e| (e.bn_id, 0))
            .collect(),
    };

    let mut hits: Vec<SearchHit> = scores
        .into_iter()
        .filter(|(bn, _)| kinds.contains(&bn.kind))
        .filter_map(|(bn, score)| {
            network.get(&bn).map(|e| SearchHit {
                bn_id: bn,
                kind: e.kind,
                name: e.name.clone(),
                score,
            })
        })
        .collect();
    hits.sort_by(|a, b| b.score.cmp(&a.score).then(a.bn_id.cmp(&b.bn_id)));
    let hits = hits.into_iter().skip(params.offset);
    Ok(match params.limit {
        Some(n) => hits.take(n).collect(),
        None => hits.collect(),
    })
}

/// Edges a `show` path may follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Edge {
    /// Participant → hosts it runs on.
    Host,
    /// Participant → flow-connected participants.
    Neighbors,
    /// Flow → its source participant.
    Source,
    /// Flow → its target participant.
    Target,
    /// Host → participants running on it.
    Participants,
}

impl Edge {
    fn parse(s: &str) -> Option<Edge> {
        Some(match s {
            "host" | "hosts" => Edge::Host,
            "neighbors" => Edge::Neighbors,
            "source" => Edge::Source,
            "target" => Edge::Target,
            "participants" | "participant" => Edge::Participants,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShowPath {
    Meta,
    Field(String),
    Edge(Edge, String),
    Invalid(String, String),
}

/// Parsed `show=` list. Empty means `meta`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShowPaths(pub Vec<(String, ShowPath)>);

impl ShowPaths {
    pub fn parse(spec: &str) -> ShowPaths {
        let mut paths = Vec::new();
        for raw in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let path = match raw.split('.').collect::<Vec<_>>()[..] {
                ["meta"] => ShowPath::Meta,
                [field] => ShowPath::Field(field.to_string()),
                [edge, field] if !field.is_empty() => match Edge::parse(edge) {
                    Some(e) => ShowPath::Edge(e, field.to_string()),
                    None => ShowPath::Invalid(raw.to_string(), format!("unknown edge {edge:?}")),
                },
                _ => ShowPath::Invalid(raw.to_string(), "paths follow at most one edge".into()),
            };
            if !paths.iter().any(|(p, _)| p == raw) {
                paths.push((raw.to_string(), path));
            }
        }
        if paths.is_empty() {
            paths.push(("meta".to_string(), ShowPath::Meta));
        }
        ShowPaths(paths)
    }
}

fn meta(e: &NetworkEntity) -> Value {
    json!({ "bn_id": e.bn_id.to_string(), "kind": e.kind, "name": e.name })
}

/// Value of a plain field on an entity: attribute, or one of `bn_id`,
/// `kind`, `name`, `meta`, `labels`, `groups`.
fn field_value(e: &NetworkEntity, field: &str) -> Value {
    match field {
        "meta" => meta(e),
        "bn_id" => Value::String(e.bn_id.to_string()),
        "kind" => json!(e.kind),
        "labels" => json!(e.labels),
        "groups" => json!(e.groups),
        "name" if !e.attributes.contains_key("name") => Value::String(e.name.clone()),
        _ => e
            .attributes
            .get(field)
            .map(|v| Value::String(v.clone()))
            .unwrap_or(Value::Null),
    }
}

pub fn edge_targets(
    network: &Network,
    index: &NetworkIndex,
    e: &NetworkEntity,
    edge: Edge,
) -> Option<BTreeSet<BnId>> {
    let ends = e.endpoints;
    Some(match (edge, e.kind) {
        (Edge::Host, EntityKind::Participant) => index.hosts_of(&e.bn_id),
        (Edge::Neighbors, EntityKind::Participant) => index.flow_neighbors(&e.bn_id),
        (Edge::Participants, EntityKind::Host) => index.participants_on(&e.bn_id),
        (Edge::Source, EntityKind::MessageFlow) => ends.map(|x| x.source).into_iter().collect(),
        (Edge::Target, EntityKind::MessageFlow) => ends.map(|x| x.target).into_iter().collect(),
        _ => return None,
    })
    .map(|set: BTreeSet<BnId>| {
        set.into_iter()
            .filter(|bn| network.get(bn).is_some())
            .collect()
    })
}

/// Projection document of one entity.
pub fn project(
    network: &Network,
    index: &NetworkIndex,
    bn: &BnId,
    paths: &ShowPaths,
) -> Result<Value> {
    let e = network
        .get(bn)
        .ok_or_else(|| Error::NotFound(format!("no entity {bn}")))?;
    let mut doc = Map::new();
    let mut errors = Map::new();
    for (raw, path) in &paths.0 {
        match path {
            ShowPath::Meta => {
                doc.insert(raw.clone(), meta(e));
            }
            ShowPath::Field(f) => {
                doc.insert(raw.clone(), field_value(e, f));
            }
            ShowPath::Edge(edge, f) => match edge_targets(network, index, e, *edge) {
                Some(targets) => {
                    let values: Vec<Value> = targets
                        .iter()
                        .filter_map(|t| network.get(t))
                        .map(|t| field_value(t, f))
                        .filter(|v| !v.is_null())
                        .collect();
                    doc.insert(raw.clone(), Value::Array(values));
                }
                None => {
                    errors.insert(
                        raw.clone(),
                        Value::String(format!("a {} has no {edge:?} edge", e.kind).to_lowercase()),
                    );
                }
            },
            ShowPath::Invalid(_, msg) => {
                errors.insert(raw.clone(), Value::String(msg.clone()));
            }
        }
    }
    if !errors.is_empty() {
        doc.insert("errors".into(), Value::Object(errors));
    }
    Ok(Value::Object(doc))
}

/// Flow neighbors of a participant (undirected), or with `kind = Host`
/// the hosts those neighbors run on. Hosts and flows have no neighbors.
pub fn neighbors(
    network: &Network,
    index: &NetworkIndex,
    bn: &BnId,
    kind: Option<EntityKind>,
) -> Result<Vec<BnId>> {
    if network.get(bn).is_none() {
        return Err(Error::NotFound(format!("no entity {bn}")));
    }
    let direct = index.flow_neighbors(bn);
    let out: BTreeSet<BnId> = match kind {
        None | Some(EntityKind::Participant) => direct,
        Some(EntityKind::Host) => direct.iter().flat_map(|n| index.hosts_of(n)).collect(),
        Some(EntityKind::MessageFlow) => {
            return Err(Error::BadParameter(
                "neighbors project to participants or hosts".into(),
            ))
        }
    };
    Ok(out
        .into_iter()
        .filter(|b| network.get(b).is_some())
        .collect())
}

/// Parses the `{kind}` segment of a neighbors URL; empty means none.
pub fn parse_neighbor_kind(s: &str) -> Result<Option<EntityKind>> {
    if s.trim().is_empty() {
        return Ok(None);
    }
    match EntityKind::parse(s) {
        Some(EntityKind::MessageFlow) | None => {
            Err(Error::BadParameter(format!("unknown neighbor kind {s:?}")))
        }
        k => Ok(k),
    }
}

pub fn summary(e: &NetworkEntity) -> Value {
    meta(e)
}
