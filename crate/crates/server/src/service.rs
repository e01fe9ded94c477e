//! Request handling shared by the HTTP routes and the command line.
//!
//! Each operation returns a [`Reply`]: a status code and a JSON body. The
//! engine sits behind one mutex (the writer lane); reads take the last
//! published snapshot and never wait for a commit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use bns_core::engine::Published;
use bns_core::query::{self, SearchParams, ShowPaths};
use bns_core::{Engine, EngineConfig, EntityKind, Error, FileSources, Mode, Settings};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub status: u16,
    pub body: Value,
}

impl Reply {
    pub fn ok(body: Value) -> Self {
        Reply { status: 200, body }
    }

    pub fn created(body: Value) -> Self {
        Reply { status: 201, body }
    }

    pub fn error(e: &Error) -> Self {
        let (status, kind) = match e {
            Error::NotFound(_) => (404, "not_found"),
            Error::Ambiguous { .. } => (409, "ambiguous"),
            Error::BadParameter(_) => (400, "bad_parameter"),
            Error::Rejected(_) => (400, "rejected"),
            Error::Config { .. } => (500, "config"),
            Error::Io { .. } | Error::State { .. } => (500, "internal"),
        };
        let mut err = json!({ "kind": kind, "message": e.to_string() });
        if let Error::Ambiguous { candidates, .. } = e {
            err["candidates"] = json!(candidates);
        }
        Reply {
            status,
            body: json!({ "error": err }),
        }
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn reply<T>(r: bns_core::Result<T>, f: impl FnOnce(T) -> Reply) -> Reply {
    match r {
        Ok(v) => f(v),
        Err(e) => Reply::error(&e),
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct LabelRequest {
    pub target: String,
    pub text: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct GroupRequest {
    pub name: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct FieldRequest {
    pub value: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateRequest {
    #[serde(rename = "type")]
    pub kind: String,
    pub origin: String,
    #[serde(default)]
    pub id: Option<String>,
    pub fields: BTreeMap<String, String>,
}

pub struct Service {
    engine: Mutex<Engine>,
    published: RwLock<Arc<Published>>,
    sources: FileSources,
    state: Option<PathBuf>,
}

impl Service {
    /// A service over `engine`. With a state path every successful
    /// mutation is saved there.
    pub fn new(engine: Engine, sources: FileSources, state: Option<PathBuf>) -> Self {
        let published = RwLock::new(engine.published());
        Service {
            engine: Mutex::new(engine),
            published,
            sources,
            state,
        }
    }

    /// Opens the state named by the configuration (empty if absent).
    pub fn open(config: &EngineConfig) -> bns_core::Result<Self> {
        let engine = Engine::load(&config.state, Settings::from(config))?;
        Ok(Service::new(
            engine,
            FileSources::new(&config.sources),
            Some(config.state.clone()),
        ))
    }

    pub fn snapshot(&self) -> Arc<Published> {
        Arc::clone(&self.published.read().unwrap_or_else(|e| e.into_inner()))
    }

    pub fn sources(&self) -> &FileSources {
        &self.sources
    }

    /// Runs a mutation on the writer lane, then publishes and persists.
    fn write<T>(&self, op: impl FnOnce(&mut Engine) -> bns_core::Result<T>) -> bns_core::Result<T> {
        let mut engine = self.engine.lock().unwrap_or_else(|e| e.into_inner());
        let out = op(&mut engine)?;
        *self.published.write().unwrap_or_else(|e| e.into_inner()) = engine.published();
        if let Some(path) = &self.state {
            engine.save(path)?;
        }
        Ok(out)
    }

    // ---- reads ------------------------------------------------------------

    pub fn search<I, K, V>(&self, pairs: I) -> Reply
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let snapshot = self.snapshot();
        let hits = SearchParams::from_pairs(pairs).and_then(|p| snapshot.search(&p));
        reply(hits, |hits| Reply::ok(json!({ "hits": hits })))
    }

    /// Projection of one entity; `show` is the comma separated path list.
    pub fn show(&self, name: &str, show: Option<&str>) -> Reply {
        let snapshot = self.snapshot();
        let paths = ShowPaths::parse(show.unwrap_or(""));
        reply(
            snapshot
                .resolve(name)
                .and_then(|bn| snapshot.project(&bn, &paths)),
            Reply::ok,
        )
    }

    pub fn neighbors(&self, name: &str, kind: Option<&str>) -> Reply {
        let snapshot = self.snapshot();
        let result = query::parse_neighbor_kind(kind.unwrap_or("")).and_then(|kind| {
            let bn = snapshot.resolve(name)?;
            let found = snapshot.neighbors(&bn, kind)?;
            Ok((bn, found))
        });
        reply(result, |(bn, found)| {
            let list: Vec<Value> = found
                .iter()
                .filter_map(|n| snapshot.network.get(n))
                .map(query::summary)
                .collect();
            Reply::ok(json!({ "bn_id": bn, "neighbors": list }))
        })
    }

    pub fn lineage(&self, name: &str) -> Reply {
        let snapshot = self.snapshot();
        reply(
            snapshot
                .resolve(name)
                .and_then(|bn| snapshot.lineage(&bn).cloned()),
            |l| Reply::ok(l.to_document()),
        )
    }

    pub fn export(&self) -> Reply {
        Reply::ok(to_value(&self.snapshot().export()))
    }

    pub fn enhancement(&self, id: &str) -> Reply {
        let engine = self.engine.lock().unwrap_or_else(|e| e.into_inner());
        reply(engine.enhancement(id), |e| Reply::ok(to_value(e)))
    }

    // ---- writes -----------------------------------------------------------

    /// Ingests `file`, or the latest snapshot of `origin` under the
    /// sources directory.
    pub fn load(&self, origin: &str, file: Option<&Path>, mode: Mode) -> Reply {
        let result = self.write(|engine| match file {
            Some(path) => engine.ingest_file(origin, path, mode),
            None => engine.reload(origin, &self.sources, mode),
        });
        reply(result, |outcome| Reply::ok(to_value(&outcome)))
    }

    pub fn add_label(&self, req: &LabelRequest) -> Reply {
        let result = self.write(|engine| engine.add_label(&req.target, &req.text));
        reply(result, |a| Reply::created(to_value(&a)))
    }

    pub fn add_group(&self, req: &GroupRequest) -> Reply {
        let result = self.write(|engine| engine.add_group(&req.name, &req.members));
        reply(result, |a| Reply::created(to_value(&a)))
    }

    pub fn enhance_field(&self, name: &str, field: &str, value: &str) -> Reply {
        let result = self.write(|engine| engine.enhance_field(name, field, value));
        reply(result, |e| Reply::created(to_value(&e)))
    }

    pub fn create_entity(&self, req: &CreateRequest) -> Reply {
        let result = self.write(|engine| {
            let kind = EntityKind::parse(&req.kind)
                .ok_or_else(|| Error::BadParameter(format!("unknown type {:?}", req.kind)))?;
            engine.create_entity(kind, &req.origin, req.id.as_deref(), &req.fields)
        });
        reply(result, |e| Reply::created(to_value(&e)))
    }

    pub fn delete_entity(&self, name: &str) -> Reply {
        let result = self.write(|engine| engine.delete_entity(name));
        reply(result, |e| Reply::created(to_value(&e)))
    }

    /// Deploys an enhancement to its sources. A failed deploy is reported
    /// in the returned enhancement, not as an error.
    pub fn deploy(&self, id: &str) -> Reply {
        let result = self.write(|engine| engine.deploy(id, &self.sources));
        reply(result, |e| Reply::ok(to_value(&e)))
    }
}
