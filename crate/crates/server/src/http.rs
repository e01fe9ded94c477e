//! HTTP routes.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/search?query=…&type=…&field=value` | keyword and field search |
//! | GET | `/export` | whole network with key mappings |
//! | GET | `/{name}/?show=meta,location,host.name` | projection |
//! | GET | `/{name}/neighbors/{kind}/` | flow neighbors, or their hosts |
//! | GET | `/{name}/lineage` | lineage document |
//! | POST | `/labels`, `/groups` | enrichment |
//! | PUT | `/{name}/fields/{field}` | field enhancement |
//! | POST | `/entities` | planned creation |
//! | DELETE | `/{name}` | planned deletion |
//! | POST | `/deploy/{id}` | deploy, then poll `GET /enhancements/{id}` |
//! | POST | `/load/{origin}?mode=full` | ingest the latest snapshot |

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, RawQuery, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use bns_core::{EnhancementStatus, Mode};
use serde::de::DeserializeOwned;
use serde_json::json;

use crate::service::{CreateRequest, FieldRequest, GroupRequest, LabelRequest, Reply, Service};

type Shared = Arc<Service>;

impl IntoResponse for Reply {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.body)).into_response()
    }
}

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/search", get(search))
        .route("/export", get(export))
        .route("/labels", post(add_label))
        .route("/groups", post(add_group))
        .route("/entities", post(create_entity))
        .route("/deploy/{id}", post(deploy))
        .route("/enhancements/{id}", get(enhancement))
        .route("/load/{origin}", post(load))
        .route("/{name}", get(show).delete(delete_entity))
        .route("/{name}/", get(show))
        .route("/{name}/lineage", get(lineage))
        .route("/{name}/neighbors", get(neighbors_all))
        .route("/{name}/neighbors/", get(neighbors_all))
        .route("/{name}/neighbors/{kind}", get(neighbors))
        .route("/{name}/neighbors/{kind}/", get(neighbors))
        .route("/{name}/fields/{field}", put(enhance_field))
        .fallback(|| async {
            Reply {
                status: 404,
                body: json!({ "error": { "kind": "not_found", "message": "no such route" } }),
            }
        })
        .with_state(service)
}

/// Decoded query pairs; undecodable bytes are replaced, never rejected.
pub fn query_pairs(raw: Option<&str>) -> Vec<(String, String)> {
    form_urlencoded::parse(raw.unwrap_or("").as_bytes())
        .into_owned()
        .collect()
}

fn bad_body(message: String) -> Reply {
    Reply {
        status: 400,
        body: json!({ "error": { "kind": "bad_parameter", "message": message } }),
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, Reply> {
    serde_json::from_slice(body).map_err(|e| bad_body(format!("invalid request body: {e}")))
}

async fn search(State(s): State<Shared>, RawQuery(q): RawQuery) -> Reply {
    s.search(query_pairs(q.as_deref()))
}

async fn export(State(s): State<Shared>) -> Reply {
    s.export()
}

async fn show(State(s): State<Shared>, Path(name): Path<String>, RawQuery(q): RawQuery) -> Reply {
    let shows: Vec<String> = query_pairs(q.as_deref())
        .into_iter()
        .filter(|(k, _)| k == "show")
        .map(|(_, v)| v)
        .collect();
    s.show(&name, Some(&shows.join(",")))
}

async fn lineage(State(s): State<Shared>, Path(name): Path<String>) -> Reply {
    s.lineage(&name)
}

async fn neighbors_all(State(s): State<Shared>, Path(name): Path<String>) -> Reply {
    s.neighbors(&name, None)
}

async fn neighbors(State(s): State<Shared>, Path((name, kind)): Path<(String, String)>) -> Reply {
    s.neighbors(&name, Some(&kind))
}

async fn add_label(State(s): State<Shared>, body: Bytes) -> Reply {
    match parse_body::<LabelRequest>(&body) {
        Ok(req) => s.add_label(&req),
        Err(r) => r,
    }
}

async fn add_group(State(s): State<Shared>, body: Bytes) -> Reply {
    match parse_body::<GroupRequest>(&body) {
        Ok(req) => s.add_group(&req),
        Err(r) => r,
    }
}

async fn enhance_field(
    State(s): State<Shared>,
    Path((name, field)): Path<(String, String)>,
    body: Bytes,
) -> Reply {
    match parse_body::<FieldRequest>(&body) {
        Ok(req) => s.enhance_field(&name, &field, &req.value),
        Err(r) => r,
    }
}

async fn create_entity(State(s): State<Shared>, body: Bytes) -> Reply {
    match parse_body::<CreateRequest>(&body) {
        Ok(req) => s.create_entity(&req),
        Err(r) => r,
    }
}

async fn delete_entity(State(s): State<Shared>, Path(name): Path<String>) -> Reply {
    s.delete_entity(&name)
}

/// Starts the deploy on the writer lane and answers 202 with the pending
/// enhancement; an already deployed one answers 200.
async fn deploy(State(s): State<Shared>, Path(id): Path<String>) -> Reply {
    let current = s.enhancement(&id);
    if !current.is_success() || current.body["status"] == json!(EnhancementStatus::Deployed) {
        return current;
    }
    let worker = Arc::clone(&s);
    tokio::task::spawn_blocking(move || worker.deploy(&id));
    Reply {
        status: 202,
        body: current.body,
    }
}

async fn enhancement(State(s): State<Shared>, Path(id): Path<String>) -> Reply {
    s.enhancement(&id)
}

async fn load(State(s): State<Shared>, Path(origin): Path<String>, RawQuery(q): RawQuery) -> Reply {
    let mut mode = Mode::Full;
    for (k, v) in query_pairs(q.as_deref()) {
        if k == "mode" {
            mode = match v.as_str() {
                "full" => Mode::Full,
                "delta" => Mode::Delta,
                other => return bad_body(format!("mode must be full or delta, not {other:?}")),
            };
        }
    }
    let worker = Arc::clone(&s);
    tokio::task::spawn_blocking(move || worker.load(&origin, None, mode))
        .await
        .unwrap_or_else(|e| bad_body(format!("load failed: {e}")))
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(service: Shared, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(service)).await
}
