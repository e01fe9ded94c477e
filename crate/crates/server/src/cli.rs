//! Command line driver. Every command runs the same service operation as
//! its HTTP route and works on the state file named by the configuration.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use bns_core::{EngineConfig, Mode};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::service::{CreateRequest, GroupRequest, LabelRequest, Reply, Service};

#[derive(Debug, Parser)]
#[command(name = "bns", version, about = "Business network inference engine")]
pub struct Cli {
    /// Configuration file.
    #[arg(long, global = true, env = "BNS_CONFIG")]
    pub config: Option<PathBuf>,

    /// Print the JSON body instead of text.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
#[group(multiple = false)]
pub struct ModeFlags {
    /// Tombstone records missing from the snapshot (default).
    #[arg(long)]
    full: bool,
    /// Only add or change records.
    #[arg(long)]
    delta: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest a snapshot file, or the latest snapshot of the origin.
    Load {
        origin: String,
        file: Option<PathBuf>,
        #[command(flatten)]
        mode: ModeFlags,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
    },
    /// Keyword and field search.
    Search {
        /// Search terms.
        terms: Vec<String>,
        #[arg(long = "type")]
        kind: Option<String>,
        /// Field filter `field=value`; repeatable.
        #[arg(long = "where", value_name = "FIELD=VALUE")]
        filters: Vec<String>,
        #[arg(long)]
        offset: Option<usize>,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Projection of one entity.
    Show {
        name: String,
        /// Comma separated paths, e.g. `meta,location,host.name`.
        #[arg(long, default_value = "")]
        paths: String,
    },
    /// Flow neighbors of a participant, or with a kind their hosts.
    Neighbors { name: String, kind: Option<String> },
    /// Lineage of an entity.
    Lineage { name: String },
    /// Whole network with key mappings.
    Export,
    /// Attach a label.
    Label { target: String, text: String },
    /// Group entities under a name.
    Group {
        name: String,
        #[arg(required = true)]
        members: Vec<String>,
    },
    /// Set a field value of an entity.
    Enhance {
        name: String,
        field: String,
        value: String,
    },
    /// Plan a new entity at a source.
    Create {
        /// participant, host or mflow.
        kind: String,
        origin: String,
        #[arg(long)]
        id: Option<String>,
        /// `field=value` pairs.
        #[arg(required = true, value_name = "FIELD=VALUE")]
        fields: Vec<String>,
    },
    /// Plan deletion of an entity at its sources.
    Delete { name: String },
    /// Deploy an enhancement to its sources.
    Deploy { id: String },
    /// Show an enhancement and its status.
    Enhancement { id: String },
}

fn split_pair(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected FIELD=VALUE, got {s:?}"))
}

fn usage_error(message: String) -> Reply {
    Reply {
        status: 400,
        body: serde_json::json!({ "error": { "kind": "bad_parameter", "message": message } }),
    }
}

pub fn load_config(path: Option<&PathBuf>) -> bns_core::Result<EngineConfig> {
    match path {
        Some(p) => EngineConfig::load(p),
        None => Ok(EngineConfig::default()),
    }
}

/// Runs one command against `service`. `serve` is handled by the caller.
pub fn execute(service: &Service, command: &Command) -> Reply {
    match command {
        Command::Load { origin, file, mode } => {
            let m = if mode.delta { Mode::Delta } else { Mode::Full };
            service.load(origin, file.as_deref(), m)
        }
        Command::Serve { .. } => usage_error("serve is not a one-shot command".into()),
        Command::Search {
            terms,
            kind,
            filters,
            offset,
            limit,
        } => {
            let mut pairs: Vec<(String, String)> = Vec::new();
            if !terms.is_empty() {
                pairs.push(("query".into(), terms.join(" ")));
            }
            if let Some(k) = kind {
                pairs.push(("type".into(), k.clone()));
            }
            for f in filters {
                match split_pair(f) {
                    Ok(p) => pairs.push(p),
                    Err(e) => return usage_error(e),
                }
            }
            if let Some(n) = offset {
                pairs.push(("offset".into(), n.to_string()));
            }
            if let Some(n) = limit {
                pairs.push(("limit".into(), n.to_string()));
            }
            service.search(pairs)
        }
        Command::Show { name, paths } => service.show(name, Some(paths)),
        Command::Neighbors { name, kind } => service.neighbors(name, kind.as_deref()),
        Command::Lineage { name } => service.lineage(name),
        Command::Export => service.export(),
        Command::Label { target, text } => service.add_label(&LabelRequest {
            target: target.clone(),
            text: text.clone(),
        }),
        Command::Group { name, members } => service.add_group(&GroupRequest {
            name: name.clone(),
            members: members.clone(),
        }),
        Command::Enhance { name, field, value } => service.enhance_field(name, field, value),
        Command::Create {
            kind,
            origin,
            id,
            fields,
        } => {
            let mut map = BTreeMap::new();
            for f in fields {
                match split_pair(f) {
                    Ok((k, v)) => {
                        map.insert(k, v);
                    }
                    Err(e) => return usage_error(e),
                }
            }
            service.create_entity(&CreateRequest {
                kind: kind.clone(),
                origin: origin.clone(),
                id: id.clone(),
                fields: map,
            })
        }
        Command::Delete { name } => service.delete_entity(name),
        Command::Deploy { id } => service.deploy(id),
        Command::Enhancement { id } => service.enhancement(id),
    }
}

fn s(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

/// Text rendering of a successful reply.
pub fn render_text(command: &Command, body: &Value) -> String {
    let mut out = String::new();
    match command {
        Command::Search { .. } => {
            for h in body["hits"].as_array().into_iter().flatten() {
                out.push_str(&format!(
                    "{}\t{}\t{}\n",
                    s(&h["bn_id"]),
                    s(&h["kind"]),
                    s(&h["name"])
                ));
            }
        }
        Command::Neighbors { .. } => {
            for n in body["neighbors"].as_array().into_iter().flatten() {
                out.push_str(&format!(
                    "{}\t{}\t{}\n",
                    s(&n["bn_id"]),
                    s(&n["kind"]),
                    s(&n["name"])
                ));
            }
        }
        Command::Load { .. } => {
            let rejected = body["rejected"].as_array().map_or(0, Vec::len);
            out.push_str(&format!(
                "{} ({}): {} lines, {} created, {} updated, {} unchanged, {} tombstoned, {} rejected\n",
                s(&body["origin"]),
                s(&body["mode"]),
                body["lines"],
                body["created"],
                body["updated"],
                body["unchanged"],
                body["tombstoned"],
                rejected
            ));
            for r in body["rejected"].as_array().into_iter().flatten() {
                out.push_str(&format!("  line {}: {}\n", r["line"], s(&r["reason"])));
            }
            out.push_str(&format!(
                "network: {} upserted, {} removed, {} pending references\n",
                body["network"]["upserted"],
                body["network"]["removed"],
                body["network"]["pending_references"]
            ));
        }
        Command::Lineage { .. } => {
            out.push_str(&format!(
                "{} {}\n",
                s(&body["bn_id"]),
                s(&body["transformation"])
            ));
            for src in body["sources"].as_array().into_iter().flatten() {
                out.push_str(&format!("  source {}\n", s(&src["ref"])));
            }
            if let Some(fields) = body["field_contributions"].as_object() {
                for (f, c) in fields {
                    out.push_str(&format!("  {f} <- {}\n", s(&c["contributor"])));
                }
            }
        }
        Command::Deploy { .. } | Command::Enhancement { .. } => {
            out.push_str(&format!(
                "{} {} {}\n",
                s(&body["id"]),
                s(&body["op"]),
                s(&body["status"])
            ));
            for key in ["warning", "error"] {
                if !body[key].is_null() {
                    out.push_str(&format!("  {key}: {}\n", s(&body[key])));
                }
            }
        }
        _ => {
            out.push_str(&serde_json::to_string_pretty(body).expect("json"));
            out.push('\n');
        }
    }
    out
}

/// Runs the parsed command line and returns the process exit code.
pub fn run(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let config = match load_config(cli.config.as_ref()) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(stderr, "bns: {e}");
            return 2;
        }
    };
    let service = match Service::open(&config) {
        Ok(s) => Arc::new(s),
        Err(e) => {
            let _ = writeln!(stderr, "bns: {e}");
            return 1;
        }
    };

    if let Command::Serve { port } = cli.command {
        let mut addr = config.listen;
        if let Some(p) = port {
            addr.set_port(p);
        }
        let runtime = match tokio::runtime::Runtime::new() {
            Ok(r) => r,
            Err(e) => {
                let _ = writeln!(stderr, "bns: {e}");
                return 1;
            }
        };
        let _ = writeln!(stderr, "bns: listening on http://{addr}");
        return match runtime.block_on(crate::http::serve(service, addr)) {
            Ok(()) => 0,
            Err(e) => {
                let _ = writeln!(stderr, "bns: cannot serve on {addr}: {e}");
                1
            }
        };
    }

    let reply = execute(&service, &cli.command);
    if cli.json {
        let _ = writeln!(
            stdout,
            "{}",
            serde_json::to_string_pretty(&reply.body).expect("json")
        );
    } else if reply.is_success() {
        let _ = write!(stdout, "{}", render_text(&cli.command, &reply.body));
    }
    if reply.is_success() {
        0
    } else {
        if !cli.json {
            let _ = writeln!(stderr, "bns: {}", s(&reply.body["error"]["message"]));
        }
        1
    }
}
