//! Snapshot builders, fixed fixtures and random generators.

use std::collections::BTreeMap;

use bns_core::{Engine, MatchRule, Mode, Settings, SourcePriorityConfig};
use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde_json::{json, Map, Value};

pub fn rec(kind: &str, origin: &str, id: Option<&str>, fields: &[(&str, &str)]) -> String {
    let fields: Map<String, Value> = fields
        .iter()
        .map(|(k, v)| (k.to_string(), Value::String(v.to_string())))
        .collect();
    let mut v = json!({ "kind": kind, "origin": origin, "fields": fields });
    if let Some(id) = id {
        v["id"] = json!(id);
    }
    v.to_string()
}

pub fn same(origin: &str, ids: &[&str]) -> String {
    json!({ "kind": "same_sys", "origin": origin, "ids": ids }).to_string()
}

pub type Snapshot = (String, Vec<String>);

pub fn ingest_all(engine: &mut Engine, snapshots: &[Snapshot]) {
    for (origin, lines) in snapshots {
        let outcome = engine
            .ingest(origin, lines.iter().map(String::as_str), Mode::Full)
            .expect("ingest");
        assert!(
            outcome.report.rejected.is_empty(),
            "{:?}",
            outcome.report.rejected
        );
    }
}

pub fn engine_of(settings: Settings, snapshots: &[Snapshot]) -> Engine {
    let mut engine = Engine::new(settings);
    ingest_all(&mut engine, snapshots);
    engine
}

pub fn two_tier_priorities() -> SourcePriorityConfig {
    SourcePriorityConfig {
        types: vec!["landscape".into(), "runtime".into()],
        origins: BTreeMap::from([
            ("landscape".into(), "landscape".into()),
            ("runtime".into(), "runtime".into()),
        ]),
        overrides: BTreeMap::new(),
    }
}

/// Landscape and runtime views of four systems: sys3 and sys4 share a
/// system id, prop1 carries a location for sys4, out1 connects sys2 to
/// sys3 and rsys1 observes sys3 at runtime.
pub fn crm_snapshots() -> Vec<Snapshot> {
    vec![
        (
            "landscape".into(),
            vec![
                rec("sys", "landscape", Some("sys2"), &[("description", "ERP")]),
                rec(
                    "sys",
                    "landscape",
                    Some("sys3"),
                    &[("name", "CRM"), ("sid", "C11")],
                ),
                rec(
                    "out",
                    "landscape",
                    Some("out1"),
                    &[("from", "sys2"), ("to", "sys3"), ("protocol", "IDoc")],
                ),
            ],
        ),
        (
            "runtime".into(),
            vec![
                rec(
                    "sys",
                    "runtime",
                    Some("sys4"),
                    &[("sid", "C11"), ("description", "CRM production")],
                ),
                rec(
                    "rsys",
                    "runtime",
                    Some("rsys1"),
                    &[("sys", "landscape::sys3"), ("messages", "1200")],
                ),
                rec(
                    "prop",
                    "runtime",
                    None,
                    &[("target", "sys4"), ("key", "location"), ("value", "Sydney")],
                ),
            ],
        ),
    ]
}

pub fn crm_settings() -> Settings {
    Settings {
        priorities: two_tier_priorities(),
        rules: vec![MatchRule::new("same-sid", "sys", &["sid"]).unwrap()],
    }
}

pub fn crm_landscape() -> Engine {
    engine_of(crm_settings(), &crm_snapshots())
}

/// Three origins with cross-origin references, a same_sys fact, property
/// fragments, runs-on edges and flows in both directions.
pub fn three_origins() -> Vec<Snapshot> {
    vec![
        (
            "alpha".into(),
            vec![
                rec(
                    "sys",
                    "alpha",
                    Some("a1"),
                    &[("description", "ERP"), ("sid", "PRD")],
                ),
                rec("sys", "alpha", Some("a2"), &[("description", "Billing")]),
                rec("host", "alpha", Some("ha1"), &[("name", "hostA")]),
                rec(
                    "runs_on",
                    "alpha",
                    Some("ra1"),
                    &[("sys", "a1"), ("host", "ha1")],
                ),
                rec(
                    "out",
                    "alpha",
                    Some("fa1"),
                    &[("from", "a1"), ("to", "beta::b1")],
                ),
                rec(
                    "out",
                    "alpha",
                    Some("fa2"),
                    &[("from", "a2"), ("to", "gamma::c1")],
                ),
            ],
        ),
        (
            "beta".into(),
            vec![
                rec(
                    "sys",
                    "beta",
                    Some("b1"),
                    &[("description", "CRM"), ("location", "Walldorf")],
                ),
                rec(
                    "sys",
                    "beta",
                    Some("b2"),
                    &[("description", "CRM shadow"), ("owner", "ops")],
                ),
                rec("rsys", "beta", Some("rb1"), &[("sys", "b1")]),
                rec(
                    "prop",
                    "beta",
                    None,
                    &[
                        ("target", "alpha::a2"),
                        ("key", "location"),
                        ("value", "Sydney"),
                    ],
                ),
                same("beta", &["b2", "gamma::c1"]),
                rec(
                    "out",
                    "beta",
                    Some("fb1"),
                    &[("from", "b1"), ("to", "alpha::a1")],
                ),
            ],
        ),
        (
            "gamma".into(),
            vec![
                rec(
                    "sys",
                    "gamma",
                    Some("c1"),
                    &[("description", "Payroll"), ("sid", "PRD")],
                ),
                rec("host", "gamma", Some("hc1"), &[("name", "hostC")]),
                rec(
                    "runs_on",
                    "gamma",
                    Some("rc1"),
                    &[("sys", "c1"), ("host", "hc1")],
                ),
                rec(
                    "runs_on",
                    "gamma",
                    Some("rc2"),
                    &[("sys", "beta::b1"), ("host", "hc1")],
                ),
                rec(
                    "prop",
                    "gamma",
                    None,
                    &[("target", "hc1"), ("key", "location"), ("value", "Sydney")],
                ),
                rec(
                    "out",
                    "gamma",
                    Some("fc1"),
                    &[("from", "c1"), ("to", "alpha::a1")],
                ),
                rec("rsys", "gamma", Some("rc3"), &[("sys", "alpha::a1")]),
            ],
        ),
    ]
}

pub fn three_origin_settings() -> Settings {
    Settings {
        priorities: SourcePriorityConfig {
            types: vec!["directory".into(), "runtime".into()],
            origins: BTreeMap::from([
                ("alpha".into(), "runtime".into()),
                ("gamma".into(), "directory".into()),
            ]),
            overrides: BTreeMap::new(),
        },
        rules: vec![MatchRule::new("same-sid", "sys", &["sid"]).unwrap()],
    }
}

// ---- random generation ----------------------------------------------------

pub const ORIGINS: [&str; 3] = ["o0", "o1", "o2"];
const WORDS: [&str; 8] = [
    "ERP", "CRM", "Billing", "Payroll", "Sydney", "Walldorf", "gateway", "core",
];

/// Random priority configuration over `origins`: a permutation of some
/// listed types, some origins typed (possibly with unlisted types), and
/// overrides for some of `keys`.
pub fn random_priorities(
    rng: &mut StdRng,
    origins: &[&str],
    keys: &[bns_core::CompositeKey],
) -> SourcePriorityConfig {
    let mut types = vec!["t0".to_string(), "t1".to_string(), "t2".to_string()];
    rand::seq::SliceRandom::shuffle(&mut types[..], rng);
    types.truncate(rng.random_range(0..=3));
    let mut cfg = SourcePriorityConfig {
        types,
        ..Default::default()
    };
    for o in origins {
        match rng.random_range(0..4) {
            0 => {}
            1 => {
                cfg.origins.insert(o.to_string(), "zz-unlisted".into());
            }
            _ => {
                let t = ["t0", "t1", "t2"].choose(rng).unwrap();
                cfg.origins.insert(o.to_string(), t.to_string());
            }
        }
    }
    for k in keys {
        if rng.random_bool(0.15) {
            cfg.overrides.insert(k.clone(), rng.random_range(-2..3));
        }
    }
    cfg
}

pub fn random_value(rng: &mut StdRng) -> String {
    match rng.random_range(0..6) {
        0 => String::new(),
        1 => format!(
            "{} {}",
            WORDS.choose(rng).unwrap(),
            WORDS.choose(rng).unwrap()
        ),
        _ => WORDS.choose(rng).unwrap().to_string(),
    }
}

fn reference(rng: &mut StdRng, origin: &str, prefix: &str, n: usize) -> String {
    let id = format!("{prefix}{}", rng.random_range(0..n));
    if rng.random_bool(0.3) {
        let other = ORIGINS.choose(rng).unwrap();
        if *other != origin {
            return format!("{other}::{id}");
        }
    }
    id
}

/// A random record line of `origin` over a small id space, so that
/// records collide, reference each other and stay pending at times.
pub fn random_record(rng: &mut StdRng, origin: &str) -> String {
    let f = |rng: &mut StdRng, names: &[&str]| -> Vec<(String, String)> {
        let mut out = Vec::new();
        for n in names {
            if rng.random_bool(0.6) {
                out.push((n.to_string(), random_value(rng)));
            }
        }
        out
    };
    let (kind, id, fields): (&str, Option<String>, Vec<(String, String)>) =
        match rng.random_range(0..10) {
            0..=3 => {
                let mut fields = f(rng, &["description", "location", "name"]);
                if rng.random_bool(0.25) {
                    fields.push(("sid".into(), ["S1", "S2"].choose(rng).unwrap().to_string()));
                }
                ("sys", Some(format!("s{}", rng.random_range(0..6))), fields)
            }
            4 => (
                "host",
                Some(format!("h{}", rng.random_range(0..3))),
                f(rng, &["name", "location"]),
            ),
            5 => {
                let target = if rng.random_bool(0.7) {
                    reference(rng, origin, "s", 6)
                } else {
                    reference(rng, origin, "h", 3)
                };
                let key = ["location", "description", "owner"]
                    .choose(rng)
                    .unwrap()
                    .to_string();
                let value = WORDS.choose(rng).unwrap().to_string();
                (
                    "prop",
                    None,
                    vec![
                        ("target".into(), target),
                        ("key".into(), key),
                        ("value".into(), value),
                    ],
                )
            }
            6 => {
                let a = format!("s{}", rng.random_range(0..6));
                let b = reference(rng, origin, "s", 6);
                if a == b {
                    return random_record(rng, origin);
                }
                return same(origin, &[&a, &b]);
            }
            7 => {
                let mut fields = vec![
                    ("from".to_string(), reference(rng, origin, "s", 6)),
                    ("to".to_string(), reference(rng, origin, "s", 6)),
                ];
                fields.extend(f(rng, &["protocol"]));
                ("out", Some(format!("f{}", rng.random_range(0..5))), fields)
            }
            8 => (
                "rsys",
                Some(format!("r{}", rng.random_range(0..3))),
                vec![
                    ("sys".into(), reference(rng, origin, "s", 6)),
                    ("messages".into(), rng.random_range(1..99).to_string()),
                ],
            ),
            _ => (
                "runs_on",
                Some(format!("ro{}", rng.random_range(0..4))),
                vec![
                    ("sys".into(), reference(rng, origin, "s", 6)),
                    ("host".into(), reference(rng, origin, "h", 3)),
                ],
            ),
        };
    let pairs: Vec<(&str, &str)> = fields
        .iter()
        .map(|(k, v)| (k.as_str(), v.as_str()))
        .collect();
    let line = rec(kind, origin, id.as_deref(), &pairs);
    // records without an id need some content to be hashed
    if id.is_none() && fields.iter().all(|(_, v)| v.is_empty()) {
        return random_record(rng, origin);
    }
    line
}
