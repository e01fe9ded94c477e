//! Engine configuration file (TOML).
//!
//! ```toml
//! sources = "sources"
//! state = "bns-state.json"
//! listen = "127.0.0.1:8080"
//!
//! [priorities]
//! types = ["landscape", "runtime"]
//! origins = { originH7 = "landscape", originRT = "runtime" }
//! overrides = { "originRT::h7" = 0 }
//!
//! [[rules]]
//! id = "same-sid"
//! kind = "sys"
//! fields = ["sid"]
//! ```
//!
//! Relative paths are resolved against the directory of the file.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::Spanned;

use crate::equivalence::MatchRule;
use crate::error::{Error, Result};
use crate::key::CompositeKey;
use crate::surrogate::SourcePriorityConfig;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineConfig {
    /// Root of the per-origin snapshot folders.
    pub sources: PathBuf,
    /// Engine state file.
    pub state: PathBuf,
    pub listen: SocketAddr,
    pub priorities: SourcePriorityConfig,
    pub rules: Vec<MatchRule>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            sources: PathBuf::from("sources"),
            state: PathBuf::from("bns-state.json"),
            listen: DEFAULT_LISTEN.parse().unwrap(),
            priorities: SourcePriorityConfig::default(),
            rules: Vec::new(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    sources: Option<String>,
    state: Option<String>,
    listen: Option<Spanned<String>>,
    #[serde(default)]
    priorities: RawPriorities,
    #[serde(default)]
    rules: Vec<Spanned<RawRule>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawPriorities {
    #[serde(default)]
    types: Vec<String>,
    #[serde(default)]
    origins: BTreeMap<String, String>,
    #[serde(default)]
    overrides: BTreeMap<String, Spanned<i64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    id: String,
    kind: String,
    fields: Vec<String>,
}

/// 1-based line of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())]
        .bytes()
        .filter(|b| *b == b'\n')
        .count()
        + 1
}

impl EngineConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let err = |offset: usize, message: String| Error::Config {
            line: line_of(text, offset),
            message,
        };
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            err(
                e.span().map(|s| s.start).unwrap_or(0),
                e.message().trim().to_string(),
            )
        })?;

        let mut config = EngineConfig::default();
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        config.sources = resolve(raw.sources.as_deref().unwrap_or("sources"));
        config.state = resolve(raw.state.as_deref().unwrap_or("bns-state.json"));
        if let Some(listen) = raw.listen {
            config.listen = listen
                .get_ref()
                .parse()
                .map_err(|e| err(listen.span().start, format!("invalid listen address: {e}")))?;
        }

        for (key, rank) in raw.priorities.overrides {
            let parsed: CompositeKey = key.parse().map_err(|e| {
                err(
                    rank.span().start,
                    format!("invalid override key {key:?}: {e}"),
                )
            })?;
            config
                .priorities
                .overrides
                .insert(parsed, rank.into_inner());
        }
        config.priorities.types = raw.priorities.types;
        config.priorities.origins = raw.priorities.origins;

        let mut ids = std::collections::BTreeSet::new();
        for rule in raw.rules {
            let at = rule.span().start;
            let RawRule { id, kind, fields } = rule.into_inner();
            if !ids.insert(id.clone()) {
                return Err(err(at, format!("duplicate rule id {id:?}")));
            }
            let fields: Vec<&str> = fields.iter().map(String::as_str).collect();
            let rule = MatchRule::new(&id, kind.as_str(), &fields)
                .map_err(|e| err(at, format!("rule {id:?}: {e}")))?;
            config.rules.push(rule);
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }
}
