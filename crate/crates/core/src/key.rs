//! Composite record identity and record kinds.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Separator between origin and local id in textual keys and references.
pub const ORIGIN_SEPARATOR: &str = "::";

/// The source-local part of a [`CompositeKey`]: either the identifier the
/// source supplied, or a content hash for records that have none.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RecordId {
    Local(String),
    Hash(u64),
}

impl RecordId {
    pub fn as_local(&self) -> Option<&str> {
        match self {
            RecordId::Local(id) => Some(id),
            RecordId::Hash(_) => None,
        }
    }
}

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordId::Local(id) => f.write_str(id),
            RecordId::Hash(h) => write!(f, "#{h:016x}"),
        }
    }
}

/// `(origin, local id | content hash)`. Textual form is `origin::id`, or
/// `origin::#<16 hex digits>` for hashed records.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CompositeKey {
    pub origin: String,
    pub id: RecordId,
}

impl CompositeKey {
    pub fn local(origin: impl Into<String>, id: impl Into<String>) -> Self {
        CompositeKey {
            origin: origin.into(),
            id: RecordId::Local(id.into()),
        }
    }

    pub fn hashed(origin: impl Into<String>, hash: u64) -> Self {
        CompositeKey {
            origin: origin.into(),
            id: RecordId::Hash(hash),
        }
    }

    /// Resolves a reference written inside a record of `origin`. References
    /// are origin-local unless written as `other_origin::id`.
    pub fn resolve_ref(origin: &str, reference: &str) -> Self {
        match reference.split_once(ORIGIN_SEPARATOR) {
            Some((o, id)) if !o.is_empty() && !id.is_empty() => CompositeKey::local(o, id),
            _ => CompositeKey::local(origin, reference),
        }
    }
}

impl fmt::Display for CompositeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.origin, ORIGIN_SEPARATOR, self.id)
    }
}

impl FromStr for CompositeKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (origin, id) = s
            .split_once(ORIGIN_SEPARATOR)
            .ok_or_else(|| Error::BadParameter(format!("key {s:?} is not origin::id")))?;
        if origin.is_empty() || id.is_empty() {
            return Err(Error::BadParameter(format!("key {s:?} is not origin::id")));
        }
        if let Some(hex) = id.strip_prefix('#') {
            if hex.len() == 16 {
                if let Ok(h) = u64::from_str_radix(hex, 16) {
                    return Ok(CompositeKey::hashed(origin, h));
                }
            }
        }
        Ok(CompositeKey::local(origin, id))
    }
}

impl Serialize for CompositeKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CompositeKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Record kinds discovered in sources. Unknown kinds are stored but never
/// inferred over.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RecordKind {
    /// A logical system or tenant.
    Sys,
    /// Runtime observation of a system.
    Rsys,
    /// Outbound configuration: a connection `from` one system `to` another.
    Out,
    /// Property fragment: `target` gets field `key` = `value`.
    Prop,
    Host,
    /// `sys` runs on `host`.
    RunsOn,
    /// Equivalence fact between two or more systems.
    SameSys,
    Other(String),
}

impl RecordKind {
    pub fn as_str(&self) -> &str {
        match self {
            RecordKind::Sys => "sys",
            RecordKind::Rsys => "rsys",
            RecordKind::Out => "out",
            RecordKind::Prop => "prop",
            RecordKind::Host => "host",
            RecordKind::RunsOn => "runs_on",
            RecordKind::SameSys => "same_sys",
            RecordKind::Other(s) => s,
        }
    }

    /// Category used for equivalence classes, for kinds that form classes.
    pub fn category(&self) -> Option<Category> {
        match self {
            RecordKind::Sys => Some(Category::System),
            RecordKind::Host => Some(Category::Host),
            RecordKind::Prop => Some(Category::Fragment),
            _ => None,
        }
    }

    /// Fields holding references to other records rather than data.
    pub fn reference_fields(&self) -> &'static [&'static str] {
        match self {
            RecordKind::Out => &["from", "to"],
            RecordKind::Rsys => &["sys"],
            RecordKind::RunsOn => &["sys", "host"],
            RecordKind::Prop => &["target", "key", "value"],
            _ => &[],
        }
    }
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<&str> for RecordKind {
    fn from(s: &str) -> Self {
        match s {
            "sys" => RecordKind::Sys,
            "rsys" => RecordKind::Rsys,
            "out" => RecordKind::Out,
            "prop" => RecordKind::Prop,
            "host" => RecordKind::Host,
            "runs_on" => RecordKind::RunsOn,
            "same_sys" => RecordKind::SameSys,
            other => RecordKind::Other(other.to_string()),
        }
    }
}

impl Serialize for RecordKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for RecordKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(RecordKind::from(s.as_str()))
    }
}

/// Kind category of an equivalence class. Fragments are neutral: they may
/// join either a system or a host class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    System,
    Host,
    Fragment,
}

impl Category {
    pub fn compatible(self, other: Category) -> bool {
        self == other || self == Category::Fragment || other == Category::Fragment
    }
}
