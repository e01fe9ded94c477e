//! Wire format of raw snapshots: one JSON object per line.
//!
//! ```text
//! {"kind":"sys","origin":"originH7","id":"h7","fields":{"description":"myH7"}}
//! {"kind":"same_sys","origin":"o1","ids":["h7","h8"]}
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::hash::content_hash;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fields: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct LooseRecord {
    kind: String,
    #[serde(default)]
    origin: Option<String>,
    #[serde(default)]
    id: Option<Value>,
    #[serde(default)]
    ids: Option<Vec<Value>>,
    #[serde(default)]
    fields: BTreeMap<String, Value>,
}

fn scalar(value: Value, what: &str) -> Result<String, String> {
    match value {
        Value::Null => Ok(String::new()),
        Value::String(s) => Ok(s),
        Value::Bool(b) => Ok(b.to_string()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Array(_) | Value::Object(_) => Err(format!("{what} must be a scalar")),
    }
}

impl SnapshotRecord {
    /// Parses one snapshot line. Scalar field values (numbers, booleans) are
    /// accepted and stringified; `null` is an empty value.
    pub fn parse_line(line: &str) -> Result<Self, String> {
        let loose: LooseRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let id = match loose.id {
            Some(v) => Some(scalar(v, "id")?).filter(|s| !s.is_empty()),
            None => None,
        };
        let ids = match loose.ids {
            Some(values) => Some(
                values
                    .into_iter()
                    .map(|v| scalar(v, "ids element"))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            None => None,
        };
        let mut fields = BTreeMap::new();
        for (name, value) in loose.fields {
            fields.insert(name.clone(), scalar(value, &format!("field {name:?}"))?);
        }
        Ok(SnapshotRecord {
            kind: loose.kind,
            origin: loose.origin,
            id,
            ids,
            fields,
        })
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("snapshot record serializes")
    }

    /// Whether `other` denotes the same source record: same local id (or
    /// same `ids` set), or for unidentified records the same content hash.
    pub fn same_identity(&self, other: &SnapshotRecord) -> bool {
        if self.kind != other.kind {
            return false;
        }
        match (&self.id, &other.id, &self.ids, &other.ids) {
            (Some(a), Some(b), _, _) => a == b,
            (None, None, Some(a), Some(b)) => {
                let mut a = a.clone();
                let mut b = b.clone();
                a.sort();
                b.sort();
                a == b
            }
            (None, None, None, None) => {
                content_hash(&self.kind, &self.fields) == content_hash(&other.kind, &other.fields)
            }
            _ => false,
        }
    }
}
