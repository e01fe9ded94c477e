//! Content hashing for records that carry no source-local identifier.
//!
//! The hash is 64-bit FNV-1a over a canonical string
//! `kind|name1=value1|name2=value2|...`: field names sorted byte-wise,
//! empty values omitted. Insertion order of the fields never matters.

use std::collections::BTreeMap;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Canonical string the content hash is computed over.
pub fn canonical_string<'a, I>(kind: &str, fields: I) -> String
where
    I: IntoIterator<Item = (&'a String, &'a String)>,
{
    let sorted: BTreeMap<&str, &str> = fields
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(k, v)| (k.as_str(), v.as_str()))
        .collect();
    let mut out = String::from(kind);
    for (name, value) in sorted {
        out.push('|');
        out.push_str(name);
        out.push('=');
        out.push_str(value);
    }
    out
}

pub fn content_hash<'a, I>(kind: &str, fields: I) -> u64
where
    I: IntoIterator<Item = (&'a String, &'a String)>,
{
    fnv1a64(canonical_string(kind, fields).as_bytes())
}
