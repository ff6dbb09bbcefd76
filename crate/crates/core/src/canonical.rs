//! Canonical JSON: object keys sorted, floats in shortest round-trip form.
//!
//! Values are routed through `serde_json::Value`, whose map type is a
//! `BTreeMap` (the `preserve_order` feature must stay off), so struct field
//! order never leaks into the bytes.

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn to_string<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let v = serde_json::to_value(value)?;
    serde_json::to_string(&v)
}

pub fn to_string_pretty<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn from_str<T: DeserializeOwned>(s: &str) -> serde_json::Result<T> {
    serde_json::from_str(s)
}

/// Lowercase hex SHA-256 of the canonical serialization.
pub fn digest<T: Serialize>(value: &T) -> serde_json::Result<String> {
    Ok(sha256_hex(to_string(value)?.as_bytes()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes one canonical JSON document per line.
pub fn to_jsonl<T: Serialize>(rows: &[T]) -> serde_json::Result<String> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&to_string(row)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses JSONL, skipping blank lines. Errors carry the 1-based line number.
pub fn from_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, (usize, serde_json::Error)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e)))
        .collect()
}
