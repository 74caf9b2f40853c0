//! Canonical text encoding of scenarios (`.lcs.json`).
//!
//! The document is UTF-8 JSON with object keys in sorted order, floats in
//! shortest round-trip form and a mandatory `format_version` field. Two saves
//! of the same scenario are byte-identical.

use serde_json::Value;
use thiserror::Error;

use super::{validate, Scenario, Violation};

pub const FORMAT_VERSION: u64 = 1;
pub const SCENARIO_EXTENSION: &str = "lcs.json";

#[derive(Debug, Error)]
pub enum SaveError {
    #[error("scenario has {} invariant violation(s), first: {}", .0.len(), .0[0])]
    Invalid(Vec<Violation>),
    #[error("encoding failed: {0}")]
    Encode(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("parse error at byte {offset} (line {line}, column {column}): {message}")]
    Parse {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported format_version {found:?}, expected {FORMAT_VERSION}")]
    SchemaVersion { found: Option<Value> },
}

/// Serializes a scenario into its canonical byte form. The scenario must
/// validate clean.
pub fn save(scenario: &Scenario) -> Result<Vec<u8>, SaveError> {
    let violations = validate(scenario);
    if !violations.is_empty() {
        return Err(SaveError::Invalid(violations));
    }
    let mut value = serde_json::to_value(scenario)?;
    if let Value::Object(obj) = &mut value {
        obj.insert("format_version".into(), Value::from(FORMAT_VERSION));
    }
    // serde_json's default map is ordered, so keys come out sorted
    let mut bytes = serde_json::to_vec_pretty(&value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut current = 1;
    let mut start = 0;
    for (i, b) in bytes.iter().enumerate() {
        if current == line {
            break;
        }
        if *b == b'\n' {
            current += 1;
            start = i + 1;
        }
    }
    (start + column.saturating_sub(1)).min(bytes.len())
}

fn parse_error(bytes: &[u8], e: serde_json::Error) -> LoadError {
    LoadError::Parse {
        offset: byte_offset(bytes, e.line(), e.column()),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parses a canonical scenario document. Reference routes are resampled onto
/// the scenario tick.
pub fn load(bytes: &[u8]) -> Result<Scenario, LoadError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| parse_error(bytes, e))?;
    let version = value.get("format_version");
    if version.and_then(Value::as_u64) != Some(FORMAT_VERSION) {
        return Err(LoadError::SchemaVersion {
            found: version.cloned(),
        });
    }
    // second pass for typed errors that carry a position
    let mut scenario: Scenario = serde_json::from_slice(bytes).map_err(|e| parse_error(bytes, e))?;
    scenario.resample_routes();
    Ok(scenario)
}
