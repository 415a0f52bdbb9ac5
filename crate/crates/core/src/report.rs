//! Run report: one structured document, rendered either as JSON or as
//! flat `key=value` lines.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::memory;
use crate::protocol::bus::KindStats;

#[derive(Clone, Debug, Default, Serialize)]
pub struct RunReport {
    pub mode: String,
    pub parties: usize,
    pub records_per_party: Vec<usize>,
    pub skipped_records: Vec<usize>,
    pub bit_len: usize,
    pub num_hashes: usize,
    pub gram_len: usize,
    pub mean_grams: f64,
    pub implied_optimal_k: usize,
    pub match_threshold: f64,
    pub segment_threshold: Option<f64>,
    pub common_blocks: usize,
    pub candidates_total: u64,
    pub candidates_after_filter: u64,
    pub comparisons_per_party: Vec<u64>,
    pub messages: u64,
    pub bytes: u64,
    pub bytes_by_kind: BTreeMap<String, KindStats>,
    pub segment_payload_bytes: u64,
    pub segment_metadata_bytes: u64,
    pub matches: usize,
    pub runtime_ms_per_step: BTreeMap<String, f64>,
    pub memory_peak_bytes_per_step: BTreeMap<String, u64>,
    pub initiator_rotation: bool,
    pub offset_range: u64,
    pub notes: Vec<String>,
    pub evaluation: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn total_runtime_ms(&self) -> f64 {
        self.runtime_ms_per_step.values().sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_key_value(&self) -> String {
        key_value(&serde_json::to_value(self).expect("report serializes"))
    }

    /// Times `f` and records its heap high-water mark under `name`.
    /// Errors are tagged with the step name.
    pub fn step<T>(&mut self, name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        memory::reset_peak();
        let base = memory::current_bytes();
        let start = Instant::now();
        let out = f();
        let ms = start.elapsed().as_secs_f64() * 1e3;
        *self.runtime_ms_per_step.entry(name.to_string()).or_default() += ms;
        let peak = memory::peak_bytes().saturating_sub(base) as u64;
        let slot = self.memory_peak_bytes_per_step.entry(name.to_string()).or_default();
        *slot = (*slot).max(peak);
        out.map_err(|e| match e {
            e @ (Error::Protocol { .. } | Error::Step { .. }) => e,
            other => Error::Step {
                step: name,
                source: Box::new(other),
            },
        })
    }
}

/// Flattens a JSON document into sorted `a.b.c=value` lines.
pub fn key_value(v: &Value) -> String {
    let mut out = String::new();
    flatten("", v, &mut out);
    out
}

fn flatten(prefix: &str, v: &Value, out: &mut String) {
    let join = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                flatten(&join(k), v, out);
            }
        }
        Value::Array(items) if items.iter().all(|i| !i.is_object() && !i.is_array()) => {
            let parts: Vec<String> = items.iter().map(scalar).collect();
            let _ = writeln!(out, "{prefix}={}", parts.join(","));
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten(&join(&i.to_string()), v, out);
            }
        }
        other => {
            let _ = writeln!(out, "{prefix}={}", scalar(other));
        }
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_field_names_present() {
        let mut r = RunReport {
            candidates_total: 12,
            candidates_after_filter: 9,
            ..Default::default()
        };
        r.runtime_ms_per_step.insert("exchange".into(), 1.5);
        let kv = r.to_key_value();
        for key in ["candidates_total=12", "candidates_after_filter=9", "messages=0", "bytes=0", "matches=0", "runtime_ms_per_step.exchange=1.5"] {
            assert!(kv.lines().any(|l| l == key), "{key} missing from\n{kv}");
        }
        let json: Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["candidates_after_filter"], 9);
    }

    #[test]
    fn step_tags_errors() {
        let mut r = RunReport::default();
        let e = r.step("prepare", || -> Result<()> { Err(Error::Unencodable) }).unwrap_err();
        assert!(e.to_string().contains("prepare"));
        assert!(r.runtime_ms_per_step.contains_key("prepare"));
    }
}
