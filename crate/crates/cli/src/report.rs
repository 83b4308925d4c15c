//! Flat JSON reports: scalar fields only, config echoed under `config.<key>` (all keys
//! but `output_dir`).

use std::path::Path;

use anyhow::{Context, Result};
use m2vsl_core::metrics::MetricsReport;
use m2vsl_core::train::RunConfig;
use serde_json::{Map, Number, Value};

use crate::config;

pub type Flat = Map<String, Value>;

pub fn number(x: f64) -> Value {
    Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
}

/// The eight metric keys; metrics that do not apply to the split are `null`.
pub fn metrics(report: &MetricsReport) -> Flat {
    let mut out = Flat::new();
    for (k, v) in MetricsReport::KEYS.iter().zip(report.values()) {
        out.insert((*k).to_string(), v.map_or(Value::Null, number));
    }
    out
}

pub fn echo_config(out: &mut Flat, cfg: &RunConfig) {
    for (k, v) in config::run_entries(cfg) {
        out.insert(format!("config.{k}"), Value::String(v));
    }
    out.insert("classification_loss".into(), Value::String("bce".into()));
}

pub fn metrics_with_config(report: &MetricsReport, cfg: &RunConfig) -> Flat {
    let mut out = metrics(report);
    echo_config(&mut out, cfg);
    out
}

pub fn to_string(flat: &Flat) -> String {
    let mut s = serde_json::to_string_pretty(flat).expect("flat maps always serialize");
    s.push('\n');
    s
}

pub fn write(path: &Path, flat: &Flat) -> Result<()> {
    std::fs::write(path, to_string(flat)).with_context(|| format!("writing {}", path.display()))
}
