//! Evaluation reports: JSON, an aligned text table and CSV rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    /// Hex digest of the resolved run configuration.
    pub config_digest: String,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn new(task: impl Into<String>, config_digest: impl Into<String>) -> Self {
        Self { task: task.into(), config_digest: config_digest.into(), metrics: BTreeMap::new(), notes: Vec::new() }
    }

    /// Adds a metric; every metric lies in `[0, 1]`.
    pub fn insert(&mut self, name: impl Into<String>, value: f64) -> Result<()> {
        let name = name.into();
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::invalid(format!("metric {name} = {value} outside [0, 1]")));
        }
        self.metrics.insert(name, value);
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_text(&self) -> String {
        let width = self.metrics.keys().map(String::len).max().unwrap_or(0).max("metric".len());
        let mut s = String::new();
        let _ = writeln!(s, "task: {}", self.task);
        let _ = writeln!(s, "config: {}", self.config_digest);
        let _ = writeln!(s, "{:<width$}  value", "metric");
        for (k, v) in &self.metrics {
            let _ = writeln!(s, "{k:<width$}  {v:.4}");
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("task,metric,value\n");
        for (k, v) in &self.metrics {
            let _ = writeln!(s, "{},{k},{v}", self.task);
        }
        s
    }
}
