use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Outcome of one experiment run. Everything except `wall_clock_seconds` is
/// a pure function of `config` and `seed`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config: Value,
    pub seed: u64,
    /// Per-epoch (or per-iteration) objective; entry 0 is before training.
    pub loss_trace: Vec<f64>,
    pub metrics: BTreeMap<String, f64>,
    /// Experiment-specific detail such as per-run traces.
    #[serde(default)]
    pub details: Value,
    /// Settings the run chose on its own rather than taking from the config.
    #[serde(default)]
    pub notes: Vec<String>,
    pub wall_clock_seconds: f64,
    pub version: String,
}

impl ExperimentReport {
    pub fn new(experiment: &str, config: impl Serialize, seed: u64) -> Self {
        Self {
            experiment: experiment.to_string(),
            config: serde_json::to_value(config).unwrap_or(Value::Null),
            seed,
            loss_trace: Vec::new(),
            metrics: BTreeMap::new(),
            details: Value::Null,
            notes: Vec::new(),
            wall_clock_seconds: 0.0,
            version: crate::VERSION.to_string(),
        }
    }

    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    pub fn finish(mut self, started: Instant) -> Self {
        self.wall_clock_seconds = started.elapsed().as_secs_f64();
        self
    }

    /// The report with the wall-clock field zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_seconds: 0.0,
            ..self.clone()
        }
    }
}
