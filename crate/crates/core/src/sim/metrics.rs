use serde::{Deserialize, Serialize};

use super::Tick;

/// Tallies accumulated while a simulation runs.
#[derive(Debug, Clone, Default)]
pub(crate) struct RunStats {
    pub messages: u64,
    pub hops: u64,
    pub resolution_requests: u64,
    pub resolution_latencies: Vec<Tick>,
    pub delivery_latencies: Vec<Tick>,
    pub deliveries: u64,
    pub faults: u64,
    pub stale: u64,
    pub overflows: u64,
    pub errors: u64,
    pub signals: u64,
    pub reloads: u64,
    pub unresolvable: u64,
}

/// Per-run summary, serialized as the metrics document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub final_tick: Tick,
    /// Hop records touching each node.
    pub node_messages: Vec<u64>,
    /// Resolution requests looked up at each node.
    pub node_resolutions: Vec<u64>,
    /// Largest entry of `node_resolutions`.
    pub max_node_load: u64,
    pub max_node_messages: u64,
    pub total_messages: u64,
    pub total_hops: u64,
    pub resolution_requests: u64,
    pub resolution_latencies: Vec<Tick>,
    pub mean_resolution_latency: f64,
    pub delivery_latencies: Vec<Tick>,
    pub mean_delivery_latency: f64,
    pub deliveries: u64,
    pub faults: u64,
    pub stale: u64,
    pub overflows: u64,
    pub errors: u64,
    pub signals: u64,
    pub reloads: u64,
    pub unresolvable: u64,
}

fn mean(xs: &[Tick]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<Tick>() as f64 / xs.len() as f64
    }
}

impl Metrics {
    pub(crate) fn collect(
        final_tick: Tick,
        node_messages: Vec<u64>,
        node_resolutions: Vec<u64>,
        stats: &RunStats,
    ) -> Self {
        Self {
            final_tick,
            max_node_load: node_resolutions.iter().copied().max().unwrap_or(0),
            max_node_messages: node_messages.iter().copied().max().unwrap_or(0),
            node_messages,
            node_resolutions,
            total_messages: stats.messages,
            total_hops: stats.hops,
            resolution_requests: stats.resolution_requests,
            mean_resolution_latency: mean(&stats.resolution_latencies),
            resolution_latencies: stats.resolution_latencies.clone(),
            mean_delivery_latency: mean(&stats.delivery_latencies),
            delivery_latencies: stats.delivery_latencies.clone(),
            deliveries: stats.deliveries,
            faults: stats.faults,
            stale: stats.stale,
            overflows: stats.overflows,
            errors: stats.errors,
            signals: stats.signals,
            reloads: stats.reloads,
            unresolvable: stats.unresolvable,
        }
    }

    /// Sends and establishes that did not succeed, plus failed directives.
    pub fn terminal_faults(&self) -> u64 {
        self.faults + self.stale + self.overflows + self.errors
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }
}
