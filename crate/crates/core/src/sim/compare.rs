use serde::Serialize;

use super::RunResult;
use crate::scenario::{Scenario, ScenarioError};
use crate::translation::StrategyKind;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategySummary {
    pub strategy: StrategyKind,
    pub max_node_load: u64,
    pub node_resolutions: Vec<u64>,
    pub mean_resolution_latency: f64,
    pub total_messages: u64,
    pub resolution_requests: u64,
    pub deliveries: u64,
    pub terminal_faults: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub strategies: Vec<StrategySummary>,
    pub equivalent: bool,
    /// Human-readable description of each disagreement.
    pub differences: Vec<String>,
    /// Sorted fault descriptions shared by every strategy.
    pub faults: Vec<String>,
    pub verdict: String,
}

/// Runs `scenario` once per strategy and checks that every observable
/// outcome agrees.
pub fn compare_strategies(scenario: &Scenario) -> Result<ComparisonReport, ScenarioError> {
    let mut runs: Vec<(StrategyKind, RunResult)> = Vec::new();
    for kind in StrategyKind::ALL {
        let mut s = scenario.clone();
        s.strategy = kind;
        runs.push((kind, s.run()?));
    }
    let (base_kind, base) = &runs[0];
    let mut differences = Vec::new();
    for (kind, r) in &runs[1..] {
        let mut diff = |what: &str, same: bool| {
            if !same {
                differences.push(format!("{what} differ between {base_kind} and {kind}"));
            }
        };
        diff("resolution outcomes", r.resolutions == base.resolutions);
        diff("bound endpoints", r.bindings == base.bindings);
        diff("deliveries", r.deliveries == base.deliveries);
        diff("fault sets", r.faults == base.faults);
        diff("run errors", r.error == base.error);
    }
    let equivalent = differences.is_empty();
    let faults = base.faults.clone();
    let verdict = match (equivalent, faults.is_empty()) {
        (true, true) => "equivalent outcomes".to_string(),
        (true, false) => format!(
            "equivalent outcomes; identical fault sets across strategies ({} fault{})",
            faults.len(),
            if faults.len() == 1 { "" } else { "s" }
        ),
        (false, _) => "outcomes differ".to_string(),
    };
    let strategies = runs
        .iter()
        .map(|(kind, r)| StrategySummary {
            strategy: *kind,
            max_node_load: r.metrics.max_node_load,
            node_resolutions: r.metrics.node_resolutions.clone(),
            mean_resolution_latency: r.metrics.mean_resolution_latency,
            total_messages: r.metrics.total_messages,
            resolution_requests: r.metrics.resolution_requests,
            deliveries: r.metrics.deliveries,
            terminal_faults: r.terminal_faults(),
        })
        .collect();
    Ok(ComparisonReport {
        strategies,
        equivalent,
        differences,
        faults,
        verdict,
    })
}

impl ComparisonReport {
    pub fn summary(&self, kind: StrategyKind) -> Option<&StrategySummary> {
        self.strategies.iter().find(|s| s.strategy == kind)
    }
}
