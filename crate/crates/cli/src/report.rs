//! Plain-text summaries printed after `run` and `compare`.

use std::io::{self, Write};
use std::path::Path;

use vchan_core::{ComparisonReport, RunResult, Scenario};

pub fn run_summary(
    out: &mut impl Write,
    scenario: &Scenario,
    result: &RunResult,
    trace: &Path,
    metrics: &Path,
) -> io::Result<()> {
    let m = &result.metrics;
    writeln!(
        out,
        "strategy {}  topology {}  seed {}  final tick {}",
        scenario.strategy, scenario.topology.kind, scenario.seed, m.final_tick
    )?;
    writeln!(out)?;
    writeln!(out, "{:>6} {:>10} {:>12}", "node", "messages", "resolutions")?;
    for (node, (msgs, res)) in m.node_messages.iter().zip(&m.node_resolutions).enumerate() {
        writeln!(out, "{node:>6} {msgs:>10} {res:>12}")?;
    }
    writeln!(out)?;
    writeln!(out, "max node load            {}", m.max_node_load)?;
    writeln!(out, "messages / hops          {} / {}", m.total_messages, m.total_hops)?;
    writeln!(
        out,
        "resolutions              {} (mean latency {:.3})",
        m.resolution_requests, m.mean_resolution_latency
    )?;
    writeln!(
        out,
        "deliveries               {} (mean latency {:.3})",
        m.deliveries, m.mean_delivery_latency
    )?;
    writeln!(
        out,
        "faults                   {} (stale {}, overflow {}, errors {})",
        m.faults, m.stale, m.overflows, m.errors
    )?;
    writeln!(
        out,
        "signals / reloads        {} / {} (unresolvable {})",
        m.signals, m.reloads, m.unresolvable
    )?;
    if let Some(err) = &result.error {
        writeln!(out, "halted                   {err}")?;
    }
    writeln!(out)?;
    writeln!(out, "trace    {}", trace.display())?;
    writeln!(out, "metrics  {}", metrics.display())
}

pub fn comparison(out: &mut impl Write, report: &ComparisonReport) -> io::Result<()> {
    writeln!(
        out,
        "{:<12} {:>13} {:>13} {:>14} {:>12}",
        "strategy", "max_node_load", "mean_latency", "total_messages", "resolutions"
    )?;
    for s in &report.strategies {
        writeln!(
            out,
            "{:<12} {:>13} {:>13.3} {:>14} {:>12}",
            s.strategy.as_str(),
            s.max_node_load,
            s.mean_resolution_latency,
            s.total_messages,
            s.resolution_requests
        )?;
    }
    writeln!(out)?;
    for d in &report.differences {
        writeln!(out, "difference: {d}")?;
    }
    writeln!(out, "verdict: {}", report.verdict)
}
