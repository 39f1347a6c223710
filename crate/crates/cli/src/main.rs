use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use vchan_core::{compare_strategies, Scenario, ScenarioError, StrategyKind};

mod report;

/// Deterministic simulator of a fabric addressed through virtual channel ends.
#[derive(Debug, Parser)]
#[command(name = "vchan", version)]
struct Cli {
    /// Suppress the human-readable summary.
    #[arg(long, global = true)]
    quiet: bool,

    /// Override the scenario's tick limit.
    #[arg(long, global = true, env = "VCHAN_TICK_LIMIT", value_name = "TICKS")]
    tick_limit: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a scenario without running it.
    Validate { scenario: PathBuf },
    /// Run a scenario and write its trace and metrics.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        strategy: Option<StrategyKind>,
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to `<scenario>.trace.jsonl`.
        #[arg(long, value_name = "PATH")]
        trace_out: Option<PathBuf>,
        /// Defaults to `<scenario>.metrics.json`.
        #[arg(long, value_name = "PATH")]
        metrics_out: Option<PathBuf>,
        /// Exit 0 even when operations ended in a fault.
        #[arg(long)]
        allow_faults: bool,
    },
    /// Run a scenario under every strategy and compare.
    Compare {
        scenario: PathBuf,
        /// Also write the report as JSON.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Print the scenario's topology in DOT format.
    TopologyDot { scenario: PathBuf },
}

const EXIT_FAULT: u8 = 1;
const EXIT_USAGE: u8 = 2;

enum Failure {
    Fault(String),
    Usage(String),
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(format!("{e:#}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = io::stdout().lock();
    match execute(&cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Fault(msg)) => {
            eprintln!("vchan: {msg}");
            ExitCode::from(EXIT_FAULT)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("vchan: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn load(cli: &Cli, path: &Path) -> Result<Scenario, Failure> {
    let mut scenario = Scenario::load(path)?;
    if let Some(limit) = cli.tick_limit {
        scenario.options.tick_limit = limit;
        scenario.validate().map_err(ScenarioError::Schema)?;
    }
    Ok(scenario)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn execute(cli: &Cli, out: &mut impl Write) -> Result<(), Failure> {
    match &cli.command {
        Command::Validate { scenario } => {
            load(cli, scenario)?;
            if !cli.quiet {
                writeln!(out, "ok").context("writing output")?;
            }
        }
        Command::Run {
            scenario: path,
            strategy,
            seed,
            trace_out,
            metrics_out,
            allow_faults,
        } => {
            let mut scenario = load(cli, path)?;
            if let Some(s) = strategy {
                scenario.strategy = *s;
            }
            if let Some(s) = seed {
                scenario.seed = *s;
            }
            let result = scenario.run()?;
            let trace_path = trace_out.clone().unwrap_or_else(|| sibling(path, ".trace.jsonl"));
            let metrics_path = metrics_out.clone().unwrap_or_else(|| sibling(path, ".metrics.json"));
            fs::write(&trace_path, result.trace.to_jsonl())
                .with_context(|| format!("writing {}", trace_path.display()))?;
            let mut metrics = serde_json::to_string_pretty(&result.metrics).context("serializing metrics")?;
            metrics.push('\n');
            fs::write(&metrics_path, metrics).with_context(|| format!("writing {}", metrics_path.display()))?;
            if !cli.quiet {
                report::run_summary(out, &scenario, &result, &trace_path, &metrics_path).context("writing output")?;
            }
            if let Some(err) = &result.error {
                return Err(Failure::Fault(err.to_string()));
            }
            let faults = result.terminal_faults();
            if faults > 0 && !allow_faults {
                return Err(Failure::Fault(format!("{faults} operations ended in a fault")));
            }
        }
        Command::Compare { scenario: path, out: json_out } => {
            let scenario = load(cli, path)?;
            let report = compare_strategies(&scenario)?;
            if let Some(p) = json_out {
                let mut text = serde_json::to_string_pretty(&report).context("serializing report")?;
                text.push('\n');
                fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
            }
            if !cli.quiet {
                report::comparison(out, &report).context("writing output")?;
            }
            if !report.equivalent {
                return Err(Failure::Fault(report.differences.join("; ")));
            }
        }
        Command::TopologyDot { scenario: path } => {
            let scenario = load(cli, path)?;
            let spec = scenario.topology.spec().map_err(Failure::Usage)?;
            write!(out, "{}", spec.to_dot()).context("writing output")?;
        }
    }
    Ok(())
}
