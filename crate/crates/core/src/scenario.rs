//! Scenario files: a fabric description plus a program of directives.
//!
//! Applications, virtual address handles and connections are referred to by
//! name. A handle is bound by the `allocate` that creates it; a connection
//! name by the `establish` that opens it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addressing::{AddressConfig, VirtualAddress};
use crate::allocation::AppId;
use crate::channels::ConnId;
use crate::fabric::{Fabric, FabricOptions, Location, TopologySpec};
use crate::sim::{RunResult, SimError, SimRng, Simulation, Tick};
use crate::translation::{StrategyKind, TranslationStrategy};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaError {
    /// Where the problem is, e.g. `program[3].to`.
    pub path: String,
    pub message: String,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n"))]
    Schema(Vec<SchemaError>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cols: Option<u32>,
    pub units_per_node: u32,
}

impl TopologySection {
    pub fn new(spec: TopologySpec, units_per_node: u32) -> Self {
        let (n, rows, cols) = match spec {
            TopologySpec::Ring { n } | TopologySpec::Complete { n } => (Some(n), None, None),
            TopologySpec::Mesh2d { rows, cols } => (None, Some(rows), Some(cols)),
        };
        Self {
            kind: spec.name().to_string(),
            n,
            rows,
            cols,
            units_per_node,
        }
    }

    pub fn spec(&self) -> Result<TopologySpec, String> {
        let need = |v: Option<u32>, key: &str| v.ok_or_else(|| format!("{} topology needs `{key}`", self.kind));
        match self.kind.as_str() {
            "ring" => Ok(TopologySpec::Ring { n: need(self.n, "n")? }),
            "complete" => Ok(TopologySpec::Complete { n: need(self.n, "n")? }),
            "mesh2d" => Ok(TopologySpec::Mesh2d {
                rows: need(self.rows, "rows")?,
                cols: need(self.cols, "cols")?,
            }),
            other => Err(format!("unknown topology kind {other:?} (expected ring, mesh2d or complete)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Directive {
    Allocate {
        app: String,
        handles: Vec<String>,
    },
    Deallocate {
        app: String,
    },
    Establish {
        conn: String,
        from: String,
        #[serde(default)]
        end: u32,
        /// A handle name or a `v:` literal.
        to: String,
    },
    Send {
        conn: String,
        data: String,
    },
    Close {
        conn: String,
    },
    Swap {
        handle: String,
        /// Destination unit; a random free unit when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        to: Option<Location>,
    },
    Evict {
        handle: String,
    },
    At {
        tick: Tick,
    },
}

impl Directive {
    pub fn op(&self) -> &'static str {
        match self {
            Directive::Allocate { .. } => "allocate",
            Directive::Deallocate { .. } => "deallocate",
            Directive::Establish { .. } => "establish",
            Directive::Send { .. } => "send",
            Directive::Close { .. } => "close",
            Directive::Swap { .. } => "swap",
            Directive::Evict { .. } => "evict",
            Directive::At { .. } => "at",
        }
    }

    pub fn is_randomized(&self) -> bool {
        matches!(self, Directive::Swap { to: None, .. })
    }
}

fn default_strategy() -> StrategyKind {
    StrategyKind::Distributed
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub config: AddressConfig,
    pub topology: TopologySection,
    #[serde(default = "default_strategy")]
    pub strategy: StrategyKind,
    #[serde(default)]
    pub options: FabricOptions,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub program: Vec<Directive>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        scenario.validate().map_err(ScenarioError::Schema)?;
        Ok(scenario)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn strategy(&self) -> TranslationStrategy {
        TranslationStrategy::from_kind(self.strategy, self.options.facility_node, self.options.translator)
    }

    pub fn build_fabric(&self) -> Result<Fabric, SchemaError> {
        let spec = self.topology.spec().map_err(|m| schema("topology", m))?;
        Fabric::build(spec, self.topology.units_per_node, self.config, self.strategy(), self.options.clone())
            .map_err(|e| schema("topology", e.to_string()))
    }

    /// Full schema and referential check. Nothing is simulated.
    pub fn validate(&self) -> Result<(), Vec<SchemaError>> {
        let mut errors = Vec::new();
        if let Err(e) = self.config.validate() {
            errors.push(schema("config", e.to_string()));
        }
        let fabric = if errors.is_empty() {
            self.build_fabric().map_err(|e| errors.push(e)).ok()
        } else {
            None
        };

        let mut apps: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        let mut handles: BTreeSet<&str> = BTreeSet::new();
        let mut conns: BTreeSet<&str> = BTreeSet::new();
        let mut last_at: Option<Tick> = None;
        for (i, d) in self.program.iter().enumerate() {
            let at = |field: &str| format!("program[{i}].{field}");
            let need_handle = |handles: &BTreeSet<&str>, name: &str, field: &str, errors: &mut Vec<SchemaError>| {
                if !handles.contains(name) {
                    errors.push(schema(at(field), format!("unbound handle {name:?}")));
                }
            };
            match d {
                Directive::Allocate { app, handles: names } => {
                    if names.is_empty() {
                        errors.push(schema(at("handles"), "allocate needs at least one handle"));
                    }
                    for name in names {
                        if name.starts_with("v:") {
                            errors.push(schema(at("handles"), format!("handle {name:?} looks like an address literal")));
                        } else if !handles.insert(name) {
                            errors.push(schema(at("handles"), format!("handle {name:?} is already bound")));
                        }
                    }
                    apps.entry(app).or_default().extend(names.iter().map(String::as_str));
                }
                Directive::Deallocate { app } => match apps.remove(app.as_str()) {
                    Some(names) => names.iter().for_each(|n| {
                        handles.remove(n);
                    }),
                    None => errors.push(schema(at("app"), format!("unbound application {app:?}"))),
                },
                Directive::Establish { conn, from, end, to } => {
                    need_handle(&handles, from, "from", &mut errors);
                    if to.starts_with("v:") {
                        if let Err(e) = self.config.parse_virtual(to) {
                            errors.push(schema(at("to"), e.to_string()));
                        }
                    } else {
                        need_handle(&handles, to, "to", &mut errors);
                    }
                    if u64::from(*end) >= self.config.ends_per_unit() {
                        errors.push(schema(
                            at("end"),
                            format!("end {end} out of range (units have {} ends)", self.config.ends_per_unit()),
                        ));
                    }
                    if !conns.insert(conn) {
                        errors.push(schema(at("conn"), format!("connection {conn:?} is already bound")));
                    }
                }
                Directive::Send { conn, .. } | Directive::Close { conn } => {
                    if !conns.contains(conn.as_str()) {
                        errors.push(schema(at("conn"), format!("unbound connection {conn:?}")));
                    }
                }
                Directive::Swap { handle, to } => {
                    need_handle(&handles, handle, "handle", &mut errors);
                    if let (Some(loc), Some(f)) = (to, &fabric) {
                        if f.unit(*loc).is_none() {
                            errors.push(schema(at("to"), format!("no unit at {loc}")));
                        }
                    }
                }
                Directive::Evict { handle } => need_handle(&handles, handle, "handle", &mut errors),
                Directive::At { tick } => {
                    if last_at.is_some_and(|t| *tick <= t) {
                        errors.push(schema(at("tick"), format!("at ticks must increase ({tick} after {})", last_at.unwrap())));
                    }
                    if *tick > self.options.tick_limit {
                        errors.push(schema(at("tick"), format!("tick {tick} beyond tick limit {}", self.options.tick_limit)));
                    }
                    last_at = Some(*tick);
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    pub fn has_randomized_directives(&self) -> bool {
        self.program.iter().any(Directive::is_randomized)
    }

    /// Validates and executes the program.
    pub fn run(&self) -> Result<RunResult, ScenarioError> {
        self.validate().map_err(ScenarioError::Schema)?;
        let fabric = self
            .build_fabric()
            .map_err(|e| ScenarioError::Schema(vec![e]))?;
        Ok(Runner::new(self, fabric).execute())
    }
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> SchemaError {
    SchemaError {
        path: path.into(),
        message: message.into(),
    }
}

struct Runner<'a> {
    scenario: &'a Scenario,
    sim: Simulation,
    rng: SimRng,
    handles: BTreeMap<&'a str, VirtualAddress>,
    conns: BTreeMap<&'a str, ConnId>,
}

impl<'a> Runner<'a> {
    fn new(scenario: &'a Scenario, fabric: Fabric) -> Self {
        Self {
            scenario,
            sim: Simulation::new(fabric),
            rng: SimRng::new(scenario.seed),
            handles: BTreeMap::new(),
            conns: BTreeMap::new(),
        }
    }

    fn execute(mut self) -> RunResult {
        for d in &self.scenario.program {
            // other errors are recorded in the trace and the run continues
            if let Err(SimError::TickLimitExceeded { .. }) = self.directive(d) {
                return self.sim.finish();
            }
        }
        let _ = self.sim.run_until_quiescent();
        self.sim.finish()
    }

    fn handle(&mut self, name: &str, op: &'static str) -> Option<VirtualAddress> {
        let v = self.handles.get(name).copied();
        if v.is_none() {
            self.sim.error(op, format!("handle {name:?} was not allocated"));
        }
        v
    }

    fn directive(&mut self, d: &'a Directive) -> Result<(), SimError> {
        match d {
            Directive::Allocate { app, handles } => {
                let vs = self.sim.allocate(&AppId(app.clone()), handles.len())?;
                for (name, v) in handles.iter().zip(vs) {
                    self.handles.insert(name, v);
                }
            }
            Directive::Deallocate { app } => {
                self.sim.deallocate(&AppId(app.clone()))?;
                let released: Vec<&str> = self
                    .handles
                    .iter()
                    .filter(|(_, v)| self.sim.fabric().allocator().image(**v).is_none())
                    .map(|(n, _)| *n)
                    .collect();
                for n in released {
                    self.handles.remove(n);
                }
            }
            Directive::Establish { conn, from, end, to } => {
                let Some(src) = self.handle(from, "establish") else {
                    return Ok(());
                };
                let dest = if to.starts_with("v:") {
                    self.sim.fabric().config.parse_virtual(to).expect("validated literal")
                } else {
                    match self.handle(to, "establish") {
                        Some(v) => v,
                        None => return Ok(()),
                    }
                };
                let (id, _) = self.sim.submit_establish(src, *end, dest);
                self.conns.insert(conn, id);
            }
            Directive::Send { conn, data } => match self.conns.get(conn.as_str()) {
                Some(&id) => {
                    self.sim.submit_send(id, data.as_bytes())?;
                }
                None => self.sim.error("send", format!("connection {conn:?} was not established")),
            },
            Directive::Close { conn } => match self.conns.get(conn.as_str()) {
                Some(&id) => {
                    self.sim.submit_close(id)?;
                }
                None => self.sim.error("close", format!("connection {conn:?} was not established")),
            },
            Directive::Swap { handle, to } => {
                let Some(v) = self.handle(handle, "swap") else {
                    return Ok(());
                };
                let dest = match to {
                    Some(loc) => *loc,
                    None => {
                        self.sim.run_until_quiescent()?;
                        let free: Vec<Location> = self.sim.fabric().free_units().collect();
                        if free.is_empty() {
                            self.sim.error("swap", "no free unit for a random destination".into());
                            return Ok(());
                        }
                        *self.rng.pick(&free)
                    }
                };
                self.sim.swap_unit(v, dest)?;
            }
            Directive::Evict { handle } => {
                if let Some(v) = self.handle(handle, "evict") {
                    self.sim.evict(v)?;
                }
            }
            Directive::At { tick } => self.sim.run_until(*tick)?,
        }
        Ok(())
    }
}

/// Shape of a generated scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenParams {
    pub max_nodes: u32,
    pub units_per_node: u32,
    pub connections: usize,
    pub sends: usize,
    pub swaps: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            max_nodes: 8,
            units_per_node: 4,
            connections: 12,
            sends: 24,
            swaps: 0,
        }
    }
}

/// Builds a fault-free random scenario from `seed`.
///
/// Every destination is allocated and at least two units stay free, so
/// reserving a translator unit never changes where allocations land and
/// random swaps always find a destination. Directives carry no randomness
/// of their own; the seed is stored only for the record.
pub fn generate(seed: u64, p: &GenParams) -> Scenario {
    let mut rng = SimRng::new(seed);
    let topology = match rng.below(3) {
        0 => TopologySpec::Ring {
            n: 2 + rng.below(u64::from(p.max_nodes - 1)) as u32,
        },
        1 => {
            let side = (1..=p.max_nodes).take_while(|s| s * s <= p.max_nodes).last().unwrap_or(1);
            TopologySpec::Mesh2d {
                rows: 1 + rng.below(side.into()) as u32,
                cols: 2 + rng.below(u64::from(side.max(2) - 1)) as u32,
            }
        }
        _ => TopologySpec::Complete {
            n: 2 + rng.below(u64::from(p.max_nodes - 1)) as u32,
        },
    };
    let total = topology.node_count() as usize * p.units_per_node as usize;
    let usable = total.saturating_sub(2).max(1);
    let mut program = Vec::new();
    let mut names = Vec::new();
    let mut app = 0;
    while names.len() < usable {
        let count = (1 + rng.below(3) as usize).min(usable - names.len());
        let handles: Vec<String> = (names.len()..names.len() + count).map(|i| format!("h{i}")).collect();
        names.extend(handles.iter().cloned());
        program.push(Directive::Allocate {
            app: format!("app{app}"),
            handles,
        });
        app += 1;
        if rng.below(2) == 0 {
            break;
        }
    }

    let config = AddressConfig::default();
    let ends = config.ends_per_unit() as u32;
    let mut next_end: BTreeMap<usize, u32> = BTreeMap::new();
    let mut conns = Vec::new();
    for c in 0..p.connections {
        let from = rng.below(names.len() as u64) as usize;
        let end = next_end.entry(from).or_insert(0);
        if *end >= ends {
            continue;
        }
        let to = rng.below(names.len() as u64) as usize;
        program.push(Directive::Establish {
            conn: format!("c{c}"),
            from: names[from].clone(),
            end: *end,
            to: names[to].clone(),
        });
        *end += 1;
        conns.push(format!("c{c}"));
    }

    let mut swaps_left = p.swaps;
    let mut tick = 0;
    for s in 0..p.sends {
        if conns.is_empty() {
            break;
        }
        let conn = conns[rng.below(conns.len() as u64) as usize].clone();
        program.push(Directive::Send {
            conn,
            data: format!("m{s}"),
        });
        if rng.below(4) == 0 {
            tick += 1 + rng.below(6);
            program.push(Directive::At { tick });
        }
        if swaps_left > 0 && rng.below((p.sends / p.swaps.max(1)).max(1) as u64) == 0 {
            swaps_left -= 1;
            let handle = names[rng.below(names.len() as u64) as usize].clone();
            program.push(Directive::Swap { handle, to: None });
        }
    }
    for _ in 0..swaps_left {
        let handle = names[rng.below(names.len() as u64) as usize].clone();
        program.push(Directive::Swap { handle, to: None });
        if let Some(conn) = conns.first() {
            program.push(Directive::Send {
                conn: conn.clone(),
                data: "tail".into(),
            });
        }
    }
    // `at` ticks only grow but swaps advance the clock unpredictably; keep
    // the program valid by dropping clock directives behind a swap.
    let mut seen_swap = false;
    program.retain(|d| {
        seen_swap |= matches!(d, Directive::Swap { .. });
        !(seen_swap && matches!(d, Directive::At { .. }))
    });

    Scenario {
        config,
        topology: TopologySection::new(topology, p.units_per_node),
        strategy: StrategyKind::Distributed,
        options: FabricOptions::default(),
        seed,
        program,
    }
}

/// The congestion workload: `per_node` resolutions aimed at each of
/// `nodes` responsible nodes, on a complete graph.
pub fn congestion_scenario(nodes: u32, per_node: u32) -> Scenario {
    let handles: Vec<String> = (0..nodes).map(|i| format!("h{i}")).collect();
    let mut program = vec![Directive::Allocate {
        app: "load".into(),
        handles: handles.clone(),
    }];
    let mut k = 0;
    for src in &handles {
        for end in 0..per_node {
            program.push(Directive::Establish {
                conn: format!("c{k}"),
                from: src.clone(),
                end,
                to: handles[((k / per_node + end) % nodes) as usize].clone(),
            });
            k += 1;
        }
    }
    Scenario {
        config: AddressConfig::default(),
        topology: TopologySection::new(TopologySpec::Complete { n: nodes }, 2),
        strategy: StrategyKind::Distributed,
        options: FabricOptions::default(),
        seed: 0,
        program,
    }
}
