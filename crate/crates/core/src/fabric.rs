//! Interconnect nodes, their attached computing units, and routing between
//! nodes.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addressing::{AddressConfig, AddressError, PhysicalAddress, VirtualAddress};
use crate::allocation::{Allocator, AppId, PlacementPolicy};
use crate::channels::{ChannelEnd, ConnId, ResolutionCache};
use crate::faults::FaultMode;
use crate::sim::Tick;
use crate::translation::{TranslationStrategy, TranslationTable};

pub type NodeId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FabricError {
    #[error("{what} ({count}) exceeds the address space ({limit})")]
    CapacityExceedsAddressSpace {
        what: &'static str,
        count: u64,
        limit: u64,
    },
    #[error("invalid node {0}")]
    InvalidNode(NodeId),
    #[error("invalid unit location {0}")]
    InvalidLocation(Location),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error(transparent)]
    Address(#[from] AddressError),
}

/// Position of a computing unit: its interconnect node and slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct Location {
    pub node: NodeId,
    pub slot: u32,
}

impl Location {
    pub const fn new(node: NodeId, slot: u32) -> Self {
        Self { node, slot }
    }

    pub fn physical(&self, end_index: u32, generation: u32) -> PhysicalAddress {
        PhysicalAddress::new(self.node, self.slot, end_index, generation)
    }
}

impl From<[u32; 2]> for Location {
    fn from(v: [u32; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Location> for [u32; 2] {
    fn from(l: Location) -> Self {
        [l.node, l.slot]
    }
}

impl From<PhysicalAddress> for Location {
    fn from(p: PhysicalAddress) -> Self {
        Self::new(p.node_id, p.unit_slot)
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.node, self.slot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TopologySpec {
    Ring { n: u32 },
    Mesh2d { rows: u32, cols: u32 },
    Complete { n: u32 },
}

impl TopologySpec {
    pub fn node_count(&self) -> u64 {
        match *self {
            TopologySpec::Ring { n } | TopologySpec::Complete { n } => n.into(),
            TopologySpec::Mesh2d { rows, cols } => u64::from(rows) * u64::from(cols),
        }
    }

    pub fn validate(&self, cfg: &AddressConfig) -> Result<(), FabricError> {
        let count = self.node_count();
        if count == 0 {
            return Err(FabricError::InvalidTopology("node count must be at least 1".into()));
        }
        if count > cfg.max_nodes() {
            return Err(FabricError::CapacityExceedsAddressSpace {
                what: "node count",
                count,
                limit: cfg.max_nodes(),
            });
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            TopologySpec::Ring { .. } => "ring",
            TopologySpec::Mesh2d { .. } => "mesh2d",
            TopologySpec::Complete { .. } => "complete",
        }
    }

    /// Adjacent nodes, ascending and without duplicates.
    pub fn neighbors(&self, node: NodeId) -> Result<Vec<NodeId>, FabricError> {
        if u64::from(node) >= self.node_count() {
            return Err(FabricError::InvalidNode(node));
        }
        let mut out = match *self {
            TopologySpec::Ring { n } => {
                if n == 1 {
                    Vec::new()
                } else {
                    vec![(node + n - 1) % n, (node + 1) % n]
                }
            }
            TopologySpec::Mesh2d { rows, cols } => {
                let (r, c) = (node / cols, node % cols);
                let mut v = Vec::with_capacity(4);
                if r > 0 {
                    v.push(node - cols);
                }
                if c > 0 {
                    v.push(node - 1);
                }
                if c + 1 < cols {
                    v.push(node + 1);
                }
                if r + 1 < rows {
                    v.push(node + cols);
                }
                v
            }
            TopologySpec::Complete { n } => (0..n).filter(|&k| k != node).collect(),
        };
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// Undirected edges as `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut edges = Vec::new();
        for a in 0..self.node_count() as NodeId {
            for b in self.neighbors(a).unwrap_or_default() {
                if a < b {
                    edges.push((a, b));
                }
            }
        }
        edges
    }

    /// Graphviz rendering, nodes labeled by ordinal.
    pub fn to_dot(&self) -> String {
        let mut out = format!("graph {} {{\n", self.name());
        for n in 0..self.node_count() {
            out.push_str(&format!("  n{n} [label=\"{n}\"];\n"));
        }
        for (a, b) in self.edges() {
            out.push_str(&format!("  n{a} -- n{b};\n"));
        }
        out.push_str("}\n");
        out
    }
}

/// Shortest path from `src` to `dst`, both ends included.
///
/// Among equal-length paths the lowest-numbered next hop wins at every step.
pub fn route(spec: &TopologySpec, src: NodeId, dst: NodeId) -> Result<Vec<NodeId>, FabricError> {
    let n = spec.node_count();
    for node in [src, dst] {
        if u64::from(node) >= n {
            return Err(FabricError::InvalidNode(node));
        }
    }
    let dist = distances_to(spec, dst);
    let mut path = vec![src];
    let mut at = src;
    while at != dst {
        let here = dist[at as usize];
        at = spec
            .neighbors(at)?
            .into_iter()
            .find(|&nb| dist[nb as usize] + 1 == here)
            .ok_or_else(|| FabricError::InvalidTopology("disconnected".into()))?;
        path.push(at);
    }
    Ok(path)
}

fn distances_to(spec: &TopologySpec, dst: NodeId) -> Vec<u32> {
    let n = spec.node_count() as usize;
    let mut dist = vec![u32::MAX; n];
    dist[dst as usize] = 0;
    let mut queue = VecDeque::from([dst]);
    while let Some(at) = queue.pop_front() {
        for nb in spec.neighbors(at).unwrap_or_default() {
            if dist[nb as usize] == u32::MAX {
                dist[nb as usize] = dist[at as usize] + 1;
                queue.push_back(nb);
            }
        }
    }
    dist
}

/// Precomputed next-hop table giving the same paths as [`route`].
#[derive(Debug, Clone)]
pub struct Router {
    n: usize,
    next_hop: Vec<NodeId>,
}

impl Router {
    pub fn new(spec: &TopologySpec) -> Self {
        let n = spec.node_count() as usize;
        let neighbors: Vec<Vec<NodeId>> = (0..n as NodeId)
            .map(|k| spec.neighbors(k).unwrap_or_default())
            .collect();
        let mut next_hop = vec![0; n * n];
        for dst in 0..n {
            let dist = distances_to(spec, dst as NodeId);
            for src in 0..n {
                next_hop[src * n + dst] = if src == dst {
                    dst as NodeId
                } else {
                    neighbors[src]
                        .iter()
                        .copied()
                        .find(|&nb| dist[nb as usize] + 1 == dist[src])
                        .unwrap_or(dst as NodeId)
                };
            }
        }
        Self { n, next_hop }
    }

    pub fn path(&self, src: NodeId, dst: NodeId) -> Vec<NodeId> {
        let mut path = vec![src];
        let mut at = src;
        while at != dst {
            at = self.next_hop[at as usize * self.n + dst as usize];
            path.push(at);
        }
        path
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitState {
    Free,
    Allocated(AppId),
    Handler,
    Translator,
}

/// A payload sitting in a unit's local memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub tick: Tick,
    pub conn: ConnId,
    pub seq: u64,
    pub from: VirtualAddress,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mailbox {
    capacity: usize,
    items: VecDeque<Delivery>,
}

impl Mailbox {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::new(),
        }
    }

    /// Appends `d` unless the mailbox is full, in which case it is handed back.
    pub fn push(&mut self, d: Delivery) -> Result<(), Delivery> {
        if self.items.len() >= self.capacity {
            return Err(d);
        }
        self.items.push_back(d);
        Ok(())
    }

    pub fn pop(&mut self) -> Option<Delivery> {
        self.items.pop_front()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Delivery> {
        self.items.iter()
    }
}

/// Processor plus local memory. The channel ends, mailbox and resolution
/// cache are local memory and travel with the unit's image on swap or evict.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComputingUnit {
    pub location: Location,
    pub state: UnitState,
    /// Virtual address of the image currently running here.
    pub resident: Option<VirtualAddress>,
    pub ends: Vec<ChannelEnd>,
    pub mailbox: Mailbox,
    pub cache: ResolutionCache,
}

impl ComputingUnit {
    fn new(location: Location, end_count: usize, capacity: usize) -> Self {
        Self {
            location,
            state: UnitState::Free,
            resident: None,
            ends: vec![ChannelEnd::default(); end_count],
            mailbox: Mailbox::new(capacity),
            cache: ResolutionCache::default(),
        }
    }

    pub fn channel_end_count(&self) -> usize {
        self.ends.len()
    }

    pub fn mailbox_capacity(&self) -> usize {
        self.mailbox.capacity()
    }

    pub fn is_free(&self) -> bool {
        self.state == UnitState::Free
    }

    /// Clears local memory and returns what was there.
    pub(crate) fn take_memory(&mut self) -> UnitMemory {
        let end_count = self.ends.len();
        let capacity = self.mailbox.capacity();
        UnitMemory {
            ends: std::mem::replace(&mut self.ends, vec![ChannelEnd::default(); end_count]),
            mailbox: std::mem::replace(&mut self.mailbox, Mailbox::new(capacity)),
            cache: std::mem::take(&mut self.cache),
        }
    }

    pub(crate) fn restore_memory(&mut self, mem: UnitMemory) {
        self.ends = mem.ends;
        self.mailbox = mem.mailbox;
        self.cache = mem.cache;
    }

    pub(crate) fn reset(&mut self) {
        self.take_memory();
        self.state = UnitState::Free;
        self.resident = None;
    }
}

/// Local memory contents of a unit, as saved in the backing store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitMemory {
    pub ends: Vec<ChannelEnd>,
    pub mailbox: Mailbox,
    pub cache: ResolutionCache,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct NodeCounters {
    /// Hop records touching this node.
    pub messages: u64,
    /// Resolution requests looked up here.
    pub resolutions_served: u64,
}

#[derive(Debug, Clone)]
pub struct InterconnectNode {
    pub id: NodeId,
    pub units: Vec<ComputingUnit>,
    pub table: TranslationTable,
    pub counters: NodeCounters,
    /// Lookups are served one at a time; the next may start at this tick.
    pub(crate) lookup_free_at: Tick,
}

/// Run-wide feature flags and costs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FabricOptions {
    pub cache_enabled: bool,
    pub auto_rebind: bool,
    pub fault_mode: FaultMode,
    pub lookup_cost: Tick,
    pub reload_cost: Tick,
    pub tick_limit: Tick,
    pub mailbox_capacity: usize,
    pub placement: PlacementPolicy,
    /// Handler unit under `signal_handler`; defaults to node 0, last slot.
    pub handler: Option<Location>,
    /// Translator unit under the explicit strategy; defaults to the last
    /// slot of the last node.
    pub translator: Option<Location>,
    /// Facility node under the central strategy.
    pub facility_node: NodeId,
}

impl Default for FabricOptions {
    fn default() -> Self {
        Self {
            cache_enabled: false,
            auto_rebind: true,
            fault_mode: FaultMode::ErrorAtRequester,
            lookup_cost: 1,
            reload_cost: 10,
            tick_limit: 1_000_000,
            mailbox_capacity: 64,
            placement: PlacementPolicy::FirstFit,
            handler: None,
            translator: None,
            facility_node: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fabric {
    pub config: AddressConfig,
    pub topology: TopologySpec,
    pub strategy: TranslationStrategy,
    pub options: FabricOptions,
    pub nodes: Vec<InterconnectNode>,
    pub(crate) router: Router,
    pub(crate) handler: Option<Location>,
    pub(crate) allocator: Allocator,
    /// Which virtual address currently maps to each physical endpoint.
    pub(crate) owners: BTreeMap<(NodeId, u32, u32), VirtualAddress>,
}

impl Fabric {
    pub fn build(
        topology: TopologySpec,
        units_per_node: u32,
        config: AddressConfig,
        strategy: TranslationStrategy,
        options: FabricOptions,
    ) -> Result<Self, FabricError> {
        config.validate()?;
        topology.validate(&config)?;
        if units_per_node == 0 {
            return Err(FabricError::InvalidTopology("units_per_node must be at least 1".into()));
        }
        if u64::from(units_per_node) > config.max_units_per_node() {
            return Err(FabricError::CapacityExceedsAddressSpace {
                what: "units per node",
                count: units_per_node.into(),
                limit: config.max_units_per_node(),
            });
        }
        let node_count = topology.node_count() as u32;
        let end_count = config.ends_per_unit() as usize;
        let nodes = (0..node_count)
            .map(|id| InterconnectNode {
                id,
                units: (0..units_per_node)
                    .map(|slot| ComputingUnit::new(Location::new(id, slot), end_count, options.mailbox_capacity))
                    .collect(),
                table: TranslationTable::new(config.table_size()),
                counters: NodeCounters::default(),
                lookup_free_at: 0,
            })
            .collect();
        let mut fabric = Self {
            router: Router::new(&topology),
            config,
            topology,
            strategy,
            allocator: Allocator::new(options.placement),
            options,
            nodes,
            handler: None,
            owners: BTreeMap::new(),
        };

        if fabric.options.fault_mode == FaultMode::SignalHandler {
            let loc = fabric
                .options
                .handler
                .unwrap_or(Location::new(0, units_per_node - 1));
            fabric.reserve(loc, UnitState::Handler)?;
            fabric.handler = Some(loc);
        }
        match fabric.strategy {
            TranslationStrategy::Explicit { translator } => {
                let loc = translator
                    .or(fabric.options.translator)
                    .unwrap_or(Location::new(node_count - 1, units_per_node - 1));
                if Some(loc) == fabric.handler {
                    return Err(FabricError::InvalidStrategy(format!(
                        "translator unit {loc} collides with the handler unit"
                    )));
                }
                fabric.reserve(loc, UnitState::Translator)?;
                fabric.strategy = TranslationStrategy::Explicit { translator: Some(loc) };
            }
            TranslationStrategy::Central { facility } => {
                if facility >= node_count {
                    return Err(FabricError::InvalidStrategy(format!(
                        "facility node {facility} does not exist"
                    )));
                }
            }
            TranslationStrategy::Distributed => {}
        }
        Ok(fabric)
    }

    fn reserve(&mut self, loc: Location, state: UnitState) -> Result<(), FabricError> {
        let unit = self.unit_mut(loc).ok_or(FabricError::InvalidLocation(loc))?;
        unit.state = state;
        Ok(())
    }

    pub fn node_count(&self) -> u32 {
        self.nodes.len() as u32
    }

    pub fn units_per_node(&self) -> u32 {
        self.nodes[0].units.len() as u32
    }

    pub fn total_units(&self) -> usize {
        self.nodes.iter().map(|n| n.units.len()).sum()
    }

    pub fn unit(&self, loc: Location) -> Option<&ComputingUnit> {
        self.nodes.get(loc.node as usize)?.units.get(loc.slot as usize)
    }

    pub fn unit_mut(&mut self, loc: Location) -> Option<&mut ComputingUnit> {
        self.nodes.get_mut(loc.node as usize)?.units.get_mut(loc.slot as usize)
    }

    pub fn units(&self) -> impl Iterator<Item = &ComputingUnit> {
        self.nodes.iter().flat_map(|n| n.units.iter())
    }

    /// Free units in `(node, slot)` order.
    pub fn free_units(&self) -> impl Iterator<Item = Location> + '_ {
        self.units().filter(|u| u.is_free()).map(|u| u.location)
    }

    pub fn lowest_free_unit(&self) -> Option<Location> {
        self.free_units().next()
    }

    pub fn handler(&self) -> Option<Location> {
        self.handler
    }

    pub fn translator(&self) -> Option<Location> {
        match self.strategy {
            TranslationStrategy::Explicit { translator } => translator,
            _ => None,
        }
    }

    pub fn route(&self, src: NodeId, dst: NodeId) -> Vec<NodeId> {
        self.router.path(src, dst)
    }

    /// `(free, allocated, handler, translator)` unit counts.
    pub fn state_counts(&self) -> (usize, usize, usize, usize) {
        let mut counts = (0, 0, 0, 0);
        for u in self.units() {
            match u.state {
                UnitState::Free => counts.0 += 1,
                UnitState::Allocated(_) => counts.1 += 1,
                UnitState::Handler => counts.2 += 1,
                UnitState::Translator => counts.3 += 1,
            }
        }
        counts
    }

    pub fn counters(&self) -> Vec<NodeCounters> {
        self.nodes.iter().map(|n| n.counters).collect()
    }

    pub fn location_of(&self, v: VirtualAddress) -> Option<Location> {
        self.allocator.image(v).and_then(|img| img.location)
    }

    pub(crate) fn valid_physical(&self, p: PhysicalAddress) -> bool {
        p.node_id < self.node_count()
            && p.unit_slot < self.units_per_node()
            && u64::from(p.end_index) < self.config.ends_per_unit()
            && u64::from(p.generation) <= self.config.max_generation()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bfs_dist(spec: &TopologySpec, a: NodeId, b: NodeId) -> usize {
        // independent of the route implementation: level-by-level expansion
        let mut seen = vec![a];
        let mut frontier = vec![a];
        let mut depth = 0;
        while !seen.contains(&b) {
            let mut next = Vec::new();
            for f in &frontier {
                for nb in spec.neighbors(*f).unwrap() {
                    if !seen.contains(&nb) {
                        seen.push(nb);
                        next.push(nb);
                    }
                }
            }
            frontier = next;
            depth += 1;
        }
        depth
    }

    fn build(spec: TopologySpec, upn: u32) -> Result<Fabric, FabricError> {
        Fabric::build(
            spec,
            upn,
            AddressConfig::default(),
            TranslationStrategy::Distributed,
            FabricOptions::default(),
        )
    }

    #[test]
    fn build_ring() {
        let f = build(TopologySpec::Ring { n: 4 }, 2).unwrap();
        assert_eq!(f.node_count(), 4);
        assert_eq!(f.total_units(), 8);
        assert_eq!(f.free_units().count(), 8);
        assert!(f.nodes.iter().all(|n| n.table.is_empty()));
        assert!(f.counters().iter().all(|c| *c == NodeCounters::default()));
    }

    #[test]
    fn build_mesh_center_has_four_neighbors() {
        let spec = TopologySpec::Mesh2d { rows: 3, cols: 3 };
        let f = build(spec, 1).unwrap();
        assert_eq!(f.node_count(), 9);
        // grid oracle: cells at Manhattan distance one
        let expected: Vec<u32> = (0..9)
            .filter(|&k: &u32| {
                let (r, c) = (k / 3, k % 3);
                r.abs_diff(1) + c.abs_diff(1) == 1
            })
            .collect();
        assert_eq!(spec.neighbors(4).unwrap(), expected);
        assert_eq!(expected.len(), 4);
    }

    #[test]
    fn build_rejects_oversized() {
        let err = build(TopologySpec::Ring { n: 300 }, 1).unwrap_err();
        assert!(matches!(err, FabricError::CapacityExceedsAddressSpace { .. }));
        let err = build(TopologySpec::Ring { n: 2 }, 17).unwrap_err();
        assert!(matches!(err, FabricError::CapacityExceedsAddressSpace { .. }));
    }

    #[test]
    fn neighbor_examples() {
        assert_eq!(TopologySpec::Ring { n: 4 }.neighbors(0).unwrap(), vec![1, 3]);
        assert_eq!(TopologySpec::Mesh2d { rows: 3, cols: 3 }.neighbors(4).unwrap(), vec![1, 3, 5, 7]);
        assert_eq!(TopologySpec::Complete { n: 3 }.neighbors(1).unwrap(), vec![0, 2]);
        assert_eq!(TopologySpec::Ring { n: 2 }.neighbors(0).unwrap(), vec![1]);
        assert!(TopologySpec::Ring { n: 1 }.neighbors(0).unwrap().is_empty());
        assert!(TopologySpec::Ring { n: 4 }.neighbors(4).is_err());
    }

    #[test]
    fn route_examples() {
        let ring = TopologySpec::Ring { n: 4 };
        assert_eq!(route(&ring, 0, 2).unwrap(), vec![0, 1, 2]);
        assert_eq!(route(&ring, 3, 3).unwrap(), vec![3]);
        let mesh = TopologySpec::Mesh2d { rows: 3, cols: 3 };
        assert_eq!(route(&mesh, 0, 8).unwrap(), vec![0, 1, 2, 5, 8]);
        assert!(route(&mesh, 0, 9).is_err());
    }

    #[test]
    fn router_matches_route_and_bfs() {
        let specs = [
            TopologySpec::Ring { n: 7 },
            TopologySpec::Mesh2d { rows: 3, cols: 4 },
            TopologySpec::Complete { n: 5 },
            TopologySpec::Ring { n: 1 },
        ];
        for spec in specs {
            let router = Router::new(&spec);
            let n = spec.node_count() as NodeId;
            for a in 0..n {
                for b in 0..n {
                    let p = route(&spec, a, b).unwrap();
                    assert_eq!(router.path(a, b), p);
                    assert_eq!(p.len() - 1, bfs_dist(&spec, a, b));
                    for w in p.windows(2) {
                        assert!(spec.neighbors(w[0]).unwrap().contains(&w[1]));
                    }
                }
            }
        }
    }

    #[test]
    fn dot_edge_counts() {
        assert_eq!(TopologySpec::Ring { n: 3 }.edges().len(), 3);
        assert_eq!(TopologySpec::Complete { n: 4 }.edges().len(), 6);
        assert_eq!(TopologySpec::Mesh2d { rows: 2, cols: 2 }.edges().len(), 4);
        let dot = TopologySpec::Ring { n: 3 }.to_dot();
        assert_eq!(dot.matches(" -- ").count(), 3);
    }

    #[test]
    fn units_are_homogeneous() {
        let f = build(TopologySpec::Mesh2d { rows: 2, cols: 3 }, 3).unwrap();
        let first = f.units().next().unwrap();
        assert!(f.units().all(|u| u.channel_end_count() == first.channel_end_count()
            && u.mailbox_capacity() == first.mailbox_capacity()));
    }

    #[test]
    fn reserved_units() {
        let opts = FabricOptions {
            fault_mode: FaultMode::SignalHandler,
            ..FabricOptions::default()
        };
        let f = Fabric::build(
            TopologySpec::Ring { n: 4 },
            2,
            AddressConfig::default(),
            TranslationStrategy::Explicit { translator: None },
            opts,
        )
        .unwrap();
        assert_eq!(f.handler(), Some(Location::new(0, 1)));
        assert_eq!(f.translator(), Some(Location::new(3, 1)));
        assert_eq!(f.state_counts(), (6, 0, 1, 1));

        let err = Fabric::build(
            TopologySpec::Ring { n: 4 },
            2,
            AddressConfig::default(),
            TranslationStrategy::Central { facility: 4 },
            FabricOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, FabricError::InvalidStrategy(_)));
    }
}
