//! Handing computing units to applications and moving them around.
//!
//! Each allocated unit gets a fresh virtual address. Its node part is chosen
//! round-robin over all nodes, independent of where the unit physically
//! sits, and its index part is the lowest index at that node not held by any
//! live image. The virtual address stays fixed for the life of the
//! allocation while swap, evict and reload change what it maps to.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::addressing::{PhysicalAddress, VirtualAddress};
use crate::channels::{ChannelEnd, ConnState};
use crate::fabric::{Fabric, Location, UnitMemory, UnitState};
use crate::sim::{SimError, Simulation, Tick, TraceKind};
use crate::translation::TranslationError;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AllocError {
    #[error("allocation count must be at least 1")]
    ZeroCount,
    #[error("requested {requested} units but only {available} are free")]
    InsufficientFreeUnits { requested: usize, available: usize },
    #[error("no free virtual table entry left")]
    VirtualSpaceExhausted,
    #[error("unknown application {0}")]
    UnknownApp(AppId),
    #[error("{0} is not mapped")]
    NotMapped(VirtualAddress),
    #[error("{0} is not evicted")]
    NotEvicted(VirtualAddress),
    #[error("destination unit {0} is not free")]
    DestinationNotFree(Location),
    #[error("generation counter of {0} exhausted")]
    GenerationExhausted(VirtualAddress),
    #[error(transparent)]
    Translation(#[from] TranslationError),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AppId(pub String);

impl From<&str> for AppId {
    fn from(s: &str) -> Self {
        AppId(s.to_string())
    }
}

impl fmt::Display for AppId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementPolicy {
    /// Lowest `(node, slot)` first.
    #[default]
    FirstFit,
    /// One unit per node in turn, continuing where the last allocation
    /// stopped.
    RoundRobinNodes,
}

/// Backing-store entry for one virtual address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub app: AppId,
    /// Opaque stand-in for the code and data that make up the image.
    pub token: u64,
    /// Generation of the most recent mapping.
    pub generation: u32,
    /// `None` while evicted.
    pub location: Option<Location>,
    /// Local memory saved at eviction.
    pub(crate) saved: Option<UnitMemory>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Application {
    pub app_id: AppId,
    pub holdings: BTreeSet<VirtualAddress>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwapRecord {
    pub vaddr: VirtualAddress,
    pub old_paddr: PhysicalAddress,
    pub new_paddr: PhysicalAddress,
    pub tick: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocator {
    pub placement: PlacementPolicy,
    virtual_cursor: u32,
    physical_cursor: u32,
    next_token: u64,
    backing_store: BTreeMap<VirtualAddress, Image>,
    apps: BTreeMap<AppId, Application>,
}

impl Allocator {
    pub fn new(placement: PlacementPolicy) -> Self {
        Self {
            placement,
            virtual_cursor: 0,
            physical_cursor: 0,
            next_token: 0,
            backing_store: BTreeMap::new(),
            apps: BTreeMap::new(),
        }
    }

    pub fn image(&self, v: VirtualAddress) -> Option<&Image> {
        self.backing_store.get(&v)
    }

    pub fn app(&self, id: &AppId) -> Option<&Application> {
        self.apps.get(id)
    }

    pub fn apps(&self) -> impl Iterator<Item = &Application> {
        self.apps.values()
    }

    pub fn images(&self) -> impl Iterator<Item = (&VirtualAddress, &Image)> {
        self.backing_store.iter()
    }
}

impl Fabric {
    pub fn allocator(&self) -> &Allocator {
        &self.allocator
    }

    fn pick_units(&mut self, count: usize) -> Result<Vec<Location>, AllocError> {
        let free: Vec<Location> = self.free_units().collect();
        if free.len() < count {
            return Err(AllocError::InsufficientFreeUnits {
                requested: count,
                available: free.len(),
            });
        }
        match self.allocator.placement {
            PlacementPolicy::FirstFit => Ok(free[..count].to_vec()),
            PlacementPolicy::RoundRobinNodes => {
                let nodes = self.node_count();
                let mut by_node: BTreeMap<u32, Vec<Location>> = BTreeMap::new();
                for l in free.into_iter().rev() {
                    by_node.entry(l.node).or_default().push(l);
                }
                let mut cursor = self.allocator.physical_cursor;
                let mut out = Vec::with_capacity(count);
                while out.len() < count {
                    if let Some(l) = by_node.get_mut(&(cursor % nodes)).and_then(Vec::pop) {
                        out.push(l);
                    }
                    cursor = (cursor + 1) % nodes;
                }
                self.allocator.physical_cursor = cursor;
                Ok(out)
            }
        }
    }

    fn pick_virtual(&self, count: usize) -> Result<(Vec<VirtualAddress>, u32), AllocError> {
        let nodes = self.node_count();
        let table_size = self.config.table_size();
        let mut taken: BTreeSet<VirtualAddress> = BTreeSet::new();
        let mut cursor = self.allocator.virtual_cursor;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut found = None;
            for step in 0..nodes {
                let node = (cursor + step) % nodes;
                let index = (0..table_size).map(|i| VirtualAddress::new(node, i as u32)).find(|v| {
                    !taken.contains(v)
                        && !self.allocator.backing_store.contains_key(v)
                        && self.lookup_global(*v).is_none()
                });
                if let Some(v) = index {
                    found = Some(v);
                    cursor = (node + 1) % nodes;
                    break;
                }
            }
            let v = found.ok_or(AllocError::VirtualSpaceExhausted)?;
            taken.insert(v);
            out.push(v);
        }
        Ok((out, cursor))
    }

    /// Allocates `count` units to `app`, all or nothing.
    pub fn allocate(&mut self, app: &AppId, count: usize) -> Result<Vec<(VirtualAddress, PhysicalAddress)>, AllocError> {
        if count == 0 {
            return Err(AllocError::ZeroCount);
        }
        let available = self.free_units().count();
        if available < count {
            return Err(AllocError::InsufficientFreeUnits {
                requested: count,
                available,
            });
        }
        let (vaddrs, cursor) = self.pick_virtual(count)?;
        let units = self.pick_units(count)?;
        self.allocator.virtual_cursor = cursor;

        let mut out = Vec::with_capacity(count);
        for (v, loc) in vaddrs.into_iter().zip(units) {
            let p = loc.physical(0, 0);
            self.install_mapping(v, p)?;
            let unit = self.unit_mut(loc).expect("picked from free units");
            unit.reset();
            unit.state = UnitState::Allocated(app.clone());
            unit.resident = Some(v);
            self.allocator.next_token += 1;
            self.allocator.backing_store.insert(
                v,
                Image {
                    app: app.clone(),
                    token: self.allocator.next_token,
                    generation: 0,
                    location: Some(loc),
                    saved: None,
                },
            );
            self.allocator
                .apps
                .entry(app.clone())
                .or_insert_with(|| Application {
                    app_id: app.clone(),
                    holdings: BTreeSet::new(),
                })
                .holdings
                .insert(v);
            out.push((v, p));
        }
        Ok(out)
    }

    /// Releases every unit and image of `app`.
    pub fn deallocate(&mut self, app: &AppId) -> Result<Vec<VirtualAddress>, AllocError> {
        let application = self
            .allocator
            .apps
            .remove(app)
            .ok_or_else(|| AllocError::UnknownApp(app.clone()))?;
        for v in &application.holdings {
            let image = self.allocator.backing_store.remove(v).expect("held image");
            if let Some(loc) = image.location {
                self.remove_mapping(*v)?;
                self.unit_mut(loc).expect("image location").reset();
            }
        }
        Ok(application.holdings.into_iter().collect())
    }

    /// Moves the image behind `v` to the free unit `dest`.
    pub fn swap_unit(&mut self, v: VirtualAddress, dest: Location) -> Result<(PhysicalAddress, PhysicalAddress), AllocError> {
        let image = self.allocator.backing_store.get(&v).ok_or(AllocError::NotMapped(v))?;
        let from = image.location.ok_or(AllocError::NotMapped(v))?;
        let app = image.app.clone();
        let generation = image.generation + 1;
        if !self.unit(dest).is_some_and(|u| u.is_free()) {
            return Err(AllocError::DestinationNotFree(dest));
        }
        if u64::from(generation) > self.config.max_generation() {
            return Err(AllocError::GenerationExhausted(v));
        }
        let old = self.lookup_global(v).ok_or(AllocError::NotMapped(v))?;
        let new = dest.physical(old.end_index, generation);
        self.replace_mapping(v, new)?;

        let memory = self.unit_mut(from).expect("source unit").take_memory();
        self.unit_mut(from).expect("source unit").reset();
        let unit = self.unit_mut(dest).expect("checked above");
        unit.restore_memory(memory);
        unit.state = UnitState::Allocated(app);
        unit.resident = Some(v);
        let image = self.allocator.backing_store.get_mut(&v).expect("checked above");
        image.generation = generation;
        image.location = Some(dest);
        Ok((old, new))
    }

    /// Drops the mapping and frees the unit, keeping the image.
    pub fn evict(&mut self, v: VirtualAddress) -> Result<PhysicalAddress, AllocError> {
        let loc = self
            .allocator
            .backing_store
            .get(&v)
            .and_then(|img| img.location)
            .ok_or(AllocError::NotMapped(v))?;
        let old = self.remove_mapping(v)?;
        let unit = self.unit_mut(loc).expect("image location");
        let memory = unit.take_memory();
        unit.reset();
        let image = self.allocator.backing_store.get_mut(&v).expect("checked above");
        image.location = None;
        image.saved = Some(memory);
        Ok(old)
    }

    /// Brings an evicted image back onto `dest` with the next generation.
    pub fn reload(&mut self, v: VirtualAddress, dest: Location) -> Result<PhysicalAddress, AllocError> {
        let image = self.allocator.backing_store.get(&v).ok_or(AllocError::NotMapped(v))?;
        if image.location.is_some() {
            return Err(AllocError::NotEvicted(v));
        }
        let generation = image.generation + 1;
        let app = image.app.clone();
        if !self.unit(dest).is_some_and(|u| u.is_free()) {
            return Err(AllocError::DestinationNotFree(dest));
        }
        if u64::from(generation) > self.config.max_generation() {
            return Err(AllocError::GenerationExhausted(v));
        }
        let p = dest.physical(0, generation);
        self.install_mapping(v, p)?;
        let image = self.allocator.backing_store.get_mut(&v).expect("checked above");
        image.generation = generation;
        image.location = Some(dest);
        let memory = image.saved.take();
        let unit = self.unit_mut(dest).expect("checked above");
        if let Some(memory) = memory {
            unit.restore_memory(memory);
        }
        unit.state = UnitState::Allocated(app);
        unit.resident = Some(v);
        Ok(p)
    }

    /// Unbinds a channel end in the saved memory of an evicted image.
    pub(crate) fn clear_saved_end(&mut self, v: VirtualAddress, end: u32) {
        let saved = self.allocator.backing_store.get_mut(&v).and_then(|img| img.saved.as_mut());
        if let Some(e) = saved.and_then(|m| m.ends.get_mut(end as usize)) {
            *e = ChannelEnd::default();
        }
    }
}

impl Simulation {
    /// Waits for in-flight activity to drain, then allocates.
    pub fn allocate(&mut self, app: &AppId, count: usize) -> Result<Vec<VirtualAddress>, SimError> {
        self.run_until_quiescent()?;
        match self.fabric.allocate(app, count) {
            Ok(grants) => {
                for (v, p) in &grants {
                    self.emit(
                        TraceKind::Alloc,
                        [
                            ("app", json!(app.0)),
                            ("paddr", self.p(*p)),
                            ("unit", Self::loc((*p).into())),
                            ("vaddr", self.v(*v)),
                        ],
                    );
                }
                Ok(grants.into_iter().map(|(v, _)| v).collect())
            }
            Err(e) => {
                self.error("allocate", e.to_string());
                Err(e.into())
            }
        }
    }

    pub fn deallocate(&mut self, app: &AppId) -> Result<(), SimError> {
        self.run_until_quiescent()?;
        match self.fabric.deallocate(app) {
            Ok(released) => {
                for c in self.connections.values_mut() {
                    if released.contains(&c.src) && c.state == ConnState::Open {
                        c.state = ConnState::Closed;
                    }
                }
                for v in released {
                    self.actors.remove(&v);
                    self.emit(TraceKind::Dealloc, [("app", json!(app.0)), ("vaddr", self.v(v))]);
                }
                Ok(())
            }
            Err(e) => {
                self.error("deallocate", e.to_string());
                Err(e.into())
            }
        }
    }

    pub fn swap_unit(&mut self, v: VirtualAddress, dest: Location) -> Result<SwapRecord, SimError> {
        self.run_until_quiescent()?;
        match self.fabric.swap_unit(v, dest) {
            Ok((old, new)) => {
                self.emit(
                    TraceKind::Swap,
                    [
                        ("from", Self::loc(old.into())),
                        ("new_paddr", self.p(new)),
                        ("old_paddr", self.p(old)),
                        ("to", Self::loc(dest)),
                        ("vaddr", self.v(v)),
                    ],
                );
                Ok(SwapRecord {
                    vaddr: v,
                    old_paddr: old,
                    new_paddr: new,
                    tick: self.now(),
                })
            }
            Err(e) => {
                self.error("swap", e.to_string());
                Err(e.into())
            }
        }
    }

    pub fn evict(&mut self, v: VirtualAddress) -> Result<(), SimError> {
        self.run_until_quiescent()?;
        match self.fabric.evict(v) {
            Ok(old) => {
                self.emit(
                    TraceKind::Evict,
                    [("old_paddr", self.p(old)), ("unit", Self::loc(old.into())), ("vaddr", self.v(v))],
                );
                Ok(())
            }
            Err(e) => {
                self.error("evict", e.to_string());
                Err(e.into())
            }
        }
    }
}
