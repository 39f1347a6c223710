//! Translation tables and the resolution protocol.
//!
//! Every interconnect node owns the table for the virtual addresses whose
//! node part names it. Three strategies decide where a lookup is answered:
//!
//! * `distributed`: at the responsible node itself;
//! * `central`: at one facility node holding a global view of all tables;
//! * `explicit`: at a dedicated translator unit, reached by an ordinary
//!   channel message, with the same global view.
//!
//! All three read the same ground truth, so they agree on every outcome and
//! differ only in traffic and latency.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::addressing::{PhysicalAddress, VirtualAddress};
use crate::channels::{ConnId, SendId};
use crate::fabric::{Fabric, Location, NodeId};
use crate::faults::{FaultMode, HandlerOutcome, TranslationFault};
use crate::sim::{Completion, Event, MsgKind, ResolutionRecord, SimError, Simulation, Tick, Ticket, TraceKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranslationError {
    #[error("table entry for {0} is already occupied")]
    EntryOccupied(VirtualAddress),
    #[error("{0} is not mapped")]
    NotMapped(VirtualAddress),
    #[error("index {index} outside table of size {size}")]
    IndexOutOfRange { index: u64, size: u64 },
    #[error("invalid physical address {0}")]
    InvalidPhysical(PhysicalAddress),
    #[error("invalid virtual address {0}")]
    InvalidVirtual(VirtualAddress),
    #[error("{paddr} is already the target of {owner}")]
    Aliased {
        paddr: PhysicalAddress,
        owner: VirtualAddress,
    },
}

/// Maps table indices to physical addresses. Stored sparsely; every index
/// below `size` is addressable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslationTable {
    size: u64,
    entries: BTreeMap<u32, PhysicalAddress>,
}

impl TranslationTable {
    pub fn new(size: u64) -> Self {
        Self {
            size,
            entries: BTreeMap::new(),
        }
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn lookup(&self, index: u64) -> Result<Option<PhysicalAddress>, TranslationError> {
        if index >= self.size {
            return Err(TranslationError::IndexOutOfRange {
                index,
                size: self.size,
            });
        }
        Ok(self.entries.get(&(index as u32)).copied())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, PhysicalAddress)> + '_ {
        self.entries.iter().map(|(i, p)| (*i, *p))
    }

    pub(crate) fn set(&mut self, index: u32, p: PhysicalAddress) {
        self.entries.insert(index, p);
    }

    pub(crate) fn clear(&mut self, index: u32) -> Option<PhysicalAddress> {
        self.entries.remove(&index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Explicit,
    Central,
    Distributed,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [StrategyKind::Explicit, StrategyKind::Central, StrategyKind::Distributed];

    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyKind::Explicit => "explicit",
            StrategyKind::Central => "central",
            StrategyKind::Distributed => "distributed",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "explicit" => Ok(StrategyKind::Explicit),
            "central" => Ok(StrategyKind::Central),
            "distributed" => Ok(StrategyKind::Distributed),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TranslationStrategy {
    /// A dedicated translator unit answers. `None` picks the default unit
    /// when the fabric is built.
    Explicit { translator: Option<Location> },
    Central { facility: NodeId },
    Distributed,
}

impl TranslationStrategy {
    pub fn kind(&self) -> StrategyKind {
        match self {
            TranslationStrategy::Explicit { .. } => StrategyKind::Explicit,
            TranslationStrategy::Central { .. } => StrategyKind::Central,
            TranslationStrategy::Distributed => StrategyKind::Distributed,
        }
    }

    pub fn from_kind(kind: StrategyKind, facility: NodeId, translator: Option<Location>) -> Self {
        match kind {
            StrategyKind::Explicit => TranslationStrategy::Explicit { translator },
            StrategyKind::Central => TranslationStrategy::Central { facility },
            StrategyKind::Distributed => TranslationStrategy::Distributed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReqId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolutionRequest {
    pub request_id: ReqId,
    pub requester: Location,
    pub vaddr: VirtualAddress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolutionResponse {
    pub request_id: ReqId,
    pub outcome: Option<PhysicalAddress>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolveOutcome {
    Resolved(PhysicalAddress),
    Fault(TranslationFault),
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Purpose {
    Probe(Ticket),
    Establish(ConnId),
    Rebind(SendId),
}

#[derive(Debug)]
pub(crate) struct Resolution {
    request: ResolutionRequest,
    purpose: Purpose,
    server: NodeId,
    started: Tick,
    retried: bool,
    response: Option<ResolutionResponse>,
    notice: Option<HandlerOutcome>,
}

impl Fabric {
    fn check_virtual(&self, v: VirtualAddress) -> Result<(), TranslationError> {
        if v.node_part >= self.node_count() || u64::from(v.index_part) >= self.config.table_size() {
            return Err(TranslationError::InvalidVirtual(v));
        }
        Ok(())
    }

    fn check_target(&self, v: VirtualAddress, p: PhysicalAddress) -> Result<(), TranslationError> {
        if !self.valid_physical(p) {
            return Err(TranslationError::InvalidPhysical(p));
        }
        match self.owners.get(&p.endpoint()) {
            Some(owner) if *owner != v => Err(TranslationError::Aliased { paddr: p, owner: *owner }),
            _ => Ok(()),
        }
    }

    /// Installs `v -> p` at the responsible node's table.
    pub fn install_mapping(&mut self, v: VirtualAddress, p: PhysicalAddress) -> Result<(), TranslationError> {
        self.check_virtual(v)?;
        if self.lookup_global(v).is_some() {
            return Err(TranslationError::EntryOccupied(v));
        }
        self.check_target(v, p)?;
        self.nodes[v.node_part as usize].table.set(v.index_part, p);
        self.owners.insert(p.endpoint(), v);
        Ok(())
    }

    /// Points an existing mapping at a new physical address (swap and reload).
    pub fn replace_mapping(
        &mut self,
        v: VirtualAddress,
        p: PhysicalAddress,
    ) -> Result<PhysicalAddress, TranslationError> {
        self.check_virtual(v)?;
        let old = self.lookup_global(v).ok_or(TranslationError::NotMapped(v))?;
        self.check_target(v, p)?;
        self.owners.remove(&old.endpoint());
        self.nodes[v.node_part as usize].table.set(v.index_part, p);
        self.owners.insert(p.endpoint(), v);
        Ok(old)
    }

    pub fn remove_mapping(&mut self, v: VirtualAddress) -> Result<PhysicalAddress, TranslationError> {
        self.check_virtual(v)?;
        let old = self.nodes[v.node_part as usize]
            .table
            .clear(v.index_part)
            .ok_or(TranslationError::NotMapped(v))?;
        self.owners.remove(&old.endpoint());
        Ok(old)
    }

    /// Ground-truth lookup shared by every strategy. Addresses whose node
    /// part names no existing node never resolve.
    pub fn lookup_global(&self, v: VirtualAddress) -> Option<PhysicalAddress> {
        let node = self.nodes.get(v.node_part as usize)?;
        node.table.lookup(v.index_part.into()).ok().flatten()
    }

    /// Virtual address currently mapped to the endpoint of `p`, if any.
    pub fn owner_of(&self, p: PhysicalAddress) -> Option<VirtualAddress> {
        self.owners.get(&p.endpoint()).copied()
    }

    /// Node that answers resolutions of `v` issued from `requester`.
    pub fn answering_node(&self, requester: Location, v: VirtualAddress) -> NodeId {
        match self.strategy {
            TranslationStrategy::Distributed if v.node_part < self.node_count() => v.node_part,
            // no such node: the request never leaves the requester
            TranslationStrategy::Distributed => requester.node,
            TranslationStrategy::Central { facility } => facility,
            TranslationStrategy::Explicit { translator } => translator.expect("translator reserved at build").node,
        }
    }
}

impl Simulation {
    /// Resolves `vaddr` on behalf of `requester` and runs until the
    /// outcome is known.
    pub fn resolve(&mut self, requester: Location, vaddr: VirtualAddress) -> Result<ResolveOutcome, SimError> {
        let ticket = self.submit_resolve(requester, vaddr)?;
        self.run_until_quiescent()?;
        match self.take_completion(ticket) {
            Some(Completion::Resolve(out)) => Ok(out),
            other => unreachable!("resolution ticket completed as {other:?}"),
        }
    }

    pub fn submit_resolve(&mut self, requester: Location, vaddr: VirtualAddress) -> Result<Ticket, SimError> {
        self.check_requester(requester)?;
        let ticket = self.ticket();
        self.start_resolution(requester, vaddr, Purpose::Probe(ticket), None);
        Ok(ticket)
    }

    pub(crate) fn start_resolution(
        &mut self,
        requester: Location,
        vaddr: VirtualAddress,
        purpose: Purpose,
        retry_of: Option<ReqId>,
    ) -> ReqId {
        let id = ReqId(self.ids.next());
        let server = self.fabric.answering_node(requester, vaddr);
        self.stats.resolution_requests += 1;
        self.emit(
            TraceKind::ResolveReq,
            [
                ("req", json!(id.0)),
                ("requester", Self::loc(requester)),
                ("retry_of", json!(retry_of.map(|r| r.0))),
                ("server", json!(server)),
                ("strategy", json!(self.fabric.strategy.kind().as_str())),
                ("vaddr", self.v(vaddr)),
            ],
        );
        self.resolutions.insert(
            id,
            Resolution {
                request: ResolutionRequest {
                    request_id: id,
                    requester,
                    vaddr,
                },
                purpose,
                server,
                started: self.now(),
                retried: retry_of.is_some(),
                response: None,
                notice: None,
            },
        );
        let path = self.fabric.route(requester.node, server);
        self.transmit(MsgKind::ResolveRequest(id), path);
        id
    }

    /// The request reached its answering node; queue it for lookup.
    pub(crate) fn on_request_arrival(&mut self, req: ReqId) {
        let server = self.resolutions[&req].server;
        let cost = self.fabric.options.lookup_cost;
        let now = self.now();
        let node = &mut self.fabric.nodes[server as usize];
        let start = node.lookup_free_at.max(now);
        node.lookup_free_at = start + cost;
        self.engine.schedule_after(start + cost - now, Event::LookupDone(req));
    }

    pub(crate) fn on_lookup_done(&mut self, req: ReqId) {
        let (request, server) = {
            let r = &self.resolutions[&req];
            (r.request, r.server)
        };
        self.fabric.nodes[server as usize].counters.resolutions_served += 1;
        let outcome = self.fabric.lookup_global(request.vaddr);
        self.resolution_log.push(ResolutionRecord {
            requester: request.requester,
            vaddr: request.vaddr,
            resolved: outcome,
        });
        match outcome {
            Some(p) => self.emit(
                TraceKind::ResolveOk,
                [
                    ("node", json!(server)),
                    ("paddr", self.p(p)),
                    ("req", json!(req.0)),
                    ("vaddr", self.v(request.vaddr)),
                ],
            ),
            None => self.emit(
                TraceKind::ResolveMiss,
                [("node", json!(server)), ("req", json!(req.0)), ("vaddr", self.v(request.vaddr))],
            ),
        }
        self.resolutions.get_mut(&req).expect("live").response = Some(ResolutionResponse {
            request_id: req,
            outcome,
        });
        if outcome.is_none() && self.fabric.options.fault_mode == FaultMode::SignalHandler {
            self.raise_signal(server, request.vaddr, request.requester, Some(req));
        }
        let path = self.fabric.route(server, request.requester.node);
        self.transmit(MsgKind::ResolveResponse(req), path);
    }

    pub(crate) fn on_response_arrival(&mut self, req: ReqId) {
        let now = self.now();
        let (started, outcome) = {
            let r = &self.resolutions[&req];
            (r.started, r.response.expect("answered").outcome)
        };
        self.stats.resolution_latencies.push(now - started);
        match outcome {
            Some(p) => self.finish_resolution(req, Ok(p)),
            None if self.fabric.options.fault_mode == FaultMode::ErrorAtRequester => {
                self.finish_resolution(req, Err(TranslationFault::Miss))
            }
            None => {
                if self.resolutions[&req].notice.is_some() {
                    self.act_on_notice(req);
                }
            }
        }
    }

    /// The handler's verdict reached the requester.
    pub(crate) fn on_notice(&mut self, req: ReqId, outcome: HandlerOutcome) {
        let Some(r) = self.resolutions.get_mut(&req) else {
            return;
        };
        r.notice = Some(outcome);
        if r.response.is_some() {
            self.act_on_notice(req);
        }
    }

    fn act_on_notice(&mut self, req: ReqId) {
        let r = self.resolutions.remove(&req).expect("live");
        match r.notice.expect("notice") {
            HandlerOutcome::Reloaded(_) if !r.retried => {
                self.emit(
                    TraceKind::Retry,
                    [
                        ("req", json!(req.0)),
                        ("requester", Self::loc(r.request.requester)),
                        ("vaddr", self.v(r.request.vaddr)),
                    ],
                );
                self.start_resolution(r.request.requester, r.request.vaddr, r.purpose, Some(req));
            }
            HandlerOutcome::Reloaded(_) => self.finish_purpose(r.purpose, Err(TranslationFault::RetryFailed)),
            HandlerOutcome::Unresolvable => self.finish_purpose(r.purpose, Err(TranslationFault::Unresolvable)),
        }
    }

    fn finish_resolution(&mut self, req: ReqId, result: Result<PhysicalAddress, TranslationFault>) {
        let r = self.resolutions.remove(&req).expect("live");
        self.finish_purpose(r.purpose, result);
    }

    fn finish_purpose(&mut self, purpose: Purpose, result: Result<PhysicalAddress, TranslationFault>) {
        match purpose {
            Purpose::Probe(ticket) => {
                let out = match result {
                    Ok(p) => ResolveOutcome::Resolved(p),
                    Err(f) => {
                        self.stats.faults += 1;
                        self.fault_log.push(format!("resolve: {f}"));
                        ResolveOutcome::Fault(f)
                    }
                };
                self.complete(ticket, Completion::Resolve(out));
            }
            Purpose::Establish(conn) => self.finish_establish(conn, result),
            Purpose::Rebind(send) => self.finish_rebind(send, result),
        }
    }
}
