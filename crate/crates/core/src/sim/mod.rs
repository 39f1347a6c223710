//! Deterministic discrete-event engine driving the fabric.
//!
//! Everything that takes simulated time is a message walking a route one
//! hop per tick, a lookup at an answering node, or a reload at the handler.
//! Events are processed in `(tick, insertion seq)` order, so a run is a pure
//! function of its inputs.

mod compare;
mod engine;
mod metrics;
mod rng;
mod trace;

use std::collections::{BTreeMap, VecDeque};

use serde_json::{json, Value};
use thiserror::Error;

pub use compare::{compare_strategies, ComparisonReport, StrategySummary};
pub use engine::{Engine, NegativeDelay, Tick};
pub use metrics::Metrics;
pub use rng::SimRng;
pub use trace::{Trace, TraceKind, TraceRecord};

pub(crate) use metrics::RunStats;

use crate::addressing::{PhysicalAddress, VirtualAddress};
use crate::allocation::AllocError;
use crate::channels::{ChannelError, ChannelOp, ConnId, Connection, SendId, SendOutcome, SendState};
use crate::fabric::{Fabric, Location, NodeId, UnitState};
use crate::faults::{HandlerOutcome, HandlerState, SignalId};
use crate::translation::{ReqId, Resolution, ResolveOutcome, TranslationError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("tick limit {limit} exceeded (next event at tick {next})")]
    TickLimitExceeded { limit: Tick, next: Tick },
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Translation(#[from] TranslationError),
    #[error("requester {0} is not an allocated or handler unit")]
    InvalidRequester(Location),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Ticket(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) struct MsgId(u64);

/// Result of a submitted operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Completion {
    Resolve(ResolveOutcome),
    Establish(Result<ConnId, ChannelError>),
    Send(SendOutcome),
    Close(Result<(), ChannelError>),
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Event {
    Hop(MsgId),
    Arrive(MsgId),
    LookupDone(ReqId),
    ReloadDone(SignalId),
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum MsgKind {
    ResolveRequest(ReqId),
    ResolveResponse(ReqId),
    Payload(SendId),
    Nack(SendId),
    Signal(SignalId),
    Notice(Option<ReqId>, HandlerOutcome),
}

#[derive(Debug)]
pub(crate) struct Message {
    kind: MsgKind,
    path: Vec<NodeId>,
    pos: usize,
}

/// Per-source queue of channel operations. One runs at a time.
#[derive(Debug, Default)]
pub(crate) struct Actor {
    pub queue: VecDeque<ChannelOp>,
    pub busy: bool,
}

/// A delivered payload as seen by outcome comparisons.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DeliveryRecord {
    pub unit: Location,
    pub conn: ConnId,
    pub seq: u64,
    pub bytes: Vec<u8>,
}

/// Resolution outcome as seen by outcome comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ResolutionRecord {
    pub requester: Location,
    pub vaddr: VirtualAddress,
    pub resolved: Option<PhysicalAddress>,
}

#[derive(Debug, Default)]
pub(crate) struct Ids {
    next: u64,
}

impl Ids {
    pub fn next(&mut self) -> u64 {
        self.next += 1;
        self.next
    }
}

pub struct Simulation {
    pub(crate) fabric: Fabric,
    pub(crate) engine: Engine<Event>,
    pub(crate) trace: Trace,
    pub(crate) stats: RunStats,
    pub(crate) ids: Ids,
    messages: BTreeMap<MsgId, Message>,
    pub(crate) resolutions: BTreeMap<ReqId, Resolution>,
    pub(crate) connections: BTreeMap<ConnId, Connection>,
    pub(crate) sends: BTreeMap<SendId, SendState>,
    pub(crate) actors: BTreeMap<VirtualAddress, Actor>,
    pub(crate) handler: HandlerState,
    pub(crate) completions: BTreeMap<Ticket, Completion>,
    pub(crate) resolution_log: Vec<ResolutionRecord>,
    pub(crate) delivery_log: Vec<DeliveryRecord>,
    pub(crate) fault_log: Vec<String>,
    halted: Option<SimError>,
}

impl Simulation {
    pub fn new(fabric: Fabric) -> Self {
        Self {
            fabric,
            engine: Engine::new(),
            trace: Trace::default(),
            stats: RunStats::default(),
            ids: Ids::default(),
            messages: BTreeMap::new(),
            resolutions: BTreeMap::new(),
            connections: BTreeMap::new(),
            sends: BTreeMap::new(),
            actors: BTreeMap::new(),
            handler: HandlerState::default(),
            completions: BTreeMap::new(),
            resolution_log: Vec::new(),
            delivery_log: Vec::new(),
            fault_log: Vec::new(),
            halted: None,
        }
    }

    pub fn fabric(&self) -> &Fabric {
        &self.fabric
    }

    pub fn now(&self) -> Tick {
        self.engine.now()
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn connection(&self, id: ConnId) -> Option<&Connection> {
        self.connections.get(&id)
    }

    pub fn connections(&self) -> impl Iterator<Item = &Connection> {
        self.connections.values()
    }

    pub fn completion(&self, ticket: Ticket) -> Option<&Completion> {
        self.completions.get(&ticket)
    }

    pub fn take_completion(&mut self, ticket: Ticket) -> Option<Completion> {
        self.completions.remove(&ticket)
    }

    pub fn resolution_log(&self) -> &[ResolutionRecord] {
        &self.resolution_log
    }

    pub fn delivery_log(&self) -> &[DeliveryRecord] {
        &self.delivery_log
    }

    pub fn metrics(&self) -> Metrics {
        let counters = self.fabric.counters();
        Metrics::collect(
            self.now(),
            counters.iter().map(|c| c.messages).collect(),
            counters.iter().map(|c| c.resolutions_served).collect(),
            &self.stats,
        )
    }

    /// No event pending and no operation in progress.
    pub fn is_quiescent(&self) -> bool {
        self.engine.is_empty()
    }

    pub(crate) fn ticket(&mut self) -> Ticket {
        Ticket(self.ids.next())
    }

    pub(crate) fn emit<const N: usize>(&mut self, kind: TraceKind, fields: [(&'static str, Value); N]) {
        self.trace.push(TraceRecord {
            tick: self.engine.now(),
            kind,
            fields: fields.into_iter().collect(),
        });
    }

    pub(crate) fn v(&self, v: VirtualAddress) -> Value {
        Value::String(self.fabric.config.format_virtual(v))
    }

    pub(crate) fn p(&self, p: PhysicalAddress) -> Value {
        Value::String(self.fabric.config.format_physical(p))
    }

    pub(crate) fn loc(l: Location) -> Value {
        json!([l.node, l.slot])
    }

    pub(crate) fn error(&mut self, op: &'static str, reason: String) {
        self.stats.errors += 1;
        self.fault_log.push(format!("error {op}: {reason}"));
        self.emit(TraceKind::Error, [("op", json!(op)), ("reason", json!(reason))]);
    }

    /// Sends a message along `path`, one hop per tick.
    pub(crate) fn transmit(&mut self, kind: MsgKind, path: Vec<NodeId>) {
        let id = MsgId(self.ids.next());
        self.stats.messages += 1;
        let local = path.len() == 1;
        self.messages.insert(id, Message { kind, path, pos: 0 });
        if local {
            self.engine.schedule_after(0, Event::Arrive(id));
        } else {
            self.engine.schedule_after(1, Event::Hop(id));
        }
    }

    fn on_hop(&mut self, id: MsgId) {
        let (kind, from, to, last) = {
            let msg = self.messages.get_mut(&id).expect("live message");
            msg.pos += 1;
            (msg.kind, msg.path[msg.pos - 1], msg.path[msg.pos], msg.pos + 1 == msg.path.len())
        };
        self.stats.hops += 1;
        self.fabric.nodes[from as usize].counters.messages += 1;
        self.fabric.nodes[to as usize].counters.messages += 1;
        let (from_v, to_v) = (json!(from), json!(to));
        match kind {
            MsgKind::ResolveRequest(req) | MsgKind::ResolveResponse(req) => {
                let dir = if matches!(kind, MsgKind::ResolveRequest(_)) { "req" } else { "resp" };
                self.emit(
                    TraceKind::ResolveHop,
                    [("dir", json!(dir)), ("from", from_v), ("req", json!(req.0)), ("to", to_v)],
                );
            }
            MsgKind::Payload(send) | MsgKind::Nack(send) => {
                let name = if matches!(kind, MsgKind::Payload(_)) { "payload" } else { "nack" };
                let (conn, seq) = self.sends.get(&send).map(|s| (s.conn.0, s.seq)).unwrap_or_default();
                self.emit(
                    TraceKind::Hop,
                    [
                        ("conn", json!(conn)),
                        ("from", from_v),
                        ("msg", json!(name)),
                        ("seq", json!(seq)),
                        ("to", to_v),
                    ],
                );
            }
            MsgKind::Signal(sig) => {
                self.emit(
                    TraceKind::Hop,
                    [("from", from_v), ("msg", json!("signal")), ("sig", json!(sig.0)), ("to", to_v)],
                );
            }
            MsgKind::Notice(req, _) => {
                self.emit(
                    TraceKind::Hop,
                    [
                        ("from", from_v),
                        ("msg", json!("notice")),
                        ("req", json!(req.map(|r| r.0))),
                        ("to", to_v),
                    ],
                );
            }
        }
        if last {
            self.on_arrive(id);
        } else {
            self.engine.schedule_after(1, Event::Hop(id));
        }
    }

    fn on_arrive(&mut self, id: MsgId) {
        let msg = self.messages.remove(&id).expect("live message");
        match msg.kind {
            MsgKind::ResolveRequest(req) => self.on_request_arrival(req),
            MsgKind::ResolveResponse(req) => self.on_response_arrival(req),
            MsgKind::Payload(send) => self.on_payload_arrival(send),
            MsgKind::Nack(send) => self.on_nack(send),
            MsgKind::Signal(sig) => self.on_signal_arrival(sig),
            MsgKind::Notice(req, outcome) => {
                if let Some(req) = req {
                    self.on_notice(req, outcome);
                }
            }
        }
    }

    fn dispatch(&mut self, event: Event) {
        match event {
            Event::Hop(id) => self.on_hop(id),
            Event::Arrive(id) => self.on_arrive(id),
            Event::LookupDone(req) => self.on_lookup_done(req),
            Event::ReloadDone(sig) => self.on_reload_done(sig),
        }
    }

    fn check_limit(&mut self, next: Tick) -> Result<(), SimError> {
        let limit = self.fabric.options.tick_limit;
        if next > limit {
            let err = SimError::TickLimitExceeded { limit, next };
            self.halted = Some(err.clone());
            return Err(err);
        }
        Ok(())
    }

    /// Processes one event. Returns `false` when the queue is empty.
    pub fn step(&mut self) -> Result<bool, SimError> {
        if let Some(err) = &self.halted {
            return Err(err.clone());
        }
        let Some(next) = self.engine.peek_time() else {
            return Ok(false);
        };
        self.check_limit(next)?;
        let (_, event) = self.engine.pop().expect("peeked");
        self.dispatch(event);
        Ok(true)
    }

    pub fn run_until_quiescent(&mut self) -> Result<(), SimError> {
        while self.step()? {}
        Ok(())
    }

    /// Processes every event strictly before `t`, then moves the clock to `t`.
    pub fn run_until(&mut self, t: Tick) -> Result<(), SimError> {
        if let Some(err) = &self.halted {
            return Err(err.clone());
        }
        while self.engine.peek_time().is_some_and(|next| next < t) {
            self.step()?;
        }
        self.check_limit(t)?;
        self.engine.advance_to(t);
        Ok(())
    }

    pub fn halted(&self) -> Option<&SimError> {
        self.halted.as_ref()
    }

    pub(crate) fn complete(&mut self, ticket: Ticket, c: Completion) {
        self.completions.insert(ticket, c);
    }

    pub(crate) fn check_requester(&self, loc: Location) -> Result<(), SimError> {
        match self.fabric.unit(loc).map(|u| &u.state) {
            Some(UnitState::Allocated(_)) | Some(UnitState::Handler) => Ok(()),
            _ => Err(SimError::InvalidRequester(loc)),
        }
    }

    /// Freezes the run into its observable results.
    pub fn finish(self) -> RunResult {
        let metrics = self.metrics();
        let mut resolutions = self.resolution_log;
        resolutions.sort();
        let mut deliveries = self.delivery_log;
        deliveries.sort();
        let mut faults = self.fault_log;
        faults.sort();
        let bindings = self
            .connections
            .values()
            .map(|c| (c.id, c.bound))
            .collect();
        RunResult {
            final_tick: self.engine.now(),
            trace: self.trace,
            metrics,
            resolutions,
            deliveries,
            bindings,
            faults,
            error: self.halted,
        }
    }
}

/// Immutable outcome of a run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub final_tick: Tick,
    pub trace: Trace,
    pub metrics: Metrics,
    /// Sorted multiset of resolution outcomes.
    pub resolutions: Vec<ResolutionRecord>,
    /// Sorted multiset of deliveries.
    pub deliveries: Vec<DeliveryRecord>,
    /// Final bound endpoint per connection.
    pub bindings: Vec<(ConnId, Option<PhysicalAddress>)>,
    /// Sorted descriptions of every failed operation.
    pub faults: Vec<String>,
    pub error: Option<SimError>,
}

impl RunResult {
    pub fn terminal_faults(&self) -> u64 {
        self.metrics.terminal_faults()
    }
}
