//! Connections over virtual references.
//!
//! A connection binds a source channel end to the physical address a
//! resolution returned for the destination's virtual address. Payloads are
//! checked at the destination: if the endpoint no longer carries the bound
//! mapping (the image moved, or the generation changed) the sender is told
//! via a nack and, with `auto_rebind`, resolves again and retransmits once.
//!
//! Operations from one source image run one at a time in submission order;
//! different sources proceed concurrently.

use std::collections::BTreeMap;
use std::fmt;

use serde_json::json;
use thiserror::Error;

use crate::addressing::{PhysicalAddress, VirtualAddress};
use crate::fabric::{Delivery, Location};
use crate::faults::TranslationFault;
use crate::sim::{Completion, DeliveryRecord, MsgKind, SimError, Simulation, Tick, Ticket, TraceKind};
use crate::translation::Purpose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConnId(pub u64);

impl fmt::Display for ConnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SendId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("source channel end is already bound")]
    EndInUse,
    #[error("channel end index out of range")]
    InvalidEnd,
    #[error("source image is not resident")]
    SourceNotResident,
    #[error("translation fault: {0}")]
    Translation(TranslationFault),
    #[error("unknown connection")]
    UnknownConnection,
    #[error("connection already closed")]
    AlreadyClosed,
    #[error("connection not established")]
    NotEstablished,
}

impl ChannelError {
    pub fn reason(&self) -> String {
        match self {
            ChannelError::EndInUse => "end_in_use".into(),
            ChannelError::InvalidEnd => "invalid_end".into(),
            ChannelError::SourceNotResident => "source_not_resident".into(),
            ChannelError::Translation(f) => f.to_string(),
            ChannelError::UnknownConnection => "unknown_connection".into(),
            ChannelError::AlreadyClosed => "already_closed".into(),
            ChannelError::NotEstablished => "not_established".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum EndBinding {
    #[default]
    Unconfigured,
    Bound {
        conn: ConnId,
        paddr: PhysicalAddress,
        dest: VirtualAddress,
    },
}

/// One channel end of a computing unit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChannelEnd {
    pub binding: EndBinding,
}

impl ChannelEnd {
    pub fn is_bound(&self) -> bool {
        matches!(self.binding, EndBinding::Bound { .. })
    }
}

/// Per-unit memo of successful resolutions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResolutionCache {
    entries: BTreeMap<VirtualAddress, PhysicalAddress>,
}

impl ResolutionCache {
    pub fn get(&self, v: VirtualAddress) -> Option<PhysicalAddress> {
        self.entries.get(&v).copied()
    }

    pub fn insert(&mut self, v: VirtualAddress, p: PhysicalAddress) {
        self.entries.insert(v, p);
    }

    pub fn invalidate(&mut self, v: VirtualAddress) -> bool {
        self.entries.remove(&v).is_some()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnState {
    Pending,
    Open,
    Failed(ChannelError),
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Connection {
    pub id: ConnId,
    /// Image owning the source end; its physical location follows swaps.
    pub src: VirtualAddress,
    pub src_end: u32,
    pub dest: VirtualAddress,
    pub bound: Option<PhysicalAddress>,
    pub established_tick: Option<Tick>,
    pub state: ConnState,
    next_seq: u64,
    started: Tick,
    ticket: Option<Ticket>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Payload {
    pub bytes: Vec<u8>,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SendOutcome {
    Delivered { unit: Location, latency: Tick },
    DeliveredAfterRebind { unit: Location, latency: Tick },
    StaleEndpoint,
    Overflow,
    Fault(ChannelError),
}

impl SendOutcome {
    pub fn is_delivered(&self) -> bool {
        matches!(self, SendOutcome::Delivered { .. } | SendOutcome::DeliveredAfterRebind { .. })
    }
}

#[derive(Debug)]
pub(crate) struct SendState {
    pub conn: ConnId,
    pub seq: u64,
    payload: Vec<u8>,
    started: Tick,
    /// Physical address the payload is currently travelling to.
    target: PhysicalAddress,
    src_node: u32,
    rebinds: u32,
    cache_invalidated: bool,
    ticket: Ticket,
}

#[derive(Debug, Clone)]
pub(crate) enum ChannelOp {
    Establish(ConnId),
    Send { conn: ConnId, bytes: Vec<u8>, ticket: Ticket },
    Close { conn: ConnId, ticket: Ticket },
}

impl Simulation {
    /// Establishes a connection and runs until it is bound or failed.
    pub fn establish(&mut self, src: VirtualAddress, end: u32, dest: VirtualAddress) -> Result<Connection, SimError> {
        let (conn, ticket) = self.submit_establish(src, end, dest);
        self.run_until_quiescent()?;
        match self.take_completion(ticket) {
            Some(Completion::Establish(Ok(_))) => Ok(self.connections[&conn].clone()),
            Some(Completion::Establish(Err(e))) => Err(e.into()),
            other => unreachable!("establish ticket completed as {other:?}"),
        }
    }

    pub fn send(&mut self, conn: ConnId, bytes: impl Into<Vec<u8>>) -> Result<SendOutcome, SimError> {
        let ticket = self.submit_send(conn, bytes)?;
        self.run_until_quiescent()?;
        match self.take_completion(ticket) {
            Some(Completion::Send(out)) => Ok(out),
            other => unreachable!("send ticket completed as {other:?}"),
        }
    }

    pub fn close(&mut self, conn: ConnId) -> Result<(), SimError> {
        let ticket = self.submit_close(conn)?;
        self.run_until_quiescent()?;
        match self.take_completion(ticket) {
            Some(Completion::Close(r)) => r.map_err(Into::into),
            other => unreachable!("close ticket completed as {other:?}"),
        }
    }

    /// Queues an establish on the source's actor. The connection id is
    /// usable right away; sends queued behind it wait for the binding.
    pub fn submit_establish(&mut self, src: VirtualAddress, end: u32, dest: VirtualAddress) -> (ConnId, Ticket) {
        let id = ConnId(self.ids.next());
        let ticket = self.ticket();
        self.connections.insert(
            id,
            Connection {
                id,
                src,
                src_end: end,
                dest,
                bound: None,
                established_tick: None,
                state: ConnState::Pending,
                next_seq: 0,
                started: 0,
                ticket: Some(ticket),
            },
        );
        self.enqueue(src, ChannelOp::Establish(id));
        (id, ticket)
    }

    pub fn submit_send(&mut self, conn: ConnId, bytes: impl Into<Vec<u8>>) -> Result<Ticket, SimError> {
        let src = self.connections.get(&conn).ok_or(ChannelError::UnknownConnection)?.src;
        let ticket = self.ticket();
        self.enqueue(
            src,
            ChannelOp::Send {
                conn,
                bytes: bytes.into(),
                ticket,
            },
        );
        Ok(ticket)
    }

    pub fn submit_close(&mut self, conn: ConnId) -> Result<Ticket, SimError> {
        let src = self.connections.get(&conn).ok_or(ChannelError::UnknownConnection)?.src;
        let ticket = self.ticket();
        self.enqueue(src, ChannelOp::Close { conn, ticket });
        Ok(ticket)
    }

    fn enqueue(&mut self, actor: VirtualAddress, op: ChannelOp) {
        self.actors.entry(actor).or_default().queue.push_back(op);
        self.pump(actor);
    }

    /// Starts queued operations until one has to wait for the network.
    fn pump(&mut self, actor: VirtualAddress) {
        loop {
            let Some(a) = self.actors.get_mut(&actor) else {
                return;
            };
            if a.busy {
                return;
            }
            let Some(op) = a.queue.pop_front() else {
                return;
            };
            a.busy = true;
            let finished = match op {
                ChannelOp::Establish(conn) => self.start_establish(conn),
                ChannelOp::Send { conn, bytes, ticket } => self.start_send(conn, bytes, ticket),
                ChannelOp::Close { conn, ticket } => {
                    let r = self.do_close(conn);
                    self.complete(ticket, Completion::Close(r));
                    true
                }
            };
            if !finished {
                return;
            }
            if let Some(a) = self.actors.get_mut(&actor) {
                a.busy = false;
            }
        }
    }

    fn op_done(&mut self, actor: VirtualAddress) {
        if let Some(a) = self.actors.get_mut(&actor) {
            a.busy = false;
        }
        self.pump(actor);
    }

    /// Returns true when the establish finished without network activity.
    fn start_establish(&mut self, id: ConnId) -> bool {
        let now = self.now();
        let c = self.connections.get_mut(&id).expect("live connection");
        c.started = now;
        let (src, end, dest) = (c.src, c.src_end, c.dest);
        let Some(loc) = self.fabric.location_of(src) else {
            self.fail_establish(id, ChannelError::SourceNotResident);
            return true;
        };
        let unit = self.fabric.unit(loc).expect("resident location");
        match unit.ends.get(end as usize) {
            None => {
                self.fail_establish(id, ChannelError::InvalidEnd);
                return true;
            }
            Some(e) if e.is_bound() => {
                self.fail_establish(id, ChannelError::EndInUse);
                return true;
            }
            Some(_) => {}
        }
        if self.fabric.options.cache_enabled {
            if let Some(p) = unit.cache.get(dest) {
                self.bind(id, loc, p, true, 0);
                return true;
            }
        }
        self.start_resolution(loc, dest, Purpose::Establish(id), None);
        false
    }

    pub(crate) fn finish_establish(&mut self, id: ConnId, result: Result<PhysicalAddress, TranslationFault>) {
        let src = self.connections[&id].src;
        match (result, self.fabric.location_of(src)) {
            (Ok(p), Some(loc)) => {
                let latency = self.now() - self.connections[&id].started;
                self.bind(id, loc, p, false, latency);
            }
            (Ok(_), None) => self.fail_establish(id, ChannelError::SourceNotResident),
            (Err(f), _) => self.fail_establish(id, ChannelError::Translation(f)),
        }
        self.op_done(src);
    }

    fn bind(&mut self, id: ConnId, loc: Location, p: PhysicalAddress, cached: bool, latency: Tick) {
        let now = self.now();
        let cache_enabled = self.fabric.options.cache_enabled;
        let c = self.connections.get_mut(&id).expect("live connection");
        c.bound = Some(p);
        c.state = ConnState::Open;
        c.established_tick = Some(now);
        let (src, end, dest, ticket) = (c.src, c.src_end, c.dest, c.ticket.take());
        let unit = self.fabric.unit_mut(loc).expect("resident location");
        unit.ends[end as usize].binding = EndBinding::Bound { conn: id, paddr: p, dest };
        if cache_enabled {
            unit.cache.insert(dest, p);
        }
        self.emit(
            TraceKind::Establish,
            [
                ("cached", json!(cached)),
                ("conn", json!(id.0)),
                ("dest", self.v(dest)),
                ("end", json!(end)),
                ("latency", json!(latency)),
                ("paddr", self.p(p)),
                ("src", self.v(src)),
                ("unit", Self::loc(loc)),
            ],
        );
        if let Some(t) = ticket {
            self.complete(t, Completion::Establish(Ok(id)));
        }
    }

    fn fail_establish(&mut self, id: ConnId, err: ChannelError) {
        let c = self.connections.get_mut(&id).expect("live connection");
        c.state = ConnState::Failed(err);
        let (src, end, dest, ticket) = (c.src, c.src_end, c.dest, c.ticket.take());
        self.stats.faults += 1;
        self.fault_log.push(format!("establish {id}: {}", err.reason()));
        self.emit(
            TraceKind::EstablishFault,
            [
                ("conn", json!(id.0)),
                ("dest", self.v(dest)),
                ("end", json!(end)),
                ("reason", json!(err.reason())),
                ("src", self.v(src)),
            ],
        );
        if let Some(t) = ticket {
            self.complete(t, Completion::Establish(Err(err)));
        }
    }

    fn start_send(&mut self, id: ConnId, bytes: Vec<u8>, ticket: Ticket) -> bool {
        let c = self.connections.get_mut(&id).expect("submitted on a known connection");
        let seq = c.next_seq;
        c.next_seq += 1;
        let (src, state, bound) = (c.src, c.state, c.bound);
        self.emit(
            TraceKind::Send,
            [
                ("conn", json!(id.0)),
                ("data", json!(hex(&bytes))),
                ("len", json!(bytes.len())),
                ("seq", json!(seq)),
            ],
        );
        let refuse = match state {
            ConnState::Open => None,
            ConnState::Closed => Some(ChannelError::AlreadyClosed),
            ConnState::Pending | ConnState::Failed(_) => Some(ChannelError::NotEstablished),
        };
        let loc = self.fabric.location_of(src);
        let refuse = refuse.or(loc.is_none().then_some(ChannelError::SourceNotResident));
        if let Some(err) = refuse {
            self.send_fault_record(id, seq, err);
            self.complete(ticket, Completion::Send(SendOutcome::Fault(err)));
            return true;
        }
        let (loc, target) = (loc.expect("checked"), bound.expect("open connection is bound"));
        let send = SendId(self.ids.next());
        self.sends.insert(
            send,
            SendState {
                conn: id,
                seq,
                payload: bytes,
                started: self.now(),
                target,
                src_node: loc.node,
                rebinds: 0,
                cache_invalidated: false,
                ticket,
            },
        );
        let path = self.fabric.route(loc.node, target.node_id);
        self.transmit(MsgKind::Payload(send), path);
        false
    }

    fn send_fault_record(&mut self, id: ConnId, seq: u64, err: ChannelError) {
        self.stats.faults += 1;
        self.fault_log.push(format!("send {id}#{seq}: {}", err.reason()));
        self.emit(
            TraceKind::SendFault,
            [("conn", json!(id.0)), ("reason", json!(err.reason())), ("seq", json!(seq))],
        );
    }

    pub(crate) fn on_payload_arrival(&mut self, send: SendId) {
        let s = &self.sends[&send];
        let (conn, seq, target) = (s.conn, s.seq, s.target);
        let dest = self.connections[&conn].dest;
        let current = self.fabric.owner_of(target) == Some(dest) && self.fabric.lookup_global(dest) == Some(target);
        if current {
            return self.deliver(send);
        }
        let s = &self.sends[&send];
        if self.fabric.options.auto_rebind && s.rebinds == 0 {
            let path = self.fabric.route(target.node_id, s.src_node);
            self.transmit(MsgKind::Nack(send), path);
            return;
        }
        let reason = if s.rebinds == 0 { "auto_rebind_off" } else { "repeated" };
        self.stats.stale += 1;
        self.fault_log.push(format!("stale {conn}#{seq}"));
        self.emit(
            TraceKind::Stale,
            [
                ("conn", json!(conn.0)),
                ("paddr", self.p(target)),
                ("reason", json!(reason)),
                ("seq", json!(seq)),
            ],
        );
        self.finish_send(send, SendOutcome::StaleEndpoint);
    }

    fn deliver(&mut self, send: SendId) {
        let now = self.now();
        let s = &self.sends[&send];
        let (conn, seq, target, rebinds, latency) = (s.conn, s.seq, s.target, s.rebinds, now - s.started);
        let from = self.connections[&conn].src;
        let unit_loc = Location::from(target);
        let item = Delivery {
            tick: now,
            conn,
            seq,
            from,
            bytes: s.payload.clone(),
        };
        let bytes = item.bytes.clone();
        let unit = self.fabric.unit_mut(unit_loc).expect("mapped target");
        if unit.mailbox.push(item).is_err() {
            self.stats.overflows += 1;
            self.fault_log.push(format!("overflow {conn}#{seq}"));
            self.emit(
                TraceKind::Overflow,
                [("conn", json!(conn.0)), ("seq", json!(seq)), ("unit", Self::loc(unit_loc))],
            );
            return self.finish_send(send, SendOutcome::Overflow);
        }
        let outcome_name = if rebinds == 0 { "delivered" } else { "delivered_after_rebind" };
        self.stats.deliveries += 1;
        self.stats.delivery_latencies.push(latency);
        self.delivery_log.push(DeliveryRecord {
            unit: unit_loc,
            conn,
            seq,
            bytes,
        });
        self.emit(
            TraceKind::Deliver,
            [
                ("conn", json!(conn.0)),
                ("latency", json!(latency)),
                ("outcome", json!(outcome_name)),
                ("paddr", self.p(target)),
                ("seq", json!(seq)),
                ("unit", Self::loc(unit_loc)),
            ],
        );
        let outcome = if rebinds == 0 {
            SendOutcome::Delivered { unit: unit_loc, latency }
        } else {
            SendOutcome::DeliveredAfterRebind { unit: unit_loc, latency }
        };
        self.finish_send(send, outcome);
    }

    /// The destination refused the payload; re-resolve from the source.
    pub(crate) fn on_nack(&mut self, send: SendId) {
        let conn = self.sends[&send].conn;
        let (src, dest) = {
            let c = &self.connections[&conn];
            (c.src, c.dest)
        };
        let Some(loc) = self.fabric.location_of(src) else {
            let seq = self.sends[&send].seq;
            self.send_fault_record(conn, seq, ChannelError::SourceNotResident);
            return self.finish_send(send, SendOutcome::Fault(ChannelError::SourceNotResident));
        };
        let invalidated = self.fabric.unit_mut(loc).expect("resident").cache.invalidate(dest);
        self.sends.get_mut(&send).expect("live send").cache_invalidated = invalidated;
        self.start_resolution(loc, dest, Purpose::Rebind(send), None);
    }

    pub(crate) fn finish_rebind(&mut self, send: SendId, result: Result<PhysicalAddress, TranslationFault>) {
        let (conn, seq, old) = {
            let s = &self.sends[&send];
            (s.conn, s.seq, s.target)
        };
        let p = match result {
            Ok(p) => p,
            Err(f) => {
                let err = ChannelError::Translation(f);
                self.send_fault_record(conn, seq, err);
                return self.finish_send(send, SendOutcome::Fault(err));
            }
        };
        let (src, end, dest) = {
            let c = self.connections.get_mut(&conn).expect("live connection");
            c.bound = Some(p);
            (c.src, c.src_end, c.dest)
        };
        let loc = self.fabric.location_of(src).expect("rebind resolved for a resident source");
        let cache_enabled = self.fabric.options.cache_enabled;
        let unit = self.fabric.unit_mut(loc).expect("resident");
        unit.ends[end as usize].binding = EndBinding::Bound { conn, paddr: p, dest };
        if cache_enabled {
            unit.cache.insert(dest, p);
        }
        let s = self.sends.get_mut(&send).expect("live send");
        s.rebinds += 1;
        s.target = p;
        s.src_node = loc.node;
        let invalidated = s.cache_invalidated;
        self.emit(
            TraceKind::Rebind,
            [
                ("cache_invalidated", json!(invalidated)),
                ("conn", json!(conn.0)),
                ("new_paddr", self.p(p)),
                ("old_paddr", self.p(old)),
                ("seq", json!(seq)),
            ],
        );
        let path = self.fabric.route(loc.node, p.node_id);
        self.transmit(MsgKind::Payload(send), path);
    }

    fn finish_send(&mut self, send: SendId, outcome: SendOutcome) {
        let s = self.sends.remove(&send).expect("live send");
        self.complete(s.ticket, Completion::Send(outcome));
        let src = self.connections[&s.conn].src;
        self.op_done(src);
    }

    fn do_close(&mut self, id: ConnId) -> Result<(), ChannelError> {
        let c = self.connections.get_mut(&id).ok_or(ChannelError::UnknownConnection)?;
        let result = match c.state {
            ConnState::Open => {
                c.state = ConnState::Closed;
                Ok((c.src, c.src_end))
            }
            ConnState::Closed => Err(ChannelError::AlreadyClosed),
            ConnState::Pending | ConnState::Failed(_) => Err(ChannelError::NotEstablished),
        };
        match result {
            Ok((src, end)) => {
                if let Some(loc) = self.fabric.location_of(src) {
                    self.fabric.unit_mut(loc).expect("resident").ends[end as usize] = ChannelEnd::default();
                } else {
                    self.fabric.clear_saved_end(src, end);
                }
                self.emit(TraceKind::Close, [("conn", json!(id.0)), ("end", json!(end)), ("src", self.v(src))]);
                Ok(())
            }
            Err(e) => {
                self.error("close", format!("{id}: {}", e.reason()));
                Err(e)
            }
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
