//! Failed translations and the handler unit that repairs them.
//!
//! Under [`FaultMode::SignalHandler`] the node whose lookup missed sends an
//! exception signal to the handler unit. The handler works through signals
//! one at a time in arrival order: if the backing store still holds an image
//! for the address it reloads it onto the lowest free unit and tells the
//! requester to retry; otherwise the requester gets a terminal fault.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::addressing::{PhysicalAddress, VirtualAddress};
use crate::fabric::{Location, NodeId};
use crate::sim::{Event, MsgKind, Simulation, Tick, TraceKind};
use crate::translation::ReqId;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    #[default]
    ErrorAtRequester,
    SignalHandler,
}

/// Why a resolution ended without an address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TranslationFault {
    /// The table had no entry and no handler is configured.
    Miss,
    /// The handler could not restore the mapping.
    Unresolvable,
    /// The handler reloaded the image but the retry missed again.
    RetryFailed,
}

impl fmt::Display for TranslationFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TranslationFault::Miss => "translation_miss",
            TranslationFault::Unresolvable => "unresolvable",
            TranslationFault::RetryFailed => "retry_failed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SignalId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    TranslationMiss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExceptionSignal {
    pub id: SignalId,
    pub kind: SignalKind,
    pub vaddr: VirtualAddress,
    pub requester: Location,
    /// The resolution that missed; `None` for signals raised directly.
    pub request_id: Option<ReqId>,
    pub tick: Tick,
    /// Node that detected the miss.
    pub origin: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandlerOutcome {
    Reloaded(PhysicalAddress),
    Unresolvable,
}

#[derive(Debug, Default)]
pub(crate) struct HandlerState {
    pub signals: BTreeMap<SignalId, ExceptionSignal>,
    /// Handler mailbox: arrived, not yet processed.
    pub queue: VecDeque<SignalId>,
    /// Signal being processed and the unit chosen for its reload.
    pub busy: Option<(SignalId, Option<Location>)>,
    pub log: Vec<(SignalId, HandlerOutcome)>,
}

impl Simulation {
    /// Sends an exception signal for `vaddr` from `origin` to the handler.
    ///
    /// Returns `None` when the run has no handler unit.
    pub fn signal_exception(
        &mut self,
        origin: NodeId,
        vaddr: VirtualAddress,
        requester: Location,
    ) -> Option<SignalId> {
        self.raise_signal(origin, vaddr, requester, None)
    }

    /// Signals in the handler mailbox, oldest first.
    pub fn handler_mailbox(&self) -> Vec<ExceptionSignal> {
        self.handler.queue.iter().map(|id| self.handler.signals[id]).collect()
    }

    /// Outcomes in the order the handler produced them.
    pub fn handler_outcomes(&self) -> &[(SignalId, HandlerOutcome)] {
        &self.handler.log
    }

    pub fn signal(&self, id: SignalId) -> Option<&ExceptionSignal> {
        self.handler.signals.get(&id)
    }

    pub(crate) fn raise_signal(
        &mut self,
        origin: NodeId,
        vaddr: VirtualAddress,
        requester: Location,
        request_id: Option<ReqId>,
    ) -> Option<SignalId> {
        let handler = self.fabric.handler()?;
        let id = SignalId(self.ids.next());
        let sig = ExceptionSignal {
            id,
            kind: SignalKind::TranslationMiss,
            vaddr,
            requester,
            request_id,
            tick: self.now(),
            origin,
        };
        self.handler.signals.insert(id, sig);
        self.stats.signals += 1;
        self.emit(
            TraceKind::ExcSignal,
            [
                ("from", json!(origin)),
                ("handler", Self::loc(handler)),
                ("req", json!(request_id.map(|r| r.0))),
                ("requester", Self::loc(requester)),
                ("sig", json!(id.0)),
                ("vaddr", self.v(vaddr)),
            ],
        );
        let path = self.fabric.route(origin, handler.node);
        self.transmit(MsgKind::Signal(id), path);
        Some(id)
    }

    pub(crate) fn on_signal_arrival(&mut self, sig: SignalId) {
        self.handler.queue.push_back(sig);
        self.process_signals();
    }

    /// Takes signals off the mailbox until one needs a timed reload.
    fn process_signals(&mut self) {
        while self.handler.busy.is_none() {
            let Some(id) = self.handler.queue.pop_front() else {
                return;
            };
            let sig = self.handler.signals[&id];
            let image = self.fabric.allocator.image(sig.vaddr).map(|img| img.location);
            match image {
                None => self.conclude(id, HandlerOutcome::Unresolvable, "no_image"),
                Some(Some(_)) => {
                    // already back, e.g. a second miss on the same evicted address
                    let p = self.fabric.lookup_global(sig.vaddr).expect("resident image is mapped");
                    self.emit(
                        TraceKind::Reload,
                        [
                            ("already_resident", json!(true)),
                            ("paddr", self.p(p)),
                            ("sig", json!(id.0)),
                            ("unit", Self::loc(p.into())),
                            ("vaddr", self.v(sig.vaddr)),
                        ],
                    );
                    self.conclude(id, HandlerOutcome::Reloaded(p), "");
                }
                Some(None) => match self.fabric.lowest_free_unit() {
                    None => self.conclude(id, HandlerOutcome::Unresolvable, "no_free_unit"),
                    Some(loc) => {
                        self.handler.busy = Some((id, Some(loc)));
                        self.engine
                            .schedule_after(self.fabric.options.reload_cost, Event::ReloadDone(id));
                    }
                },
            }
        }
    }

    pub(crate) fn on_reload_done(&mut self, id: SignalId) {
        let Some((busy, Some(loc))) = self.handler.busy.take() else {
            unreachable!("reload completion without a reload in progress");
        };
        debug_assert_eq!(busy, id);
        let sig = self.handler.signals[&id];
        match self.fabric.reload(sig.vaddr, loc) {
            Ok(p) => {
                self.stats.reloads += 1;
                self.emit(
                    TraceKind::Reload,
                    [
                        ("already_resident", json!(false)),
                        ("paddr", self.p(p)),
                        ("sig", json!(id.0)),
                        ("unit", Self::loc(loc)),
                        ("vaddr", self.v(sig.vaddr)),
                    ],
                );
                self.conclude(id, HandlerOutcome::Reloaded(p), "");
            }
            Err(e) => self.conclude(id, HandlerOutcome::Unresolvable, &e.to_string()),
        }
        self.process_signals();
    }

    /// Records the outcome and notifies the requester.
    fn conclude(&mut self, id: SignalId, outcome: HandlerOutcome, reason: &str) {
        let sig = self.handler.signals[&id];
        if outcome == HandlerOutcome::Unresolvable {
            self.stats.unresolvable += 1;
            self.emit(
                TraceKind::Unresolvable,
                [
                    ("reason", json!(reason)),
                    ("sig", json!(id.0)),
                    ("vaddr", self.v(sig.vaddr)),
                ],
            );
        }
        self.handler.log.push((id, outcome));
        self.handler.busy = None;
        let handler = self.fabric.handler().expect("handler present");
        let path = self.fabric.route(handler.node, sig.requester.node);
        self.transmit(MsgKind::Notice(sig.request_id, outcome), path);
    }
}
