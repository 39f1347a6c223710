use vchan_core::faults::HandlerOutcome;
use vchan_core::{
    AddressConfig, AppId, Fabric, FabricOptions, FaultMode, Location, ResolveOutcome, Simulation, TopologySpec,
    TraceKind, TranslationFault, TranslationStrategy, VirtualAddress,
};

fn build(mode: FaultMode, units_per_node: u32) -> Simulation {
    let options = FabricOptions {
        fault_mode: mode,
        ..FabricOptions::default()
    };
    let fabric = Fabric::build(
        TopologySpec::Ring { n: 4 },
        units_per_node,
        AddressConfig::default(),
        TranslationStrategy::Distributed,
        options,
    )
    .unwrap();
    Simulation::new(fabric)
}

fn handler_sim() -> Simulation {
    build(FaultMode::SignalHandler, 2)
}

#[test]
fn handler_reserved_only_in_signal_mode() {
    assert_eq!(handler_sim().fabric().handler(), Some(Location::new(0, 1)));
    assert_eq!(build(FaultMode::ErrorAtRequester, 2).fabric().handler(), None);
}

#[test]
fn signal_follows_route_to_handler() {
    let mut sim = handler_sim();
    let v = sim.allocate(&AppId::from("a"), 1).unwrap()[0];
    sim.signal_exception(2, VirtualAddress::new(3, 3), Location::new(0, 0)).unwrap();
    assert_eq!(sim.handler_mailbox().len(), 0, "signal still in flight");
    sim.run_until_quiescent().unwrap();
    let hops: Vec<(u64, u64)> = sim
        .trace()
        .of_kind(TraceKind::Hop)
        .filter(|r| r.get_str("msg") == Some("signal"))
        .map(|r| (r.get_u64("from").unwrap(), r.get_u64("to").unwrap()))
        .collect();
    assert_eq!(hops, [(2, 1), (1, 0)]);
    assert_eq!(sim.handler_outcomes().len(), 1);
    assert_eq!(sim.handler_outcomes()[0].1, HandlerOutcome::Unresolvable);
    let _ = v;
}

#[test]
fn error_mode_never_signals() {
    let mut sim = build(FaultMode::ErrorAtRequester, 2);
    let vs = sim.allocate(&AppId::from("a"), 2).unwrap();
    sim.evict(vs[1]).unwrap();
    let out = sim.resolve(Location::new(0, 0), vs[1]).unwrap();
    assert_eq!(out, ResolveOutcome::Fault(TranslationFault::Miss));
    assert_eq!(sim.trace().count(TraceKind::ExcSignal), 0);
    assert!(sim.handler_mailbox().is_empty());
    assert!(sim.handler_outcomes().is_empty());
    assert!(sim.signal_exception(1, vs[1], Location::new(0, 0)).is_none());
}

#[test]
fn evicted_image_is_reloaded_and_retry_succeeds() {
    let mut sim = handler_sim();
    let vs = sim.allocate(&AppId::from("a"), 2).unwrap();
    let gen = sim.fabric().allocator().image(vs[1]).unwrap().generation;
    sim.evict(vs[1]).unwrap();
    let out = sim.resolve(Location::new(0, 0), vs[1]).unwrap();
    let ResolveOutcome::Resolved(p) = out else {
        panic!("{out:?}");
    };
    assert_eq!(p.generation, gen + 1);
    assert_eq!(sim.fabric().lowest_free_unit().map(|l| l > Location::from(p)), Some(true));
    let reload = sim.trace().of_kind(TraceKind::Reload).next().unwrap();
    let signal = sim.trace().of_kind(TraceKind::ExcSignal).next().unwrap();
    assert!(reload.tick >= signal.tick + 10, "reload cost applies");
    // no further fault for this address
    let misses = sim.trace().count(TraceKind::ResolveMiss);
    assert!(matches!(sim.resolve(Location::new(0, 0), vs[1]).unwrap(), ResolveOutcome::Resolved(_)));
    assert_eq!(sim.trace().count(TraceKind::ResolveMiss), misses);
}

#[test]
fn never_allocated_is_unresolvable() {
    let mut sim = handler_sim();
    sim.allocate(&AppId::from("a"), 1).unwrap();
    let out = sim.resolve(Location::new(0, 0), VirtualAddress::new(1, 4)).unwrap();
    assert_eq!(out, ResolveOutcome::Fault(TranslationFault::Unresolvable));
    assert_eq!(sim.trace().count(TraceKind::Unresolvable), 1);
    assert_eq!(sim.trace().count(TraceKind::Retry), 0);
}

#[test]
fn no_free_unit_is_unresolvable() {
    let mut sim = handler_sim();
    // 8 units, one is the handler
    let vs = sim.allocate(&AppId::from("a"), 7).unwrap();
    sim.evict(vs[6]).unwrap();
    sim.allocate(&AppId::from("b"), 1).unwrap();
    assert_eq!(sim.fabric().lowest_free_unit(), None);
    let out = sim.resolve(Location::new(0, 0), vs[6]).unwrap();
    assert_eq!(out, ResolveOutcome::Fault(TranslationFault::Unresolvable));
    let rec = sim.trace().of_kind(TraceKind::Unresolvable).next().unwrap();
    assert_eq!(rec.get_str("reason"), Some("no_free_unit"));
}

#[test]
fn deallocated_address_is_unresolvable() {
    let mut sim = handler_sim();
    let vs = sim.allocate(&AppId::from("a"), 2).unwrap();
    sim.allocate(&AppId::from("b"), 1).unwrap();
    sim.deallocate(&AppId::from("a")).unwrap();
    let requester = sim.fabric().handler().unwrap();
    let out = sim.resolve(requester, vs[1]).unwrap();
    assert_eq!(out, ResolveOutcome::Fault(TranslationFault::Unresolvable));
}

#[test]
fn concurrent_misses_are_handled_in_arrival_order() {
    let mut sim = handler_sim();
    let vs = sim.allocate(&AppId::from("a"), 4).unwrap();
    sim.evict(vs[2]).unwrap();
    sim.evict(vs[3]).unwrap();
    let a = sim.submit_resolve(Location::new(0, 0), vs[2]).unwrap();
    let b = sim.submit_resolve(Location::new(0, 0), vs[3]).unwrap();
    sim.run_until_quiescent().unwrap();
    assert_eq!(sim.trace().count(TraceKind::ExcSignal), 2);
    let order: Vec<&str> = sim.trace().of_kind(TraceKind::Reload).map(|r| r.get_str("vaddr").unwrap()).collect();
    let signals: Vec<&str> = sim.trace().of_kind(TraceKind::ExcSignal).map(|r| r.get_str("vaddr").unwrap()).collect();
    assert_eq!(order, signals);
    let ticks: Vec<u64> = sim.trace().of_kind(TraceKind::Reload).map(|r| r.tick).collect();
    assert!(ticks[1] >= ticks[0] + 10, "one signal at a time: {ticks:?}");
    for t in [a, b] {
        assert!(matches!(
            sim.completion(t),
            Some(vchan_core::sim::Completion::Resolve(ResolveOutcome::Resolved(_)))
        ));
    }
}

#[test]
fn second_miss_on_reloaded_image_is_already_resident() {
    let mut sim = handler_sim();
    let vs = sim.allocate(&AppId::from("a"), 3).unwrap();
    sim.evict(vs[2]).unwrap();
    // two requesters miss on the same address before the reload completes
    sim.submit_resolve(Location::new(0, 0), vs[2]).unwrap();
    sim.submit_resolve(Location::new(1, 0), vs[2]).unwrap();
    sim.run_until_quiescent().unwrap();
    let reloads: Vec<bool> = sim
        .trace()
        .of_kind(TraceKind::Reload)
        .map(|r| r.get("already_resident").unwrap().as_bool().unwrap())
        .collect();
    assert_eq!(reloads, [false, true]);
    assert_eq!(sim.metrics().reloads, 1);
    assert_eq!(sim.trace().count(TraceKind::ResolveOk), 2);
}

#[test]
fn every_miss_yields_one_signal_and_one_outcome() {
    let mut sim = handler_sim();
    let vs = sim.allocate(&AppId::from("a"), 3).unwrap();
    sim.evict(vs[1]).unwrap();
    sim.evict(vs[2]).unwrap();
    sim.submit_resolve(Location::new(0, 0), vs[1]).unwrap();
    sim.submit_resolve(Location::new(0, 0), VirtualAddress::new(3, 50)).unwrap();
    sim.submit_resolve(Location::new(0, 0), vs[2]).unwrap();
    sim.run_until_quiescent().unwrap();
    let misses = sim.trace().count(TraceKind::ResolveMiss);
    assert_eq!(misses, 3);
    assert_eq!(sim.trace().count(TraceKind::ExcSignal), misses);
    assert_eq!(sim.handler_outcomes().len(), misses);
}
