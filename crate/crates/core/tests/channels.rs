use vchan_core::channels::{ConnState, EndBinding};
use vchan_core::{
    AddressConfig, AppId, ChannelError, Fabric, FabricOptions, Location, SendOutcome, SimError, Simulation,
    TopologySpec, TraceKind, TranslationFault, TranslationStrategy, VirtualAddress,
};

fn sim_with(options: FabricOptions) -> Simulation {
    let fabric = Fabric::build(
        TopologySpec::Ring { n: 4 },
        2,
        AddressConfig::default(),
        TranslationStrategy::Distributed,
        options,
    )
    .unwrap();
    Simulation::new(fabric)
}

fn sim() -> Simulation {
    sim_with(FabricOptions::default())
}

/// Allocates `n` units; first fit puts them at (0,0), (0,1), (1,0), ...
fn alloc(sim: &mut Simulation, n: usize) -> Vec<VirtualAddress> {
    sim.allocate(&AppId::from("app"), n).unwrap()
}

#[test]
fn establish_binds_table_entry_with_one_request() {
    let mut sim = sim();
    let vs = alloc(&mut sim, 3);
    let conn = sim.establish(vs[0], 0, vs[2]).unwrap();
    assert_eq!(conn.bound, sim.fabric().lookup_global(vs[2]));
    assert_eq!(conn.state, ConnState::Open);
    assert_eq!(sim.trace().count(TraceKind::ResolveReq), 1);
    let unit = sim.fabric().unit(Location::new(0, 0)).unwrap();
    assert!(matches!(unit.ends[0].binding, EndBinding::Bound { dest, .. } if dest == vs[2]));
}

#[test]
fn cached_establish_sends_no_resolution_traffic() {
    let mut sim = sim_with(FabricOptions {
        cache_enabled: true,
        ..FabricOptions::default()
    });
    let vs = alloc(&mut sim, 3);
    sim.establish(vs[0], 0, vs[2]).unwrap();
    let before = (sim.trace().count(TraceKind::ResolveReq), sim.trace().count(TraceKind::ResolveHop));
    let second = sim.establish(vs[0], 1, vs[2]).unwrap();
    assert_eq!(before, (sim.trace().count(TraceKind::ResolveReq), sim.trace().count(TraceKind::ResolveHop)));
    let rec = sim.trace().of_kind(TraceKind::Establish).last().unwrap();
    assert_eq!(rec.get("cached"), Some(&serde_json::json!(true)));
    assert_eq!(second.bound, sim.fabric().lookup_global(vs[2]));
}

#[test]
fn unmapped_destination_fails_establish() {
    let mut sim = sim();
    let vs = alloc(&mut sim, 1);
    let err = sim.establish(vs[0], 0, VirtualAddress::new(2, 9)).unwrap_err();
    assert_eq!(err, SimError::Channel(ChannelError::Translation(TranslationFault::Miss)));
    assert_eq!(sim.trace().count(TraceKind::EstablishFault), 1);
    assert!(!sim.fabric().unit(Location::new(0, 0)).unwrap().ends[0].is_bound());
}

#[test]
fn bound_end_rejects_second_establish() {
    let mut sim = sim();
    let vs = alloc(&mut sim, 2);
    sim.establish(vs[0], 0, vs[1]).unwrap();
    assert_eq!(
        sim.establish(vs[0], 0, vs[1]).unwrap_err(),
        SimError::Channel(ChannelError::EndInUse)
    );
    assert_eq!(
        sim.establish(vs[0], 99, vs[1]).unwrap_err(),
        SimError::Channel(ChannelError::InvalidEnd)
    );
}

#[test]
fn send_two_hops_on_ring() {
    let mut sim = sim();
    // units (0,0) (0,1) (1,0) (1,1) (2,0): the fifth lives on node 2
    let vs = alloc(&mut sim, 5);
    let conn = sim.establish(vs[0], 0, vs[4]).unwrap();
    assert_eq!(conn.bound.unwrap().node_id, 2);
    let out = sim.send(conn.id, "x").unwrap();
    assert_eq!(
        out,
        SendOutcome::Delivered {
            unit: Location::new(2, 0),
            latency: 2
        }
    );
    let m = &sim.fabric().unit(Location::new(2, 0)).unwrap().mailbox;
    assert_eq!(m.len(), 1);
    assert_eq!(m.iter().next().unwrap().bytes, b"x");
}

#[test]
fn swap_then_send_rebinds_with_one_new_request() {
    let mut sim = sim();
    let vs = alloc(&mut sim, 3);
    let conn = sim.establish(vs[0], 0, vs[2]).unwrap();
    sim.swap_unit(vs[2], Location::new(2, 1)).unwrap();
    let requests = sim.trace().count(TraceKind::ResolveReq);
    let out = sim.send(conn.id, "y").unwrap();
    assert!(matches!(out, SendOutcome::DeliveredAfterRebind { unit, .. } if unit == Location::new(2, 1)));
    assert_eq!(sim.trace().count(TraceKind::ResolveReq), requests + 1);
    assert_eq!(sim.connection(conn.id).unwrap().bound.unwrap().generation, 1);
    // the connection now points at the new unit: next send is direct
    let again = sim.send(conn.id, "z").unwrap();
    assert!(matches!(again, SendOutcome::Delivered { .. }));
}

#[test]
fn swap_with_rebind_off_is_stale() {
    let mut sim = sim_with(FabricOptions {
        auto_rebind: false,
        ..FabricOptions::default()
    });
    let vs = alloc(&mut sim, 3);
    let conn = sim.establish(vs[0], 0, vs[2]).unwrap();
    sim.swap_unit(vs[2], Location::new(2, 1)).unwrap();
    assert_eq!(sim.send(conn.id, "y").unwrap(), SendOutcome::StaleEndpoint);
    assert_eq!(sim.trace().count(TraceKind::Stale), 1);
    assert!(sim.fabric().unit(Location::new(2, 1)).unwrap().mailbox.is_empty());
}

#[test]
fn reused_unit_does_not_accept_stale_payloads() {
    // dst moves away and another image lands on its old unit with the same
    // generation; the payload must still be refused there
    let mut sim = sim();
    let vs = alloc(&mut sim, 3);
    let conn = sim.establish(vs[0], 0, vs[2]).unwrap();
    let old = conn.bound.unwrap();
    sim.swap_unit(vs[2], Location::new(3, 0)).unwrap();
    let other = sim.allocate(&AppId::from("other"), 1).unwrap()[0];
    assert_eq!(sim.fabric().location_of(other), Some(Location::from(old)));
    let out = sim.send(conn.id, "for dst").unwrap();
    assert!(matches!(out, SendOutcome::DeliveredAfterRebind { unit, .. } if unit == Location::new(3, 0)));
    assert!(sim.fabric().unit(Location::from(old)).unwrap().mailbox.is_empty());
}

#[test]
fn mailbox_overflow() {
    let mut sim = sim_with(FabricOptions {
        mailbox_capacity: 1,
        ..FabricOptions::default()
    });
    let vs = alloc(&mut sim, 2);
    let conn = sim.establish(vs[0], 0, vs[1]).unwrap();
    assert!(sim.send(conn.id, "a").unwrap().is_delivered());
    assert_eq!(sim.send(conn.id, "b").unwrap(), SendOutcome::Overflow);
    assert_eq!(sim.trace().count(TraceKind::Overflow), 1);
}

#[test]
fn close_semantics() {
    let mut sim = sim();
    let vs = alloc(&mut sim, 3);
    let conn = sim.establish(vs[0], 0, vs[1]).unwrap();
    sim.close(conn.id).unwrap();
    assert!(!sim.fabric().unit(Location::new(0, 0)).unwrap().ends[0].is_bound());
    assert_eq!(sim.close(conn.id).unwrap_err(), SimError::Channel(ChannelError::AlreadyClosed));
    assert_eq!(
        sim.send(conn.id, "late").unwrap(),
        SendOutcome::Fault(ChannelError::AlreadyClosed)
    );
    let again = sim.establish(vs[0], 0, vs[2]).unwrap();
    assert_eq!(again.dest, vs[2]);
}

#[test]
fn queued_sends_keep_order_per_connection() {
    let mut sim = sim();
    let vs = alloc(&mut sim, 5);
    let (conn, _) = sim.submit_establish(vs[0], 0, vs[4]);
    let tickets: Vec<_> = (0..5).map(|i| sim.submit_send(conn, vec![i]).unwrap()).collect();
    sim.run_until_quiescent().unwrap();
    assert_eq!(tickets.len(), 5);
    let m = &sim.fabric().unit(Location::new(2, 0)).unwrap().mailbox;
    let seqs: Vec<u64> = m.iter().map(|d| d.seq).collect();
    assert_eq!(seqs, [0, 1, 2, 3, 4]);
    let ticks: Vec<u64> = m.iter().map(|d| d.tick).collect();
    assert!(ticks.windows(2).all(|w| w[0] < w[1]), "one payload in flight at a time: {ticks:?}");
}

#[test]
fn independent_sources_run_concurrently() {
    let mut sim = sim();
    let vs = alloc(&mut sim, 5);
    sim.submit_establish(vs[0], 0, vs[4]);
    sim.submit_establish(vs[2], 0, vs[4]);
    sim.run_until_quiescent().unwrap();
    let ticks: Vec<u64> = sim.trace().of_kind(TraceKind::ResolveReq).map(|r| r.tick).collect();
    assert_eq!(ticks, [0, 0]);
}

#[test]
fn channel_memory_survives_eviction_and_reload() {
    let mut sim = sim_with(FabricOptions {
        fault_mode: vchan_core::FaultMode::SignalHandler,
        ..FabricOptions::default()
    });
    let vs = alloc(&mut sim, 3);
    let conn = sim.establish(vs[1], 0, vs[2]).unwrap();
    assert!(sim.send(conn.id, "kept").unwrap().is_delivered());
    sim.evict(vs[2]).unwrap();
    // a resolution from vs[0] triggers the reload
    let resolved = sim.resolve(sim.fabric().location_of(vs[0]).unwrap(), vs[2]).unwrap();
    let vchan_core::ResolveOutcome::Resolved(p) = resolved else {
        panic!("{resolved:?}");
    };
    let unit = sim.fabric().unit(Location::from(p)).unwrap();
    assert_eq!(unit.mailbox.iter().next().unwrap().bytes, b"kept");
}
