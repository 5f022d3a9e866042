use proptest::prelude::*;

use beacon_rpl::analysis::{
    expected_delay_at_imin, expected_delay_general, stationary, TrickleChainParams,
};
use beacon_rpl::engine::{
    rng_from_seed, Channel, NodeId, NodeSpec, Role, RxOutcome, Scheduler, SimTime, Topology,
};
use beacon_rpl::mac154::{FrameKind, MAX_MAC_FRAME_BYTES};
use beacon_rpl::metrics::EnergyModel;
use beacon_rpl::network::Simulator;
use beacon_rpl::rpl::{TrickleParams, TrickleTimer};
use beacon_rpl::scenario::default_scenario;

fn positions() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 2..12)
}

fn topology(pts: &[(f64, f64)], range: f64) -> Topology {
    let nodes = pts
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            let role = if i == 0 { Role::PanCoordinator } else { Role::Ffd };
            NodeSpec::new(i as u16, x, y, role)
        })
        .collect();
    Topology::new(nodes, range).unwrap()
}

proptest! {
    #[test]
    fn reachability_is_symmetric(pts in positions(), range in 1.0..80.0f64) {
        let topo = topology(&pts, range);
        for a in 0..pts.len() {
            for b in 0..pts.len() {
                let (a, b) = (NodeId(a as u16), NodeId(b as u16));
                prop_assert_eq!(topo.in_range(a, b).unwrap(), topo.in_range(b, a).unwrap());
            }
        }
    }

    #[test]
    fn events_pop_in_time_order(times in prop::collection::vec(0u64..10_000, 1..200)) {
        let mut q = Scheduler::new();
        for (i, t) in times.iter().enumerate() {
            q.schedule(SimTime(*t), NodeId(0), i).unwrap();
        }
        let mut last = (SimTime::ZERO, 0usize);
        let mut first = true;
        while let Some(ev) = q.pop() {
            if !first {
                prop_assert!(ev.fire_time > last.0 || (ev.fire_time == last.0 && ev.kind > last.1));
            }
            first = false;
            last = (ev.fire_time, ev.kind);
        }
    }

    #[test]
    fn overlapping_frames_both_collide(
        s1 in 0u64..100, d1 in 1u64..100, s2 in 0u64..100, d2 in 1u64..100,
    ) {
        // senders at both ends, receiver in the middle hears both
        let topo = topology(&[(0.0, 0.0), (20.0, 0.0), (40.0, 0.0)], 25.0);
        let mut ch: Channel<()> = Channel::new(&topo);
        let a = ch.begin(NodeId(0), SimTime(s1), d1, ()).unwrap();
        let b = ch.begin(NodeId(2), SimTime(s2), d2, ()).unwrap();
        let overlap = s1 < s2 + d2 && s2 < s1 + d1;
        let at_rx = |id| {
            ch.propagate(id, |_, _, _| true)
                .into_iter()
                .find(|(n, _)| *n == NodeId(1))
                .map(|(_, o)| o)
                .unwrap()
        };
        let (oa, ob) = (at_rx(a), at_rx(b));
        prop_assert_eq!(oa == RxOutcome::Collided, overlap);
        prop_assert_eq!(ob == RxOutcome::Collided, overlap);
    }

    #[test]
    fn trickle_draws_stay_in_the_second_half(
        imin in 2u64..50_000,
        imax in 0u32..10,
        seed in any::<u64>(),
        ops in prop::collection::vec(any::<bool>(), 1..60),
    ) {
        let params = TrickleParams { imin, imax_doublings: imax, k: 10 };
        let mut rng = rng_from_seed(seed);
        let mut timer = TrickleTimer::start(params, SimTime(0), &mut rng);
        for reset in ops {
            let i = timer.interval();
            prop_assert!(timer.doubling() <= imax);
            prop_assert_eq!(i, imin << timer.doubling());
            let off = timer.fire_time() - timer.interval_start();
            prop_assert!(off >= i / 2 && off < i, "off={} i={}", off, i);
            if reset {
                let now = timer.fire_time();
                timer.reset(now, &mut rng);
                prop_assert_eq!(timer.doubling(), 0);
            } else {
                timer.on_expire(&mut rng);
            }
        }
    }

    #[test]
    fn delay_at_imin_is_bounded_and_decreasing(bi in 4u64..100_000, a in 1u64..100_000, b in 1u64..100_000) {
        let (lo, hi) = (a.min(b).min(bi), a.max(b).min(bi));
        let d_lo = expected_delay_at_imin(lo, bi).unwrap();
        let d_hi = expected_delay_at_imin(hi, bi).unwrap();
        prop_assert!(d_hi <= d_lo);
        for d in [d_lo, d_hi] {
            prop_assert!(d >= bi as f64 / 4.0 && d < bi as f64);
        }
    }

    #[test]
    fn general_delay_reduces_to_the_closed_form(bi in 2u64..100_000, imin in 1u64..100_000, imax in 0u32..8) {
        let imin = imin.min(bi);
        let params = TrickleChainParams::new(1.0, imax, imin, bi).unwrap();
        let exact = expected_delay_at_imin(imin, bi).unwrap();
        prop_assert!((expected_delay_general(&params) - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn energy_is_additive(seed in 1u64..500, cut1 in 0.0..1.0f64, cut2 in 0.0..1.0f64) {
        let mut s = default_scenario();
        s.steady_ticks = 5 * 30720;
        let out = Simulator::new(s.sim_config().unwrap(), seed).unwrap().run().unwrap();
        let end = out.end.0 as f64;
        let (x, y) = (cut1.min(cut2), cut1.max(cut2));
        let (a, b, c) = (SimTime(0), SimTime((x * end) as u64), SimTime((y * end) as u64));
        let m = EnergyModel::default();
        for n in &out.nodes {
            let whole = m.breakdown(&out.ledger.ticks(n.id, a..c).unwrap());
            let p1 = m.breakdown(&out.ledger.ticks(n.id, a..b).unwrap());
            let p2 = m.breakdown(&out.ledger.ticks(n.id, b..c).unwrap());
            prop_assert!((whole.tx - p1.tx - p2.tx).abs() < 1e-12);
            prop_assert!((whole.rx - p1.rx - p2.rx).abs() < 1e-12);
        }
    }
}

#[test]
fn stationary_law_sums_to_one_on_the_grid() {
    for pi in 0..=10 {
        let p = pi as f64 / 10.0;
        for imax in 0..=8 {
            let params = TrickleChainParams::new(p, imax, 1000, 30720).unwrap();
            let total: f64 = stationary(&params).probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "p={p} imax={imax}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Whole-run invariants over random seeds, schemes and payload sizes.
    #[test]
    fn run_invariants(seed in any::<u64>(), sbp in any::<bool>(), size in 1usize..=112, bo in 3u8..=6) {
        let mut s = default_scenario();
        s.bo = bo;
        s.set("scheme", if sbp { "sbp" } else { "proposed" }).unwrap();
        s.scheme.sbp_size_bytes = size;
        s.steady_ticks = 3 << (bo as u32 + 10);
        let out = Simulator::new(s.sim_config().unwrap(), seed).unwrap().run().unwrap();

        prop_assert!(out.convergence.converged);
        prop_assert!(out.audit.max_mac_bytes <= MAX_MAC_FRAME_BYTES);
        prop_assert_eq!(out.audit.stray_unicasts, 0);
        if out.audit.frames_by_kind[FrameKind::BeaconRequest.index()] > 0 {
            prop_assert_eq!(out.audit.beacon_request_sizes.clone(), vec![8]);
        }
        for a in &out.associations {
            prop_assert_eq!(a.frames.len(), 5);
            prop_assert_eq!(a.frames[0], FrameKind::AssociationRequest);
            prop_assert_eq!(a.frames[3], FrameKind::AssociationReply);
        }
        for n in &out.nodes {
            let t = out.ledger.ticks(n.id, SimTime::ZERO..out.end).unwrap();
            prop_assert_eq!(t.total(), out.end.0);
            if n.role == Role::Rfd {
                prop_assert_eq!(n.dios_emitted, 0);
            }
            if n.coordinator.is_some() {
                prop_assert_eq!(n.coordinator, n.rpl_parent);
            }
        }
        if !sbp {
            for rec in out.solicitations.iter().filter(|r| r.next_beacon.is_some()) {
                prop_assert_eq!(rec.next_has_dio, Some(true));
            }
        }
    }
}
