use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;

use super::radio::{Listen, Radio};
use super::{
    AssociationRecord, BeaconRecord, FrameAudit, NetworkError, NodeReport, RunOutput, SimConfig,
    SolicitationRecord,
};
use crate::coupling::{
    next_at_or_after, sbp_choice, scan_sleep_plan, solicitation_decision, CouplingState, PendingDio,
    Scheme,
};
use crate::engine::{
    rng_from_seed, Channel, NodeId, Role, RxOutcome, Scheduler, SimRng, SimTime, Ticks, Trace,
};
use crate::mac154::{
    Address, CcaVerdict, CsmaState, Frame, FrameKind, MacNodeState, MacPhase, Payload,
    SlotAllocator, ACK_WAIT_TICKS, MAX_MAC_FRAME_BYTES, TURNAROUND_TICKS,
};
use crate::metrics::{convergence_time, RadioLedger, TxFrame};
use crate::rpl::{Dio, Rank, ResetCause, RplNode, RplRole, TrickleParams};

#[derive(Clone, Debug)]
enum Ev {
    Boot,
    BeaconDue,
    BeaconTx,
    TxDirect { frame: Frame, purpose: Purpose },
    TxEnd { tx: u64, purpose: Purpose },
    CsmaAttempt { gen: u64 },
    ScanEnd { gen: u64 },
    Rescan { gen: u64 },
    DioWake { gen: u64, coordinator: NodeId, beacon_at: SimTime },
    DioMissed { gen: u64, coordinator: NodeId },
    AssocWake { gen: u64, beacon_at: SimTime },
    AssocMissed { gen: u64 },
    AssocTimeout { gen: u64 },
    TrickleFire { draw: u64 },
    ParentWake,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Purpose {
    Beacon,
    Solicit { target: NodeId, prompted_by: SimTime },
    AssocRequest,
    AssocAck,
    DataRequest,
    AssocReply { joiner: NodeId },
    FinalAck,
    Injected,
}

#[derive(Clone, Debug)]
struct TxJob {
    frame: Frame,
    purpose: Purpose,
    deadline: SimTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Step {
    WaitBeacon,
    Request,
    AwaitAck,
    DataRequest,
    AwaitReply,
    FinalAck,
}

#[derive(Clone, Debug)]
struct Exchange {
    coordinator: NodeId,
    step: Step,
    cap_end: SimTime,
    started: SimTime,
    frames: Vec<FrameKind>,
}

struct NodeRt {
    role: Role,
    inert: bool,
    preassociated: bool,
    mac: MacNodeState,
    rpl: RplNode,
    coupling: CouplingState,
    radio: Radio,
    scan_gen: u64,
    awaiting: BTreeSet<NodeId>,
    exchange: Option<Exchange>,
    attempts: u32,
    assoc_gen: u64,
    txq: VecDeque<TxJob>,
    csma: Option<CsmaState>,
    csma_gen: u64,
    own_beacon: Option<SimTime>,
    joining: BTreeSet<NodeId>,
    associated_at: Option<SimTime>,
    scans: u32,
    dios_emitted: u64,
}

impl NodeRt {
    fn coordinating(&self) -> bool {
        self.mac.superframe_offset.is_some()
    }
}

/// One seeded run over a [`SimConfig`].
pub struct Simulator {
    cfg: SimConfig,
    imin: Ticks,
    seed: u64,
    rng: SimRng,
    sched: Scheduler<Ev>,
    channel: Channel<Frame>,
    nodes: Vec<NodeRt>,
    slots: SlotAllocator,
    ledger: RadioLedger,
    trace: Trace,
    solicitations: Vec<SolicitationRecord>,
    open_solicitations: BTreeMap<NodeId, Vec<usize>>,
    beacons: Vec<BeaconRecord>,
    associations: Vec<AssociationRecord>,
    audit: FrameAudit,
    converged_at: Option<SimTime>,
    stop_at: Option<SimTime>,
}

type Res<T = ()> = Result<T, NetworkError>;

impl Simulator {
    pub fn new(cfg: SimConfig, seed: u64) -> Res<Self> {
        cfg.validate()?;
        let imin = cfg.imin()?;
        let topo = &cfg.topology;
        let root = topo.root();
        let nodes: Vec<NodeRt> = topo
            .nodes()
            .iter()
            .map(|spec| {
                let rpl_role = match spec.role {
                    Role::PanCoordinator => RplRole::Root,
                    Role::Ffd => RplRole::Router,
                    Role::Rfd => RplRole::Leaf,
                };
                NodeRt {
                    role: spec.role,
                    inert: spec.inert,
                    preassociated: spec.preassociated_with.is_some(),
                    mac: MacNodeState::default(),
                    rpl: RplNode::new(rpl_role, &cfg.rpl),
                    coupling: CouplingState::default(),
                    radio: Radio::default(),
                    scan_gen: 0,
                    awaiting: BTreeSet::new(),
                    exchange: None,
                    attempts: 0,
                    assoc_gen: 0,
                    txq: VecDeque::new(),
                    csma: None,
                    csma_gen: 0,
                    own_beacon: None,
                    joining: BTreeSet::new(),
                    associated_at: None,
                    scans: 0,
                    dios_emitted: 0,
                }
            })
            .collect();
        let n = nodes.len();
        let mut sim = Simulator {
            imin,
            seed,
            rng: rng_from_seed(seed),
            sched: Scheduler::new(),
            channel: Channel::new(topo),
            nodes,
            slots: SlotAllocator::new(cfg.superframe),
            ledger: RadioLedger::new(n),
            trace: Trace::new(cfg.trace),
            solicitations: Vec::new(),
            open_solicitations: BTreeMap::new(),
            beacons: Vec::new(),
            associations: Vec::new(),
            audit: FrameAudit::default(),
            converged_at: None,
            stop_at: None,
            cfg,
        };

        // root and pre-associated nodes start inside the tree, parents first
        sim.nodes[root.index()].mac.phase = MacPhase::Associated;
        let offset = sim.slots.allocate(root, &[])?;
        sim.nodes[root.index()].mac.superframe_offset = Some(offset);
        let mut order: Vec<(u32, NodeId)> = sim
            .cfg
            .topology
            .nodes()
            .iter()
            .filter(|s| s.preassociated_with.is_some())
            .map(|s| (sim.preassoc_depth(s.id), s.id))
            .collect();
        order.sort();
        for (_, id) in order {
            let parent = sim.cfg.topology.nodes()[id.index()]
                .preassociated_with
                .expect("filtered");
            let parent_rank = sim.nodes[parent.index()].rpl.rank;
            let dio = sim.synth_dio(parent_rank);
            let node = &mut sim.nodes[id.index()];
            node.mac.phase = MacPhase::Associated;
            node.mac.coordinator = Some(parent);
            node.rpl
                .process_dio(&sim.cfg.rpl, &dio, parent, SimTime::ZERO, &mut sim.rng)?;
            if node.role == Role::Ffd {
                let offset = sim.assign_slot(id)?;
                sim.nodes[id.index()].mac.superframe_offset = Some(offset);
            }
        }

        for i in 0..n {
            let id = NodeId(i as u16);
            if sim.nodes[i].inert {
                continue;
            }
            let at = if id == root || sim.cfg.boot_jitter == 0 {
                0
            } else {
                sim.rng.random_range(0..=sim.cfg.boot_jitter)
            };
            sim.at(SimTime(at), id, Ev::Boot)?;
        }
        Ok(sim)
    }

    fn preassoc_depth(&self, id: NodeId) -> u32 {
        let mut depth = 0;
        let mut cur = id;
        while let Some(p) = self.cfg.topology.nodes()[cur.index()].preassociated_with {
            depth += 1;
            cur = p;
        }
        depth
    }

    fn synth_dio(&self, rank: Rank) -> Dio {
        Dio {
            dodag_id: self.cfg.rpl.dodag_id,
            rank,
            version: self.cfg.rpl.version,
            size_bytes: self.cfg.rpl.dio_size_bytes,
        }
    }

    /// Sends `frame` from `sender` at `at` without carrier sense. Meant for
    /// driving inert nodes as interferers.
    pub fn inject_transmission(&mut self, sender: NodeId, at: SimTime, frame: Frame) -> Res {
        self.cfg.topology.node(sender)?;
        self.at(
            at,
            sender,
            Ev::TxDirect {
                frame,
                purpose: Purpose::Injected,
            },
        )
    }

    fn at(&mut self, t: SimTime, node: NodeId, ev: Ev) -> Res {
        self.sched.schedule(t, node, ev)?;
        Ok(())
    }

    fn now(&self) -> SimTime {
        self.sched.now()
    }

    fn tr(&mut self, node: NodeId, kind: &str, detail: std::fmt::Arguments<'_>) {
        let now = self.now();
        self.trace.emit(now, node, kind, detail);
    }

    fn proposed(&self) -> bool {
        self.cfg.scheme.scheme == Scheme::Proposed
    }

    fn max_beacon_wait(&self) -> Ticks {
        self.cfg.frames.max_beacon_ticks() + self.cfg.wake_guard
    }

    fn trickle_params(&self) -> TrickleParams {
        TrickleParams {
            imin: self.imin,
            imax_doublings: self.cfg.imax_doublings,
            k: self.cfg.k,
        }
    }

    pub fn run(mut self) -> Res<RunOutput> {
        if self.joiners_left() == 0 {
            self.mark_converged()?;
        }
        loop {
            let limit = self.stop_at.unwrap_or(SimTime(self.cfg.max_ticks));
            match self.sched.peek_time() {
                Some(t) if t <= limit => {}
                _ => break,
            }
            let ev = self.sched.pop().expect("peeked");
            self.dispatch(ev.target, ev.kind)?;
        }
        let end = self.stop_at.unwrap_or(SimTime(self.cfg.max_ticks));
        self.finish(end)
    }

    fn joiners_left(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| {
                !n.inert
                    && !n.preassociated
                    && n.role != Role::PanCoordinator
                    && n.mac.phase != MacPhase::Associated
            })
            .count()
    }

    fn mark_converged(&mut self) -> Res {
        if self.converged_at.is_some() {
            return Ok(());
        }
        let now = self.now();
        self.converged_at = Some(now);
        self.stop_at = Some(now + self.cfg.steady_ticks);
        let root = self.cfg.topology.root();
        self.tr(root, "converged", format_args!("steady_until={}", now + self.cfg.steady_ticks));
        Ok(())
    }

    fn dispatch(&mut self, n: NodeId, ev: Ev) -> Res {
        match ev {
            Ev::Boot => self.on_boot(n),
            Ev::BeaconDue => self.at(self.now(), n, Ev::BeaconTx),
            Ev::BeaconTx => self.on_beacon_tx(n),
            Ev::TxDirect { frame, purpose } => {
                if self.nodes[n.index()].radio.transmitting_at(self.now()) {
                    self.tr(n, "tx-drop", format_args!("{} radio busy", frame.kind));
                    return Ok(());
                }
                self.transmit(n, frame, purpose)
            }
            Ev::TxEnd { tx, purpose } => self.on_tx_end(n, tx, purpose),
            Ev::CsmaAttempt { gen } => self.on_csma_attempt(n, gen),
            Ev::ScanEnd { gen } => self.on_scan_end(n, gen),
            Ev::Rescan { gen } => {
                if gen == self.nodes[n.index()].scan_gen {
                    self.start_scan(n)?;
                }
                Ok(())
            }
            Ev::DioWake {
                gen,
                coordinator,
                beacon_at,
            } => self.on_dio_wake(n, gen, coordinator, beacon_at),
            Ev::DioMissed { gen, coordinator } => self.on_dio_missed(n, gen, coordinator),
            Ev::AssocWake { gen, beacon_at } => self.on_assoc_wake(n, gen, beacon_at),
            Ev::AssocMissed { gen } => {
                let node = &self.nodes[n.index()];
                let waiting = node
                    .exchange
                    .as_ref()
                    .is_some_and(|e| e.step == Step::WaitBeacon);
                if gen == node.assoc_gen && waiting {
                    self.tr(n, "assoc-beacon-missed", format_args!(""));
                    self.assoc_failed(n)?;
                }
                Ok(())
            }
            Ev::AssocTimeout { gen } => {
                let node = &self.nodes[n.index()];
                let waiting = node
                    .exchange
                    .as_ref()
                    .is_some_and(|e| matches!(e.step, Step::AwaitAck | Step::AwaitReply));
                if gen == node.assoc_gen && waiting {
                    self.tr(n, "assoc-timeout", format_args!(""));
                    self.assoc_failed(n)?;
                }
                Ok(())
            }
            Ev::TrickleFire { draw } => self.on_trickle_fire(n, draw),
            Ev::ParentWake => self.on_parent_wake(n),
        }
    }

    // ---- boot, scan and parent selection ----

    fn on_boot(&mut self, n: NodeId) -> Res {
        let now = self.now();
        self.tr(n, "boot", format_args!("role={}", self.nodes[n.index()].role.as_str()));
        if self.nodes[n.index()].mac.phase != MacPhase::Associated {
            return self.start_scan(n);
        }
        if self.nodes[n.index()].coordinating() {
            let doubling = if self.nodes[n.index()].preassociated {
                self.cfg.imax_doublings
            } else {
                0
            };
            self.start_coordinating(n, doubling)?;
        }
        if self.nodes[n.index()].mac.coordinator.is_some() {
            self.schedule_parent_wake(n)?;
        }
        let _ = now;
        Ok(())
    }

    fn start_scan(&mut self, n: NodeId) -> Res {
        let now = self.now();
        let scan = self.cfg.scan_ticks();
        let node = &mut self.nodes[n.index()];
        node.scan_gen += 1;
        node.scans += 1;
        node.mac.phase = MacPhase::Scanning;
        node.mac.discovered.clear();
        node.mac.coordinator = None;
        node.rpl.clear_parents();
        node.awaiting.clear();
        node.exchange = None;
        node.attempts = 0;
        node.assoc_gen += 1;
        node.txq.clear();
        node.csma = None;
        node.csma_gen += 1;
        node.radio.trim(Listen::DioWake, now);
        node.radio.trim(Listen::Assoc, now);
        node.radio.listen(Listen::Scan, now, now + scan);
        let gen = node.scan_gen;
        let scans = node.scans;
        let m = self.ledger.milestones_mut(n)?;
        m.first_scan_start.get_or_insert(now);
        m.scan_end = None;
        m.parent_selected = None;
        self.tr(n, "scan-start", format_args!("n={scans} until={}", now + scan));
        self.at(now + scan, n, Ev::ScanEnd { gen })
    }

    fn rescan_later(&mut self, n: NodeId) -> Res {
        let now = self.now();
        let backoff = self.rng.random_range(0..self.cfg.superframe.bi);
        let node = &mut self.nodes[n.index()];
        node.mac.phase = MacPhase::Booting;
        let gen = node.scan_gen;
        self.tr(n, "rescan", format_args!("at={}", now + backoff));
        self.at(now + backoff, n, Ev::Rescan { gen })
    }

    fn on_scan_end(&mut self, n: NodeId, gen: u64) -> Res {
        let now = self.now();
        let node = &mut self.nodes[n.index()];
        if gen != node.scan_gen || node.mac.phase != MacPhase::Scanning {
            return Ok(());
        }
        node.radio.trim(Listen::Scan, now);
        let found = node.mac.discovered.len();
        self.ledger.milestones_mut(n)?.scan_end = Some(now);
        self.tr(n, "scan-end", format_args!("coordinators={found}"));
        if found == 0 {
            return self.rescan_later(n);
        }
        if !self.proposed() {
            return self.select_parent(n, None);
        }
        let plan = scan_sleep_plan(
            &self.nodes[n.index()].mac.discovered,
            now,
            self.cfg.superframe.bi,
            self.cfg.wake_guard,
        );
        if plan.is_empty() {
            return self.select_parent(n, None);
        }
        let node = &mut self.nodes[n.index()];
        node.mac.phase = MacPhase::AwaitingDioBeacons;
        node.awaiting = plan.iter().map(|w| w.coordinator).collect();
        for w in plan {
            self.tr(
                n,
                "dio-wake-plan",
                format_args!("coord={} beacon={} wake={}", w.coordinator, w.beacon_at, w.wake_at),
            );
            self.at(
                w.wake_at,
                n,
                Ev::DioWake {
                    gen,
                    coordinator: w.coordinator,
                    beacon_at: w.beacon_at,
                },
            )?;
        }
        Ok(())
    }

    fn on_dio_wake(&mut self, n: NodeId, gen: u64, c: NodeId, beacon_at: SimTime) -> Res {
        let now = self.now();
        let until = beacon_at + self.max_beacon_wait();
        let node = &mut self.nodes[n.index()];
        if gen != node.scan_gen || !node.awaiting.contains(&c) {
            return Ok(());
        }
        node.radio.listen(Listen::DioWake, now, until);
        self.at(until, n, Ev::DioMissed { gen, coordinator: c })
    }

    fn on_dio_missed(&mut self, n: NodeId, gen: u64, c: NodeId) -> Res {
        let node = &mut self.nodes[n.index()];
        if gen != node.scan_gen || !node.awaiting.remove(&c) {
            return Ok(());
        }
        self.tr(n, "dio-missed", format_args!("coord={c}"));
        if self.nodes[n.index()].awaiting.is_empty() {
            self.select_parent(n, None)?;
        }
        Ok(())
    }

    /// `just_heard` is the coordinator and start time of a beacon whose
    /// reception ended now; its CAP is still open.
    fn select_parent(&mut self, n: NodeId, just_heard: Option<(NodeId, SimTime)>) -> Res {
        let now = self.now();
        let choice = if self.proposed() {
            self.nodes[n.index()].rpl.preferred_parent
        } else {
            sbp_choice(&self.nodes[n.index()].mac.discovered)
        };
        let Some(p) = choice else {
            self.tr(n, "no-parent", format_args!(""));
            return if self.proposed() {
                self.start_scan(n)
            } else {
                self.rescan_later(n)
            };
        };
        self.ledger.milestones_mut(n)?.parent_selected = Some(now);
        self.tr(n, "parent-selected", format_args!("coord={p}"));
        match just_heard {
            Some((c, start)) if c == p => self.begin_exchange(n, p, start),
            _ => self.plan_assoc_wake(n, p),
        }
    }

    // ---- association, joiner side ----

    fn plan_assoc_wake(&mut self, n: NodeId, p: NodeId) -> Res {
        let now = self.now();
        let bi = self.cfg.superframe.bi;
        let guard = self.cfg.wake_guard;
        let sd = self.cfg.superframe.sd;
        let node = &mut self.nodes[n.index()];
        let Some(d) = node.mac.discovered.get(&p).copied() else {
            return self.start_scan(n);
        };
        let beacon_at = next_at_or_after(d.next_beacon_time, now, bi);
        let wake_at = SimTime(beacon_at.0.saturating_sub(guard).max(now.0));
        node.mac.phase = MacPhase::Associating;
        node.assoc_gen += 1;
        let gen = node.assoc_gen;
        let started = node.exchange.as_ref().map_or(now, |e| e.started);
        node.exchange = Some(Exchange {
            coordinator: p,
            step: Step::WaitBeacon,
            cap_end: beacon_at + sd,
            started,
            frames: Vec::new(),
        });
        self.at(wake_at, n, Ev::AssocWake { gen, beacon_at })
    }

    fn on_assoc_wake(&mut self, n: NodeId, gen: u64, beacon_at: SimTime) -> Res {
        let now = self.now();
        let until = beacon_at + self.max_beacon_wait();
        let node = &mut self.nodes[n.index()];
        if gen != node.assoc_gen {
            return Ok(());
        }
        node.radio.listen(Listen::Assoc, now, until);
        self.at(until, n, Ev::AssocMissed { gen })
    }

    fn begin_exchange(&mut self, n: NodeId, p: NodeId, beacon_start: SimTime) -> Res {
        let now = self.now();
        let cap_end = beacon_start + self.cfg.superframe.sd;
        let frame = self
            .cfg
            .frames
            .command(FrameKind::AssociationRequest, n, Address::Node(p));
        let node = &mut self.nodes[n.index()];
        node.mac.phase = MacPhase::Associating;
        node.assoc_gen += 1;
        let started = node.exchange.as_ref().map_or(now, |e| e.started);
        node.exchange = Some(Exchange {
            coordinator: p,
            step: Step::Request,
            cap_end,
            started,
            frames: Vec::new(),
        });
        node.radio.listen(Listen::Assoc, now, cap_end);
        self.tr(n, "assoc-start", format_args!("coord={p} cap_end={cap_end}"));
        self.enqueue(
            n,
            TxJob {
                frame,
                purpose: Purpose::AssocRequest,
                deadline: cap_end,
            },
        )
    }

    fn assoc_failed(&mut self, n: NodeId) -> Res {
        let now = self.now();
        let limit = self.cfg.assoc_retry_limit;
        let node = &mut self.nodes[n.index()];
        let Some(ex) = node.exchange.clone() else {
            return Ok(());
        };
        node.attempts += 1;
        node.assoc_gen += 1;
        node.txq
            .retain(|j| !matches!(j.purpose, Purpose::AssocRequest | Purpose::DataRequest));
        if node.csma.is_some() && node.txq.is_empty() {
            node.csma = None;
            node.csma_gen += 1;
        }
        node.radio.trim(Listen::Assoc, now);
        let attempts = node.attempts;
        self.tr(n, "assoc-fail", format_args!("coord={} attempt={attempts}", ex.coordinator));
        if attempts > limit {
            return self.start_scan(n);
        }
        let attempts_kept = attempts;
        self.plan_assoc_wake(n, ex.coordinator)?;
        self.nodes[n.index()].attempts = attempts_kept;
        self.kick_csma(n)
    }

    fn complete_association(&mut self, n: NodeId) -> Res {
        let now = self.now();
        let node = &mut self.nodes[n.index()];
        let Some(mut ex) = node.exchange.take() else {
            return Ok(());
        };
        let c = ex.coordinator;
        ex.frames.push(FrameKind::Ack);
        node.mac.phase = MacPhase::Associated;
        node.mac.coordinator = Some(c);
        node.associated_at = Some(now);
        node.assoc_gen += 1;
        node.radio.trim(Listen::Assoc, now);
        node.txq.clear();
        let attempts = node.attempts + 1;
        let metric = node.mac.discovered.get(&c).and_then(|d| d.metric);
        self.ledger.milestones_mut(n)?.associated = Some(now);
        self.associations.push(AssociationRecord {
            node: n,
            coordinator: c,
            started: ex.started,
            completed: now,
            frames: ex.frames,
            attempts,
        });
        self.tr(n, "associated", format_args!("coord={c} attempts={attempts}"));

        if !self.proposed() {
            // the blob carries the coordinator's rank; hand it to RPL as a DIO
            if let Some(rank) = metric {
                let dio = self.synth_dio(rank);
                self.process_dio(n, &dio, c)?;
            }
        }
        if self.nodes[n.index()].role == Role::Ffd {
            let offset = self.assign_slot(n)?;
            self.nodes[n.index()].mac.superframe_offset = Some(offset);
            self.tr(n, "slot", format_args!("offset={offset}"));
            self.start_coordinating(n, 0)?;
        }
        self.schedule_parent_wake(n)?;
        if self.joiners_left() == 0 {
            self.mark_converged()?;
        }
        Ok(())
    }

    /// Active period clear of every coordinator within two hops (tree or
    /// air); when the interval is too short for that, clear of direct
    /// neighbours only.
    fn assign_slot(&mut self, n: NodeId) -> Res<Ticks> {
        let strict = self.conflicts(n, true);
        match self.slots.allocate(n, &strict) {
            Ok(off) => Ok(off),
            Err(_) => {
                let near = self.conflicts(n, false);
                let off = self.slots.allocate(n, &near)?;
                self.tr(n, "slot-shared", format_args!("offset={off}"));
                Ok(off)
            }
        }
    }

    fn conflicts(&self, n: NodeId, two_hop: bool) -> Vec<NodeId> {
        let parent_of = |x: NodeId| self.nodes[x.index()].mac.coordinator;
        let tree_adj = |x: NodeId| -> Vec<NodeId> {
            let mut v: Vec<NodeId> = parent_of(x).into_iter().collect();
            v.extend(
                (0..self.nodes.len())
                    .map(|i| NodeId(i as u16))
                    .filter(|&y| parent_of(y) == Some(x)),
            );
            v
        };
        let radio_adj = |x: NodeId| self.cfg.topology.neighbors(x).to_vec();
        let mut out = BTreeSet::new();
        for adj in [&tree_adj as &dyn Fn(NodeId) -> Vec<NodeId>, &radio_adj] {
            for a in adj(n) {
                out.insert(a);
                if two_hop {
                    out.extend(adj(a));
                }
            }
        }
        out.remove(&n);
        out.into_iter()
            .filter(|x| self.slots.offset_of(*x).is_some())
            .collect()
    }

    fn start_coordinating(&mut self, n: NodeId, doubling: u32) -> Res {
        let now = self.now();
        let offset = self.nodes[n.index()]
            .mac
            .superframe_offset
            .expect("slot assigned");
        if self.proposed() {
            let params = self.trickle_params();
            self.nodes[n.index()]
                .rpl
                .start_trickle(params, doubling, now, &mut self.rng);
            self.schedule_trickle(n)?;
        }
        let first = self.cfg.superframe.next_slot_instant(offset, now);
        self.at(first, n, Ev::BeaconDue)
    }

    fn schedule_parent_wake(&mut self, n: NodeId) -> Res {
        let now = self.now();
        let Some(c) = self.nodes[n.index()].mac.coordinator else {
            return Ok(());
        };
        let Some(offset) = self.slots.offset_of(c) else {
            return Ok(());
        };
        let guard = self.cfg.wake_guard;
        let beacon = self.cfg.superframe.next_slot_instant(offset, now + guard + 1);
        self.at(SimTime(beacon.0 - guard), n, Ev::ParentWake)
    }

    fn on_parent_wake(&mut self, n: NodeId) -> Res {
        let now = self.now();
        let guard = self.cfg.wake_guard;
        let beacon_at = now + guard;
        let sd = self.cfg.superframe.sd;
        let max_wait = self.max_beacon_wait();
        let node = &mut self.nodes[n.index()];
        if node.mac.phase != MacPhase::Associated {
            return Ok(());
        }
        if node.role == Role::Rfd {
            node.radio.listen(Listen::ParentBeacon, now, beacon_at + max_wait);
        } else {
            node.radio.listen(Listen::ParentCap, now, beacon_at + sd);
        }
        self.at(now + self.cfg.superframe.bi, n, Ev::ParentWake)
    }

    // ---- coordinator side ----

    fn on_beacon_tx(&mut self, n: NodeId) -> Res {
        let now = self.now();
        let sd = self.cfg.superframe.sd;
        let bi = self.cfg.superframe.bi;
        self.at(now + bi, n, Ev::BeaconDue)?;
        if self.nodes[n.index()].radio.transmitting_at(now) {
            self.tr(n, "beacon-skipped", format_args!("radio busy"));
            return Ok(());
        }
        let capacity = self.cfg.frames.beacon_capacity();
        let scheme = self.cfg.scheme;
        let node = &mut self.nodes[n.index()];
        let rank = node.rpl.rank;
        let (payload, sent) = node.coupling.beacon_payload_hook(&scheme, rank, capacity);
        let build = self.cfg.frames.beacon(n, payload);
        let mut sent = sent;
        if build.rejected.is_some() {
            if let Some(p) = sent.take() {
                node.coupling.restore(p);
            }
        }
        let frame = build.frame;
        let has_dio = frame.dio().is_some();
        if has_dio {
            node.dios_emitted += 1;
        }
        node.own_beacon = Some(now);
        let phy = frame.phy_ticks(self.cfg.frames.phy_overhead);
        node.radio.listen(Listen::OwnCap, now + phy, now + sd);
        let fired = sent.map(|p| p.ready_since);
        self.beacons.push(BeaconRecord {
            coordinator: n,
            at: now,
            mac_bytes: frame.mac_bytes(),
            phy_ticks: phy,
            has_dio,
            dio_fired_at: fired,
        });
        if let Some(open) = self.open_solicitations.remove(&n) {
            for i in open {
                let rec = &mut self.solicitations[i];
                rec.next_beacon = Some(now);
                rec.next_has_dio = Some(has_dio);
                rec.dio_fired_at = fired;
            }
        }
        self.transmit(n, frame, Purpose::Beacon)
    }

    fn on_trickle_fire(&mut self, n: NodeId, draw: u64) -> Res {
        let now = self.now();
        let cfg = self.cfg.rpl;
        let node = &mut self.nodes[n.index()];
        let Some(timer) = node.rpl.trickle.as_mut() else {
            return Ok(());
        };
        if timer.draw_id() != draw {
            return Ok(());
        }
        let expiry = timer.on_expire(&mut self.rng);
        if expiry.emit {
            if let Some(dio) = node.rpl.current_dio(&cfg) {
                node.coupling.trickle_fire_to_pending(PendingDio {
                    dio,
                    ready_since: now,
                    trickle_draw: draw,
                    doubling: expiry.doubling,
                });
            }
        }
        self.tr(
            n,
            "trickle-fire",
            format_args!("emit={} n={}", expiry.emit, expiry.doubling),
        );
        self.schedule_trickle(n)
    }

    fn schedule_trickle(&mut self, n: NodeId) -> Res {
        if let Some(t) = self.nodes[n.index()].rpl.trickle.as_ref() {
            let (at, draw) = (t.fire_time(), t.draw_id());
            self.at(at, n, Ev::TrickleFire { draw })?;
        }
        Ok(())
    }

    fn process_dio(&mut self, n: NodeId, dio: &Dio, from: NodeId) -> Res {
        let now = self.now();
        let cfg = self.cfg.rpl;
        let node = &mut self.nodes[n.index()];
        let before = node.rpl.trickle.as_ref().map(|t| t.draw_id());
        let decision = node.rpl.process_dio(&cfg, dio, from, now, &mut self.rng)?;
        let after = node.rpl.trickle.as_ref().map(|t| t.draw_id());
        if before != after {
            self.schedule_trickle(n)?;
        }
        if let crate::rpl::ParentDecision::Changed { parent, rank } = decision {
            self.tr(n, "rpl-parent", format_args!("parent={parent} rank={rank}"));
        }
        Ok(())
    }

    // ---- transmission and reception ----

    fn enqueue(&mut self, n: NodeId, job: TxJob) -> Res {
        self.nodes[n.index()].txq.push_back(job);
        self.kick_csma(n)
    }

    fn kick_csma(&mut self, n: NodeId) -> Res {
        let now = self.now();
        let params = self.cfg.csma;
        let node = &mut self.nodes[n.index()];
        if node.csma.is_some() || node.txq.is_empty() || node.radio.transmitting_at(now) {
            return Ok(());
        }
        let state = CsmaState::new(&params);
        let backoff = state.draw_backoff(&params, &mut self.rng);
        node.csma = Some(state);
        node.csma_gen += 1;
        let gen = node.csma_gen;
        self.at(now + backoff, n, Ev::CsmaAttempt { gen })
    }

    fn on_csma_attempt(&mut self, n: NodeId, gen: u64) -> Res {
        let now = self.now();
        let params = self.cfg.csma;
        let phy_overhead = self.cfg.frames.phy_overhead;
        let busy_channel = self.channel.is_busy(n, now);
        let node = &mut self.nodes[n.index()];
        if gen != node.csma_gen || node.csma.is_none() {
            return Ok(());
        }
        let Some(job) = node.txq.front() else {
            node.csma = None;
            return Ok(());
        };
        if now + job.frame.phy_ticks(phy_overhead) > job.deadline {
            return self.fail_job(n, "deadline");
        }
        if busy_channel || node.radio.transmitting_at(now) {
            let state = node.csma.as_mut().expect("checked");
            return match state.on_busy(&params) {
                CcaVerdict::Retry => {
                    let backoff = state.draw_backoff(&params, &mut self.rng);
                    self.at(now + backoff, n, Ev::CsmaAttempt { gen })
                }
                CcaVerdict::ChannelAccessFailure => self.fail_job(n, "channel-access-failure"),
            };
        }
        let job = node.txq.pop_front().expect("checked");
        node.csma = None;
        self.transmit(n, job.frame, job.purpose)
    }

    fn fail_job(&mut self, n: NodeId, why: &str) -> Res {
        let node = &mut self.nodes[n.index()];
        let job = node.txq.pop_front().expect("failing the head job");
        node.csma = None;
        node.csma_gen += 1;
        self.tr(n, "csma-fail", format_args!("{} {why}", job.frame.kind));
        match job.purpose {
            Purpose::AssocRequest | Purpose::DataRequest => self.assoc_failed(n)?,
            Purpose::AssocReply { joiner } => {
                self.nodes[n.index()].joining.remove(&joiner);
            }
            _ => {}
        }
        self.kick_csma(n)
    }

    fn transmit(&mut self, n: NodeId, frame: Frame, purpose: Purpose) -> Res {
        let now = self.now();
        let dur = frame.phy_ticks(self.cfg.frames.phy_overhead);
        let mac_bytes = frame.mac_bytes();
        self.audit.frames_by_kind[frame.kind.index()] += 1;
        self.audit.max_mac_bytes = self.audit.max_mac_bytes.max(mac_bytes);
        if mac_bytes > MAX_MAC_FRAME_BYTES {
            self.audit.oversized += 1;
        }
        if frame.kind == FrameKind::BeaconRequest && !self.audit.beacon_request_sizes.contains(&mac_bytes)
        {
            self.audit.beacon_request_sizes.push(mac_bytes);
        }
        let node = &self.nodes[n.index()];
        if let (MacPhase::Associated, Address::Node(dst)) = (node.mac.phase, frame.dst) {
            if node.mac.coordinator != Some(dst) && !node.joining.contains(&dst) {
                self.audit.stray_unicasts += 1;
            }
        }
        self.ledger.record_tx_frame(
            n,
            TxFrame {
                at: now,
                kind: frame.kind,
                mac_bytes,
                payload_bytes: frame.payload_bytes(),
            },
        )?;
        self.tr(
            n,
            "tx",
            format_args!(
                "{} dst={} bytes={mac_bytes} payload={} ticks={dur}",
                frame.kind,
                frame.dst,
                frame.payload.label()
            ),
        );
        self.nodes[n.index()].radio.begin_tx(now, now + dur);
        let tx = self.channel.begin(n, now, dur, frame)?;
        self.at(now + dur, n, Ev::TxEnd { tx, purpose })
    }

    fn on_tx_end(&mut self, n: NodeId, tx: u64, purpose: Purpose) -> Res {
        let now = self.now();
        let nodes = &self.nodes;
        let outcomes = self
            .channel
            .propagate(tx, |rx, s, e| !nodes[rx.index()].inert && nodes[rx.index()].radio.is_listening(s, e));
        let (frame, start) = {
            let rec = self.channel.record(tx).expect("transmission still recorded");
            (rec.frame.clone(), rec.start)
        };
        for (rx, outcome) in outcomes {
            match outcome {
                RxOutcome::Delivered => {
                    self.ledger.record_rx_bytes(rx, now, frame.mac_bytes())?;
                    if self.trace.enabled() {
                        self.tr(rx, "rx", format_args!("{} from={}", frame.kind, n));
                    }
                    self.on_receive(rx, &frame, purpose, start)?;
                }
                RxOutcome::Collided => {
                    self.tr(rx, "collision", format_args!("{} from={}", frame.kind, n));
                }
                RxOutcome::MissedAsleep => {}
            }
        }

        let node = &mut self.nodes[n.index()];
        match purpose {
            Purpose::AssocRequest | Purpose::DataRequest => {
                if let Some(ex) = node.exchange.as_mut() {
                    let (next, timeout) = if purpose == Purpose::AssocRequest {
                        (Step::AwaitAck, now + ACK_WAIT_TICKS)
                    } else {
                        (Step::AwaitReply, (ex.cap_end + 1).max(now + ACK_WAIT_TICKS))
                    };
                    ex.frames.push(frame.kind);
                    ex.step = next;
                    node.assoc_gen += 1;
                    let gen = node.assoc_gen;
                    self.at(timeout, n, Ev::AssocTimeout { gen })?;
                }
            }
            Purpose::FinalAck => self.complete_association(n)?,
            _ => {}
        }
        self.kick_csma(n)
    }

    fn on_receive(&mut self, n: NodeId, frame: &Frame, purpose: Purpose, start: SimTime) -> Res {
        let now = self.now();
        let src = frame.src;
        match frame.kind {
            FrameKind::Beacon => self.on_beacon_rx(n, frame, start),
            FrameKind::BeaconRequest => {
                if !self.proposed() || self.nodes[n.index()].rpl.trickle.is_none() {
                    return Ok(());
                }
                self.nodes[n.index()]
                    .rpl
                    .trickle_reset(ResetCause::BeaconRequest, now, &mut self.rng);
                self.schedule_trickle(n)?;
                self.tr(n, "trickle-reset", format_args!("cause=beacon-request from={src}"));
                if let Purpose::Solicit {
                    target,
                    prompted_by,
                } = purpose
                {
                    if target == n {
                        self.solicitations.push(SolicitationRecord {
                            requester: src,
                            coordinator: n,
                            prompted_by,
                            reset_at: now,
                            next_beacon: None,
                            next_has_dio: None,
                            dio_fired_at: None,
                        });
                        let idx = self.solicitations.len() - 1;
                        self.open_solicitations.entry(n).or_default().push(idx);
                    }
                }
                Ok(())
            }
            FrameKind::AssociationRequest if frame.is_unicast_to(n) => {
                if !self.nodes[n.index()].coordinating() {
                    return Ok(());
                }
                self.nodes[n.index()].joining.insert(src);
                let ack = self.cfg.frames.command(FrameKind::Ack, n, Address::Node(src));
                self.at(
                    now + TURNAROUND_TICKS,
                    n,
                    Ev::TxDirect {
                        frame: ack,
                        purpose: Purpose::AssocAck,
                    },
                )
            }
            FrameKind::Ack if frame.is_unicast_to(n) => {
                let node = &mut self.nodes[n.index()];
                match node.exchange.as_mut() {
                    Some(ex) if ex.step == Step::AwaitAck && ex.coordinator == src => {
                        ex.frames.push(FrameKind::Ack);
                        ex.step = Step::DataRequest;
                        let deadline = ex.cap_end;
                        node.assoc_gen += 1;
                        let dr = self
                            .cfg
                            .frames
                            .command(FrameKind::DataRequest, n, Address::Node(src));
                        self.enqueue(
                            n,
                            TxJob {
                                frame: dr,
                                purpose: Purpose::DataRequest,
                                deadline,
                            },
                        )
                    }
                    _ => {
                        if node.joining.remove(&src) {
                            self.tr(n, "child", format_args!("node={src}"));
                        }
                        Ok(())
                    }
                }
            }
            FrameKind::DataRequest if frame.is_unicast_to(n) => {
                let node = &self.nodes[n.index()];
                let (Some(b), true) = (node.own_beacon, node.joining.contains(&src)) else {
                    return Ok(());
                };
                let reply = self
                    .cfg
                    .frames
                    .command(FrameKind::AssociationReply, n, Address::Node(src));
                let deadline = b + self.cfg.superframe.sd;
                self.enqueue(
                    n,
                    TxJob {
                        frame: reply,
                        purpose: Purpose::AssocReply { joiner: src },
                        deadline,
                    },
                )
            }
            FrameKind::AssociationReply if frame.is_unicast_to(n) => {
                let node = &mut self.nodes[n.index()];
                match node.exchange.as_mut() {
                    Some(ex) if ex.step == Step::AwaitReply && ex.coordinator == src => {
                        ex.frames.push(FrameKind::AssociationReply);
                        ex.step = Step::FinalAck;
                        node.assoc_gen += 1;
                        let ack = self.cfg.frames.command(FrameKind::Ack, n, Address::Node(src));
                        self.at(
                            now + TURNAROUND_TICKS,
                            n,
                            Ev::TxDirect {
                                frame: ack,
                                purpose: Purpose::FinalAck,
                            },
                        )
                    }
                    _ => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }

    fn on_beacon_rx(&mut self, n: NodeId, frame: &Frame, start: SimTime) -> Res {
        let now = self.now();
        let c = frame.src;
        let bi = self.cfg.superframe.bi;
        let sd = self.cfg.superframe.sd;
        let proposed = self.proposed();
        let dio = frame.dio().copied();
        let metric = match &frame.payload {
            Payload::Sbp(b) => Some(b.rank),
            _ => None,
        };
        let phase = self.nodes[n.index()].mac.phase;
        match phase {
            MacPhase::Scanning => {
                let node = &mut self.nodes[n.index()];
                let first = node.mac.note_beacon(c, start, bi, dio.is_some(), metric);
                if let (true, Some(d)) = (proposed, dio) {
                    self.process_dio(n, &d, c)?;
                }
                if proposed && solicitation_decision(first, dio.is_some()) {
                    if let Some(d) = self.nodes[n.index()].mac.discovered.get_mut(&c) {
                        d.solicited = true;
                    }
                    let req = self
                        .cfg
                        .frames
                        .command(FrameKind::BeaconRequest, n, Address::Broadcast);
                    self.tr(n, "solicit", format_args!("coord={c}"));
                    self.enqueue(
                        n,
                        TxJob {
                            frame: req,
                            purpose: Purpose::Solicit {
                                target: c,
                                prompted_by: start,
                            },
                            deadline: start + sd,
                        },
                    )?;
                }
                Ok(())
            }
            MacPhase::AwaitingDioBeacons => {
                let node = &mut self.nodes[n.index()];
                node.mac.note_beacon(c, start, bi, dio.is_some(), metric);
                if let (true, Some(d)) = (proposed, dio) {
                    self.process_dio(n, &d, c)?;
                }
                let node = &mut self.nodes[n.index()];
                if node.awaiting.remove(&c) {
                    node.radio.trim(Listen::DioWake, now);
                    if dio.is_none() {
                        self.tr(n, "dio-absent", format_args!("coord={c}"));
                    }
                    if self.nodes[n.index()].awaiting.is_empty() {
                        self.select_parent(n, Some((c, start)))?;
                    }
                }
                Ok(())
            }
            MacPhase::Associating => {
                let node = &mut self.nodes[n.index()];
                node.mac.note_beacon(c, start, bi, dio.is_some(), metric);
                let waiting = node
                    .exchange
                    .as_ref()
                    .is_some_and(|e| e.coordinator == c && e.step == Step::WaitBeacon);
                if !waiting {
                    return Ok(());
                }
                if let (true, Some(d)) = (proposed, dio) {
                    self.process_dio(n, &d, c)?;
                }
                self.begin_exchange(n, c, start)
            }
            MacPhase::Associated => {
                if self.nodes[n.index()].mac.coordinator != Some(c) {
                    return Ok(());
                }
                if let (true, Some(d)) = (proposed, dio) {
                    self.process_dio(n, &d, c)?;
                }
                let node = &mut self.nodes[n.index()];
                if node.role == Role::Rfd {
                    node.radio.trim(Listen::ParentBeacon, now);
                }
                Ok(())
            }
            MacPhase::Booting => Ok(()),
        }
    }

    // ---- wrap-up ----

    fn finish(mut self, end: SimTime) -> Res<RunOutput> {
        for (i, node) in self.nodes.iter().enumerate() {
            let id = NodeId(i as u16);
            let (rx, tx) = node.radio.finalize(end);
            for (f, t) in rx {
                self.ledger
                    .record_state(id, crate::mac154::RadioState::Rx, SimTime(f), SimTime(t))?;
            }
            for (f, t) in tx {
                self.ledger
                    .record_state(id, crate::mac154::RadioState::Tx, SimTime(f), SimTime(t))?;
            }
        }
        let root = self.cfg.topology.root();
        let assoc: Vec<Option<SimTime>> = self.nodes.iter().map(|n| n.associated_at).collect();
        let nodes = &self.nodes;
        let convergence = convergence_time(
            &assoc,
            |id| {
                let n = &nodes[id.index()];
                id == root || n.inert || n.preassociated
            },
            SimTime::ZERO,
        );
        let hop = |id: NodeId| -> Option<u32> {
            let mut cur = id;
            let mut h = 0;
            while cur != root {
                cur = nodes[cur.index()].mac.coordinator?;
                h += 1;
                if h as usize > nodes.len() {
                    return None;
                }
            }
            Some(h)
        };
        let reports = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let id = NodeId(i as u16);
                NodeReport {
                    id,
                    role: n.role,
                    preassociated: n.preassociated,
                    inert: n.inert,
                    coordinator: n.mac.coordinator,
                    rpl_parent: n.rpl.preferred_parent,
                    rank: n.rpl.rank,
                    hop: if n.inert { None } else { hop(id) },
                    associated_at: n.associated_at,
                    superframe_offset: n.mac.superframe_offset,
                    scans: n.scans,
                    rpl_stats: n.rpl.stats,
                    dios_emitted: n.dios_emitted,
                }
            })
            .collect();
        Ok(RunOutput {
            seed: self.seed,
            end,
            converged_at: self.converged_at,
            convergence,
            ledger: self.ledger,
            nodes: reports,
            solicitations: self.solicitations,
            beacons: self.beacons,
            associations: self.associations,
            audit: self.audit,
            trace: self.trace.into_string(),
        })
    }
}
