//! Radio-state accounting, energy, control overhead and convergence.

use std::ops::Range;

use crate::engine::{NodeId, SimTime, Ticks, TICK_MICROS};
use crate::mac154::{FrameKind, RadioState};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("node {node}: {state} interval [{from}, {to}) overlaps an existing one")]
    Overlap {
        node: NodeId,
        state: &'static str,
        from: SimTime,
        to: SimTime,
    },
    #[error("node {node}: interval ends before it starts ({from} > {to})")]
    Reversed { node: NodeId, from: SimTime, to: SimTime },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("energy model parameter `{0}` must be positive")]
    NonPositive(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Interval {
    from: SimTime,
    to: SimTime,
    state: RadioState,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TxFrame {
    pub at: SimTime,
    pub kind: FrameKind,
    pub mac_bytes: usize,
    pub payload_bytes: usize,
}

/// Join milestones of one node. All `None` for pre-associated nodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Milestones {
    pub first_scan_start: Option<SimTime>,
    pub scan_end: Option<SimTime>,
    pub parent_selected: Option<SimTime>,
    pub associated: Option<SimTime>,
}

#[derive(Clone, Debug, Default)]
struct NodeLedger {
    /// Sorted and disjoint. Sleep is everything not covered.
    on: Vec<Interval>,
    tx: Vec<TxFrame>,
    rx: Vec<(SimTime, usize)>,
    milestones: Milestones,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StateTicks {
    pub tx: Ticks,
    pub rx: Ticks,
    pub sleep: Ticks,
}

impl StateTicks {
    pub fn on(&self) -> Ticks {
        self.tx + self.rx
    }

    pub fn total(&self) -> Ticks {
        self.tx + self.rx + self.sleep
    }
}

#[derive(Clone, Debug, Default)]
pub struct RadioLedger {
    nodes: Vec<NodeLedger>,
}

impl RadioLedger {
    pub fn new(nodes: usize) -> Self {
        RadioLedger {
            nodes: vec![NodeLedger::default(); nodes],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, node: NodeId) -> Result<&NodeLedger, MetricsError> {
        self.nodes.get(node.index()).ok_or(MetricsError::UnknownNode(node))
    }

    fn node_mut(&mut self, node: NodeId) -> Result<&mut NodeLedger, MetricsError> {
        self.nodes
            .get_mut(node.index())
            .ok_or(MetricsError::UnknownNode(node))
    }

    /// Sleep intervals are only checked against tx/rx ones; they are the
    /// implicit complement.
    pub fn record_state(
        &mut self,
        node: NodeId,
        state: RadioState,
        from: SimTime,
        to: SimTime,
    ) -> Result<(), MetricsError> {
        if to < from {
            return Err(MetricsError::Reversed { node, from, to });
        }
        if to == from {
            return Ok(());
        }
        let ledger = self.node_mut(node)?;
        let at = ledger.on.partition_point(|iv| iv.to <= from);
        if let Some(next) = ledger.on.get(at) {
            if next.from < to {
                return Err(MetricsError::Overlap {
                    node,
                    state: state.as_str(),
                    from,
                    to,
                });
            }
        }
        if state == RadioState::Sleep {
            return Ok(());
        }
        // merge with an abutting interval in the same state
        if at > 0 {
            let prev = &mut ledger.on[at - 1];
            if prev.to == from && prev.state == state {
                prev.to = to;
                return Ok(());
            }
        }
        ledger.on.insert(at, Interval { from, to, state });
        Ok(())
    }

    pub fn record_tx_frame(&mut self, node: NodeId, frame: TxFrame) -> Result<(), MetricsError> {
        self.node_mut(node)?.tx.push(frame);
        Ok(())
    }

    pub fn record_rx_bytes(&mut self, node: NodeId, at: SimTime, bytes: usize) -> Result<(), MetricsError> {
        self.node_mut(node)?.rx.push((at, bytes));
        Ok(())
    }

    pub fn milestones_mut(&mut self, node: NodeId) -> Result<&mut Milestones, MetricsError> {
        Ok(&mut self.node_mut(node)?.milestones)
    }

    pub fn milestones(&self, node: NodeId) -> Result<Milestones, MetricsError> {
        Ok(self.node(node)?.milestones)
    }

    /// Ticks per state within `window`.
    pub fn ticks(&self, node: NodeId, window: Range<SimTime>) -> Result<StateTicks, MetricsError> {
        let ledger = self.node(node)?;
        let mut out = StateTicks::default();
        if window.end <= window.start {
            return Ok(out);
        }
        let first = ledger.on.partition_point(|iv| iv.to <= window.start);
        for iv in ledger.on[first..].iter().take_while(|iv| iv.from < window.end) {
            let overlap = iv.to.min(window.end) - iv.from.max(window.start);
            match iv.state {
                RadioState::Tx => out.tx += overlap,
                RadioState::Rx => out.rx += overlap,
                RadioState::Sleep => {}
            }
        }
        out.sleep = (window.end - window.start) - out.tx - out.rx;
        Ok(out)
    }

    pub fn tx_frames(&self, node: NodeId) -> Result<&[TxFrame], MetricsError> {
        Ok(&self.node(node)?.tx)
    }

    pub fn rx_bytes(&self, node: NodeId, window: Range<SimTime>) -> Result<usize, MetricsError> {
        Ok(self
            .node(node)?
            .rx
            .iter()
            .filter(|(t, _)| window.contains(t))
            .map(|(_, b)| b)
            .sum())
    }

    /// Control bytes sent per node and frame kind within `window`.
    pub fn overhead_bytes(&self, window: Range<SimTime>) -> OverheadReport {
        let per_node: Vec<NodeOverhead> = self
            .nodes
            .iter()
            .map(|n| {
                let mut o = NodeOverhead::default();
                for f in n.tx.iter().filter(|f| window.contains(&f.at)) {
                    o.by_kind[f.kind.index()] += f.mac_bytes as u64;
                    o.payload += f.payload_bytes as u64;
                }
                o
            })
            .collect();
        OverheadReport { per_node }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NodeOverhead {
    /// MAC bytes by [`FrameKind::index`].
    pub by_kind: [u64; FrameKind::ALL.len()],
    /// Beacon payload bytes (DIO or SBP blob).
    pub payload: u64,
}

impl NodeOverhead {
    pub fn total(&self) -> u64 {
        self.by_kind.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OverheadReport {
    pub per_node: Vec<NodeOverhead>,
}

impl OverheadReport {
    pub fn total(&self) -> u64 {
        self.per_node.iter().map(NodeOverhead::total).sum()
    }

    pub fn total_of(&self, kind: FrameKind) -> u64 {
        self.per_node.iter().map(|n| n.by_kind[kind.index()]).sum()
    }

    pub fn payload(&self) -> u64 {
        self.per_node.iter().map(|n| n.payload).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyModel {
    pub i_tx: f64,
    pub i_rx: f64,
    pub i_sleep: f64,
    pub voltage: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel {
            i_tx: 0.0174,
            i_rx: 0.0188,
            i_sleep: 0.0,
            voltage: 3.0,
        }
    }
}

impl EnergyModel {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.i_tx > 0.0) {
            return Err(MetricsError::NonPositive("i_tx"));
        }
        if !(self.i_rx > 0.0) {
            return Err(MetricsError::NonPositive("i_rx"));
        }
        if !(self.voltage > 0.0) {
            return Err(MetricsError::NonPositive("voltage"));
        }
        if !(self.i_sleep >= 0.0) {
            return Err(MetricsError::NonPositive("i_sleep"));
        }
        Ok(())
    }

    pub fn current(&self, state: RadioState) -> f64 {
        match state {
            RadioState::Tx => self.i_tx,
            RadioState::Rx => self.i_rx,
            RadioState::Sleep => self.i_sleep,
        }
    }

    /// Joules for `ticks` spent in `state`.
    pub fn energy(&self, state: RadioState, ticks: Ticks) -> f64 {
        ticks as f64 * TICK_MICROS as f64 * 1e-6 * self.current(state) * self.voltage
    }

    pub fn breakdown(&self, t: &StateTicks) -> EnergyBreakdown {
        EnergyBreakdown {
            tx: self.energy(RadioState::Tx, t.tx),
            rx: self.energy(RadioState::Rx, t.rx),
            sleep: self.energy(RadioState::Sleep, t.sleep),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyBreakdown {
    pub tx: f64,
    pub rx: f64,
    pub sleep: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Convergence {
    pub converged: bool,
    /// Latest association relative to the start; `None` when not converged.
    pub ticks: Option<Ticks>,
    pub unassociated: Vec<NodeId>,
}

/// `assoc[i]` is the association time of node `i`, `None` if it never
/// associated. Nodes in `exempt` (root, pre-associated) are ignored.
pub fn convergence_time(
    assoc: &[Option<SimTime>],
    exempt: impl Fn(NodeId) -> bool,
    start: SimTime,
) -> Convergence {
    let mut latest = 0;
    let mut unassociated = Vec::new();
    for (i, a) in assoc.iter().enumerate() {
        let id = NodeId(i as u16);
        if exempt(id) {
            continue;
        }
        match a {
            Some(t) => latest = latest.max(t.saturating_sub(start)),
            None => unassociated.push(id),
        }
    }
    let converged = unassociated.is_empty();
    Convergence {
        converged,
        ticks: converged.then_some(latest),
        unassociated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(x: u64) -> SimTime {
        SimTime(x)
    }

    #[test]
    fn rx_for_one_beacon_interval() {
        let mut l = RadioLedger::new(1);
        l.record_state(NodeId(0), RadioState::Rx, t(0), t(30720)).unwrap();
        let s = l.ticks(NodeId(0), t(0)..t(30720)).unwrap();
        assert_eq!(s.rx, 30720);
        assert_eq!(s.total(), 30720);
    }

    #[test]
    fn zero_length_is_noop() {
        let mut l = RadioLedger::new(1);
        l.record_state(NodeId(0), RadioState::Tx, t(5), t(5)).unwrap();
        assert_eq!(l.ticks(NodeId(0), t(0)..t(10)).unwrap().tx, 0);
    }

    #[test]
    fn overlap_is_rejected() {
        let mut l = RadioLedger::new(1);
        l.record_state(NodeId(0), RadioState::Rx, t(10), t(20)).unwrap();
        let err = l.record_state(NodeId(0), RadioState::Tx, t(15), t(25)).unwrap_err();
        assert!(matches!(err, MetricsError::Overlap { .. }));
        assert!(l.record_state(NodeId(0), RadioState::Sleep, t(5), t(11)).is_err());
        l.record_state(NodeId(0), RadioState::Tx, t(20), t(25)).unwrap();
        l.record_state(NodeId(0), RadioState::Tx, t(0), t(10)).unwrap();
    }

    #[test]
    fn windowed_query_clips() {
        let mut l = RadioLedger::new(1);
        l.record_state(NodeId(0), RadioState::Rx, t(0), t(100)).unwrap();
        l.record_state(NodeId(0), RadioState::Tx, t(100), t(150)).unwrap();
        l.record_state(NodeId(0), RadioState::Rx, t(300), t(400)).unwrap();
        let s = l.ticks(NodeId(0), t(50)..t(350)).unwrap();
        assert_eq!((s.rx, s.tx, s.sleep), (100, 50, 150));
    }

    #[test]
    fn energy_examples() {
        let m = EnergyModel::default();
        // 3.5 ms = 218.75 ticks; use the tick-exact joule formula on seconds
        let per_tick = m.energy(RadioState::Rx, 1);
        let e = per_tick * 3.5e-3 / (TICK_MICROS as f64 * 1e-6);
        assert!((e - 197.4e-6).abs() < 1e-12);
        assert!((3.0 * e - 592.2e-6).abs() < 1e-12);
        assert_eq!(m.energy(RadioState::Tx, 0), 0.0);
        assert_eq!(m.energy(RadioState::Sleep, 1_000_000), 0.0);
    }

    #[test]
    fn energy_model_validation() {
        assert!(EnergyModel::default().validate().is_ok());
        let bad = EnergyModel {
            voltage: 0.0,
            ..EnergyModel::default()
        };
        assert_eq!(bad.validate().unwrap_err(), MetricsError::NonPositive("voltage"));
    }

    #[test]
    fn overhead_by_kind_in_window() {
        let mut l = RadioLedger::new(2);
        for k in 0..4u64 {
            l.record_tx_frame(
                NodeId(0),
                TxFrame {
                    at: t(k * 100),
                    kind: FrameKind::Beacon,
                    mac_bytes: 15 + 28,
                    payload_bytes: 28,
                },
            )
            .unwrap();
        }
        l.record_tx_frame(
            NodeId(1),
            TxFrame {
                at: t(50),
                kind: FrameKind::BeaconRequest,
                mac_bytes: 8,
                payload_bytes: 0,
            },
        )
        .unwrap();
        let r = l.overhead_bytes(t(0)..t(300));
        assert_eq!(r.payload(), 3 * 28);
        assert_eq!(r.total_of(FrameKind::Beacon), 3 * 43);
        assert_eq!(r.total_of(FrameKind::BeaconRequest), 8);
        assert_eq!(r.total(), 3 * 43 + 8);
    }

    #[test]
    fn convergence_cases() {
        let c = convergence_time(&[None, Some(t(500)), Some(t(900))], |n| n == NodeId(0), t(0));
        assert_eq!(c.ticks, Some(900));
        let c = convergence_time(&[None, Some(t(500)), None], |n| n == NodeId(0), t(0));
        assert!(!c.converged);
        assert_eq!(c.unassociated, vec![NodeId(2)]);
        let c = convergence_time(&[None, None], |_| true, t(0));
        assert_eq!(c.ticks, Some(0));
    }
}
