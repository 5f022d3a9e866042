use super::{EngineError, NodeId, SimTime, Ticks, Topology};

/// Records older than this (relative to now) can no longer overlap a frame
/// still on the air; 127 + PHY bytes is well under 300 ticks.
const RETENTION: Ticks = 1024;

#[derive(Debug, Clone)]
pub struct TransmissionRecord<F> {
    pub id: u64,
    pub sender: NodeId,
    pub start: SimTime,
    pub end: SimTime,
    pub frame: F,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RxOutcome {
    Delivered,
    Collided,
    MissedAsleep,
}

impl RxOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            RxOutcome::Delivered => "delivered",
            RxOutcome::Collided => "collided",
            RxOutcome::MissedAsleep => "missed-asleep",
        }
    }
}

/// Unit-disk broadcast medium without capture: any overlap at a receiver
/// destroys every frame involved.
pub struct Channel<F> {
    reach: Vec<Vec<bool>>,
    neighbors: Vec<Vec<NodeId>>,
    records: Vec<TransmissionRecord<F>>,
    next_id: u64,
}

impl<F> Channel<F> {
    pub fn new(topology: &Topology) -> Self {
        let n = topology.len();
        let mut reach = vec![vec![false; n]; n];
        let mut neighbors = Vec::with_capacity(n);
        for a in 0..n {
            let nb = topology.neighbors(NodeId(a as u16)).to_vec();
            for b in &nb {
                reach[a][b.index()] = true;
            }
            neighbors.push(nb);
        }
        Channel {
            reach,
            neighbors,
            records: Vec::new(),
            next_id: 0,
        }
    }

    fn hears(&self, receiver: NodeId, sender: NodeId) -> bool {
        self.reach[receiver.index()][sender.index()]
    }

    pub fn begin(
        &mut self,
        sender: NodeId,
        start: SimTime,
        duration: Ticks,
        frame: F,
    ) -> Result<u64, EngineError> {
        if sender.index() >= self.reach.len() {
            return Err(EngineError::UnknownNode(sender));
        }
        assert!(duration > 0, "a transmission must occupy the medium");
        self.prune(start);
        let id = self.next_id;
        self.next_id += 1;
        self.records.push(TransmissionRecord {
            id,
            sender,
            start,
            end: start + duration,
            frame,
        });
        Ok(id)
    }

    pub fn record(&self, id: u64) -> Option<&TransmissionRecord<F>> {
        self.records
            .binary_search_by_key(&id, |r| r.id)
            .ok()
            .map(|i| &self.records[i])
    }

    /// Energy detection at `node`: a frame that started strictly before `now`
    /// and has not ended yet. Frames starting on the same tick are not yet
    /// detectable (CCA precedes the turnaround).
    pub fn is_busy(&self, node: NodeId, now: SimTime) -> bool {
        self.records.iter().any(|r| {
            r.sender != node && self.hears(node, r.sender) && r.start < now && now < r.end
        })
    }

    /// Outcome for every in-range receiver of transmission `id` (the sender
    /// itself is never a receiver). `listening(node, start, end)` reports
    /// whether the receiver's radio was in receive mode for the whole frame.
    pub fn propagate(
        &self,
        id: u64,
        mut listening: impl FnMut(NodeId, SimTime, SimTime) -> bool,
    ) -> Vec<(NodeId, RxOutcome)> {
        let Some(tx) = self.record(id) else {
            return Vec::new();
        };
        self.neighbors[tx.sender.index()]
            .iter()
            .map(|&rx| {
                let outcome = if !listening(rx, tx.start, tx.end) {
                    RxOutcome::MissedAsleep
                } else if self.records.iter().any(|o| {
                    o.id != tx.id
                        && o.sender != tx.sender
                        && o.sender != rx
                        && self.hears(rx, o.sender)
                        && o.start < tx.end
                        && tx.start < o.end
                }) {
                    RxOutcome::Collided
                } else {
                    RxOutcome::Delivered
                };
                (rx, outcome)
            })
            .collect()
    }

    fn prune(&mut self, now: SimTime) {
        let horizon = now.0.saturating_sub(RETENTION);
        self.records.retain(|r| r.end.0 >= horizon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{NodeSpec, Role};

    // 0 and 2 both reach 1 but not each other
    fn hidden_terminal() -> Topology {
        Topology::new(
            vec![
                NodeSpec::new(0, 0.0, 0.0, Role::PanCoordinator),
                NodeSpec::new(1, 40.0, 0.0, Role::Ffd),
                NodeSpec::new(2, 80.0, 0.0, Role::Ffd),
            ],
            50.0,
        )
        .unwrap()
    }

    #[test]
    fn single_sender_is_delivered() {
        let mut ch = Channel::new(&hidden_terminal());
        let id = ch.begin(NodeId(0), SimTime(10), 42, ()).unwrap();
        let out = ch.propagate(id, |_, _, _| true);
        assert_eq!(out, vec![(NodeId(1), RxOutcome::Delivered)]);
    }

    #[test]
    fn overlapping_senders_collide_at_common_receiver() {
        let mut ch = Channel::new(&hidden_terminal());
        let a = ch.begin(NodeId(0), SimTime(10), 42, ()).unwrap();
        let b = ch.begin(NodeId(2), SimTime(30), 42, ()).unwrap();
        assert_eq!(ch.propagate(a, |_, _, _| true), vec![(NodeId(1), RxOutcome::Collided)]);
        assert_eq!(ch.propagate(b, |_, _, _| true), vec![(NodeId(1), RxOutcome::Collided)]);
    }

    #[test]
    fn back_to_back_frames_do_not_collide() {
        let mut ch = Channel::new(&hidden_terminal());
        let a = ch.begin(NodeId(0), SimTime(10), 42, ()).unwrap();
        let _b = ch.begin(NodeId(2), SimTime(52), 42, ()).unwrap();
        assert_eq!(ch.propagate(a, |_, _, _| true), vec![(NodeId(1), RxOutcome::Delivered)]);
    }

    #[test]
    fn sleeping_receiver_misses() {
        let mut ch = Channel::new(&hidden_terminal());
        let id = ch.begin(NodeId(1), SimTime(0), 20, ()).unwrap();
        let out = ch.propagate(id, |n, _, _| n != NodeId(2));
        assert_eq!(
            out,
            vec![(NodeId(0), RxOutcome::Delivered), (NodeId(2), RxOutcome::MissedAsleep)]
        );
    }

    #[test]
    fn busy_detection_excludes_same_tick_start() {
        let mut ch = Channel::new(&hidden_terminal());
        ch.begin(NodeId(0), SimTime(100), 42, ()).unwrap();
        assert!(!ch.is_busy(NodeId(1), SimTime(100)));
        assert!(ch.is_busy(NodeId(1), SimTime(101)));
        assert!(!ch.is_busy(NodeId(1), SimTime(142)));
        // out of range of the sender
        assert!(!ch.is_busy(NodeId(2), SimTime(101)));
    }
}
