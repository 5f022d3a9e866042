//! Beacon-enabled IEEE 802.15.4 MAC building blocks.
//!
//! The pieces here are pure: superframe arithmetic, frame sizing, the CSMA/CA
//! backoff state machine, the static active-period allocator and the per-node
//! MAC state. The event-driven glue that runs them lives in
//! [`crate::network`].

mod csma;
mod frame;
mod slots;
mod superframe;

use std::collections::BTreeMap;
use std::fmt;

use crate::engine::{NodeId, SimTime};
use crate::rpl::Rank;

pub use csma::{CcaVerdict, CsmaParams, CsmaState};
pub use frame::{
    Address, BeaconBuild, Frame, FrameKind, FrameSizes, Payload, SbpBlob, ACK_WAIT_TICKS,
    MAX_MAC_FRAME_BYTES, TICKS_PER_BYTE, TURNAROUND_TICKS,
};
pub use slots::SlotAllocator;
pub use superframe::{SuperframeConfig, BASE_SUPERFRAME_TICKS, MAX_ORDER};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MacError {
    #[error("superframe order {so} exceeds beacon order {bo}")]
    SoAboveBo { bo: u8, so: u8 },
    #[error("orders must be within 0..=14 (bo={bo}, so={so})")]
    OrderOutOfRange { bo: u8, so: u8 },
    #[error("base superframe duration must be positive")]
    ZeroBase,
    #[error("no free active period for coordinator {node}: all {slots} slots taken")]
    NoFreeSlot { node: NodeId, slots: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MacPhase {
    Booting,
    Scanning,
    AwaitingDioBeacons,
    Associating,
    Associated,
}

impl MacPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            MacPhase::Booting => "booting",
            MacPhase::Scanning => "scanning",
            MacPhase::AwaitingDioBeacons => "awaiting-dio-beacons",
            MacPhase::Associating => "associating",
            MacPhase::Associated => "associated",
        }
    }
}

impl fmt::Display for MacPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RadioState {
    Tx,
    Rx,
    Sleep,
}

impl RadioState {
    pub fn as_str(self) -> &'static str {
        match self {
            RadioState::Tx => "tx",
            RadioState::Rx => "rx",
            RadioState::Sleep => "sleep",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// What a scanning node remembers about one coordinator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Discovered {
    /// Start of the most recent beacon heard.
    pub last_beacon: SimTime,
    /// Expected start of the following beacon.
    pub next_beacon_time: SimTime,
    pub dio_seen: bool,
    pub solicited: bool,
    /// Rank advertised by an SBP blob, when the beacon carried one.
    pub metric: Option<Rank>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MacNodeState {
    pub phase: MacPhase,
    pub coordinator: Option<NodeId>,
    pub superframe_offset: Option<u64>,
    pub discovered: BTreeMap<NodeId, Discovered>,
    pub radio: RadioState,
}

impl Default for MacNodeState {
    fn default() -> Self {
        MacNodeState {
            phase: MacPhase::Booting,
            coordinator: None,
            superframe_offset: None,
            discovered: BTreeMap::new(),
            radio: RadioState::Sleep,
        }
    }
}

impl MacNodeState {
    /// Step 1 of the scan: note the beacon and when the next one is due.
    /// Returns `true` when this is the first beacon from `from` in this scan.
    pub fn note_beacon(
        &mut self,
        from: NodeId,
        beacon_start: SimTime,
        bi: u64,
        carries_dio: bool,
        metric: Option<Rank>,
    ) -> bool {
        let first = !self.discovered.contains_key(&from);
        let entry = self.discovered.entry(from).or_insert(Discovered {
            last_beacon: beacon_start,
            next_beacon_time: beacon_start + bi,
            dio_seen: false,
            solicited: false,
            metric: None,
        });
        entry.last_beacon = beacon_start;
        entry.next_beacon_time = beacon_start + bi;
        entry.dio_seen |= carries_dio;
        if metric.is_some() {
            entry.metric = metric;
        }
        first
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn note_beacon_tracks_first_and_next() {
        let mut st = MacNodeState::default();
        assert!(st.note_beacon(NodeId(2), SimTime(100), 30720, false, None));
        let d = st.discovered[&NodeId(2)];
        assert_eq!(d.next_beacon_time, SimTime(30820));
        assert!(!d.dio_seen);
        assert!(!st.note_beacon(NodeId(2), SimTime(30820), 30720, true, None));
        let d = st.discovered[&NodeId(2)];
        assert_eq!(d.next_beacon_time, SimTime(61540));
        assert!(d.dio_seen);
    }
}
