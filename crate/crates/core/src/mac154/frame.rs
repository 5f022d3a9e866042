use std::fmt;

use crate::engine::{NodeId, Ticks};
use crate::rpl::{Dio, Rank};

/// aMaxPHYPacketSize: largest MAC frame (PSDU) in bytes.
pub const MAX_MAC_FRAME_BYTES: usize = 127;

/// Symbols per byte at 250 kb/s (8 bits at 4 bits per symbol).
pub const TICKS_PER_BYTE: Ticks = 2;

/// aTurnaroundTime.
pub const TURNAROUND_TICKS: Ticks = 12;

/// macAckWaitDuration for the 2.4 GHz PHY.
pub const ACK_WAIT_TICKS: Ticks = 54;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FrameKind {
    Beacon,
    BeaconRequest,
    AssociationRequest,
    AssociationReply,
    DataRequest,
    Ack,
}

impl FrameKind {
    pub const ALL: [FrameKind; 6] = [
        FrameKind::Beacon,
        FrameKind::BeaconRequest,
        FrameKind::AssociationRequest,
        FrameKind::AssociationReply,
        FrameKind::DataRequest,
        FrameKind::Ack,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FrameKind::Beacon => "beacon",
            FrameKind::BeaconRequest => "beacon-request",
            FrameKind::AssociationRequest => "association-request",
            FrameKind::AssociationReply => "association-reply",
            FrameKind::DataRequest => "data-request",
            FrameKind::Ack => "ack",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Address {
    Node(NodeId),
    Broadcast,
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Address::Node(n) => write!(f, "{n}"),
            Address::Broadcast => f.write_str("bcast"),
        }
    }
}

/// Opaque metric blob carried by every beacon in the SBP baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SbpBlob {
    pub rank: Rank,
    pub size_bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum Payload {
    #[default]
    Empty,
    Dio(Dio),
    Sbp(SbpBlob),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::Empty => 0,
            Payload::Dio(d) => d.size_bytes,
            Payload::Sbp(b) => b.size_bytes,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label(&self) -> &'static str {
        match self {
            Payload::Empty => "none",
            Payload::Dio(_) => "dio",
            Payload::Sbp(_) => "sbp",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameKind,
    pub src: NodeId,
    pub dst: Address,
    pub header_bytes: usize,
    pub payload: Payload,
}

impl Frame {
    pub fn payload_bytes(&self) -> usize {
        self.payload.len()
    }

    pub fn mac_bytes(&self) -> usize {
        self.header_bytes + self.payload_bytes()
    }

    pub fn phy_ticks(&self, phy_overhead_bytes: usize) -> Ticks {
        (phy_overhead_bytes + self.mac_bytes()) as Ticks * TICKS_PER_BYTE
    }

    pub fn dio(&self) -> Option<&Dio> {
        match &self.payload {
            Payload::Dio(d) => Some(d),
            _ => None,
        }
    }

    pub fn is_unicast_to(&self, node: NodeId) -> bool {
        self.dst == Address::Node(node)
    }
}

/// Byte sizes of the MAC frames the simulator emits. Command frame sizes use
/// short addressing for the coordinator and extended for the joining device.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameSizes {
    pub empty_beacon: usize,
    pub beacon_request: usize,
    pub association_request: usize,
    pub data_request: usize,
    pub association_reply: usize,
    pub ack: usize,
    pub phy_overhead: usize,
}

impl Default for FrameSizes {
    fn default() -> Self {
        FrameSizes {
            empty_beacon: 15,
            beacon_request: 8,
            association_request: 21,
            data_request: 18,
            association_reply: 27,
            ack: 5,
            phy_overhead: 6,
        }
    }
}

/// A beacon with the requested payload, or an empty beacon plus the payload
/// that did not fit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeaconBuild {
    pub frame: Frame,
    pub rejected: Option<Payload>,
}

impl FrameSizes {
    pub fn beacon_capacity(&self) -> usize {
        MAX_MAC_FRAME_BYTES.saturating_sub(self.empty_beacon)
    }

    pub fn beacon(&self, src: NodeId, payload: Payload) -> BeaconBuild {
        let mut frame = Frame {
            kind: FrameKind::Beacon,
            src,
            dst: Address::Broadcast,
            header_bytes: self.empty_beacon,
            payload: Payload::Empty,
        };
        if payload.len() <= self.beacon_capacity() {
            frame.payload = payload;
            BeaconBuild {
                frame,
                rejected: None,
            }
        } else {
            BeaconBuild {
                frame,
                rejected: Some(payload),
            }
        }
    }

    pub fn command(&self, kind: FrameKind, src: NodeId, dst: Address) -> Frame {
        let header_bytes = match kind {
            FrameKind::BeaconRequest => self.beacon_request,
            FrameKind::AssociationRequest => self.association_request,
            FrameKind::DataRequest => self.data_request,
            FrameKind::AssociationReply => self.association_reply,
            FrameKind::Ack => self.ack,
            FrameKind::Beacon => self.empty_beacon,
        };
        Frame {
            kind,
            src,
            dst,
            header_bytes,
            payload: Payload::Empty,
        }
    }

    pub fn max_beacon_ticks(&self) -> Ticks {
        (self.phy_overhead + MAX_MAC_FRAME_BYTES) as Ticks * TICKS_PER_BYTE
    }
}
