//! Event-driven network: every node runs the MAC, RPL and the coupling
//! layer on a shared channel and a single seeded RNG.

mod radio;
mod sim;

use std::fmt;

use crate::coupling::{CouplingError, SchemeConfig};
use crate::engine::{EngineError, NodeId, Role, SimTime, Ticks, Topology};
use crate::mac154::{CsmaParams, FrameKind, FrameSizes, MacError, SuperframeConfig};
use crate::metrics::{Convergence, MetricsError, RadioLedger};
use crate::rpl::{Rank, RplConfig, RplError, RplStats};

pub use sim::Simulator;

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Rpl(#[from] RplError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanDuration {
    /// One beacon interval (beacon order known in advance).
    Auto,
    Ticks(Ticks),
}

impl fmt::Display for ScanDuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScanDuration::Auto => f.write_str("auto"),
            ScanDuration::Ticks(t) => write!(f, "{t}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub topology: Topology,
    pub superframe: SuperframeConfig,
    pub frames: FrameSizes,
    pub csma: CsmaParams,
    pub rpl: RplConfig,
    pub imax_doublings: u32,
    pub k: u32,
    pub scheme: SchemeConfig,
    pub scan: ScanDuration,
    pub assoc_retry_limit: u32,
    /// Receiver turns on this long before an expected beacon.
    pub wake_guard: Ticks,
    /// Nodes boot uniformly in `[0, boot_jitter]`; the PAN coordinator at 0.
    pub boot_jitter: Ticks,
    /// Keep running this long after the last association.
    pub steady_ticks: Ticks,
    /// Give up on convergence at this tick.
    pub max_ticks: Ticks,
    pub trace: bool,
}

impl SimConfig {
    pub fn new(topology: Topology, superframe: SuperframeConfig) -> Self {
        SimConfig {
            topology,
            superframe,
            frames: FrameSizes::default(),
            csma: CsmaParams::default(),
            rpl: RplConfig::default(),
            imax_doublings: 8,
            k: 10,
            scheme: SchemeConfig::default(),
            scan: ScanDuration::Auto,
            assoc_retry_limit: 3,
            wake_guard: 4,
            boot_jitter: 0,
            steady_ticks: 0,
            max_ticks: 20_000 * superframe.bi.max(1),
            trace: false,
        }
    }

    pub fn scan_ticks(&self) -> Ticks {
        match self.scan {
            ScanDuration::Auto => self.superframe.bi,
            ScanDuration::Ticks(t) => t,
        }
    }

    pub fn imin(&self) -> Result<Ticks, CouplingError> {
        self.scheme.resolve_imin(&self.superframe)
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        self.scheme.validate()?;
        self.imin()?;
        if self.scan_ticks() == 0 {
            return Err(NetworkError::Config("scan duration must be positive".into()));
        }
        if self.rpl.dio_size_bytes == 0 {
            return Err(NetworkError::Config("dio_size_bytes must be at least 1".into()));
        }
        if self.max_ticks == 0 {
            return Err(NetworkError::Config("max_ticks must be positive".into()));
        }
        if self.wake_guard >= self.superframe.sd {
            return Err(NetworkError::Config("wake guard must be shorter than SD".into()));
        }
        Ok(())
    }
}

/// A beacon-request heard by the coordinator it was aimed at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SolicitationRecord {
    pub requester: NodeId,
    pub coordinator: NodeId,
    /// Start of the beacon that prompted the request.
    pub prompted_by: SimTime,
    /// Reception time, which is also the Trickle reset time.
    pub reset_at: SimTime,
    /// The coordinator's first beacon after the reset.
    pub next_beacon: Option<SimTime>,
    pub next_has_dio: Option<bool>,
    /// When Trickle produced the DIO carried by that beacon.
    pub dio_fired_at: Option<SimTime>,
}

impl SolicitationRecord {
    /// Wait between DIO generation and the beacon that carried it.
    pub fn dio_delay(&self) -> Option<Ticks> {
        match (self.next_beacon, self.dio_fired_at, self.next_has_dio) {
            (Some(b), Some(f), Some(true)) => Some(b - f),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BeaconRecord {
    pub coordinator: NodeId,
    pub at: SimTime,
    pub mac_bytes: usize,
    pub phy_ticks: Ticks,
    pub has_dio: bool,
    pub dio_fired_at: Option<SimTime>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FrameAudit {
    pub frames_by_kind: [u64; FrameKind::ALL.len()],
    pub max_mac_bytes: usize,
    pub oversized: u64,
    /// Sizes of every beacon-request sent, deduplicated.
    pub beacon_request_sizes: Vec<usize>,
    /// Unicast frames from an associated node to someone other than its
    /// coordinator.
    pub stray_unicasts: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssociationRecord {
    pub node: NodeId,
    pub coordinator: NodeId,
    pub started: SimTime,
    pub completed: SimTime,
    /// Frame kinds of the successful exchange, in air order.
    pub frames: Vec<FrameKind>,
    pub attempts: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeReport {
    pub id: NodeId,
    pub role: Role,
    pub preassociated: bool,
    pub inert: bool,
    pub coordinator: Option<NodeId>,
    pub rpl_parent: Option<NodeId>,
    pub rank: Rank,
    /// Hops to the PAN coordinator in the cluster-tree.
    pub hop: Option<u32>,
    pub associated_at: Option<SimTime>,
    pub superframe_offset: Option<Ticks>,
    pub scans: u32,
    pub rpl_stats: RplStats,
    pub dios_emitted: u64,
}

#[derive(Debug)]
pub struct RunOutput {
    pub seed: u64,
    pub end: SimTime,
    pub converged_at: Option<SimTime>,
    pub convergence: Convergence,
    pub ledger: RadioLedger,
    pub nodes: Vec<NodeReport>,
    pub solicitations: Vec<SolicitationRecord>,
    pub beacons: Vec<BeaconRecord>,
    pub associations: Vec<AssociationRecord>,
    pub audit: FrameAudit,
    pub trace: String,
}

impl RunOutput {
    /// `[converged_at, end)`, when the run converged.
    pub fn steady_window(&self) -> Option<std::ops::Range<SimTime>> {
        self.converged_at.map(|c| c..self.end)
    }

    pub fn construction_window(&self) -> std::ops::Range<SimTime> {
        SimTime::ZERO..self.converged_at.unwrap_or(self.end)
    }
}
