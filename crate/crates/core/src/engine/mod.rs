//! Deterministic discrete-event kernel.
//!
//! Time is counted in 802.15.4 symbol periods (16 µs at 250 kb/s). Every run
//! owns exactly one [`Scheduler`], one [`Channel`] and one [`SimRng`]; a run
//! is therefore a pure function of its configuration and seed.

mod channel;
mod queue;
mod topology;
mod trace;

use std::fmt;
use std::ops::{Add, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use channel::{Channel, RxOutcome, TransmissionRecord};
pub use queue::{Event, EventHandle, Scheduler};
pub use topology::{NodeSpec, Role, Topology};
pub use trace::Trace;

/// Duration of one tick (one 802.15.4 symbol at 2.4 GHz O-QPSK) in microseconds.
pub const TICK_MICROS: u64 = 16;

/// Durations are plain tick counts.
pub type Ticks = u64;

/// The single random source of a run.
pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn ticks(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        ticks_to_secs(self.0)
    }

    pub fn saturating_sub(self, other: SimTime) -> Ticks {
        self.0.saturating_sub(other.0)
    }
}

impl Add<Ticks> for SimTime {
    type Output = SimTime;

    fn add(self, rhs: Ticks) -> SimTime {
        SimTime(self.0 + rhs)
    }
}

impl Sub<SimTime> for SimTime {
    type Output = Ticks;

    fn sub(self, rhs: SimTime) -> Ticks {
        self.0 - rhs.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn ticks_to_secs(ticks: Ticks) -> f64 {
    ticks as f64 * TICK_MICROS as f64 * 1e-6
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u16);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("past event: fire time {fire} is before now {now}")]
    PastEvent { fire: SimTime, now: SimTime },
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("node ids must be contiguous from 0; missing {0}")]
    MissingNode(NodeId),
    #[error("topology needs exactly one PAN coordinator, found {0}")]
    PanCoordinatorCount(usize),
    #[error("radio range must be positive, got {0}")]
    BadRange(f64),
    #[error("node {node}: {reason}")]
    BadPreassociation { node: NodeId, reason: String },
}
