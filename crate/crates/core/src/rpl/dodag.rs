use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;

use crate::engine::{NodeId, SimTime};

use super::{TrickleParams, TrickleTimer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rank(pub u16);

impl Rank {
    pub const INFINITE: Rank = Rank(0xFFFF);

    pub fn is_infinite(self) -> bool {
        self == Rank::INFINITE
    }
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dio {
    pub dodag_id: u16,
    pub rank: Rank,
    pub version: u8,
    pub size_bytes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RplRole {
    Root,
    Router,
    Leaf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResetCause {
    Dis,
    BeaconRequest,
    Inconsistency,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RplConfig {
    pub min_hop_rank_increase: u16,
    pub dio_size_bytes: usize,
    pub dodag_id: u16,
    pub version: u8,
}

impl Default for RplConfig {
    fn default() -> Self {
        RplConfig {
            min_hop_rank_increase: 256,
            dio_size_bytes: 84,
            dodag_id: 0,
            version: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RplStats {
    pub resets_by_dis: u32,
    pub resets_by_solicitation: u32,
    pub resets_by_inconsistency: u32,
    pub consistent_receptions: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParentDecision {
    /// Sender's rank does not improve on ours; not a parent candidate.
    Ignored,
    /// Preferred parent and rank unchanged.
    Unchanged { consistent: bool },
    /// Preferred parent or rank moved.
    Changed { parent: NodeId, rank: Rank },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RplError {
    #[error("the DODAG root does not process DIOs")]
    RootProcessesDio,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RplNode {
    pub role: RplRole,
    pub rank: Rank,
    pub preferred_parent: Option<NodeId>,
    pub parent_set: BTreeMap<NodeId, Rank>,
    pub version: Option<u8>,
    pub trickle: Option<TrickleTimer>,
    pub stats: RplStats,
}

impl RplNode {
    pub fn new(role: RplRole, cfg: &RplConfig) -> Self {
        let (rank, version) = match role {
            RplRole::Root => (Rank(cfg.min_hop_rank_increase), Some(cfg.version)),
            _ => (Rank::INFINITE, None),
        };
        RplNode {
            role,
            rank,
            preferred_parent: None,
            parent_set: BTreeMap::new(),
            version,
            trickle: None,
            stats: RplStats::default(),
        }
    }

    pub fn emits_dios(&self) -> bool {
        self.role != RplRole::Leaf
    }

    /// DIO describing this node's current DODAG state.
    pub fn current_dio(&self, cfg: &RplConfig) -> Option<Dio> {
        if !self.emits_dios() || self.rank.is_infinite() {
            return None;
        }
        Some(Dio {
            dodag_id: cfg.dodag_id,
            rank: self.rank,
            version: self.version.unwrap_or(cfg.version),
            size_bytes: cfg.dio_size_bytes,
        })
    }

    /// Starts Trickle for a root or router; leaves never run one.
    pub fn start_trickle<R: Rng + ?Sized>(
        &mut self,
        params: TrickleParams,
        doubling: u32,
        now: SimTime,
        rng: &mut R,
    ) {
        if self.emits_dios() {
            self.trickle = Some(TrickleTimer::start_at_doubling(params, doubling, now, rng));
        }
    }

    pub fn trickle_reset<R: Rng + ?Sized>(&mut self, cause: ResetCause, now: SimTime, rng: &mut R) -> bool {
        let Some(timer) = self.trickle.as_mut() else {
            return false;
        };
        timer.reset(now, rng);
        match cause {
            ResetCause::Dis => self.stats.resets_by_dis += 1,
            ResetCause::BeaconRequest => self.stats.resets_by_solicitation += 1,
            ResetCause::Inconsistency => self.stats.resets_by_inconsistency += 1,
        }
        true
    }

    /// Objective function: minimum advertised rank, lowest node id on ties.
    fn recompute(&mut self, inc: u16) {
        let best = self
            .parent_set
            .iter()
            .min_by_key(|(id, rank)| (**rank, **id))
            .map(|(id, rank)| (*id, *rank));
        match best {
            Some((id, rank)) => {
                self.preferred_parent = Some(id);
                self.rank = Rank(rank.0.saturating_add(inc).min(Rank::INFINITE.0 - 1));
            }
            None => {
                self.preferred_parent = None;
                self.rank = Rank::INFINITE;
            }
        }
    }

    pub fn process_dio<R: Rng + ?Sized>(
        &mut self,
        cfg: &RplConfig,
        dio: &Dio,
        from: NodeId,
        now: SimTime,
        rng: &mut R,
    ) -> Result<ParentDecision, RplError> {
        if self.role == RplRole::Root {
            return Err(RplError::RootProcessesDio);
        }
        if dio.rank.is_infinite() || (!self.rank.is_infinite() && dio.rank >= self.rank) {
            return Ok(ParentDecision::Ignored);
        }
        let consistent =
            self.parent_set.get(&from) == Some(&dio.rank) && self.version == Some(dio.version);
        self.parent_set.insert(from, dio.rank);
        self.version = Some(dio.version);

        let before = (self.preferred_parent, self.rank);
        self.recompute(cfg.min_hop_rank_increase);
        let after = (self.preferred_parent, self.rank);

        if consistent {
            self.stats.consistent_receptions += 1;
            if let Some(t) = self.trickle.as_mut() {
                t.hear_consistent(now);
            }
        }
        if before.1 != after.1 {
            self.trickle_reset(ResetCause::Inconsistency, now, rng);
        }
        Ok(if before != after {
            ParentDecision::Changed {
                parent: after.0.expect("non-empty parent set"),
                rank: after.1,
            }
        } else {
            ParentDecision::Unchanged { consistent }
        })
    }

    /// DIS: roots and routers reset Trickle, leaves ignore it.
    pub fn process_dis<R: Rng + ?Sized>(&mut self, now: SimTime, rng: &mut R) -> bool {
        self.trickle_reset(ResetCause::Dis, now, rng)
    }

    /// Forgets every candidate (fresh scan).
    pub fn clear_parents(&mut self) {
        if self.role != RplRole::Root {
            self.parent_set.clear();
            self.preferred_parent = None;
            self.rank = Rank::INFINITE;
        }
    }
}
