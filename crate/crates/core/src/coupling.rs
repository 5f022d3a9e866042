//! Glue between the MAC and RPL that lets a joining node pick its 802.15.4
//! coordinator from the RPL preferred parent, with neither layer modified.
//!
//! * DIOs produced by Trickle wait in a [`CouplingState`] and ride in the next
//!   beacon whose payload has room for them.
//! * A scanning node that hears a coordinator's first beacon without a DIO
//!   answers with a bare beacon-request command in that coordinator's CAP;
//!   the coordinator turns its reception into a Trickle reset.
//! * With `Imin <= BI - SD` the reset always fires before the next beacon, so
//!   the solicited DIO arrives exactly one beacon interval later.
//!
//! The SBP baseline instead stamps a fixed-size metric blob into every beacon.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::engine::{NodeId, SimTime, Ticks};
use crate::mac154::{Discovered, Payload, SbpBlob, SuperframeConfig};
use crate::rpl::{Dio, Rank};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// DIO-in-beacon with beacon-request solicitation.
    Proposed,
    /// Systematic beacon payload baseline.
    Sbp,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Sbp => "sbp",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "proposed" => Ok(Scheme::Proposed),
            "sbp" => Ok(Scheme::Sbp),
            other => Err(format!("unknown scheme `{other}` (expected proposed or sbp)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IminPolicy {
    /// `Imin = BI - SD`.
    Auto,
    Explicit(Ticks),
}

impl FromStr for IminPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(IminPolicy::Auto);
        }
        match s.parse::<Ticks>() {
            Ok(0) => Err("imin must be at least one tick".to_string()),
            Ok(v) => Ok(IminPolicy::Explicit(v)),
            Err(_) => Err(format!("expected `auto` or a tick count, got `{s}`")),
        }
    }
}

impl fmt::Display for IminPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IminPolicy::Auto => f.write_str("auto"),
            IminPolicy::Explicit(t) => write!(f, "{t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CouplingError {
    #[error("BI equals SD (BO = SO): no inactive period to fit Imin = BI - SD")]
    NoInactivePeriod,
    #[error("SBP payload size must be at least one byte")]
    EmptySbp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    pub sbp_size_bytes: usize,
    pub imin_policy: IminPolicy,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            scheme: Scheme::Proposed,
            sbp_size_bytes: 28,
            imin_policy: IminPolicy::Auto,
        }
    }
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<(), CouplingError> {
        if self.scheme == Scheme::Sbp && self.sbp_size_bytes == 0 {
            return Err(CouplingError::EmptySbp);
        }
        Ok(())
    }

    pub fn resolve_imin(&self, sf: &SuperframeConfig) -> Result<Ticks, CouplingError> {
        match self.imin_policy {
            IminPolicy::Auto => auto_imin(sf),
            IminPolicy::Explicit(t) => Ok(t),
        }
    }
}

/// Largest `Imin` that still lands a reset-triggered DIO in the next beacon.
pub fn auto_imin(sf: &SuperframeConfig) -> Result<Ticks, CouplingError> {
    if sf.bi <= sf.sd {
        return Err(CouplingError::NoInactivePeriod);
    }
    Ok(sf.bi - sf.sd)
}

/// `Imin <= BI - SD`.
pub fn solicitation_guaranteed(imin: Ticks, sf: &SuperframeConfig) -> bool {
    sf.bi > sf.sd && imin <= sf.bi - sf.sd
}

/// With an unknown beacon order a scan no shorter than half the real BI adds
/// no delay to the scheme.
pub fn scan_is_sufficient(scan: Ticks, sf: &SuperframeConfig) -> bool {
    2 * scan >= sf.bi
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PendingDio {
    pub dio: Dio,
    pub ready_since: SimTime,
    /// Trickle draw that produced it and the doubling index it fired in.
    pub trickle_draw: u64,
    pub doubling: u32,
}

/// Per-coordinator coupling state.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CouplingState {
    pending: Option<PendingDio>,
    deferrals: u32,
}

impl CouplingState {
    pub fn pending(&self) -> Option<&PendingDio> {
        self.pending.as_ref()
    }

    pub fn deferrals(&self) -> u32 {
        self.deferrals
    }

    /// Trickle decided to transmit: stage the DIO for the next beacon,
    /// replacing anything older.
    pub fn trickle_fire_to_pending(&mut self, pending: PendingDio) {
        self.pending = Some(pending);
    }

    /// Payload for the beacon being built now. Returns the staged DIO that
    /// went out, if any.
    pub fn beacon_payload_hook(
        &mut self,
        cfg: &SchemeConfig,
        own_rank: Rank,
        capacity_bytes: usize,
    ) -> (Payload, Option<PendingDio>) {
        match cfg.scheme {
            Scheme::Sbp => (
                Payload::Sbp(SbpBlob {
                    rank: own_rank,
                    size_bytes: cfg.sbp_size_bytes,
                }),
                None,
            ),
            Scheme::Proposed => match self.pending {
                Some(p) if p.dio.size_bytes <= capacity_bytes => {
                    self.pending = None;
                    (Payload::Dio(p.dio), Some(p))
                }
                Some(_) => {
                    self.deferrals += 1;
                    (Payload::Empty, None)
                }
                None => (Payload::Empty, None),
            },
        }
    }

    /// The MAC refused the payload after all; keep it for the next beacon.
    pub fn restore(&mut self, pending: PendingDio) {
        self.deferrals += 1;
        if self.pending.is_none() {
            self.pending = Some(pending);
        }
    }
}

/// Solicit iff this is the first beacon from that coordinator and it lacks a DIO.
pub fn solicitation_decision(first_from_coordinator: bool, beacon_has_dio: bool) -> bool {
    first_from_coordinator && !beacon_has_dio
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlannedWake {
    pub coordinator: NodeId,
    pub beacon_at: SimTime,
    pub wake_at: SimTime,
}

/// Steps 3-4 of the scan: after `scan_end`, sleep and wake just before the
/// next beacon of every coordinator whose DIO has not been seen yet.
/// Coordinators whose DIO already arrived need no wake.
pub fn scan_sleep_plan(
    discovered: &BTreeMap<NodeId, Discovered>,
    scan_end: SimTime,
    bi: Ticks,
    guard: Ticks,
) -> Vec<PlannedWake> {
    let mut plan: Vec<PlannedWake> = discovered
        .iter()
        .filter(|(_, d)| !d.dio_seen)
        .map(|(&coordinator, d)| {
            let beacon_at = next_at_or_after(d.next_beacon_time, scan_end, bi);
            PlannedWake {
                coordinator,
                beacon_at,
                wake_at: SimTime(beacon_at.0.saturating_sub(guard).max(scan_end.0)),
            }
        })
        .collect();
    plan.sort_by_key(|w| (w.beacon_at, w.coordinator));
    plan
}

/// First instant of the periodic sequence through `expected` that is `>= t`.
pub fn next_at_or_after(expected: SimTime, t: SimTime, bi: Ticks) -> SimTime {
    if expected >= t {
        return expected;
    }
    let k = (t.0 - expected.0).div_ceil(bi);
    SimTime(expected.0 + k * bi)
}

/// SBP parent choice at L2: best advertised metric, lowest id on ties.
pub fn sbp_choice(discovered: &BTreeMap<NodeId, Discovered>) -> Option<NodeId> {
    discovered
        .iter()
        .filter_map(|(id, d)| d.metric.map(|m| (m, *id)))
        .min()
        .map(|(_, id)| id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sf(bo: u8, so: u8) -> SuperframeConfig {
        SuperframeConfig::from_orders(bo, so).unwrap()
    }

    fn pending(size: usize, at: u64) -> PendingDio {
        PendingDio {
            dio: Dio {
                dodag_id: 0,
                rank: Rank(256),
                version: 0,
                size_bytes: size,
            },
            ready_since: SimTime(at),
            trickle_draw: 1,
            doubling: 0,
        }
    }

    #[test]
    fn auto_imin_values() {
        assert_eq!(auto_imin(&sf(5, 2)).unwrap(), 26880);
        assert_eq!(auto_imin(&sf(3, 2)).unwrap(), 3840);
        assert_eq!(auto_imin(&sf(4, 4)).unwrap_err(), CouplingError::NoInactivePeriod);
    }

    #[test]
    fn guarantee_condition() {
        let s = sf(5, 2);
        assert!(solicitation_guaranteed(26880, &s));
        assert!(!solicitation_guaranteed(26881, &s));
        assert!(!solicitation_guaranteed(2 * s.bi, &s));
    }

    #[test]
    fn pending_dio_embedded_when_it_fits() {
        let cfg = SchemeConfig::default();
        let mut st = CouplingState::default();
        st.trickle_fire_to_pending(pending(84, 10));
        let (p, sent) = st.beacon_payload_hook(&cfg, Rank(256), 112);
        assert!(matches!(p, Payload::Dio(d) if d.size_bytes == 84));
        assert!(sent.is_some());
        assert!(st.pending().is_none());
    }

    #[test]
    fn no_pending_means_empty_beacon() {
        let cfg = SchemeConfig::default();
        let mut st = CouplingState::default();
        let (p, sent) = st.beacon_payload_hook(&cfg, Rank(256), 112);
        assert_eq!(p, Payload::Empty);
        assert!(sent.is_none());
    }

    #[test]
    fn oversized_dio_is_deferred_not_dropped() {
        let cfg = SchemeConfig::default();
        let mut st = CouplingState::default();
        st.trickle_fire_to_pending(pending(84, 10));
        let (p, _) = st.beacon_payload_hook(&cfg, Rank(256), 40);
        assert_eq!(p, Payload::Empty);
        assert!(st.pending().is_some());
        assert_eq!(st.deferrals(), 1);
        let (p, _) = st.beacon_payload_hook(&cfg, Rank(256), 112);
        assert!(matches!(p, Payload::Dio(_)));
    }

    #[test]
    fn sbp_blob_in_every_beacon() {
        let cfg = SchemeConfig {
            scheme: Scheme::Sbp,
            sbp_size_bytes: 28,
            imin_policy: IminPolicy::Auto,
        };
        let mut st = CouplingState::default();
        for _ in 0..3 {
            let (p, _) = st.beacon_payload_hook(&cfg, Rank(512), 112);
            assert_eq!(
                p,
                Payload::Sbp(SbpBlob {
                    rank: Rank(512),
                    size_bytes: 28
                })
            );
        }
    }

    #[test]
    fn later_fire_replaces_earlier() {
        let cfg = SchemeConfig::default();
        let mut st = CouplingState::default();
        st.trickle_fire_to_pending(pending(84, 10));
        let mut newer = pending(84, 20);
        newer.dio.rank = Rank(512);
        st.trickle_fire_to_pending(newer);
        let (_, sent) = st.beacon_payload_hook(&cfg, Rank(256), 112);
        assert_eq!(sent.unwrap().ready_since, SimTime(20));
        let (p, _) = st.beacon_payload_hook(&cfg, Rank(256), 112);
        assert_eq!(p, Payload::Empty);
    }

    #[test]
    fn solicitation_conditions() {
        assert!(solicitation_decision(true, false));
        assert!(!solicitation_decision(true, true));
        assert!(!solicitation_decision(false, false));
    }

    fn disc(next: u64, dio_seen: bool, metric: Option<u16>) -> Discovered {
        Discovered {
            last_beacon: SimTime(next - 30720),
            next_beacon_time: SimTime(next),
            dio_seen,
            solicited: !dio_seen,
            metric: metric.map(Rank),
        }
    }

    #[test]
    fn plan_wakes_only_for_missing_dios() {
        let mut d = BTreeMap::new();
        d.insert(NodeId(1), disc(40_000, false, None));
        d.insert(NodeId(2), disc(35_000, true, None));
        d.insert(NodeId(3), disc(33_000, false, None));
        let plan = scan_sleep_plan(&d, SimTime(30_720), 30720, 4);
        let ids: Vec<_> = plan.iter().map(|w| w.coordinator).collect();
        assert_eq!(ids, vec![NodeId(3), NodeId(1)]);
        assert_eq!(plan[0].wake_at, SimTime(32_996));
    }

    #[test]
    fn plan_rolls_stale_expectations_forward() {
        let mut d = BTreeMap::new();
        d.insert(NodeId(1), disc(31_000, false, None));
        // scan ran long; expected beacon already passed
        let plan = scan_sleep_plan(&d, SimTime(100_000), 30720, 4);
        assert_eq!(plan[0].beacon_at, SimTime(31_000 + 3 * 30720));
    }

    #[test]
    fn sbp_picks_best_metric() {
        let mut d = BTreeMap::new();
        d.insert(NodeId(4), disc(40_000, false, Some(512)));
        d.insert(NodeId(2), disc(40_000, false, Some(768)));
        d.insert(NodeId(7), disc(40_000, false, Some(512)));
        assert_eq!(sbp_choice(&d), Some(NodeId(4)));
    }

    #[test]
    fn half_bi_scan_suffices() {
        let s = sf(5, 2);
        assert!(scan_is_sufficient(s.bi / 2, &s));
        assert!(!scan_is_sufficient(s.bi / 2 - 1, &s));
    }
}
