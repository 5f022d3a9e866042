use rand::Rng;

use crate::engine::{SimTime, Ticks};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrickleParams {
    /// Minimum interval, at tick precision.
    pub imin: Ticks,
    /// Number of times the interval may double.
    pub imax_doublings: u32,
    /// Redundancy constant.
    pub k: u32,
}

impl TrickleParams {
    pub fn max_interval(&self) -> Ticks {
        self.imin << self.imax_doublings
    }
}

/// Outcome of the decision instant `t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Expiry {
    pub emit: bool,
    /// Doubling index of the interval that just decided.
    pub doubling: u32,
    pub interval_start: SimTime,
}

/// Trickle timer in the event-driven form used by the simulator: a single
/// callback per interval at the decision instant `t`, which also rolls the
/// timer into the following interval (starting at `interval_start + I`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrickleTimer {
    params: TrickleParams,
    n: u32,
    interval_start: SimTime,
    t: SimTime,
    c: u32,
    draw: u64,
}

impl TrickleTimer {
    pub fn start<R: Rng + ?Sized>(params: TrickleParams, now: SimTime, rng: &mut R) -> Self {
        Self::start_at_doubling(params, 0, now, rng)
    }

    /// Starts in interval `Imin * 2^n` (clamped to the cap). Used for nodes
    /// that begin a run already in steady state.
    pub fn start_at_doubling<R: Rng + ?Sized>(
        params: TrickleParams,
        n: u32,
        now: SimTime,
        rng: &mut R,
    ) -> Self {
        let mut timer = TrickleTimer {
            params,
            n: n.min(params.imax_doublings),
            interval_start: now,
            t: now,
            c: 0,
            draw: 0,
        };
        timer.draw_t(rng);
        timer
    }

    pub fn params(&self) -> &TrickleParams {
        &self.params
    }

    pub fn doubling(&self) -> u32 {
        self.n
    }

    pub fn interval(&self) -> Ticks {
        self.params.imin << self.n
    }

    pub fn interval_start(&self) -> SimTime {
        self.interval_start
    }

    pub fn fire_time(&self) -> SimTime {
        self.t
    }

    pub fn counter(&self) -> u32 {
        self.c
    }

    /// Identifies the current `t`; bumps on every draw so stale timer events
    /// can be recognised.
    pub fn draw_id(&self) -> u64 {
        self.draw
    }

    fn draw_t<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let i = self.interval();
        let lo = i / 2;
        let offset = if lo < i { rng.random_range(lo..i) } else { lo };
        self.t = self.interval_start + offset;
        self.draw += 1;
    }

    /// Decision at `t`: transmit iff fewer than `k` consistent receptions
    /// were heard in this interval. Then move to the next interval.
    pub fn on_expire<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Expiry {
        let expiry = Expiry {
            emit: self.c < self.params.k,
            doubling: self.n,
            interval_start: self.interval_start,
        };
        self.interval_start = self.interval_start + self.interval();
        self.n = (self.n + 1).min(self.params.imax_doublings);
        self.c = 0;
        self.draw_t(rng);
        expiry
    }

    /// Back to `Imin` with a fresh `t`. Calling it twice in one tick leaves
    /// the state of the second call.
    pub fn reset<R: Rng + ?Sized>(&mut self, now: SimTime, rng: &mut R) {
        self.n = 0;
        self.interval_start = now;
        self.c = 0;
        self.draw_t(rng);
    }

    /// Receptions before the current interval start belong to an interval
    /// that has already decided.
    pub fn hear_consistent(&mut self, now: SimTime) {
        if now >= self.interval_start {
            self.c += 1;
        }
    }
}
