//! Simplified slotted CSMA/CA: one CCA per attempt, backoff periods not
//! aligned across nodes.

use rand::Rng;

use crate::engine::Ticks;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CsmaParams {
    /// aUnitBackoffPeriod.
    pub unit_backoff: Ticks,
    pub min_be: u8,
    pub max_be: u8,
    /// macMaxCSMABackoffs.
    pub max_backoffs: u8,
}

impl Default for CsmaParams {
    fn default() -> Self {
        CsmaParams {
            unit_backoff: 20,
            min_be: 3,
            max_be: 5,
            max_backoffs: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CcaVerdict {
    /// Draw another backoff and try again.
    Retry,
    ChannelAccessFailure,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CsmaState {
    pub nb: u8,
    pub be: u8,
}

impl CsmaState {
    pub fn new(params: &CsmaParams) -> Self {
        CsmaState {
            nb: 0,
            be: params.min_be,
        }
    }

    /// Random delay of `0..2^BE` backoff units.
    pub fn draw_backoff<R: Rng + ?Sized>(&self, params: &CsmaParams, rng: &mut R) -> Ticks {
        let units = rng.random_range(0..(1u64 << self.be));
        units * params.unit_backoff
    }

    pub fn on_busy(&mut self, params: &CsmaParams) -> CcaVerdict {
        self.nb += 1;
        if self.nb > params.max_backoffs {
            return CcaVerdict::ChannelAccessFailure;
        }
        self.be = (self.be + 1).min(params.max_be);
        CcaVerdict::Retry
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::rng_from_seed;

    #[test]
    fn first_backoff_at_most_seven_units() {
        let p = CsmaParams::default();
        let s = CsmaState::new(&p);
        let mut rng = rng_from_seed(7);
        for _ in 0..1000 {
            assert!(s.draw_backoff(&p, &mut rng) <= 7 * 20);
        }
    }

    #[test]
    fn five_busy_checks_fail() {
        let p = CsmaParams::default();
        let mut s = CsmaState::new(&p);
        for expected_be in [4, 5, 5, 5] {
            assert_eq!(s.on_busy(&p), CcaVerdict::Retry);
            assert_eq!(s.be, expected_be);
        }
        assert_eq!(s.on_busy(&p), CcaVerdict::ChannelAccessFailure);
    }
}
